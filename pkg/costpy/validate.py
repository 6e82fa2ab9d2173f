from jsonschema import validate

NAME_PATTERN = "^[A-Za-z][A-Za-z0-9_.]*(-[A-Za-z0-9_.]+)*$"
SEGMENT_PATTERN = "^[A-Za-z0-9_.]+$"
EXPRESSION = {'type': ["string", "number"]}
FRAMEWORK_SCHEMA = {
    'type': "object",
    'properties': {
        'name': {'type': "string", 'pattern': NAME_PATTERN},
        'parties': {
            'type': "object",
            'properties': {
                'default': {'type': "integer", 'minimum': 2},
                'min': {'type': "integer", 'minimum': 2},
                'max': {'type': ["integer", "null"], 'minimum': 2},
            },
            'required': ['default'],
            'additionalProperties': False
        },
        'constraints': {
            'type': "array",
            'items': {'type': "string"},
        },
        'defaults': {
            'type': "object",
            'properties': {
                'deg': {'type': "integer", 'exclusiveMinimum': 0},
                'mod': {
                    'type': "array",
                    'items': {'type': "integer", 'exclusiveMinimum': 0},
                    'minItems': 1
                },
                'lp': {'type': "number", 'minimum': 0},
                'bp': {'type': "number", 'minimum': 0},
            },
            'additionalProperties': False
        },
        'local_truncation': {'type': "boolean"},
        'ops': {
            'type': "object",
            'additionalProperties': {
                'oneOf': [
                    {
                        'type': "array",
                        'items': EXPRESSION,
                        'minItems': 4,
                        'maxItems': 4
                    },
                    {'type': "string"},
                    {
                        'type': "object",
                        'properties': {'procedure': {'type': "string"}},
                        'required': ['procedure'],
                        'additionalProperties': False
                    },
                ]
            },
            'required': ['share', 'reveal', 'muls']
        },
    },
    'required': ['name', 'ops'],
    'additionalProperties': False
}

LAYER_KINDS = [
    "Linear", "Conv2d", "BatchNorm2d", "LayerNorm", "ReLU", "GELU",
    "AvgPool2d", "MaxPool2d", "Softmax", "Sigmoid", "Flatten", "Residual",
    "Sequential",
]
POSITIVE_INT = {'type': "integer", 'exclusiveMinimum': 0}
MODEL_SCHEMA = {
    'type': "object",
    'definitions': {
        'layer': {
            'type': "object",
            'properties': {
                'kind': {'enum': LAYER_KINDS},
                'label': {'type': "string", 'pattern': SEGMENT_PATTERN},
                'layers': {
                    'type': "array",
                    'items': {'$ref': "#/definitions/layer"},
                    'minItems': 1
                },
                'in_features': POSITIVE_INT,
                'out_features': POSITIVE_INT,
                'bias': {'type': "boolean"},
                'in_channels': POSITIVE_INT,
                'out_channels': POSITIVE_INT,
                'kernel_size': POSITIVE_INT,
                'stride': POSITIVE_INT,
                'padding': {'type': "integer", 'minimum': 0},
                'groups': POSITIVE_INT,
                'num_features': POSITIVE_INT,
                'features': POSITIVE_INT,
                'axis': {'type': "integer"},
            },
            'required': ['kind'],
            'additionalProperties': False
        },
    },
    'properties': {
        'name': {'type': "string", 'pattern': SEGMENT_PATTERN},
        'inputs': {
            'type': "array",
            'items': {
                'type': "object",
                'properties': {
                    'shape': {
                        'type': "array",
                        'items': POSITIVE_INT,
                        'minItems': 1
                    },
                    'from_party': {'type': "integer", 'minimum': 0},
                },
                'required': ['shape'],
                'additionalProperties': False
            },
            'minItems': 1
        },
        'labels': {
            'type': "array",
            'items': POSITIVE_INT,
            'minItems': 1
        },
        'layers': {
            'type': "array",
            'items': {'$ref': "#/definitions/layer"},
            'minItems': 1
        },
        'loss': {'enum': ["cross_entropy", None]},
        'optimizer': {
            'oneOf': [
                {'type': "null"},
                {
                    'type': "object",
                    'properties': {
                        'kind': {'enum': ["SGD", "Adam"]},
                        'lr': {'type': "number", 'exclusiveMinimum': 0},
                        'betas': {
                            'type': "array",
                            'items': {'type': "number"},
                            'minItems': 2,
                            'maxItems': 2
                        },
                        'eps': {'type': "number", 'exclusiveMinimum': 0},
                    },
                    'required': ['kind'],
                    'additionalProperties': False
                },
            ]
        },
    },
    'required': ['inputs', 'layers'],
    'additionalProperties': False
}


def validate_framework_config(conf):
    return validate(conf, FRAMEWORK_SCHEMA)


def validate_model_spec(spec):
    return validate(spec, MODEL_SCHEMA)
