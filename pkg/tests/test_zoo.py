import json

import pytest

from conftest import MODEL_FILES
from costpy import zoo
from costpy.autograd import secret
from costpy.blocktree import CompileContext
from costpy.errors import ConfigError, UnknownEntityError
from costpy.profile import compile_model


@pytest.mark.parametrize('name,count', [
    ('logreg', 784 * 10 + 10),
    ('lenet', 44726),
    ('vgg16', 138357544),
    ('resnet18', 11689512),
    ('resnet50', 25557032),
    ('densenet121', 7978856),
    ('transformer', 790274),
])
def test_parameter_counts(name, count):
    assert zoo.ZOO[name].build().parameter_count() == count


@pytest.mark.parametrize('name,shape', [
    ('lenet', (1, 10)),
    ('minionn', (1, 10)),
    ('resnet18', (1, 1000)),
    ('densenet121', (1, 1000)),
    ('transformer', (1, 2)),
])
def test_output_shapes(name, shape):
    model = zoo.ZOO[name]
    with CompileContext():
        out = model.build().eval()(secret((1,) + model.inputs[0][0]))
    assert out.shape == shape


def test_densenet_labels():
    root = compile_model('densenet121')
    labels = set()
    todo = [root]
    while todo:
        node = todo.pop()
        labels.update(block.label for block in getattr(node, 'blocks', ()))
        todo.extend(node.children)
    assert 'initial-bottleneck-conv2d-forward' in labels
    assert 'initial-transitionlayer-avgpool2d-forward' in labels


def test_attention_labels(run):
    model = zoo.ZOO['transformer']

    def program():
        model.build().eval()(secret((1, 16, 256)))

    report = run(program)
    assert report.query_contains('attention', 'bmm', 'forward')
    assert report.query_contains('attention', 'softmax', 'forward')
    assert report.query_contains('gelu')


def test_self_attention_heads():
    with pytest.raises(ConfigError):
        zoo.SelfAttention(10, 3)


def test_trainable_models():
    assert zoo.ZOO['lenet'].trainable
    assert zoo.ZOO['transformer'].optimizer['kind'] == 'Adam'


def test_get_model():
    assert zoo.get_model('LeNet') is zoo.ZOO['lenet']
    mlp = zoo.get_model(MODEL_FILES / "mlp_train.json")
    assert mlp.name == 'mlp'
    with pytest.raises(UnknownEntityError):
        zoo.get_model('alexnet')


def test_mlp_spec():
    model = zoo.load_model_spec(MODEL_FILES / "mlp_train.json")
    assert model.batch_size == 128
    assert model.inputs == [((784,), 0)]
    assert model.classes == 10 and model.trainable
    assert model.build().parameter_count() == \
        784 * 128 + 128 + 128 * 128 + 128 + 128 * 10 + 10


def test_transition_spec(run):
    model = zoo.load_model_spec(MODEL_FILES / "transition_cnn.json")
    assert not model.trainable

    def program():
        model.build().eval()(secret((1, 3, 32, 32)))

    report = run(program)
    assert report.query_prefix('initial-transitionlayer')
    assert 'initial-transitionlayer-batchnorm-forward' in report.entries


@pytest.mark.parametrize('doc,message', [
    ({'inputs': [{'shape': [1, 4]}]}, "layers"),
    ({'inputs': [{'shape': [1, 4]}], 'layers': [{'kind': 'Dropout'}]},
     "Dropout"),
    ({'inputs': [{'shape': [1, 4]}, {'shape': [2, 3]}],
      'layers': [{'kind': 'ReLU'}]}, "batch"),
    ({'inputs': [{'shape': [1, 4]}], 'layers': [{'kind': 'ReLU'}],
      'loss': 'cross_entropy'}, "labels"),
])
def test_invalid_model_specs(tmp_path, doc, message):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match=message):
        zoo.load_model_spec(path)


def test_unreadable_model_spec(tmp_path):
    path = tmp_path / "model.json"
    path.write_text("{")
    with pytest.raises(ConfigError):
        zoo.load_model_spec(path)
