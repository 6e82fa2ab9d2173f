"""Statically profile the communication cost of secure ML programs.

Subcommands:
  profile  compile a model once and report its cost under some frameworks
  config   validate framework cost configuration files
  list     show the zoo models and registered frameworks
  export   write a cost table of one operation for external optimizers
  demo     profile the two-label example program
"""
import itertools
import logging
import sys
from argparse import ArgumentParser
from pathlib import Path

import yaml

from costpy.errors import ConfigError, ProfilerError, UnknownEntityError
from costpy.frameworks import default_registry, load_framework_file
from costpy.params import SecurityParams
from costpy.profile import MODES, ProfileRequest, profile_demo, run_profile
from costpy.report import (
    FORMATS, GROUPINGS, PHASES, compare_frameworks, export_cost_callback,
    render_report
)
from costpy.secure import COMPLICATED_OPS, LoweringOptions, Recipes
from costpy.zoo import ZOO

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / "config" / "default.yml"

# Dedicated "profile" flags -> (section, option) of the file config.
FLAG_OPTIONS = {
    'framework': ('profile', 'framework'),
    'model': ('profile', 'model'),
    'mode': ('profile', 'mode'),
    'batches': ('profile', 'batches'),
    'batch_size': ('profile', 'batch_size'),
    'parties': ('profile', 'parties'),
    'phase': ('profile', 'phase'),
    'group': ('profile', 'group'),
    'format': ('profile', 'format'),
    'optimizer': ('profile', 'optimizer'),
    'out': ('global', 'out_dir'),
    'bitlen': ('security', 'k'),
    'frac': ('security', 'f'),
    'sec_stat': ('security', 'kappa_s'),
    'sec_comp': ('security', 'kappa'),
    'sequential_groups': ('lowering', 'sequential_groups'),
    'strawman_broadcast': ('lowering', 'strawman_broadcast'),
}


def get_arg_parser():
    parser = ArgumentParser(description=__doc__)
    parser.add_argument(
        '--config',
        metavar='FILE',
        default=DEFAULT_CONFIG,
        help="Path to the YAML config file"
    )
    parser.add_argument(
        '--register',
        metavar='FILE',
        action='append',
        default=[],
        help="Framework cost file to register (repeatable)"
    )
    commands = parser.add_subparsers(dest='command', required=True)

    profile = commands.add_parser('profile', help="Profile a model")
    profile.add_argument('--framework', help="Framework name(s), comma separated")
    profile.add_argument('--model', help="Zoo model name or model spec file")
    profile.add_argument('--mode', choices=MODES)
    profile.add_argument('--bitlen', type=int, help="Ring bit length k")
    profile.add_argument('--frac', type=int, help="Fractional bits f")
    profile.add_argument('--sec-stat', type=int, help="Statistical security")
    profile.add_argument('--sec-comp', type=int, help="Computational security")
    profile.add_argument('--parties', type=int, help="Number of parties")
    profile.add_argument('--batches', type=int, help="Number of batches")
    profile.add_argument('--batch-size', type=int, help="Samples per batch")
    profile.add_argument('--optimizer', choices=['SGD', 'Adam'])
    profile.add_argument('--phase', choices=list(PHASES))
    profile.add_argument('--group', choices=GROUPINGS)
    profile.add_argument('--format', choices=FORMATS)
    profile.add_argument('--out', metavar='DIR', help="Output directory")
    profile.add_argument(
        '--sequential-groups',
        action='store_const',
        const=True,
        help="Emit grouped convolutions one group at a time"
    )
    profile.add_argument(
        '--strawman-broadcast',
        action='store_const',
        const=True,
        help="Materialize broadcast products in backward passes"
    )
    profile.add_argument(
        '--compare',
        action='store_true',
        help="Print the per-operator online share of every framework"
    )

    config = commands.add_parser('config', help="Validate framework files")
    config.add_argument('files', metavar='FILE', nargs='+')

    listing = commands.add_parser('list', help="List models and frameworks")
    listing.add_argument(
        'what',
        nargs='?',
        choices=['models', 'frameworks', 'all'],
        default='all'
    )

    export = commands.add_parser('export', help="Export a cost table")
    export.add_argument('--framework', required=True)
    export.add_argument('--op', default='matmuls')
    export.add_argument(
        '--dims',
        default='p,q,r',
        help="Comma separated instruction fields swept by the grid"
    )
    export.add_argument(
        '--values',
        default='1,2,4,8,16,32,64',
        help="Comma separated values taken by every field"
    )
    export.add_argument('--out', metavar='FILE', help="CSV output file")

    demo = commands.add_parser('demo', help="Profile the labeling example")
    demo.add_argument('--framework', default='ABY3')
    demo.add_argument('--format', choices=FORMATS, default='json')
    return parser


def _parse_value(value: str):
    try:
        return yaml.safe_load(value)
    except yaml.YAMLError:
        return value


def get_config(argv=None) -> dict:
    # Load the configuration.
    aconf, fconf_override = get_arg_parser().parse_known_args(argv)
    try:
        with open(aconf.config, 'r') as handle:
            fconf = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {aconf.config}: {e}") from e
    # Override file config with "--section.option val" command line arguments.
    if len(fconf_override) % 2:
        raise ConfigError(f"override {fconf_override[-1]} has no value")
    args = iter(fconf_override)
    for name, val in zip(args, args):
        try:
            section, option = name[2:].split('.')
            fconf[section][option] = _parse_value(val)
        except (ValueError, KeyError) as e:
            raise ConfigError(f"invalid override {name} {val}") from e
    # Dedicated flags win over the file.
    for flag, (section, option) in FLAG_OPTIONS.items():
        value = getattr(aconf, flag, None)
        if value is not None:
            fconf[section][option] = value
    # Preprocess paths to make life easier.
    for section in fconf.values():
        for key, value in section.items():
            if not isinstance(value, str):
                continue
            if "/" in value or value in (".", "..", "~"):  # UNIX path
                section[key] = Path(value)
    # Merge configs.
    return vars(aconf) | fconf


_handlers = []


def init_logger(conf: dict):
    root_logger = logging.getLogger()
    for handler in _handlers:
        root_logger.removeHandler(handler)
    _handlers.clear()
    root_logger.setLevel(conf['global'].get('log_level') or 'INFO')
    formatter = logging.Formatter(
        fmt='|{asctime}|{levelname}|{name}|{funcName}|{message}',
        datefmt='%Y-%m-%d %H:%M:%S',
        style='{'
    )
    _handlers.append(logging.StreamHandler(sys.stderr))
    log_file = conf['global'].get('log_file')
    if log_file:
        _handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    for handler in _handlers:
        handler.setFormatter(formatter)
        root_logger.addHandler(handler)


def get_registry(conf: dict):
    registry = default_registry().copy()
    for path in conf['register']:
        registry.register(load_framework_file(path), overwrite=True)
    return registry


def get_params(conf: dict) -> SecurityParams:
    try:
        return SecurityParams(**conf['security'])
    except TypeError as e:
        raise ConfigError(f"invalid security parameters: {e}") from e


def get_request(conf: dict) -> ProfileRequest:
    pconf = conf['profile']
    params = get_params(conf)
    try:
        recipes = Recipes(**conf['recipes'])
        lowering = LoweringOptions(**conf['lowering'])
    except TypeError as e:
        raise ConfigError(f"invalid config: {e}") from e
    optimizer = pconf.get('optimizer')
    return ProfileRequest(
        frameworks=str(pconf['framework']),
        model=str(pconf['model']),
        params=params,
        parties=pconf.get('parties'),
        mode=pconf['mode'],
        batches=pconf['batches'],
        batch_size=pconf['batch_size'],
        phase=pconf['phase'],
        group=pconf['group'],
        fmt=pconf['format'],
        out_dir=conf['global'].get('out_dir'),
        optimizer={'kind': optimizer} if optimizer else None,
        recipes=recipes,
        lowering=lowering,
        he_defaults=dict(conf.get('cheetah') or {}),
        workers=pconf.get('workers', 1)
    )


def run_profile_command(conf: dict) -> int:
    request = get_request(conf)
    reports = run_profile(request, get_registry(conf))
    if request.out_dir is None:
        for report in reports:
            print(render_report(report, request.fmt, request.group,
                                request.phase), end='')
    if conf.get('compare'):
        print(compare_frameworks(reports, 'operator').round(2).to_string())
    return 0


def run_config_command(conf: dict) -> int:
    for path in conf['files']:
        config = load_framework_file(path)
        print(f"{path}: {config.name} OK ({', '.join(sorted(config.formulas))})")
    return 0


def run_list_command(conf: dict) -> int:
    if conf['what'] in ('models', 'all'):
        for name, model in ZOO.items():
            shape = 'x'.join(str(d) for d in model.inputs[0][0])
            print(f"model {name} input {shape} classes {model.classes}")
    if conf['what'] in ('frameworks', 'all'):
        registry = get_registry(conf)
        for name in registry.names():
            config = registry.get(name)
            print(f"framework {name} parties {config.parties.default}")
    return 0


def run_export_command(conf: dict) -> int:
    dims = [d.strip() for d in conf['dims'].split(',') if d.strip()]
    try:
        values = [int(v) for v in conf['values'].split(',') if v.strip()]
    except ValueError as e:
        raise ConfigError(f"invalid grid values {conf['values']}") from e
    grid = [dict(zip(dims, point))
            for point in itertools.product(values, repeat=len(dims))]
    registry = get_registry(conf)
    config = registry.get(conf['framework'])
    if conf['op'] not in config.declared_ops | set(COMPLICATED_OPS):
        raise UnknownEntityError(
            f"{config.name} has no operation '{conf['op']}'"
        )
    table = export_cost_callback(
        config, get_params(conf), grid, conf.get('out'), conf['op'],
        registry=registry
    )
    if conf.get('out') is None:
        print(table.to_csv(index=False), end='')
    return 0


def run_demo_command(conf: dict) -> int:
    params = get_params(conf)
    report = profile_demo(conf['framework'], params, get_registry(conf))
    print(render_report(report, conf['format']), end='')
    return 0


COMMANDS = {
    'profile': run_profile_command,
    'config': run_config_command,
    'list': run_list_command,
    'export': run_export_command,
    'demo': run_demo_command,
}


def main(argv=None) -> int:
    try:
        conf = get_config(argv)
        init_logger(conf)
        return COMMANDS[conf['command']](conf)
    except UnknownEntityError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ProfilerError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
