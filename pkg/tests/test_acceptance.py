import math
import random

import pytest

from costpy import autograd
from costpy.autograd import parameter, secret
from costpy.blocktree import (
    SEPARATOR, compile_program, emit_op, for_range, with_label
)
from costpy.frameworks import BUILTIN_CONFIGS, evaluate_cost
from costpy.params import CostTuple, OpExtras, SecurityParams
from costpy.profile import ProfileRequest, run_profile
from costpy.report import GROUPINGS, PHASES, compare_frameworks, group_report
from costpy.secure import LoweringOptions

CASES = 100
OPS = ('muls', 'TruncPr', 'LTZ', 'reveal', 'share')
SEGMENTS = ('layer1', 'conv2d', 'relu', 'forward', 'backward', 'mul')


def random_program(rng, depth=3):
    """Nested ('op' | 'label' | 'loop') nodes without index dependence."""
    nodes = []
    for _ in range(rng.randint(1, 4)):
        kind = rng.choice(('op', 'op', 'label', 'loop')) if depth else 'op'
        if kind == 'op':
            nodes.append(('op', rng.choice(OPS), rng.randint(1, 50)))
        elif kind == 'label':
            nodes.append((
                'label', rng.choice(SEGMENTS), random_program(rng, depth - 1)
            ))
        else:
            nodes.append((
                'loop', rng.randint(0, 5), random_program(rng, depth - 1)
            ))
    return nodes


def play(nodes):
    for node in nodes:
        if node[0] == 'op':
            emit_op(node[1], size=node[2])
        elif node[0] == 'label':
            with with_label(node[1]):
                play(node[2])
        else:
            for_range(node[1], lambda i, body=node[2]: play(body))


def merged(*reports):
    entries = {}
    for report in reports:
        for label, cost in report.entries.items():
            entries[label] = entries.get(label, CostTuple()) + cost
    return entries


def test_prefix_sums_are_closed_under_relabeling(run):
    rng = random.Random(1)
    for _ in range(CASES):
        nodes = random_program(rng)
        plain = run(lambda: play(nodes))
        wrapped = run(lambda: with_label('wrap', lambda: play(nodes)))
        assert wrapped.query_prefix('initial-wrap') == plain.total()
        assert wrapped.entries == {
            'initial-wrap' + label[len('initial'):]: cost
            for label, cost in plain.entries.items()
        }
        for label in plain.entries:
            segments = label.split(SEPARATOR)
            parent = SEPARATOR.join(segments[:-1]) or label
            parent_cost = plain.query_prefix(parent)
            own = plain.query_prefix(label)
            assert all(a >= b for a, b in zip(parent_cost, own))


def test_sequencing_is_additive(run):
    rng = random.Random(2)
    for _ in range(CASES):
        first, second = random_program(rng), random_program(rng)
        both = run(lambda: (play(first), play(second)))
        assert both.entries == merged(
            run(lambda: play(first)), run(lambda: play(second))
        )
        assert both.total() == \
            run(lambda: play(first)).total() + run(lambda: play(second)).total()


def test_loops_are_linear(run):
    rng = random.Random(3)
    for _ in range(CASES):
        body = random_program(rng)
        n = rng.randint(0, 20)
        once = run(lambda: play(body))
        looped = run(lambda: for_range(n, lambda i: play(body)))
        assert set(looped.entries) == set(once.entries)
        for label, cost in once.entries.items():
            assert looped.entries[label] == cost * n


def test_compilation_is_deterministic(run):
    rng = random.Random(4)
    for _ in range(CASES):
        nodes = random_program(rng)
        assert compile_program(play, nodes).signature() == \
            compile_program(play, nodes).signature()
        a, b = run(lambda: play(nodes)), run(lambda: play(nodes))
        assert list(a.entries.items()) == list(b.entries.items())
        assert a.fingerprint == b.fingerprint


def test_local_operations_are_free(run):
    rng = random.Random(5)
    for _ in range(CASES):
        nodes = random_program(rng)
        rows, cols = rng.randint(1, 6), rng.randint(1, 6)
        rng_op = rng.choice(OPS)

        def noisy():
            x = secret((rows, cols))
            for node in nodes:
                play([node])
                emit_op(rng_op, requires_communication=False, size=7)
                x = (x + secret((rows, cols))).transpose().reshape(-1)
                x = (-x).reshape(cols, rows).transpose()

        assert run(noisy).entries == run(lambda: play(nodes)).entries


@pytest.mark.parametrize('grouping', GROUPINGS)
def test_groupings_cover_every_entry(run, grouping):
    rng = random.Random(6)
    for _ in range(CASES):
        nodes = random_program(rng)
        report = run(lambda: play(nodes))
        total = report.total()
        for phase, columns in PHASES.items():
            frame = group_report(report, grouping, phase)
            sums = [int(frame[column].sum()) for column in columns]
            expected = {
                'online_bits': total.online_bits,
                'online_rounds': total.online_rounds,
                'offline_bits': total.offline_bits,
                'offline_rounds': total.offline_rounds,
            }
            assert sums == [expected[column] for column in columns]


def test_vectorized_operations_scale_bits_only():
    rng = random.Random(7)
    params = SecurityParams()
    for _ in range(CASES):
        config = BUILTIN_CONFIGS[rng.choice(sorted(BUILTIN_CONFIGS))]
        op = rng.choice(('share', 'reveal', 'muls', 'TruncPr', 'LTZ'))
        if op not in config.declared_ops or \
                'size' in config.formula(op).parameters:
            continue
        point = params.with_parties(config.parties.default)
        n = rng.randint(1, 10000)
        one = evaluate_cost(config, op, point, OpExtras(size=1))
        many = evaluate_cost(config, op, point, OpExtras(size=n))
        assert many.online_rounds == one.online_rounds
        assert many.offline_rounds == one.offline_rounds
        assert n * (one.online_bits - 1) < many.online_bits or not one
        assert many.online_bits <= n * one.online_bits
        assert many.offline_bits <= n * one.offline_bits


def test_batched_forward_scales_bits_only(run):
    rng = random.Random(8)
    for _ in range(CASES):
        batch, features = rng.randint(2, 64), rng.randint(1, 32)

        def program(rows):
            x = secret((rows, features))
            autograd.relu(x) * x

        one = run(lambda: program(1))
        many = run(lambda: program(batch))
        assert set(many.entries) == set(one.entries)
        for label, cost in one.entries.items():
            assert many.entries[label].online_bits == batch * cost.online_bits
            assert many.entries[label].online_rounds == cost.online_rounds


def _random_dag(rng):
    rows, cols = rng.randint(1, 5), rng.randint(1, 5)
    leaf_shapes = [(rows, cols), (1, cols), (cols,), (rows, 1)]
    leaves = [
        secret(rng.choice(leaf_shapes), requires_grad=True)
        for _ in range(rng.randint(1, 4))
    ]
    pool = list(leaves)
    for _ in range(rng.randint(1, 8)):
        op = rng.choice(('mul', 'add', 'sub', 'relu', 'exp', 'matmul', 'mean'))
        x = rng.choice(pool)
        if op == 'mul':
            out = x * rng.choice(pool)
        elif op == 'add':
            out = x + rng.choice(pool)
        elif op == 'sub':
            out = x - rng.choice(pool)
        elif op == 'relu':
            out = autograd.relu(x)
        elif op == 'exp':
            out = autograd.exp(x)
        elif op == 'matmul':
            full = x + secret((rows, cols))
            weight = parameter((cols, cols))
            leaves.append(weight)
            out = full @ weight
        else:
            out = x.mean(axis=-1, keepdim=True) * x
        pool.append(out)
    loss = pool[0].sum()
    for tensor in pool[1:]:
        loss = loss + tensor.sum()
    return leaves, loss


def test_gradients_match_leaf_shapes():
    rng = random.Random(9)
    for _ in range(CASES):
        def program():
            leaves, loss = _random_dag(rng)
            loss.backward()
            for leaf in leaves:
                assert leaf.grad is not None
                assert leaf.grad.shape == leaf.shape

        compile_program(program)


def _broadcast_backward(out_shape, small_shape, framework, run, strawman):
    def program():
        a = secret(small_shape, requires_grad=True)
        b = secret(out_shape)
        (a * b).sum().backward(secret((1,)))

    report = run(
        program, framework=framework,
        lowering=LoweringOptions(strawman_broadcast=strawman)
    )
    return report.entries['initial-mul-backward']


@pytest.mark.parametrize('framework', ['ABY3', 'Falcon', 'Deep-MPC'])
def test_fused_broadcast_backward_dominates(run, framework):
    rng = random.Random(10)
    for _ in range(CASES):
        out_shape = tuple(rng.randint(1, 6) for _ in range(rng.randint(1, 3)))
        small = tuple(d if rng.random() < 0.5 else 1 for d in out_shape)
        ratio = math.prod(out_shape) // math.prod(small)
        fused = _broadcast_backward(out_shape, small, framework, run, False)
        naive = _broadcast_backward(out_shape, small, framework, run, True)
        if ratio > 1:
            assert fused.online_bits < naive.online_bits
            assert fused.offline_bits <= naive.offline_bits
        else:
            assert fused == naive


def _online_share(report, prefix):
    total = report.total().online_bits
    return report.query_prefix(prefix).online_bits / total


def test_resnet_operator_shares_move_with_the_framework():
    reports = run_profile(ProfileRequest(['ABY', 'ABY3'], 'resnet18'))
    shares = compare_frameworks(reports)
    linear = shares.loc[['conv2d', 'linear']].sum()
    nonlinear = shares.loc[['relu', 'maxpool2d']].sum()
    assert linear['ABY'] > linear['ABY3']
    assert nonlinear['ABY3'] > nonlinear['ABY']


def test_adam_step_outweighs_sgd_step():
    sgd, = run_profile(ProfileRequest(
        ['ABY3'], 'lenet', mode='train', optimizer={'kind': 'SGD'}
    ))
    adam, = run_profile(ProfileRequest(
        ['ABY3'], 'lenet', mode='train', optimizer={'kind': 'Adam'}
    ))
    step = 'initial-optimizer-step'
    assert _online_share(adam, step) > _online_share(sgd, step) > 0


def test_sgd_step_is_free_with_local_truncation():
    report, = run_profile(ProfileRequest(
        ['ABY'], 'lenet', mode='train', optimizer={'kind': 'SGD'}
    ))
    assert report.query_prefix('initial-optimizer-step') == CostTuple()
    assert report.query_contains('backward')
