import pytest

from costpy import autograd
from costpy.autograd import (
    broadcast_mul_backward, broadcast_shapes, normalize_broadcast, parameter,
    public, secret
)
from costpy.blocktree import CompileContext, compile_program
from costpy.errors import CompileError, ShapeError
from costpy.params import CostTuple
from costpy.secure import LoweringOptions


def test_secret_by_secret_product(run):
    def program():
        secret((2, 2)) * secret((2, 2))

    report = run(program)
    assert report.entries == {'initial-mul-forward': CostTuple(1024, 2, 0, 0)}


def test_secret_by_public_product_only_truncates(run):
    def program():
        secret((2, 2)) * public((2, 2))
        2 * secret((3,))

    assert run(program).entries == {'initial-mul-forward': CostTuple(448, 2, 0, 0)}


def test_public_product_is_free(run):
    def program():
        out = public((2, 2)) * public((2, 2))
        assert not out.is_secret

    assert run(program).entries == {}


def test_nonnegative_operands_use_known_msb():
    def program():
        a = autograd.relu(secret((4,)))
        b = autograd.exp(secret((4,)))
        a * b

    root = compile_program(program)
    mul_block = [b for b in root.blocks if b.label == 'initial-mul-forward']
    (block,) = mul_block
    trunc = block.instructions[-1]
    assert trunc.op == 'TruncPr' and trunc.extras.knownmsb == 1


def _broadcast_program(grad_secret=True):
    def program():
        a = secret((1, 2), requires_grad=True)
        b = secret((2, 2))
        loss = (a * b).sum()
        seed = secret((1,)) if grad_secret else None
        loss.backward(seed)
        assert a.grad is not None and a.grad.shape == (1, 2)
        assert b.grad is None
    return program


def test_broadcast_backward_uses_fused_dot_products(run):
    report = run(_broadcast_program())
    assert report.entries['initial-mul-forward'] == CostTuple(1024, 2, 0, 0)
    # Two dot products of length 2: a 2x2 by 2x1 product.
    assert report.entries['initial-mul-backward'] == CostTuple(512, 2, 0, 0)


def test_strawman_broadcast_backward(run):
    report = run(
        _broadcast_program(),
        lowering=LoweringOptions(strawman_broadcast=True)
    )
    assert report.entries['initial-mul-backward'] == CostTuple(1024, 2, 0, 0)


def test_public_seed_gradient(run):
    report = run(_broadcast_program(grad_secret=False))
    # Reducing a public gradient times a secret operand rescales only.
    assert report.entries['initial-mul-backward'] == CostTuple(128, 1, 0, 0)


def test_broadcast_backward_needs():
    with CompileContext() as ctx:
        grad = secret((2, 2))
        a, b = secret((1, 2)), secret((2, 2))
        da, db = broadcast_mul_backward(grad, a, b, needs=(True, False))
        assert db is None and da.shape == (1, 2)
    ops = [i.op for i in ctx.root.blocks[0].instructions]
    assert ops == ['matmuls', 'TruncPr']


def test_broadcast_shapes():
    assert broadcast_shapes((5, 3, 2), (3, 2)) == (5, 3, 2)
    assert broadcast_shapes((1, 2), (2, 1)) == (2, 2)
    assert normalize_broadcast((5, 3, 2), (3, 2)) == ((5, 6), (1, 6))
    assert normalize_broadcast((3, 2), (5, 3, 2)) == ((5, 6), (1, 6))
    with pytest.raises(ShapeError):
        broadcast_shapes((2, 3), (4,))
    with pytest.raises(ShapeError):
        normalize_broadcast((1, 2), (2, 1))


def test_matmul_forward_and_backward(run):
    def program():
        a = parameter((2, 3))
        b = parameter((3, 4))
        (a @ b).sum().backward(secret((1,)))

    report = run(program)
    # 2x3 by 3x4 and the truncation of 8 outputs.
    assert report.entries['initial-matmul-forward'] == \
        CostTuple(1536 + 512, 2, 0, 0)
    # dA = dC.B^T (2x4 by 4x3) and dB = A^T.dC (3x2 by 2x4).
    assert report.entries['initial-matmul-backward'] == CostTuple(
        3 * 2 * 3 * 64 + 6 * 64 + 3 * 3 * 4 * 64 + 12 * 64, 4, 0, 0
    )


def test_batched_matmul(run):
    def program():
        autograd.bmm(secret((5, 2, 3)), secret((5, 3, 4)))

    root = compile_program(program)
    matmul = root.blocks[0].instructions[0]
    assert matmul.extras.size == 5
    assert run(program).total() == CostTuple(5 * 1536 + 40 * 64, 2, 0, 0)


def test_matmul_shape_errors():
    with CompileContext():
        with pytest.raises(ShapeError):
            secret((2, 3)) @ secret((4, 2))
        with pytest.raises(ShapeError):
            secret((3,)) @ secret((3, 2))
        with pytest.raises(ShapeError):
            autograd.bmm(secret((2, 2, 3)), secret((3, 3, 4)))


def test_relu_cost(run):
    report = run(lambda: autograd.relu(secret((1,))))
    assert report.entries == {'initial-relu-forward': CostTuple(768, 9, 0, 0)}


def test_relu_backward_reuses_comparison(run):
    def program():
        x = secret((3,), requires_grad=True)
        autograd.relu(x).sum().backward(secret((1,)))

    report = run(program)
    assert report.entries['initial-relu-backward'] == CostTuple(576, 1, 0, 0)


def test_mean_divides_publicly(run):
    report = run(lambda: secret((10,)).mean())
    assert report.entries == {'initial-mean-forward': CostTuple(64, 1, 0, 0)}


def test_shape_operations_are_free(run):
    def program():
        x = secret((2, 3, 4), requires_grad=True)
        y = x.reshape(6, 4).transpose().reshape(-1)
        z = autograd.concat([autograd.narrow(y, 0, 0, 5), y], axis=0)
        (z.sum() + 1).backward()
        assert x.grad.shape == x.shape

    assert run(program).entries == {}


def test_reduction_shapes():
    with CompileContext():
        x = secret((2, 3, 4))
        assert x.sum(axis=1).shape == (2, 4)
        assert x.sum(axis=(0, 2), keepdim=True).shape == (1, 3, 1)
        assert x.mean().shape == (1,)
        with pytest.raises(ShapeError):
            x.sum(axis=3)
        with pytest.raises(ShapeError):
            x.reshape(5, 5)
        with pytest.raises(ShapeError):
            autograd.narrow(x, 2, 3, 2)


def test_exp_lowering_depends_on_framework(run):
    def program():
        secret((1,)).exp()

    assert run(program, framework='CrypTen').total() == \
        CostTuple(1024, 8, 512, 24)
    assert run(program).total() == CostTuple(2048, 16, 0, 0)


def test_gradients_accumulate_over_uses(run):
    def program():
        x = parameter((2,))
        y = x * x
        (y + x).sum().backward(secret((1,)))
        assert x.grad.shape == (2,) and x.grad.is_secret

    report = run(program)
    # Both factors of x * x get a secret gradient.
    assert report.entries['initial-mul-backward'] == CostTuple(1024, 4, 0, 0)


def test_backward_errors():
    with CompileContext():
        x = parameter((2,))
        with pytest.raises(CompileError):
            (x * x).backward()
        loss = (x * x).sum()
        with pytest.raises(ShapeError):
            loss.backward(secret((2,)))
        loss.backward()
        with pytest.raises(CompileError):
            loss.backward()


def test_operations_need_a_context():
    with pytest.raises(CompileError):
        secret((2,)) * secret((2,))


def test_invalid_tensors():
    with pytest.raises(ShapeError):
        secret((2, 0))
    with pytest.raises(ValueError):
        autograd.TraceTensor((2,), kind='shared')
    with pytest.raises(TypeError):
        with CompileContext():
            secret((2,)) * "x"
