import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from had import numeric as ops
from had.errors import DimensionMismatch, NonScalarLoss, ShapeMismatch


def _rand(rng, *shape, positive=False):
    a = rng.standard_normal(shape)
    if positive:
        a = np.abs(a) + 0.5
    return torch.tensor(a, dtype=torch.float64, requires_grad=True)


def _shape(rng):
    return int(rng.integers(1, 17)), int(rng.integers(1, 17))


# Each entry builds (output_fn, leaves) from a generator; the loss is a random
# projection of the output so every coordinate carries an O(1) gradient.
def _case(name, rng):
    m, n = _shape(rng)
    if name == "matmul":
        p = int(rng.integers(1, 17))
        a, b = _rand(rng, m, n), _rand(rng, n, p)
        return lambda: ops.matmul(a, b), [a, b]
    if name in ("add", "sub", "mul"):
        a, b = _rand(rng, m, n), _rand(rng, m, n)
        return lambda: getattr(ops, name)(a, b), [a, b]
    if name == "scale":
        a = _rand(rng, m, n)
        return lambda: ops.scale(a, 2.5), [a]
    if name == "transpose":
        a = _rand(rng, m, n)
        return lambda: ops.transpose(a), [a]
    if name in ("sigmoid", "silu", "exp"):
        a = _rand(rng, m, n)
        return lambda: getattr(ops, name)(a), [a]
    if name == "log":
        a = _rand(rng, m, n, positive=True)
        return lambda: ops.log(a), [a]
    if name.startswith("softmax"):
        a = _rand(rng, m, n)
        axis = int(name[-1])
        return lambda: ops.softmax(a, axis), [a]
    if name == "layer_norm":
        n = max(n, 2)
        a, w, b = _rand(rng, m, n), _rand(rng, n), _rand(rng, n)
        return lambda: ops.layer_norm(a, w, b), [a, w, b]
    if name.startswith(("mean", "sum")):
        a = _rand(rng, m, n)
        op, axis = name.split("_")
        return lambda: getattr(ops, op)(a, int(axis))[None], [a]
    if name == "gather":
        a = _rand(rng, m, n)
        rows = rng.integers(0, m, size=int(rng.integers(1, 10)))
        return lambda: ops.gather(a, rows), [a]
    if name == "concat":
        a, b = _rand(rng, m, n), _rand(rng, int(rng.integers(1, 17)), n)
        return lambda: ops.concat([a, b], 0), [a, b]
    if name == "l2_normalize":
        a = _rand(rng, m, n)
        return lambda: ops.l2_normalize(a), [a]
    if name == "mse":
        a, b = _rand(rng, m, n), _rand(rng, m, n)
        return lambda: ops.mse(a, b)[None, None], [a, b]
    if name == "cross_entropy":
        a = _rand(rng, m, max(n, 2))
        t = rng.integers(0, a.shape[1], size=m)
        return lambda: ops.cross_entropy(a, t)[None, None], [a]
    raise KeyError(name)


PRIMITIVES = ["matmul", "add", "sub", "mul", "scale", "transpose", "sigmoid", "silu", "exp", "log",
              "softmax_0", "softmax_1", "layer_norm", "mean_0", "mean_1", "sum_0", "sum_1", "gather", "concat",
              "l2_normalize", "mse", "cross_entropy"]


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_adjoint(name, seed):
    rng = np.random.default_rng([seed, PRIMITIVES.index(name)])
    fn, leaves = _case(name, rng)
    proj = torch.tensor(rng.standard_normal(tuple(fn().shape)), dtype=torch.float64)
    assert ops.grad_check(lambda: ops.sum(ops.mul(fn(), proj)), leaves) <= 1e-6


def test_softmax_examples():
    assert ops.softmax(torch.zeros(2)).tolist() == [0.5, 0.5]
    big = torch.tensor([[80.0, -80.0, -80.0, -80.0]])
    assert ops.cross_entropy(big, [0]).item() == pytest.approx(0.0, abs=1e-12)


@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31), st.sampled_from([0, 1]))
@settings(max_examples=50, deadline=None)
def test_softmax_is_distribution(m, n, seed, axis):
    x = torch.tensor(np.random.default_rng(seed).standard_normal((m, n)) * 10)
    p = ops.softmax(x, axis)
    assert (p >= 0).all() and torch.allclose(p.sum(axis), torch.ones(p.shape[1 - axis], dtype=p.dtype), atol=1e-6)


@given(st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_l2_normalize_unit_norm(m, n, seed):
    x = torch.tensor(np.random.default_rng(seed).standard_normal((m, n)), dtype=torch.float64)
    x = x / x.norm(dim=-1, keepdim=True) * (1 + 10 * torch.rand(m, 1, dtype=torch.float64))
    norms = ops.l2_normalize(x).norm(dim=-1)
    assert torch.allclose(norms, torch.ones(m, dtype=torch.float64), rtol=0, atol=1e-6)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16))
def test_l2_normalize_epsilon_shrink(xs):
    # below unit norm the epsilon is visible: |y| = |x| / (|x| + eps)
    x = torch.tensor(xs, dtype=torch.float64)
    r = x.norm().item()
    assert ops.l2_normalize(x).norm().item() == pytest.approx(r / (r + ops.L2_EPS), rel=1e-12, abs=1e-300)


def test_l2_normalize_zero_vector_is_finite():
    assert ops.l2_normalize(torch.zeros(3)).tolist() == [0.0, 0.0, 0.0]


def test_matmul_shape_and_errors():
    assert ops.matmul(torch.zeros(2, 3), torch.zeros(3, 4)).shape == (2, 4)
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(4, 4\)"):
        ops.matmul(torch.zeros(2, 3), torch.zeros(4, 4))


@pytest.mark.parametrize("op", ["add", "sub", "mul", "mse"])
def test_no_broadcasting(op):
    with pytest.raises(ShapeMismatch):
        getattr(ops, op)(torch.zeros(2, 3), torch.zeros(1, 3))
    getattr(ops, "add")(torch.zeros(2, 3), 1.0)


def test_backward_examples():
    x = torch.tensor([1.0, 2.0, 3.0], requires_grad=True)
    p = torch.tensor([5.0], requires_grad=True)
    ops.backward(ops.sum(ops.mul(x, x)) + 0 * p.sum())
    assert x.grad.tolist() == [2.0, 4.0, 6.0] and p.grad.tolist() == [0.0]
    x.grad = None
    ops.backward(ops.mse(x, x))
    assert x.grad.tolist() == [0.0, 0.0, 0.0]


def test_backward_rejects_vector():
    with pytest.raises(NonScalarLoss):
        ops.backward(torch.ones(3, requires_grad=True) * 2)


def test_grad_check_square():
    x = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64, requires_grad=True)
    assert ops.grad_check(lambda: (x * x).sum(), [x]) <= 1e-8


def test_grad_check_detects_wrong_adjoint():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x * x

        @staticmethod
        def backward(ctx, g):
            return g  # should be 2x g

    x = torch.tensor([1.5, 2.0], dtype=torch.float64, requires_grad=True)
    assert ops.grad_check(lambda: Bad.apply(x).sum(), [x]) > 0.1


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"a.weight": torch.tensor(rng.standard_normal((3, 4)), dtype=torch.float32),
              "a.bias": torch.tensor(rng.standard_normal(4), dtype=torch.float32),
              "scalar": torch.tensor(1.5), "ünï": torch.zeros(2, 0, 3)}
    path = tmp_path / "w.hadw"
    ops.save_checkpoint(path, params)
    raw = path.read_bytes()
    assert raw[:4] == b"HADW"
    loaded = ops.load_checkpoint(path)
    assert list(loaded) == list(params)
    for name, t in params.items():
        assert loaded[name].shape == tuple(t.shape) and np.array_equal(loaded[name], t.numpy())


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        ops.load_checkpoint(p)


def test_load_into_dimension_mismatch():
    src, dst = torch.nn.Linear(3, 4), torch.nn.Linear(3, 5)
    with pytest.raises(DimensionMismatch):
        ops.load_into(dst, {n: p.detach().numpy() for n, p in src.named_parameters()})
