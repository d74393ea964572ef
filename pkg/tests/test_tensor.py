"""Test the automatic differentiation engine."""

from __future__ import annotations

from typing import Callable

import numpy as np
import pytest

from chaoscast import (
    NonScalarLossError,
    ParamRegistry,
    ShapeMismatchError,
    Tensor,
    check_gradients,
)
from chaoscast import _tensor as tn


def _leaf(shape: tuple[int, ...], seed: int, low: float = -1.0, high: float = 1.0) -> Tensor:
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


UNARY: dict[str, Callable[[Tensor], Tensor]] = {
    "exp": tn.exp,
    "tanh": tn.tanh,
    "sigmoid": tn.sigmoid,
    "neg": tn.neg,
    "square": lambda x: x**2,
    "softmax": lambda x: tn.softmax(x, axis=-1),
    "layer_norm": lambda x: tn.layer_norm(x, axis=-1),
    "sum_axis": lambda x: tn.sum(x, axis=0),
    "mean_keepdims": lambda x: tn.mean(x, axis=1, keepdims=True),
    "reshape": lambda x: tn.reshape(x, (4, 3)),
    "swapaxes": lambda x: tn.swapaxes(x, 0, 1),
    "transpose": lambda x: tn.transpose(x),
    "slice": lambda x: x[1:, ::2],
    "fancy_index": lambda x: x[np.array([0, 2, 2])],
    "broadcast_to": lambda x: tn.broadcast_to(x, (2, 3, 4)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name: str) -> None:
    x = _leaf((3, 4), seed=1)
    weights = np.random.default_rng(2).normal(size=UNARY[name](x).shape)
    result = check_gradients(lambda: tn.sum(UNARY[name](x) * weights), [x])
    assert result.ok, result.failures
    assert result.skipped == 0
    assert result.checked == x.data.size


@pytest.mark.parametrize("name", ["log", "sqrt", "rdiv"])
def test_positive_domain_gradients(name: str) -> None:
    x = _leaf((2, 5), seed=3, low=0.5, high=2.0)
    ops = {"log": tn.log, "sqrt": tn.sqrt, "rdiv": lambda t: 1.0 / t}
    result = check_gradients(lambda: tn.sum(ops[name](x) ** 2), [x])
    assert result.ok, result.failures
    assert result.skipped == 0


@pytest.mark.parametrize(
    ("op", "shape_a", "shape_b"),
    [
        (tn.add, (3, 4), (4,)),
        (tn.sub, (3, 1), (1, 4)),
        (tn.mul, (2, 3, 4), (3, 4)),
        (tn.div, (3, 4), (3, 4)),
        (tn.matmul, (3, 4), (4, 2)),
        (tn.matmul, (2, 3, 4), (4, 5)),
        (tn.matmul, (4,), (4, 3)),
    ],
)
def test_binary_gradients(
    op: Callable[[Tensor, Tensor], Tensor],
    shape_a: tuple[int, ...],
    shape_b: tuple[int, ...],
) -> None:
    a = _leaf(shape_a, seed=4)
    b = _leaf(shape_b, seed=5, low=0.5, high=1.5)
    result = check_gradients(lambda: tn.sum(op(a, b) ** 2), [a, b])
    assert result.ok, result.failures
    assert result.skipped == 0


def test_concat_and_stack_gradients() -> None:
    a, b = _leaf((2, 3), seed=6), _leaf((2, 3), seed=7)

    def loss() -> Tensor:
        joined = tn.concat([a, b * 2.0], axis=-1)
        stacked = tn.stack([a, b], axis=1)
        return tn.sum(joined**2) + tn.sum(tn.exp(stacked))

    result = check_gradients(loss, [a, b])
    assert result.ok, result.failures
    assert result.skipped == 0


class TestKinks:
    """Finite-difference checks around non-smooth points."""

    def test_skipped_on_request(self) -> None:
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        result = check_gradients(lambda: tn.sum(tn.relu(x)), [x], allow_kinks=True)
        assert result.ok
        assert result.skipped == 1
        assert result.checked == 2

    def test_reported_by_default(self) -> None:
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        result = check_gradients(lambda: tn.sum(tn.relu(x)), [x])
        assert not result.ok
        assert result.skipped == 0
        assert len(result.failures) == 1

    def test_nearby_kink_resolved_by_smaller_step(self) -> None:
        x = Tensor(np.array([3e-5]), requires_grad=True)
        result = check_gradients(lambda: tn.sum(tn.relu(x)), [x], allow_kinks=True)
        assert result.ok, result.failures
        assert result.checked == 1
        assert result.skipped == 0

    def test_curved_wrong_gradient_is_not_a_kink(self) -> None:
        x = Tensor(np.array([0.1, 0.12]), requires_grad=True)

        def steep(t: Tensor) -> Tensor:
            out = np.exp(100.0 * t.data)
            return tn._result(out, (t,), lambda g: (g * 100.5 * out,))  # noqa: SLF001

        result = check_gradients(lambda: tn.sum(steep(x)), [x], allow_kinks=True)
        assert not result.ok
        assert result.skipped == 0
        assert len(result.failures) == 2


def test_shared_subexpression_accumulates() -> None:
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * x
    tn.sum(y + y).backward()
    assert x.grad is not None
    np.testing.assert_allclose(x.grad, [4.0, 8.0])


def test_backward_needs_scalar() -> None:
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(NonScalarLossError):
        (x * 2.0).backward()


def test_broadcast_mismatch() -> None:
    with pytest.raises(ShapeMismatchError):
        tn.add(np.ones((2, 3)), np.ones((4,)))


def test_constants_build_no_graph() -> None:
    out = tn.exp(Tensor(np.ones(3))) * 2.0
    assert out.is_leaf
    assert not out.requires_grad


def test_softmax_rows_sum_to_one() -> None:
    x = Tensor(np.random.default_rng(8).normal(0.0, 50.0, (5, 7)))
    out = tn.softmax(x, axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), np.ones(5), atol=1e-12)
    assert np.all(out >= 0)


def test_layer_norm_statistics() -> None:
    x = Tensor(np.random.default_rng(9).normal(3.0, 2.0, (4, 64)))
    out = tn.layer_norm(x).data
    np.testing.assert_allclose(out.mean(axis=-1), np.zeros(4), atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), np.ones(4), atol=1e-4)


def test_top_k_mask() -> None:
    x = Tensor(np.array([[0.1, 0.7, 0.3, 0.9], [4.0, 3.0, 2.0, 1.0]]))
    out = tn.top_k_mask(x, 2).data
    np.testing.assert_array_equal(out, [[0.0, 0.7, 0.0, 0.9], [4.0, 3.0, 0.0, 0.0]])
    assert tn.top_k_indicator(x.data, 10).all()


def test_dropout() -> None:
    x = Tensor(np.ones((50, 50)))
    assert tn.dropout(x, 0.5, None) is x
    out = tn.dropout(x, 0.25, np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 1.0 / 0.75}
    assert 0 < np.count_nonzero(out == 0.0) < out.size


def test_clip() -> None:
    x = Tensor(np.array([-2.0, 0.5, 3.0]), requires_grad=True)
    tn.sum(tn.clip(x, -1.0, 1.0) * 3.0).backward()
    assert x.grad is not None
    np.testing.assert_array_equal(x.grad, [0.0, 3.0, 0.0])


class TestParamRegistry:
    """Registration, snapshots and gradient bookkeeping."""

    def test_duplicate_name(self) -> None:
        registry = ParamRegistry()
        registry.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="already registered"):
            registry.add("w", np.zeros(2))

    def test_snapshot_and_load(self) -> None:
        registry = ParamRegistry()
        w = registry.add("w", np.arange(4.0))
        saved = registry.snapshot()
        w.data += 1.0
        assert saved["w"][0] == 0.0
        registry.load(saved)
        np.testing.assert_array_equal(w.data, np.arange(4.0))
        with pytest.raises(ShapeMismatchError):
            registry.load({"w": np.zeros(3)})

    def test_grad_norm(self) -> None:
        registry = ParamRegistry()
        a = registry.add("a", np.zeros(2))
        b = registry.add("b", np.zeros(1))
        a.grad = np.array([3.0, 0.0])
        b.grad = np.array([4.0])
        assert registry.grad_norm() == pytest.approx(5.0)
        assert registry.num_parameters() == 3
        registry.zero_grad()
        assert registry.grad_norm() == 0.0
        assert registry.names() == ["a", "b"]
