"""Finite-difference verification of every differentiable operation.

Each registered check builds small random inputs, contracts the op's output
against a fixed random cotangent to get a scalar, and compares the tape
gradient of every input element with central differences (step 1e-6).
Inputs are nudged away from kinks (relu/abs at 0, bilinear cell borders) so
the comparison is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .bezier import BezierRegion, bezier_align
from .rng import Xoshiro256

FD_STEP = 1e-6
TOLERANCE = 1e-4


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_err(a: np.ndarray, f: np.ndarray) -> float:
    # floor keeps central-difference roundoff (~1e-10 absolute) from being
    # amplified into spurious relative error on near-zero gradients
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-5)
    return float((np.abs(a - f) / denom).max())


def _away_from(x: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Push values at least ``margin`` away from 0 (kink of relu/abs)."""
    out = x.copy()
    small = np.abs(out) < margin
    out[small] = np.where(out[small] >= 0, margin, -margin)
    return out


def check_gradients(fn, inputs: list[np.ndarray], seed: int = 0) -> float:
    """Max relative error between tape and finite-difference gradients.

    ``fn`` maps a list of Tensors to one output Tensor; its output is
    contracted against a fixed random cotangent so every output element
    contributes.
    """
    probe = fn([Tensor(x) for x in inputs])
    cot = Xoshiro256(seed ^ 0xC07A96E7).uniform_array(probe.shape, -1.0, 1.0)

    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(tensors)
        loss = ad.sum_all(ad.mul(out, Tensor(cot)))
    backward(loss, tape)

    def value(arrays):
        out = fn([Tensor(x) for x in arrays])
        return float((out.data * cot).sum())

    worst = 0.0
    for i, x in enumerate(inputs):
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(x)
        fd = np.zeros_like(x)
        flat = x.ravel()
        for j in range(flat.size):
            orig = flat[j]
            work = [a.copy() for a in inputs]
            work[i].ravel()[j] = orig + FD_STEP
            up = value(work)
            work[i].ravel()[j] = orig - FD_STEP
            down = value(work)
            fd.ravel()[j] = (up - down) / (2 * FD_STEP)
        worst = max(worst, _rel_err(analytic, fd))
    return worst


# ---------------------------------------------------------------------------
# per-op check builders


def _rand(stream, shape, lo=-2.0, hi=2.0):
    return stream.uniform_array(shape, lo, hi)


def _check_add(stream):
    return check_gradients(lambda t: ad.add(t[0], t[1]),
                           [_rand(stream, (3, 4)), _rand(stream, (3, 4))])


def _check_add_broadcast(stream):
    return check_gradients(lambda t: ad.add(t[0], t[1]),
                           [_rand(stream, (5, 3)), _rand(stream, (1, 3))])


def _check_sub(stream):
    return check_gradients(lambda t: ad.sub(t[0], t[1]),
                           [_rand(stream, (3, 4)), _rand(stream, (3, 4))])


def _check_mul(stream):
    return check_gradients(lambda t: ad.mul(t[0], t[1]),
                           [_rand(stream, (3, 4)), _rand(stream, (3, 4))])


def _check_scale(stream):
    return check_gradients(lambda t: ad.scale(t[0], -1.7), [_rand(stream, (3, 4))])


def _check_abs(stream):
    return check_gradients(lambda t: ad.abs_(t[0]), [_away_from(_rand(stream, (4, 5)))])


def _check_relu(stream):
    return check_gradients(lambda t: ad.relu(t[0]), [_away_from(_rand(stream, (4, 5)))])


def _check_rsqrt(stream):
    return check_gradients(lambda t: ad.rsqrt(t[0], eps=1e-9),
                           [_rand(stream, (4, 5), 0.1, 2.0)])


def _check_sigmoid(stream):
    return check_gradients(lambda t: ad.sigmoid(t[0]), [_rand(stream, (4, 5))])


def _check_tanh(stream):
    return check_gradients(lambda t: ad.tanh(t[0]), [_rand(stream, (4, 5))])


def _check_softmax(stream):
    return check_gradients(lambda t: ad.softmax(t[0]), [_rand(stream, (3, 6))])


def _check_transpose2d(stream):
    return check_gradients(lambda t: ad.transpose2d(t[0]), [_rand(stream, (3, 5))])


def _check_reshape(stream):
    return check_gradients(lambda t: ad.reshape(t[0], (2, 10)), [_rand(stream, (4, 5))])


def _check_concat(stream):
    return check_gradients(lambda t: ad.concat(list(t), axis=1),
                           [_rand(stream, (2, 3)), _rand(stream, (2, 4))])


def _check_matmul(stream):
    return check_gradients(lambda t: ad.matmul(t[0], t[1]),
                           [_rand(stream, (3, 4)), _rand(stream, (4, 2))])


def _check_linear(stream):
    return check_gradients(lambda t: ad.linear(t[0], t[1], t[2]),
                           [_rand(stream, (3, 5)), _rand(stream, (4, 5)), _rand(stream, (4,))])


def _check_conv2d(stream):
    return check_gradients(
        lambda t: ad.conv2d(t[0], t[1], t[2], stride=1, pad=1),
        [_rand(stream, (2, 3, 5, 7)), _rand(stream, (4, 3, 3, 3)), _rand(stream, (4,))])


def _check_conv2d_strided(stream):
    return check_gradients(
        lambda t: ad.conv2d(t[0], t[1], t[2], stride=2, pad=1),
        [_rand(stream, (1, 2, 6, 8)), _rand(stream, (3, 2, 4, 4)), _rand(stream, (3,))])


def _check_mean_pool_height(stream):
    return check_gradients(lambda t: ad.mean_pool_height(t[0]), [_rand(stream, (2, 3, 4, 5))])


def _grid_points(stream, n, w, h):
    # interior points with fractional parts away from cell borders
    pts = np.empty((n, 2))
    for i in range(n):
        pts[i, 0] = stream.randint(w - 1) + stream.uniform(0.2, 0.8)
        pts[i, 1] = stream.randint(h - 1) + stream.uniform(0.2, 0.8)
    return pts


def _check_bilinear_map(stream):
    grid = _grid_points(stream, 6, 5, 4)
    return check_gradients(lambda t: ad.bilinear_sample(t[0], grid), [_rand(stream, (3, 4, 5))])


def _check_bilinear_grid(stream):
    fmap = _rand(stream, (3, 4, 5))
    return check_gradients(lambda t: ad.bilinear_sample(Tensor(fmap), t[0]),
                           [_grid_points(stream, 6, 5, 4)])


def _check_softmax_cross_entropy(stream):
    targets = [stream.randint(5) for _ in range(3)]
    return check_gradients(lambda t: ad.softmax_cross_entropy(t[0], targets),
                           [_rand(stream, (3, 5))])


def _check_binary_cross_entropy(stream):
    labels = np.array([stream.randint(2) for _ in range(6)], dtype=np.float64)
    return check_gradients(lambda t: ad.binary_cross_entropy(t[0], labels),
                           [_rand(stream, (6,), 0.05, 0.95)])


def _check_sum(stream):
    return check_gradients(lambda t: ad.sum_all(t[0]), [_rand(stream, (3, 4))])


def _check_mean(stream):
    return check_gradients(lambda t: ad.mean_all(t[0]), [_rand(stream, (3, 4))])


def _check_bezier_align(stream):
    region = BezierRegion(
        top=np.array([[1.0, 1.0], [2.5, 0.6], [4.0, 0.8], [5.5, 1.2]]),
        bottom=np.array([[1.1, 3.0], [2.6, 3.4], [4.1, 3.2], [5.4, 2.9]]),
    )
    return check_gradients(
        lambda t: bezier_align(t[0], region, 3, 5, 1.0), [_rand(stream, (2, 5, 8))])


REGISTRY: list[tuple[str, object]] = [
    ("add", _check_add),
    ("add_broadcast", _check_add_broadcast),
    ("sub", _check_sub),
    ("mul", _check_mul),
    ("scale", _check_scale),
    ("abs", _check_abs),
    ("relu", _check_relu),
    ("rsqrt", _check_rsqrt),
    ("sigmoid", _check_sigmoid),
    ("tanh", _check_tanh),
    ("softmax", _check_softmax),
    ("transpose2d", _check_transpose2d),
    ("reshape", _check_reshape),
    ("concat", _check_concat),
    ("matmul", _check_matmul),
    ("linear", _check_linear),
    ("conv2d", _check_conv2d),
    ("conv2d_strided", _check_conv2d_strided),
    ("mean_pool_height", _check_mean_pool_height),
    ("bilinear_sample_map", _check_bilinear_map),
    ("bilinear_sample_grid", _check_bilinear_grid),
    ("softmax_cross_entropy", _check_softmax_cross_entropy),
    ("binary_cross_entropy", _check_binary_cross_entropy),
    ("sum", _check_sum),
    ("mean", _check_mean),
    ("bezier_align", _check_bezier_align),
]


def run_suite(seed: int = 2024) -> list[CheckResult]:
    """Run every registered check once; deterministic in the seed."""
    results = []
    for i, (name, fn) in enumerate(REGISTRY):
        stream = Xoshiro256((seed << 8) ^ i)
        results.append(CheckResult(op=name, max_rel_err=fn(stream)))
    return results
