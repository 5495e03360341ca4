"""Central finite-difference gradient checks for every differentiable op."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from hsaw.autodiff import tensor as T
from hsaw.autodiff.conv import conv2d, deconv2d
from hsaw.rng import SplitMix64, derive_seed

STEP = 1e-3
TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    op: str
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def check_op(build: Callable[..., T.Tensor], inputs: list[np.ndarray]) -> float:
    """Compare backward() with finite differences for ``sum(build(*inputs) * R)``.

    Everything runs in float64 so that the finite-difference estimate is
    accurate enough to resolve a 1e-4 relative error.
    """
    rng = SplitMix64(derive_seed(len(inputs), *[a.shape for a in inputs]))
    leaves = [T.Tensor(a.astype(np.float64), requires_grad=True) for a in inputs]
    out = build(*leaves)
    weights = rng.uniform_range(-1.0, 1.0, out.data.size).reshape(out.shape)

    def scalar_loss(tensors):
        y = build(*tensors)
        return T.sum_all(T.mul(y, T.Tensor(weights)))

    scalar_loss(leaves).backward()
    worst = 0.0
    for leaf in leaves:
        def f():
            with T.no_grad():
                return scalar_loss([T.Tensor(l.data) for l in leaves]).item()

        num = numeric_grad(f, leaf.data)
        worst = max(worst, relative_error(leaf.grad, num))
    return worst


def _away_from_zero(a: np.ndarray, margin: float = 20 * STEP) -> np.ndarray:
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin + a, a)


def _cases(seed: int) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    r = SplitMix64(derive_seed(seed, "gradcheck"))

    def arr(*shape, lo=-1.0, hi=1.0):
        return r.uniform_range(lo, hi, int(np.prod(shape))).reshape(shape)

    def dim(lo, hi):
        return int(lo + r.uniform(1)[0] * (hi - lo + 1))

    n, cin, cout = dim(1, 2), dim(1, 3), dim(1, 3)
    hw = dim(4, 7)
    k = dim(1, 3)
    stride, pad = dim(1, 2), dim(0, 1)
    c = dim(1, 3)
    probs = arr(2, 3, lo=0.2, hi=0.8)
    targets = np.round(arr(2, 3, lo=0.0, hi=1.0))
    a = arr(2, 3)
    b = a + _away_from_zero(arr(2, 3))
    return {
        "conv2d": (
            lambda x, w, bb: conv2d(x, w, bb, stride, pad),
            [arr(n, cin, hw, hw), arr(cout, cin, k, k), arr(cout)],
        ),
        "deconv2d": (
            lambda x, w, bb: deconv2d(x, w, bb, stride, pad),
            [arr(n, cin, hw - 2, hw - 2), arr(cin, cout, k, k), arr(cout)],
        ),
        "leaky_relu": (lambda x: T.leaky_relu(x, 0.2), [_away_from_zero(arr(n, c, 3, 3))]),
        "relu": (T.relu, [_away_from_zero(arr(n, c, 3, 3))]),
        "sigmoid": (T.sigmoid, [arr(n, c, 3, 3, lo=-4, hi=4)]),
        "tanh": (T.tanh, [arr(n, c, 3, 3, lo=-2, hi=2)]),
        "concat_channels": (T.concat_channels, [arr(n, c, 3, 4), arr(n, dim(1, 3), 3, 4)]),
        "instance_norm": (T.instance_norm, [arr(n, c, 4, 4)]),
        "add": (T.add, [arr(2, 3), arr(2, 3)]),
        "mul": (T.mul, [arr(2, 3), arr(2, 3)]),
        "mean": (T.mean_all, [arr(3, 4)]),
        "l1_loss": (T.l1_loss, [a, b]),
        "bce_loss": (T.bce_loss, [probs, targets]),
        "bce_with_logits": (lambda z: T.bce_with_logits(z, 1.0), [arr(2, 3, lo=-3, hi=3)]),
    }


def run_gradcheck(n_seeds: int = 20, base_seed: int = 0) -> list[GradcheckResult]:
    results = []
    for i in range(n_seeds):
        seed = base_seed + i
        for name, (build, inputs) in _cases(seed).items():
            results.append(GradcheckResult(name, seed, check_op(build, inputs)))
    return results
