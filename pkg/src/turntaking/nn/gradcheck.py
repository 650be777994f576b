"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from .layers import Parameter
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)


class GradientCheckError(AssertionError):
    pass


def gradient_check(
    closure: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float | None = None,
    n_coords: int = 200,
    seed: int = 0,
) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``closure`` must rebuild the loss deterministically (reseed any dropout
    inside it).  At least ``n_coords`` coordinates are drawn uniformly over all
    parameters; with fewer coordinates in total, all are checked.  If ``tol``
    is given, exceeding it raises :class:`GradientCheckError`.
    """
    for p in params:
        p.grad = None
    loss = closure()
    backward(loss)
    with no_grad():
        again = closure().data
    if not np.array_equal(loss.data, again):
        raise GradientCheckError("closure is not deterministic: two forward passes disagree")
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= n_coords else np.sort(rng.choice(total, n_coords, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with no_grad():
        for k in flat:
            pi = int(np.searchsorted(offsets, k, side="right") - 1)
            p, j = params[pi], int(k - offsets[pi])
            view = p.data.reshape(-1)
            orig = view[j]
            view[j] = orig + h
            fp = float(closure().data)
            view[j] = orig - h
            fm = float(closure().data)
            view[j] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic[pi].reshape(-1)[j])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > worst:
                worst = err
                log.debug("param %d coord %d: analytic %.3e numeric %.3e", pi, j, ana, num)
    for p in params:
        p.grad = None
    if tol is not None and worst > tol:
        raise GradientCheckError(f"max relative error {worst:.3e} exceeds {tol:.1e}")
    return worst
