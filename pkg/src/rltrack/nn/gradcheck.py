"""Central-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    checked: int
    per_param: Dict[str, float]

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], float],
    analytic: Dict[str, np.ndarray],
    params: Dict[str, Tensor],
    eps: float = 1e-3,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    freeze_switches: bool = False,
) -> GradCheckResult:
    """Compare ``analytic`` gradients with central differences of ``loss_fn``.

    ``loss_fn`` re-runs the forward pass and returns a scalar; parameters are
    perturbed in place and restored. With ``max_entries`` only a random subset
    of each parameter's entries is probed (large fully connected layers).

    With ``freeze_switches`` the ReLU masks and max-pool winners of an
    unperturbed forward pass are held fixed during the probes. Deep piecewise
    linear networks otherwise flip some unit for almost any finite step, and
    the difference quotient then spans a kink instead of measuring a slope.
    """
    rng = rng or np.random.default_rng(0)
    if freeze_switches:
        with ops.frozen_switches() as tape:
            loss_fn()
        plain = loss_fn

        def loss_fn():
            with ops.frozen_switches(tape):
                return plain()

    per_param, worst_name, worst, checked = {}, "", 0.0, 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        g = analytic[name].reshape(-1)
        err = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = max(err, relative_error(float(g[i]), numeric))
            checked += 1
        per_param[name] = err
        if err >= worst:
            worst, worst_name = err, name
    return GradCheckResult(worst, worst_name, checked, per_param)
