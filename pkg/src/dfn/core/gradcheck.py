"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_name: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor] | Sequence[Tensor],
               step: float = 1e-4, max_coords: int = 200, seed: int = 0,
               floor: float = 1e-3) -> GradCheckReport:
    """Compare reverse-mode gradients of ``loss_fn()`` against central differences.

    At most ``max_coords`` coordinates, drawn with a seeded RNG across all
    ``params``, are probed.  The relative error of one coordinate is
    ``|a - n| / max(|a|, |n|, floor * G)`` where ``G`` is the largest analytic
    magnitude among the probed coordinates; the floor keeps round-off on
    near-zero entries from dominating.
    """
    if not isinstance(params, dict):
        params = {f"p{i}": p for i, p in enumerate(params)}
    names = list(params)
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                for n, p in params.items()}

    coords = [(n, idx) for n in names for idx in np.ndindex(params[n].shape)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    numeric = []
    for n, idx in coords:
        p = params[n]
        orig = p.data[idx]
        p.data[idx] = orig + step
        up = float(loss_fn().data)
        p.data[idx] = orig - step
        down = float(loss_fn().data)
        p.data[idx] = orig
        numeric.append((up - down) / (2.0 * step))

    a_vals = np.array([analytic[n][idx] for n, idx in coords])
    n_vals = np.array(numeric)
    scale = max(float(np.max(np.abs(a_vals), initial=0.0)), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a_vals), np.abs(n_vals)), floor * scale)
    err = np.abs(a_vals - n_vals) / denom
    if len(err) == 0:
        return GradCheckReport(0.0, "", (), 0.0, 0.0, 0)
    k = int(np.argmax(err))
    return GradCheckReport(float(err[k]), coords[k][0], coords[k][1],
                           float(a_vals[k]), float(n_vals[k]), len(coords))
