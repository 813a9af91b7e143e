"""Adam with bias correction; frozen tensors are never written."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ParameterStore


@dataclass
class StepConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = None  # global gradient-norm clip, None disables


class Adam:
    def __init__(self, config: StepConfig | None = None):
        self.config = config or StepConfig()
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore, gradients: dict | None = None) -> None:
        """Apply one update.

        ``gradients`` maps names to arrays; when omitted the ``.grad`` slot of
        each trainable tensor is used (missing grads count as zero).
        """
        cfg = self.config
        grads = {}
        for name, t in store.trainable():
            g = gradients.get(name) if gradients is not None else t.grad
            if g is None:
                g = np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            grads[name] = g
        if cfg.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > cfg.clip_norm:
                scale = cfg.clip_norm / total
                grads = {n: g * scale for n, g in grads.items()}

        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, g in grads.items():
            t = store[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(t.data)
                self._v[name] = np.zeros_like(t.data)
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            t.data = t.data - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def optimizer_step(store: ParameterStore, gradients: dict, optimizer: Adam) -> ParameterStore:
    optimizer.step(store, gradients)
    return store
