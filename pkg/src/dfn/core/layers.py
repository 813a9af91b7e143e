"""Parameter storage, dense stacks and GRU cells."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

LEAKY_SLOPE = 0.01


class ParameterStore:
    """Named parameter tensors with per-tensor frozen flags.

    Insertion order is preserved; it defines checkpoint layout and the order
    in which the optimizer visits tensors.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(value, dtype=T.DTYPE), requires_grad=True, op=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def freeze(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self._frozen.add(n)
            self._params[n].requires_grad = False

    def unfreeze(self, prefix: str = "") -> None:
        for n in self.names(prefix):
            self._frozen.discard(n)
            self._params[n].requires_grad = True

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n not in self._frozen]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def load_state(self, arrays: dict, strict: bool = True) -> None:
        for n, a in arrays.items():
            if n not in self._params:
                if strict:
                    raise KeyError(f"unexpected parameter in state: {n}")
                continue
            if self._params[n].shape != np.shape(a):
                raise ValueError(f"shape mismatch for {n}: {self._params[n].shape} vs {np.shape(a)}")
            self._params[n].data = np.array(a, dtype=T.DTYPE)
        if strict:
            missing = set(self._params) - set(arrays)
            if missing:
                raise KeyError(f"missing parameters in state: {sorted(missing)}")

    def merge(self, other: "ParameterStore", frozen: bool = False) -> None:
        for n, t in other.items():
            if n in self._params:
                raise KeyError(f"duplicate parameter name: {n}")
            self._params[n] = t
            if frozen or other.is_frozen(n):
                self._frozen.add(n)
                t.requires_grad = False


@dataclass
class DenseSpec:
    """Layer widths including the input width, e.g. ``[76, 256, 128, 16]``.

    Hidden layers use a leaky rectifier; the final layer is affine only.
    """
    widths: Sequence[int]
    negative_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2:
            raise ValueError("DenseSpec needs at least one layer (two widths)")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"layer widths must be positive: {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]


def mlp_spec(in_dim: int, hidden: int, n_hidden: int, out_dim: int) -> DenseSpec:
    return DenseSpec([in_dim] + [hidden] * n_hidden + [out_dim])


def _fan_in_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_dense(store: ParameterStore, prefix: str, spec: DenseSpec,
               rng: np.random.Generator, zero: bool = False) -> None:
    for i in range(spec.n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        w = np.zeros((fan_in, fan_out)) if zero else _fan_in_uniform(rng, fan_in, (fan_in, fan_out))
        store.add(f"{prefix}.w{i}", w)
        store.add(f"{prefix}.b{i}", np.zeros(fan_out))


def dense_forward(spec: DenseSpec, store: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    if x.shape[-1] != spec.in_dim:
        raise ValueError(f"{prefix}: input width {x.shape[-1]} != expected {spec.in_dim}")
    h = x
    last = spec.n_layers - 1
    for i in range(spec.n_layers):
        h = T.linear(h, store[f"{prefix}.w{i}"], store[f"{prefix}.b{i}"],
                     spec.negative_slope if i < last else None)
    return h


@dataclass
class GRUSpec:
    input_dim: int
    hidden_dim: int
    layers: int = 1
    _dims: list = field(init=False, repr=False)

    def __post_init__(self):
        self._dims = [self.input_dim] + [self.hidden_dim] * (self.layers - 1)


def init_gru(store: ParameterStore, prefix: str, spec: GRUSpec,
             rng: np.random.Generator, zero: bool = False) -> None:
    H = spec.hidden_dim
    for layer, d_in in enumerate(spec._dims):
        p = f"{prefix}.l{layer}"
        if zero:
            w_ih, w_hh = np.zeros((d_in, 3 * H)), np.zeros((H, 3 * H))
        else:
            w_ih = _fan_in_uniform(rng, H, (d_in, 3 * H))
            w_hh = _fan_in_uniform(rng, H, (H, 3 * H))
        store.add(f"{p}.w_ih", w_ih)
        store.add(f"{p}.w_hh", w_hh)
        store.add(f"{p}.b_ih", np.zeros(3 * H))
        store.add(f"{p}.b_hh", np.zeros(3 * H))


def gru_cell_step(store: ParameterStore, prefix: str, x: Tensor, h: Tensor) -> Tensor:
    """One GRU step; gate layout in the packed weights is (reset, update, candidate)."""
    w_ih = store[f"{prefix}.w_ih"]
    w_hh = store[f"{prefix}.w_hh"]
    if x.shape[-1] != w_ih.shape[0]:
        raise ValueError(f"{prefix}: input width {x.shape[-1]} != expected {w_ih.shape[0]}")
    if h.shape[-1] != w_hh.shape[0]:
        raise ValueError(f"{prefix}: hidden width {h.shape[-1]} != expected {w_hh.shape[0]}")
    return T.gru_cell(x, h, w_ih, w_hh, store[f"{prefix}.b_ih"], store[f"{prefix}.b_hh"])


def stacked_gru_step(store: ParameterStore, prefix: str, x: Tensor,
                     hidden: Sequence[Tensor]) -> list[Tensor]:
    out = []
    inp = x
    for layer, h in enumerate(hidden):
        inp = gru_cell_step(store, f"{prefix}.l{layer}", inp, h)
        out.append(inp)
    return out
