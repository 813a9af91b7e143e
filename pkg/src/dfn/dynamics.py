"""Stage 3: stochastic latent RNN with future-conditioned transitions.

Per frame ``t`` the generative path is::

    f_t ~ p(f | h_t)              future state
    m_t = g_m(f_t, h_t)           decoded future summary
    s_t ~ p(s | h_t, m_t)         current state
    z_t = g_z(s_t, h_t)           latent frame
    h_{t+1} = GRU(h_t, [s_t, f_t])

Training uses the posteriors ``q(s | h, z, m)`` and ``q(f | h, m)`` with
``m`` from the frozen trajectory encoder, plus the temporal-difference terms
tying ``s_{t1}`` to ``s_{t2}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .core import tensor as T
from .core.distributions import (LOG_2PI, DiagGaussian, gaussian_kl, gaussian_kl_standard,
                                 gaussian_sample)
from .core.layers import (GRUSpec, ParameterStore, dense_forward, init_dense, init_gru, mlp_spec,
                          stacked_gru_step)
from .core.tensor import NonFiniteError, Tensor

PREFIX = "dyn"


@dataclass
class DynamicsConfig:
    z_dim: int = 16
    summary_dim: int = 128
    s_dim: int = 32
    f_dim: int = 64
    h_dim: int = 128
    h_layers: int = 2
    horizon: int = 16
    td_pairs: int = 4
    # hidden widths / depths of each network
    prior_f_hidden: tuple = (256, 2)
    summary_hidden: tuple = (128, 3)
    prior_s_hidden: tuple = (128, 1)
    feature_hidden: tuple = (128, 3)
    post_s_hidden: tuple = (32, 2)
    post_f_hidden: tuple = (512, 2)
    td_post_hidden: tuple = (32, 2)
    skip_hidden: tuple = (32, 3)

    @property
    def h_total(self) -> int:
        return self.h_dim * self.h_layers


@dataclass
class LossWeights:
    beta: float = 1.0  # KL annealing factor, multiplies every KL term
    kl_s: float = 1.0
    kl_f: float = 1.0
    nll_z: float = 1.0
    nll_m: float = 1.0
    td_kl: float = 1.0
    td_rec: float = 1.0
    include_constants: bool = False


@dataclass
class LossReport:
    total: float
    kl_s: float
    kl_f: float
    nll_z: float
    nll_m: float
    td_kl: float
    td_rec: float
    loss: Tensor | None = field(default=None, compare=False, repr=False)

    TERMS = ("kl_s", "kl_f", "nll_z", "nll_m", "td_kl", "td_rec")

    def as_dict(self) -> dict:
        return {"total": self.total, **{k: getattr(self, k) for k in self.TERMS}}


class ElboError(FloatingPointError):
    def __init__(self, term: str, frame: int, cause: Exception):
        self.term, self.frame = term, frame
        super().__init__(f"non-finite value in term '{term}' at frame {frame}: {cause}")


class GenerationError(FloatingPointError):
    def __init__(self, frame: int, partial: np.ndarray, cause: Exception):
        self.frame = frame
        self.partial = partial
        super().__init__(f"generation aborted at frame {frame}: {cause}")


class NetworkDecoders:
    """Default decoders used inside :func:`sequence_elbo`; targets are ignored."""

    def __init__(self, model: "DynamicsModel"):
        self.model = model

    def feature(self, s, h, z_target):
        return self.model.feature_decoder(s, h)

    def summary(self, f, h, m_target):
        return self.model.summary_decoder(f, h)

    def skip(self, s1, delta, s2_target):
        return self.model.skip_predict(s1, delta)


class DynamicsModel:
    NETS = ("prior_f", "summary", "prior_s", "feature", "post_s", "post_f", "td_post", "skip")

    def __init__(self, config: DynamicsConfig | None = None, store: ParameterStore | None = None,
                 seed: int = 0):
        self.config = c = config or DynamicsConfig()
        Ht, S, F, M, Z = c.h_total, c.s_dim, c.f_dim, c.summary_dim, c.z_dim
        self.specs = {
            "prior_f": mlp_spec(Ht, *c.prior_f_hidden, 2 * F),
            "summary": mlp_spec(F + Ht, *c.summary_hidden, M),
            "prior_s": mlp_spec(Ht + M, *c.prior_s_hidden, 2 * S),
            "feature": mlp_spec(S + Ht, *c.feature_hidden, Z),
            "post_s": mlp_spec(Ht + Z + M, *c.post_s_hidden, 2 * S),
            "post_f": mlp_spec(Ht + M, *c.post_f_hidden, 2 * F),
            "td_post": mlp_spec(S + 2 * Ht, *c.td_post_hidden, 2 * S),
            "skip": mlp_spec(S + 1, *c.skip_hidden, S),
        }
        self.gru = GRUSpec(S + F, c.h_dim, c.h_layers)
        if store is None:
            store = ParameterStore(seed)
            rng = np.random.default_rng(seed)
            for name in self.NETS:
                init_dense(store, f"{PREFIX}.{name}", self.specs[name], rng)
            init_gru(store, f"{PREFIX}.gru", self.gru, rng)
        self.store = store

    def _mlp(self, name: str, *inputs) -> Tensor:
        x = inputs[0] if len(inputs) == 1 else T.concat(list(inputs), axis=-1)
        return dense_forward(self.specs[name], self.store, f"{PREFIX}.{name}", x)

    # -- state helpers -------------------------------------------------------
    def initial_state(self, batch_shape=()) -> list[Tensor]:
        c = self.config
        return [Tensor(np.zeros(tuple(batch_shape) + (c.h_dim,))) for _ in range(c.h_layers)]

    @staticmethod
    def flat(h: Sequence[Tensor]) -> Tensor:
        return h[0] if len(h) == 1 else T.concat(list(h), axis=-1)

    # -- networks --------------------------------------------------------------
    def future_prior(self, h) -> DiagGaussian:
        return DiagGaussian.from_params(self._mlp("prior_f", self.flat(h)))

    def summary_decoder(self, f, h) -> Tensor:
        return self._mlp("summary", f, self.flat(h))

    def current_prior(self, h, m) -> DiagGaussian:
        return DiagGaussian.from_params(self._mlp("prior_s", self.flat(h), m))

    def feature_decoder(self, s, h) -> Tensor:
        return self._mlp("feature", s, self.flat(h))

    def state_update(self, h, s, f) -> list[Tensor]:
        return stacked_gru_step(self.store, f"{PREFIX}.gru", T.concat([s, f], axis=-1), h)

    def infer_current(self, h, z, m) -> DiagGaussian:
        return DiagGaussian.from_params(self._mlp("post_s", self.flat(h), z, m))

    def infer_future(self, h, m) -> DiagGaussian:
        return DiagGaussian.from_params(self._mlp("post_f", self.flat(h), m))

    def td_posterior(self, s2, h1, h2) -> DiagGaussian:
        return DiagGaussian.from_params(self._mlp("td_post", s2, self.flat(h1), self.flat(h2)))

    def skip_predict(self, s1, delta_t) -> Tensor:
        """Predict ``s_{t1 + delta_t}`` from ``s_{t1}``; ``delta_t`` in [1, H]."""
        s1 = T.as_tensor(s1)
        delta = np.asarray(delta_t, dtype=np.float64)
        H = self.config.horizon
        if np.any(delta < 1) or np.any(delta > H):
            raise ValueError(f"delta_t must lie in [1, {H}], got {delta_t}")
        dt = np.broadcast_to(delta / H, s1.shape[:-1])[..., None]
        return self._mlp("skip", s1, Tensor(np.array(dt)))

    # -- checkpoint ----------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for f in fields(self.config):
            out[f"meta.{f.name}"] = np.array(getattr(self.config, f.name), dtype=np.float64)
        out.update(self.store.state())
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "DynamicsModel":
        kwargs = {}
        for f in fields(DynamicsConfig):
            v = tensors[f"meta.{f.name}"]
            kwargs[f.name] = tuple(int(x) for x in v) if np.ndim(v) else int(v)
        model = cls(DynamicsConfig(**kwargs))
        model.store.load_state({k: v for k, v in tensors.items() if k.startswith(PREFIX + ".")})
        return model


def sample_td_pairs(n_steps: int, horizon: int, k: int, rng: np.random.Generator,
                    batch: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``k`` pairs (t1, t2) per batch row with 1 <= t2 - t1 <= min(H, n_steps - 1)."""
    max_dt = min(horizon, n_steps - 1)
    if max_dt < 1:
        raise ValueError("need at least 2 unrolled steps for temporal-difference pairs")
    dt = rng.integers(1, max_dt + 1, size=(batch, k))
    t1 = np.floor(rng.random((batch, k)) * (n_steps - dt)).astype(int)
    return t1, t1 + dt


def sequence_elbo(model: DynamicsModel, z: np.ndarray, m: np.ndarray,
                  weights: LossWeights | None = None, rng: np.random.Generator | None = None,
                  decoders=None) -> LossReport:
    """Negative ``L_d + L_T`` for a batch of windows, as a minimization loss.

    ``z``: (B, W, z_dim) latent frames; ``m``: (B, W - H, M) future summaries
    for the first ``W - H`` frames (the frames the loop visits).  Per-frame
    terms are averaged over batch and frames; TD terms over batch and pairs.
    """
    weights = weights or LossWeights()
    rng = rng if rng is not None else np.random.default_rng(0)
    decoders = decoders or NetworkDecoders(model)
    c = model.config
    z = np.asarray(z, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if z.ndim == 2:
        z, m = z[None], m[None]
    B, W, _ = z.shape
    n_steps = m.shape[1]
    if W < c.horizon + 2 or n_steps < 2 or n_steps > W:
        raise ValueError(f"window of {W} frames with {n_steps} summaries is too short "
                         f"for horizon {c.horizon}")

    h = model.initial_state((B,))
    acc = {k: [] for k in LossReport.TERMS}
    hs, ss = [], []
    term = "state"
    t = 0
    try:
        for t in range(n_steps):
            zt, mt = Tensor(z[:, t]), Tensor(m[:, t])
            term = "kl_f"
            q_f = model.infer_future(h, mt)
            p_f = model.future_prior(h)
            f = gaussian_sample(q_f, rng)
            acc["kl_f"].append(gaussian_kl(q_f, p_f))
            term = "nll_m"
            m_hat = decoders.summary(f, h, mt)
            acc["nll_m"].append(T.tsum(T.square(mt - m_hat), axis=-1) * 0.5)
            term = "kl_s"
            q_s = model.infer_current(h, zt, mt)
            p_s = model.current_prior(h, m_hat)
            s = gaussian_sample(q_s, rng)
            acc["kl_s"].append(gaussian_kl(q_s, p_s))
            term = "nll_z"
            z_hat = decoders.feature(s, h, zt)
            acc["nll_z"].append(T.tsum(T.square(zt - z_hat), axis=-1) * 0.5)
            hs.append(model.flat(h))
            ss.append(s)
            term = "state"
            h = model.state_update(h, s, f)

        t = -1
        term = "td_kl"
        t1, t2 = sample_td_pairs(n_steps, c.horizon, c.td_pairs, rng, B)
        rows = np.arange(B)[:, None]
        H_all, S_all = T.stack(hs, axis=1), T.stack(ss, axis=1)
        h1, h2, s2 = H_all[rows, t1], H_all[rows, t2], S_all[rows, t2]
        q_td = model.td_posterior(s2, [h1], [h2])
        acc["td_kl"].append(gaussian_kl_standard(q_td))
        s1 = gaussian_sample(q_td, rng)
        term = "td_rec"
        s2_rec = decoders.skip(s1, (t2 - t1).astype(np.float64), s2)
        acc["td_rec"].append(T.tsum(T.square(s2 - s2_rec), axis=-1) * 0.5)
    except NonFiniteError as exc:
        raise ElboError(term, t, exc) from exc

    means = {k: T.stack(v, axis=0).mean() if len(v) > 1 else v[0].mean() for k, v in acc.items()}
    w = weights
    loss = (means["kl_s"] * (w.beta * w.kl_s) + means["kl_f"] * (w.beta * w.kl_f)
            + means["td_kl"] * (w.beta * w.td_kl) + means["nll_z"] * w.nll_z
            + means["nll_m"] * w.nll_m + means["td_rec"] * w.td_rec)
    if w.include_constants:
        loss = loss + gaussian_constant(c, w)
    return LossReport(float(loss.data), *(float(means[k].data) for k in LossReport.TERMS), loss=loss)


def gaussian_constant(config: DynamicsConfig, weights: LossWeights) -> float:
    """Normalization constant of the three unit-variance likelihood terms."""
    return 0.5 * LOG_2PI * (weights.nll_z * config.z_dim + weights.nll_m * config.summary_dim
                            + weights.td_rec * config.s_dim)


# -- generation ---------------------------------------------------------------

@dataclass
class GenerationResult:
    motion: np.ndarray   # (N, length, 76) generated PoseFeature frames
    z: np.ndarray        # (N, P + length, z_dim); first P rows are the warm-up
    s: np.ndarray        # (N, P + length, s_dim)
    prefix_len: int


def _stacked_noise(rngs: Sequence[np.random.Generator], dim: int) -> np.ndarray:
    return np.stack([r.standard_normal(dim) for r in rngs])


def generate(model: DynamicsModel, pose_ae, prefix: np.ndarray, length: int,
             rngs: Sequence[np.random.Generator] | np.random.Generator,
             resample_period: int = 1) -> GenerationResult:
    """Open-loop rollout of ``length`` frames after warming up on ``prefix``.

    ``prefix`` holds raw PoseFeature frames (P, 76).  One sequence is
    generated per RNG; each sequence draws its noise from its own stream so a
    batch matches the same seeds run one by one up to matmul round-off.

    Warm-up: ``f`` is the prior mean, ``m`` is decoded from it and ``s`` is
    the posterior mean given the observed prefix frame.
    """
    from .core.tensor import no_grad

    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    rngs = list(rngs)
    N = len(rngs)
    prefix = np.asarray(prefix, dtype=np.float64)
    P = prefix.shape[0]
    if not 2 <= P <= 64:
        raise ValueError(f"prefix length must be in [2, 64], got {P}")
    if length < 0:
        raise ValueError("length must be non-negative")
    if resample_period < 1:
        raise ValueError("resample_period must be >= 1")
    c = model.config
    motion = np.zeros((N, length, pose_ae.dim))
    z_trace = np.zeros((N, P + length, c.z_dim))
    s_trace = np.zeros((N, P + length, c.s_dim))
    k = -1
    with no_grad():
        z_prefix = pose_ae.encode(Tensor(pose_ae.normalize(prefix))).data
        h = model.initial_state((N,))
        for t in range(P):
            f = model.future_prior(h).mean
            m_hat = model.summary_decoder(f, h)
            zt = Tensor(np.broadcast_to(z_prefix[t], (N, c.z_dim)).copy())
            s = model.infer_current(h, zt, m_hat).mean
            z_trace[:, t] = zt.data
            s_trace[:, t] = s.data
            h = model.state_update(h, s, f)
        try:
            f = None
            for k in range(length):
                if k % resample_period == 0 or f is None:
                    p_f = model.future_prior(h)
                    f = gaussian_sample(p_f, noise=_stacked_noise(rngs, c.f_dim))
                m_hat = model.summary_decoder(f, h)
                p_s = model.current_prior(h, m_hat)
                s = gaussian_sample(p_s, noise=_stacked_noise(rngs, c.s_dim))
                z = model.feature_decoder(s, h)
                motion[:, k] = pose_ae.decode(z).data
                z_trace[:, P + k] = z.data
                s_trace[:, P + k] = s.data
                h = model.state_update(h, s, f)
        except (NonFiniteError, ValueError) as exc:
            raise GenerationError(k, motion[:, :max(k, 0)].copy(), exc) from exc
    return GenerationResult(motion, z_trace, s_trace, P)
