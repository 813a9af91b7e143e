"""Stage 2: GRU sequence-to-sequence embedding of short latent trajectories."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tensor as T
from .core.layers import (DenseSpec, GRUSpec, ParameterStore, dense_forward, gru_cell_step,
                          init_dense, init_gru)
from .core.tensor import Tensor
from .pose_autoencoder import PoseAutoencoder

PREFIX = "traj"


@dataclass
class TrajectoryConfig:
    horizon: int = 16
    summary_dim: int = 128
    teacher_forcing_ratio: float = 0.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")


@dataclass
class TrajectoryLoss:
    total: Tensor
    rec: Tensor
    smooth: Tensor


class TrajectoryEmbedding:
    """Encoder GRU over ``z_t..z_{t+H}`` -> ``m_t``; decoder GRU unrolls ``H``
    latent frames from ``m_t`` and ``z_t``."""

    def __init__(self, z_dim: int, config: TrajectoryConfig | None = None,
                 store: ParameterStore | None = None, seed: int = 0):
        self.z_dim = z_dim
        self.config = config or TrajectoryConfig()
        M = self.config.summary_dim
        self.enc_gru = GRUSpec(z_dim, M)
        self.dec_gru = GRUSpec(z_dim, M)
        self.init_map = DenseSpec([M, M])
        self.out_map = DenseSpec([M, z_dim])
        if store is None:
            store = ParameterStore(seed)
            rng = np.random.default_rng(seed)
            init_gru(store, f"{PREFIX}.enc", self.enc_gru, rng)
            init_dense(store, f"{PREFIX}.init", self.init_map, rng)
            init_gru(store, f"{PREFIX}.dec", self.dec_gru, rng)
            init_dense(store, f"{PREFIX}.out", self.out_map, rng)
        self.store = store

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def encode(self, z_seq) -> Tensor:
        """``z_seq``: (..., H+1, z_dim) -> summary (..., M)."""
        z_seq = T.as_tensor(z_seq)
        H = self.horizon
        if z_seq.shape[-2] != H + 1:
            raise ValueError(f"trajectory length {z_seq.shape[-2]} != H+1 = {H + 1}")
        h = Tensor(np.zeros(z_seq.shape[:-2] + (self.config.summary_dim,)))
        for k in range(H + 1):
            h = gru_cell_step(self.store, f"{PREFIX}.enc.l0", z_seq[..., k, :], h)
        return h

    def decode(self, m, z_start, horizon: int | None = None, teacher=None,
               rng: np.random.Generator | None = None) -> Tensor:
        """Unroll ``horizon`` frames; returns (..., horizon, z_dim).

        Each output is fed back as the next input.  With ``teacher`` (the
        ground-truth frames, (..., horizon, z_dim)) and a positive
        ``teacher_forcing_ratio``, the true frame is fed instead with that
        probability per step.
        """
        m, inp = T.as_tensor(m), T.as_tensor(z_start)
        H = self.horizon if horizon is None else int(horizon)
        h = dense_forward(self.init_map, self.store, f"{PREFIX}.init", m)
        ratio = self.config.teacher_forcing_ratio
        outs = []
        for k in range(H):
            h = gru_cell_step(self.store, f"{PREFIX}.dec.l0", inp, h)
            out = dense_forward(self.out_map, self.store, f"{PREFIX}.out", h)
            outs.append(out)
            if teacher is not None and ratio > 0 and rng is not None and rng.random() < ratio:
                inp = T.as_tensor(teacher)[..., k, :]
            else:
                inp = out
        return T.stack(outs, axis=-2)

    def encode_trajectory(self, z_seq: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.encode(Tensor(z_seq)).data

    def decode_trajectory(self, m: np.ndarray, z_start: np.ndarray, horizon: int) -> np.ndarray:
        with T.no_grad():
            return self.decode(Tensor(m), Tensor(z_start), horizon).data

    # -- checkpoint --------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        c = self.config
        out = {
            "meta.z_dim": np.array(self.z_dim),
            "meta.horizon_H": np.array(c.horizon),
            "meta.summary_dim": np.array(c.summary_dim),
            "meta.teacher_forcing_ratio": np.array(c.teacher_forcing_ratio),
        }
        out.update(self.store.state())
        return out

    @classmethod
    def from_tensors(cls, tensors: dict) -> "TrajectoryEmbedding":
        config = TrajectoryConfig(int(tensors["meta.horizon_H"]), int(tensors["meta.summary_dim"]),
                                  float(tensors["meta.teacher_forcing_ratio"]))
        model = cls(int(tensors["meta.z_dim"]), config)
        model.store.load_state({k: v for k, v in tensors.items() if k.startswith(PREFIX + ".")})
        return model


def joint_velocities(pose_ae: PoseAutoencoder, z_frames) -> Tensor:
    """Forward differences of decoded joint positions (model working space)."""
    pos = pose_ae.decode_normalized(z_frames)[..., :pose_ae.n_pos]
    return pos[..., 1:, :] - pos[..., :-1, :]


def trajectory_loss(model: TrajectoryEmbedding, pose_ae: PoseAutoencoder, z_window: np.ndarray,
                    z_decoded: Tensor | None = None, rng: np.random.Generator | None = None,
                    ) -> TrajectoryLoss:
    """``L_tl = L_rec + L_smooth`` for a batch of latent windows (..., H+1, z_dim).

    ``z_window`` comes from the frozen pose encoder.  ``z_decoded`` overrides
    the seq2seq output (used to stub a perfect model).  Both the original and
    reconstructed joint velocities are differences of positions decoded by
    the frozen pose decoder, starting from the shared first frame ``z_t``.
    """
    z = T.as_tensor(z_window)
    H = model.horizon
    if z.shape[-2] < H + 1:
        raise ValueError(f"window of {z.shape[-2]} frames is shorter than H+1 = {H + 1}")
    z = z[..., :H + 1, :]
    target = z[..., 1:, :]
    if z_decoded is None:
        m = model.encode(z)
        z_decoded = model.decode(m, z[..., 0, :], H, teacher=target, rng=rng)
    rec = T.tsum(T.square(target - z_decoded), axis=-1).mean()
    with T.no_grad():
        v_true = joint_velocities(pose_ae, z).data
    full = T.concat([z[..., :1, :], z_decoded], axis=-2)
    v_hat = joint_velocities(pose_ae, full)
    smooth = T.tsum(T.square(Tensor(v_true) - v_hat), axis=-1).mean()
    return TrajectoryLoss(rec + smooth, rec, smooth)
