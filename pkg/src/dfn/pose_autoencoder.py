"""Stage 1: per-frame pose/velocity auto-encoder with a quaternion + FK decoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import tensor as T
from .core.layers import DenseSpec, ParameterStore, dense_forward, init_dense
from .core.tensor import Tensor
from .kinematics import forward_kinematics, quat_normalize
from .mocap.features import N_VEL, NormStats
from .skeleton import Joint, Skeleton

PREFIX = "pose"


@dataclass
class PoseAEConfig:
    pose_code_dim: int = 12
    vel_code_dim: int = 4
    enc_widths: tuple = (256, 128)
    quat_dec_widths: tuple = (128, 128)
    vel_dec_widths: tuple = (32,)

    @property
    def code_dim(self) -> int:
        return self.pose_code_dim + self.vel_code_dim


@dataclass
class LatentFeature:
    pose_code: np.ndarray
    vel_code: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.pose_code, self.vel_code], axis=-1)


def model_scale(stats: NormStats, n_pos: int) -> np.ndarray:
    """Per-dimension scale of the model's working space.

    Velocity dims use their own std.  Position dims share one pooled std so
    that near-rigid joints (tiny variance) do not dominate the loss.
    """
    scale = np.array(stats.std, dtype=np.float64)
    pooled = np.sqrt(np.mean(np.square(scale[:n_pos])))
    scale[:n_pos] = pooled
    return scale


class PoseAutoencoder:
    """Encoder ``x -> z`` and decoder ``z -> x`` for 76-dim frames in the
    model's working space (see :func:`model_scale` and :meth:`normalize`).

    The decoder's position block is produced by FK, so it is in cm; the
    velocity head predicts normalized velocities which are de-normalized.
    """

    def __init__(self, skeleton: Skeleton, stats: NormStats, config: PoseAEConfig | None = None,
                 store: ParameterStore | None = None, seed: int = 0):
        self.skeleton = skeleton
        self.stats = stats
        self.config = config or PoseAEConfig()
        J = skeleton.n_joints
        self.n_pos = 3 * J
        self.dim = self.n_pos + N_VEL
        if len(stats.mean) != self.dim:
            raise ValueError(f"stats dimension {len(stats.mean)} != feature dimension {self.dim}")
        c = self.config
        self.enc = DenseSpec([self.dim, *c.enc_widths, c.code_dim])
        self.qdec = DenseSpec([c.pose_code_dim, *c.quat_dec_widths, 4 * J])
        self.vdec = DenseSpec([c.vel_code_dim, *c.vel_dec_widths, N_VEL])
        # the root height is not produced by FK; use the dataset mean
        self.root_height = float(stats.mean[1])
        self.scale = model_scale(stats, self.n_pos)
        self._mean = Tensor(stats.mean)
        self._inv_scale = Tensor(1.0 / self.scale)
        if store is None:
            store = ParameterStore(seed)
            rng = np.random.default_rng(seed)
            init_dense(store, f"{PREFIX}.enc", self.enc, rng)
            init_dense(store, f"{PREFIX}.qdec", self.qdec, rng)
            init_dense(store, f"{PREFIX}.vdec", self.vdec, rng)
        self.store = store

    # -- forward passes ----------------------------------------------------
    def encode(self, x_norm) -> Tensor:
        return dense_forward(self.enc, self.store, f"{PREFIX}.enc", T.as_tensor(x_norm))

    def raw_quaternions(self, z: Tensor) -> Tensor:
        pc = z[..., :self.config.pose_code_dim]
        q = dense_forward(self.qdec, self.store, f"{PREFIX}.qdec", pc)
        return q.reshape(q.shape[:-1] + (self.skeleton.n_joints, 4))

    def rotations(self, z: Tensor) -> Tensor:
        return quat_normalize(self.raw_quaternions(z))

    def decode(self, z) -> Tensor:
        """Reconstructed frame in feature units (cm, cm/frame, rad/frame)."""
        z = T.as_tensor(z)
        pos = forward_kinematics(self.skeleton, self.rotations(z), self.root_height)
        vc = z[..., self.config.pose_code_dim:]
        v = dense_forward(self.vdec, self.store, f"{PREFIX}.vdec", vc)
        vel = v * Tensor(self.stats.std[self.n_pos:]) + Tensor(self.stats.mean[self.n_pos:])
        return T.concat([pos, vel], axis=-1)

    def decode_normalized(self, z) -> Tensor:
        return (self.decode(z) - self._mean) * self._inv_scale

    def reconstruct(self, x_norm) -> Tensor:
        return self.decode_normalized(self.encode(x_norm))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.stats.mean) / self.scale

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.scale + self.stats.mean

    # -- numpy wrappers -----------------------------------------------------
    def encode_pose(self, x_norm: np.ndarray) -> LatentFeature:
        if not np.all(np.isfinite(x_norm)):
            raise ValueError("non-finite input frame")
        with T.no_grad():
            z = self.encode(Tensor(x_norm)).data
        P = self.config.pose_code_dim
        return LatentFeature(z[..., :P], z[..., P:])

    def decode_rotations(self, z: np.ndarray) -> np.ndarray:
        """Unit local joint quaternions (..., J, 4) for latent frames."""
        with T.no_grad():
            return self.rotations(Tensor(z)).data

    def decode_pose(self, code: LatentFeature) -> np.ndarray:
        with T.no_grad():
            return self.decode(Tensor(code.z)).data

    # -- checkpoint ----------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        c = self.config
        out = {
            "meta.pose_code_dim": np.array(c.pose_code_dim),
            "meta.vel_code_dim": np.array(c.vel_code_dim),
            "meta.enc_widths": np.array(c.enc_widths),
            "meta.quat_dec_widths": np.array(c.quat_dec_widths),
            "meta.vel_dec_widths": np.array(c.vel_dec_widths),
            "norm.mean": self.stats.mean,
            "norm.std": self.stats.std,
            "skeleton.offsets": self.skeleton.offsets,
            "skeleton.parents": self.skeleton.parents.astype(np.float64),
        }
        out.update(self.store.state())
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, skeleton: Skeleton | None = None) -> "PoseAutoencoder":
        ints = lambda k: tuple(int(v) for v in np.atleast_1d(tensors[k]))
        config = PoseAEConfig(int(tensors["meta.pose_code_dim"]), int(tensors["meta.vel_code_dim"]),
                              ints("meta.enc_widths"), ints("meta.quat_dec_widths"),
                              ints("meta.vel_dec_widths"))
        offsets = tensors["skeleton.offsets"]
        parents = [int(p) for p in tensors["skeleton.parents"]]
        if skeleton is None:
            skeleton = Skeleton(tuple(Joint(f"joint{j}", None if p < 0 else p, tuple(offsets[j]))
                                      for j, p in enumerate(parents)))
        elif skeleton.n_joints != len(parents) or np.max(np.abs(skeleton.offsets - offsets)) > 1e-3:
            raise ValueError("skeleton does not match the one stored in the checkpoint")
        else:
            # use the checkpoint's offsets so FK matches the trained model bit for bit
            skeleton = Skeleton(tuple(Joint(jt.name, jt.parent, tuple(offsets[j]), jt.channels)
                                      for j, jt in enumerate(skeleton.joints)), skeleton.end_sites)
        stats = NormStats(tensors["norm.mean"], tensors["norm.std"],
                          np.zeros(len(tensors["norm.mean"]), dtype=bool))
        model = cls(skeleton, stats, config, seed=0)
        model.store.load_state({k: v for k, v in tensors.items() if k.startswith(PREFIX + ".")})
        return model


def pose_recon_loss(model: PoseAutoencoder, x_norm) -> Tensor:
    """Mean over frames of the squared L2 reconstruction error (normalized units)."""
    x = T.as_tensor(x_norm)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    err = model.reconstruct(x) - x
    return T.tsum(T.square(err), axis=-1).mean()
