"""76-dim pose-velocity features and their inverse.

Layout of one frame: 24 joints x (x, y, z) root-relative, facing-normalized
positions in cm, followed by ``(vx, vy, vz, omega_y)``: root displacement to
the next frame expressed in the current facing frame (cm/frame) and the
heading change (rad/frame).
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core.checkpoint import atomic_write_bytes
from ..skeleton import find_hips
from .bvh import RawClip, clip_world_positions

N_VEL = 4
DFNF_MAGIC = b"DFNF"
DFNF_VERSION = 1
STD_FLOOR = 1e-6


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalTransform:
    position: tuple  # root ground projection (x, y, z), cm
    heading: float   # radians about +Y, 0 faces +Z

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.pi - np.mod(np.pi - np.asarray(a, dtype=np.float64), 2 * np.pi)
    return float(w) if np.ndim(w) == 0 else w


def rotate_y(v: np.ndarray, angle) -> np.ndarray:
    """Rotate vectors (..., 3) about +Y by ``angle`` (broadcast over leading axes)."""
    v = np.asarray(v, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    out = v.copy()
    out[..., 0] = v[..., 0] * c + v[..., 2] * s
    out[..., 2] = -v[..., 0] * s + v[..., 2] * c
    return out


def feature_dim(n_joints: int) -> int:
    return 3 * n_joints + N_VEL


def facing_headings(world: np.ndarray, left_hip: int, right_hip: int) -> np.ndarray:
    """Heading per frame from the hip lateral axis; raises on degenerate frames."""
    lateral = world[:, left_hip] - world[:, right_hip]
    forward = np.stack([-lateral[:, 2], np.zeros(len(lateral)), lateral[:, 0]], axis=-1)
    norm = np.linalg.norm(forward, axis=-1)
    bad = np.flatnonzero(norm < 1e-8)
    if bad.size:
        raise FeatureError(f"degenerate facing direction at frame {int(bad[0])}: "
                           "hip axis is parallel to vertical")
    return np.arctan2(forward[:, 0], forward[:, 2])


def features_from_world(world: np.ndarray, hips: tuple[int, int]) -> tuple[np.ndarray, GlobalTransform]:
    """Pose-velocity features from world joint positions (frames, joints, 3)."""
    world = np.asarray(world, dtype=np.float64)
    if world.shape[0] < 2:
        raise FeatureError("need at least 2 frames to compute velocities")
    heading = facing_headings(world, *hips)
    root = world[:, 0]
    ground = root * np.array([1.0, 0.0, 1.0])
    local = rotate_y(world - ground[:, None, :], -heading[:, None])
    local[:, 0, 0] = 0.0
    local[:, 0, 2] = 0.0
    vel = rotate_y(root[1:] - root[:-1], -heading[:-1])
    omega = wrap_angle(heading[1:] - heading[:-1])
    n = world.shape[0] - 1
    feats = np.concatenate([local[:-1].reshape(n, -1), vel, omega[:, None]], axis=1)
    return feats, GlobalTransform(tuple(ground[0]), float(heading[0]))


def extract_features(clip: RawClip, hips: tuple[int, int] | None = None
                     ) -> tuple[np.ndarray, GlobalTransform]:
    """Features for frames ``0..n-2`` plus the first frame's global transform."""
    if clip.n_frames < 2:
        raise FeatureError("clip needs at least 2 frames")
    if hips is None:
        hips = find_hips(clip.skeleton)
    return features_from_world(clip_world_positions(clip), hips)


def reconstruct_global(features: np.ndarray, initial: GlobalTransform) -> np.ndarray:
    """World joint positions (frames, joints, 3) by integrating the velocity channels.

    Vertical placement comes from the root's Y entry, so ``vy`` is not
    integrated.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise FeatureError("features must be a non-empty (frames, dim) array")
    if not np.all(np.isfinite(features)):
        raise FeatureError("features contain non-finite values")
    n, d = features.shape
    J = (d - N_VEL) // 3
    local = features[:, :3 * J].reshape(n, J, 3)
    pos, heading = root_trajectory(features, initial)
    return pos[:, None, :] + rotate_y(local, heading[:, None])


def root_trajectory(features: np.ndarray, initial: GlobalTransform) -> tuple[np.ndarray, np.ndarray]:
    """Integrated root ground positions (frames, 3) and headings (frames,)."""
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    J = (features.shape[1] - N_VEL) // 3
    vel = features[:, 3 * J:3 * J + 3].copy()
    vel[:, 1] = 0.0
    heading = initial.heading + np.concatenate([[0.0], np.cumsum(features[:-1, -1])])
    steps = rotate_y(vel, heading)
    pos = np.asarray(initial.position) + np.concatenate(
        [np.zeros((1, 3)), np.cumsum(steps[:-1], axis=0)], axis=0)
    return pos, heading


# -- normalization ----------------------------------------------------------

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    clamped: np.ndarray  # bool per dimension: std was below the floor and set to 1

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x) * self.std + self.mean

    def to_csv(self) -> str:
        rows = [",".join(repr(float(v)) for v in self.mean),
                ",".join(repr(float(v)) for v in self.std)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "NormStats":
        rows = [r for r in csv.reader(text.splitlines()) if r]
        if len(rows) != 2 or len(rows[0]) != len(rows[1]):
            raise ValueError("norm stats CSV must have exactly two equal-length rows")
        mean = np.array([float(v) for v in rows[0]])
        std = np.array([float(v) for v in rows[1]])
        return cls(mean, std, np.zeros(len(mean), dtype=bool))


def compute_norm_stats(dataset: list[np.ndarray]) -> NormStats:
    """Per-dimension mean and population std; stds below 1e-6 become 1 (flagged)."""
    if not dataset:
        raise ValueError("cannot compute normalization stats of an empty dataset")
    data = np.concatenate([np.asarray(s, dtype=np.float64) for s in dataset], axis=0)
    if data.shape[0] < 2:
        raise ValueError("need at least 2 frames for normalization stats")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    clamped = std < STD_FLOOR
    std = np.where(clamped, 1.0, std)
    return NormStats(mean, std, clamped)


# -- DFNF container ---------------------------------------------------------

def encode_dfnf(features: np.ndarray) -> bytes:
    features = np.asarray(features)
    n, d = features.shape
    header = DFNF_MAGIC + struct.pack("<III", DFNF_VERSION, n, d)
    return header + np.ascontiguousarray(features, dtype="<f4").tobytes()


def decode_dfnf(blob: bytes) -> np.ndarray:
    if blob[:4] != DFNF_MAGIC:
        raise ValueError("bad magic, not a DFNF feature file")
    version, n, d = struct.unpack_from("<III", blob, 4)
    if version != DFNF_VERSION:
        raise ValueError(f"unsupported DFNF version {version}")
    if len(blob) != 16 + 4 * n * d:
        raise ValueError(f"DFNF payload size mismatch: header says {n}x{d}")
    return np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, d).astype(np.float64)


def write_dfnf(path, features: np.ndarray) -> None:
    atomic_write_bytes(path, encode_dfnf(features))


def read_dfnf(path) -> np.ndarray:
    return decode_dfnf(Path(path).read_bytes())
