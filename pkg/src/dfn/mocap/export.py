"""Turn decoded rotations plus feature velocities back into a BVH clip."""
from __future__ import annotations

import numpy as np

from ..kinematics import axis_angle_quat, np_quat_mul, quats_to_euler_zxy
from ..skeleton import JOINT_CHANNELS, ROOT_CHANNELS, Joint, Skeleton
from .bvh import RawClip
from .features import GlobalTransform, root_trajectory


def zxy_skeleton(skeleton: Skeleton) -> Skeleton:
    """Same hierarchy and offsets with canonical ZXY channels (root also positional)."""
    joints = tuple(Joint(j.name, j.parent, j.offset, ROOT_CHANNELS if i == 0 else JOINT_CHANNELS)
                   for i, j in enumerate(skeleton.joints))
    return Skeleton(joints, skeleton.end_sites)


def motion_to_clip(skeleton: Skeleton, features: np.ndarray, local_quats: np.ndarray,
                   initial: GlobalTransform, frame_time: float) -> RawClip:
    """World-space clip from facing-frame features and local joint rotations.

    ``local_quats`` (frames, joints, 4) are the decoder's rotations; the root
    rotation is relative to the facing frame, so the integrated heading is
    composed onto it.  The root position is the integrated ground position
    plus the root height stored in the features.
    """
    out_skel = zxy_skeleton(skeleton)
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    if n == 0:
        return RawClip(out_skel, frame_time, np.zeros((0, out_skel.channel_count)))
    q = np.array(local_quats, dtype=np.float64)
    if q.shape != (n, skeleton.n_joints, 4):
        raise ValueError(f"expected rotations of shape {(n, skeleton.n_joints, 4)}, got {q.shape}")
    ground, heading = root_trajectory(features, initial)
    q[:, 0] = np_quat_mul(axis_angle_quat((0.0, 1.0, 0.0), heading), q[:, 0])
    euler = quats_to_euler_zxy(q)                    # (n, J, 3) as (z, x, y) degrees
    root = ground + np.stack([np.zeros(n), features[:, 1], np.zeros(n)], axis=-1)
    frames = np.concatenate([root, euler.reshape(n, -1)], axis=1)
    return RawClip(out_skel, frame_time, frames)
