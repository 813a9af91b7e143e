"""Quaternion algebra and a differentiable forward-kinematics layer.

Quaternions are ``(w, x, y, z)`` along the last axis.  The autodiff
primitives (:func:`quat_mul`, :func:`quat_normalize`, :func:`quat_rotate`)
carry hand-derived backward passes; the ``np_*`` helpers are plain numpy and
are used for data conversion.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import tensor as T
from .core.gradcheck import grad_check
from .core.tensor import Tensor
from .skeleton import Skeleton

NORM_EPS = 1e-8


class QuaternionNormError(ValueError):
    def __init__(self, joint: int | None, norm: float):
        self.joint = joint
        where = f" at joint {joint}" if joint is not None else ""
        super().__init__(f"quaternion norm {norm:.3g} is too close to zero{where}")


# -- numpy quaternion helpers ---------------------------------------------

def np_quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def np_quat_conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q) * np.array([1.0, -1.0, -1.0, -1.0])


def np_quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, u = q[..., :1], q[..., 1:]
    t = np.cross(u, v)
    return v + 2.0 * w * t + 2.0 * np.cross(u, t)


def axis_angle_quat(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(angle / 2), np.sin(angle / 2) * axis], axis=-1)


_AXES = {"X": (1.0, 0.0, 0.0), "Y": (0.0, 1.0, 0.0), "Z": (0.0, 0.0, 1.0)}


def euler_to_quat(angles_deg: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler angles (degrees, given in ``order``) to quaternions.

    ``order="ZXY"`` means ``R = Rz @ Rx @ Ry`` as BVH channel order implies.
    """
    angles = np.radians(np.asarray(angles_deg, dtype=np.float64))
    q = None
    for k, axis in enumerate(order):
        qa = axis_angle_quat(_AXES[axis], angles[..., k])
        q = qa if q is None else np_quat_mul(q, qa)
    return q


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], axis=-2)


def quats_to_euler_zxy(quats: np.ndarray, gimbal_eps: float = 1e-6) -> np.ndarray:
    """Convert a (frames, ..., 4) quaternion track to continuous ZXY Euler degrees.

    Angles are unwrapped against the previous frame.  At gimbal lock
    (|cos x| < ``gimbal_eps``) the Y angle of the previous frame is kept and
    Z absorbs the remaining rotation.
    """
    R = quat_to_matrix(quats)
    n = R.shape[0]
    out = np.zeros(R.shape[:-2] + (3,))
    prev = None
    for f in range(n):
        r = R[f]
        sx = np.clip(r[..., 2, 1], -1.0, 1.0)
        x = np.arcsin(sx)
        cx = np.cos(x)
        z = np.arctan2(-r[..., 0, 1], r[..., 1, 1])
        y = np.arctan2(-r[..., 2, 0], r[..., 2, 2])
        lock = np.abs(cx) < gimbal_eps
        if np.any(lock):
            y_keep = prev[..., 2] if prev is not None else np.zeros_like(y)
            combined = np.arctan2(r[..., 1, 0], r[..., 0, 0])
            z_lock = np.where(sx > 0, combined - y_keep, combined + y_keep)
            z = np.where(lock, z_lock, z)
            y = np.where(lock, y_keep, y)
        ang = np.stack([z, x, y], axis=-1)
        if prev is not None:
            ang = prev + (ang - prev + np.pi) % (2 * np.pi) - np.pi
        out[f] = ang
        prev = ang
    return np.degrees(out)


# -- differentiable primitives --------------------------------------------

def _np_cross(a, b):
    return np.cross(a, b)


def quat_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hamilton product; for ``r = a b``: dL/da = g conj(b), dL/db = conj(a) g."""
    a, b = T.as_tensor(a), T.as_tensor(b)

    def backward(g):
        ga = np_quat_mul(g, np_quat_conj(b.data))
        gb = np_quat_mul(np_quat_conj(a.data), g)
        return T._unbroadcast(ga, a.shape), T._unbroadcast(gb, b.shape)

    return T.make_op(np_quat_mul(a.data, b.data), (a, b), backward, "quat_mul")


def quat_normalize(q: Tensor) -> Tensor:
    """Scale to unit norm; raises :class:`QuaternionNormError` near zero.

    For inputs shaped ``(..., J, 4)`` the error names the joint index ``J``.
    """
    q = T.as_tensor(q)
    norm = np.linalg.norm(q.data, axis=-1, keepdims=True)
    bad = norm[..., 0] <= NORM_EPS
    if np.any(bad):
        loc = np.argwhere(bad)[0]
        joint = int(loc[-1]) if q.ndim >= 2 else None
        raise QuaternionNormError(joint, float(norm[..., 0][tuple(loc)]))
    n = q.data / norm

    def backward(g):
        return ((g - n * np.sum(g * n, axis=-1, keepdims=True)) / norm,)

    return T.make_op(n, (q,), backward, "quat_normalize")


def quat_rotate(q: Tensor, v) -> Tensor:
    """Rotate 3-vectors ``v`` by unit quaternions ``q``.

    Uses ``v' = v + 2w t + 2 u x t`` with ``t = u x v`` (``u`` the vector part).
    """
    q, v = T.as_tensor(q), T.as_tensor(v)
    w, u = q.data[..., :1], q.data[..., 1:]
    vd = v.data
    t = _np_cross(u, vd)
    out = vd + 2.0 * w * t + 2.0 * _np_cross(u, t)

    def backward(g):
        gt = 2.0 * w * g + 2.0 * _np_cross(g, u)
        gw = 2.0 * np.sum(g * t, axis=-1, keepdims=True)
        gu = 2.0 * _np_cross(t, g) + _np_cross(vd, gt)
        gv = g + _np_cross(gt, u)
        gq = np.concatenate([gw, gu], axis=-1)
        return T._unbroadcast(gq, q.shape), T._unbroadcast(gv, v.shape)

    return T.make_op(out, (q, v), backward, "quat_rotate")


def forward_kinematics(skeleton: Skeleton, rotations: Tensor,
                       root_height: float | None = None) -> Tensor:
    """Root-relative joint positions from local joint rotations.

    ``rotations``: ``(..., J, 4)`` unit quaternions in skeleton order.
    Returns ``(..., 3 J)``.  The root sits at ``(0, root_height, 0)``; when
    ``root_height`` is None the root's Y offset is used.
    """
    rotations = T.as_tensor(rotations)
    J = skeleton.n_joints
    if rotations.shape[-2:] != (J, 4):
        raise ValueError(f"rotations shape {rotations.shape} does not match {J} joints")
    offsets = skeleton.offsets
    parents = skeleton.parents
    batch = rotations.shape[:-2]
    h = offsets[0, 1] if root_height is None else float(root_height)
    root_pos = Tensor(np.broadcast_to(np.array([0.0, h, 0.0]), batch + (3,)).copy())

    world_q: list[Tensor] = [rotations[..., 0, :]]
    pos: list[Tensor] = [root_pos]
    for j in range(1, J):
        p = parents[j]
        pos.append(pos[p] + quat_rotate(world_q[p], Tensor(offsets[j])))
        world_q.append(quat_mul(world_q[p], rotations[..., j, :]))
    out = T.stack(pos, axis=-2)
    return out.reshape(batch + (3 * J,))


def np_forward_kinematics(skeleton: Skeleton, rotations: np.ndarray,
                          root_height: float | None = None) -> np.ndarray:
    with T.no_grad():
        return forward_kinematics(skeleton, Tensor(rotations), root_height).data


def fk_jacobian_check(skeleton: Skeleton, rotations: np.ndarray,
                      probe: Callable[[Tensor], Tensor], step: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference gradients
    of ``probe(FK(rotations))`` over every quaternion component."""
    q = Tensor(np.array(rotations, dtype=np.float64), requires_grad=True)
    report = grad_check(lambda: probe(forward_kinematics(skeleton, q)), {"rotations": q},
                        step=step, max_coords=q.data.size)
    return report.max_rel_error
