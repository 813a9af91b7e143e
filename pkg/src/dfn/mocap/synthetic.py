"""Procedural walking clips on the canonical skeleton.

Used as the desk-scale training corpus: a gait with slowly drifting cadence,
stride, arm swing and heading, so that a generative model has both short-term
(within-cycle) and long-term (turning, speed) variation to learn.
"""
from __future__ import annotations

import numpy as np

from ..kinematics import axis_angle_quat, np_quat_mul, quats_to_euler_zxy
from ..skeleton import Skeleton, canonical_skeleton
from .bvh import RawClip

X_AXIS = (1.0, 0.0, 0.0)
Y_AXIS = (0.0, 1.0, 0.0)
Z_AXIS = (0.0, 0.0, 1.0)


def _smooth_noise(t: np.ndarray, rng: np.random.Generator, n_terms: int = 4,
                  max_freq: float = 0.25) -> np.ndarray:
    """Zero-mean band-limited signal with unit-ish amplitude."""
    freqs = rng.uniform(0.03, max_freq, n_terms)
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    amps = rng.uniform(0.5, 1.0, n_terms)
    sig = sum(a * np.sin(2 * np.pi * f * t + p) for a, f, p in zip(amps, freqs, phases))
    return sig / np.sqrt(np.sum(amps ** 2) / 2)


def walking_clip(seconds: float = 15.0, fps: float = 120.0, seed: int = 0,
                 skeleton: Skeleton | None = None) -> RawClip:
    skeleton = skeleton or canonical_skeleton()
    if skeleton.n_joints != 24:
        raise ValueError("walking_clip drives the canonical 24-joint skeleton")
    rng = np.random.default_rng(seed)
    n = int(round(seconds * fps))
    dt = 1.0 / fps
    t = np.arange(n) * dt

    cadence = 0.95 * (1.0 + 0.12 * _smooth_noise(t, rng))          # gait cycles / s
    phase = 2 * np.pi * np.cumsum(cadence) * dt
    stride = 1.0 + 0.2 * _smooth_noise(t, rng)                      # amplitude scale
    arm = 1.0 + 0.3 * _smooth_noise(t, rng)
    turn_rate = np.radians(25.0) * _smooth_noise(t, rng, max_freq=0.12)
    heading = rng.uniform(-np.pi, np.pi) + np.cumsum(turn_rate) * dt
    speed = 125.0 * cadence / 0.95 * stride                          # cm / s

    step = np.stack([np.sin(heading), np.zeros(n), np.cos(heading)], axis=-1) * (speed * dt)[:, None]
    root = np.cumsum(step, axis=0) + np.array([rng.uniform(-50, 50), 0.0, rng.uniform(-50, 50)])
    root[:, 1] = 91.0 + 1.8 * np.cos(2 * phase) * stride

    J = skeleton.n_joints
    q = np.zeros((n, J, 4))
    q[..., 0] = 1.0
    name = {nm: i for i, nm in enumerate(skeleton.names)}

    def set_rot(joint, quat):
        q[:, name[joint]] = quat

    def rx(a):
        return axis_angle_quat(X_AXIS, a)

    def ry(a):
        return axis_angle_quat(Y_AXIS, a)

    def rz(a):
        return axis_angle_quat(Z_AXIS, a)

    twist = np.radians(5.0) * np.sin(phase) * stride
    tilt = np.radians(3.0) + np.radians(1.5) * np.cos(2 * phase)
    sway = np.radians(2.5) * np.sin(phase)
    set_rot("Hips", np_quat_mul(np_quat_mul(ry(heading + twist), rx(tilt)), rz(sway)))

    for side, offset in (("Left", 0.0), ("Right", np.pi)):
        ph = phase + offset
        hip = -np.radians(24.0) * stride * np.sin(ph)
        knee = np.radians(8.0) + np.radians(30.0) * stride * np.clip(np.sin(ph - 0.9), 0, None) ** 1.5 \
            + np.radians(6.0) * np.clip(-np.sin(ph), 0, None)
        ankle = -np.radians(10.0) * np.sin(ph + 0.6) * stride
        set_rot(f"{side}UpLeg", rx(hip))
        set_rot(f"{side}Leg", rx(knee))
        set_rot(f"{side}Foot", rx(ankle))
        set_rot(f"{side}ToeBase", rx(np.radians(12.0) * np.clip(np.sin(ph + 1.8), 0, None)))
        swing = np.radians(18.0) * arm * np.sin(ph)
        sign = 1.0 if side == "Left" else -1.0
        set_rot(f"{side}Arm", np_quat_mul(rz(-sign * np.radians(6.0) * np.ones(n)), rx(swing)))
        set_rot(f"{side}ForeArm", rx(-np.radians(14.0) - np.radians(10.0) * arm * np.clip(np.sin(ph), 0, None)))
        set_rot(f"{side}Hand", rz(sign * np.radians(4.0) * np.sin(ph)))

    set_rot("Spine", ry(-0.6 * twist))
    set_rot("Spine1", rx(np.radians(1.5) * np.cos(2 * phase)))
    set_rot("Spine2", ry(-0.4 * twist))
    set_rot("Neck", rx(np.radians(4.0) + np.radians(1.0) * np.sin(2 * phase)))
    set_rot("Head", ry(np.radians(8.0) * _smooth_noise(t, rng, max_freq=0.2)))

    euler = quats_to_euler_zxy(q)
    frames = np.zeros((n, skeleton.channel_count))
    col = 0
    for j, jt in enumerate(skeleton.joints):
        if jt.rotation_order != "ZXY":
            raise ValueError("walking_clip writes ZXY rotation channels")
        for ch in jt.channels:
            if ch.endswith("position"):
                frames[:, col] = root[:, "XYZ".index(ch[0])]
            else:
                frames[:, col] = euler[:, j, "ZXY".index(ch[0])]
            col += 1
    return RawClip(skeleton, dt, frames)
