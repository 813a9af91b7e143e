"""BVH reading, writing and frame-rate decimation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..kinematics import euler_to_quat, np_quat_mul, np_quat_rotate
from ..skeleton import POS_CHANNELS, ROT_CHANNELS, Joint, Skeleton, SkeletonError

_VALID_CHANNELS = set(POS_CHANNELS) | set(ROT_CHANNELS)


class BVHParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class RawClip:
    skeleton: Skeleton
    frame_time: float
    frames: np.ndarray  # (n_frames, channel_count), BVH channel order, degrees

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64).reshape(-1, self.skeleton.channel_count)
        if not self.frame_time > 0:
            raise ValueError(f"frame_time must be positive, got {self.frame_time}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, lineno))
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, self._last_line())

    def _last_line(self):
        return self.items[-1][1] if self.items else 1

    def next(self, expect: str | None = None):
        tok, line = self.peek()
        if tok is None:
            raise BVHParseError(f"unexpected end of file (expected {expect or 'more input'})", line)
        if expect is not None and tok != expect:
            raise BVHParseError(f"expected {expect!r}, found {tok!r}", line)
        self.pos += 1
        return tok, line

    def number(self) -> float:
        tok, line = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BVHParseError(f"cannot parse number {tok!r}", line) from None


def _parse_joint(toks: _Tokens, name: str, parent, joints: list, ends: list) -> None:
    toks.next("{")
    toks.next("OFFSET")
    offset = (toks.number(), toks.number(), toks.number())
    tok, line = toks.next("CHANNELS")
    ntok, nline = toks.next()
    try:
        n = int(ntok)
    except ValueError:
        raise BVHParseError(f"bad channel count {ntok!r}", nline) from None
    channels = []
    for _ in range(n):
        ch, cline = toks.next()
        if ch not in _VALID_CHANNELS:
            raise BVHParseError(f"unknown channel {ch!r}", cline)
        channels.append(ch)
    index = len(joints)
    joints.append(Joint(name, parent, offset, tuple(channels)))
    while True:
        tok, line = toks.next()
        if tok == "}":
            return
        if tok == "JOINT":
            child, _ = toks.next()
            _parse_joint(toks, child, index, joints, ends)
        elif tok == "End":
            toks.next("Site")
            toks.next("{")
            toks.next("OFFSET")
            ends.append((index, (toks.number(), toks.number(), toks.number())))
            toks.next("}")
        else:
            raise BVHParseError(f"unexpected token {tok!r} in joint {name!r}", line)


def parse_bvh(source: str, allow_empty: bool = False) -> RawClip:
    """Parse BVH text into a :class:`RawClip`.

    Frame data must be one frame per line.  ``allow_empty`` accepts a
    ``Frames: 0`` motion section (hierarchy-only files).
    """
    lines = source.splitlines()
    motion_line = next((i for i, l in enumerate(lines) if l.strip() == "MOTION"), None)
    if motion_line is None:
        raise BVHParseError("missing MOTION section")
    toks = _Tokens("\n".join(lines[:motion_line]))
    toks.next("HIERARCHY")
    toks.next("ROOT")
    root_name, _ = toks.next()
    joints: list[Joint] = []
    ends: list = []
    _parse_joint(toks, root_name, None, joints, ends)
    tok, line = toks.peek()
    if tok is not None:
        raise BVHParseError(f"unexpected token {tok!r} after hierarchy", line)
    try:
        skeleton = Skeleton(tuple(joints), tuple(ends))
    except SkeletonError as exc:
        raise BVHParseError(f"malformed hierarchy: {exc}") from exc

    rest = [(i + 1, l) for i, l in enumerate(lines) if i > motion_line and l.strip()]
    if len(rest) < 2:
        raise BVHParseError("MOTION section needs 'Frames:' and 'Frame Time:' lines", motion_line + 1)
    (fl, frames_line), (tl, time_line) = rest[0], rest[1]
    if not frames_line.strip().startswith("Frames:"):
        raise BVHParseError("expected 'Frames: <n>'", fl)
    if not time_line.strip().startswith("Frame Time:"):
        raise BVHParseError("expected 'Frame Time: <seconds>'", tl)
    try:
        n_frames = int(frames_line.split(":", 1)[1])
    except ValueError:
        raise BVHParseError("cannot parse frame count", fl) from None
    try:
        frame_time = float(time_line.split(":", 1)[1])
    except ValueError:
        raise BVHParseError("cannot parse frame time", tl) from None
    if frame_time <= 0:
        raise BVHParseError("frame time must be positive", tl)
    if n_frames <= 0 and not allow_empty:
        raise BVHParseError("motion has zero frames", fl)

    data = rest[2:]
    if len(data) != n_frames:
        raise BVHParseError(f"declared {n_frames} frames but found {len(data)}",
                            data[-1][0] if data else tl)
    n_ch = skeleton.channel_count
    frames = np.zeros((n_frames, n_ch))
    for k, (lineno, text) in enumerate(data):
        parts = text.split()
        if len(parts) != n_ch:
            raise BVHParseError(f"expected {n_ch} channel values, found {len(parts)}", lineno)
        for c, tok in enumerate(parts):
            try:
                frames[k, c] = float(tok)
            except ValueError:
                raise BVHParseError(f"cannot parse number {tok!r}", lineno) from None
    if not np.all(np.isfinite(frames)):
        raise BVHParseError("non-finite channel value in motion data")
    return RawClip(skeleton, frame_time, frames)


def read_bvh(path, allow_empty: bool = False) -> RawClip:
    with open(path, encoding="utf-8") as fh:
        return parse_bvh(fh.read(), allow_empty=allow_empty)


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def write_bvh(skeleton: Skeleton, frame_time: float, frames: np.ndarray) -> str:
    """Serialize a hierarchy and motion block; numbers use fixed 6-decimal format."""
    frames = np.asarray(frames, dtype=np.float64).reshape(-1, skeleton.channel_count)
    children: dict[int, list[int]] = {}
    for j, jt in enumerate(skeleton.joints):
        if jt.parent is not None:
            children.setdefault(jt.parent, []).append(j)
    ends: dict[int, list] = {}
    for parent, off in skeleton.end_sites:
        ends.setdefault(parent, []).append(off)

    out = ["HIERARCHY"]

    def emit(j: int, depth: int):
        jt = skeleton.joints[j]
        pad = "\t" * depth
        out.append(f"{pad}{'ROOT' if jt.parent is None else 'JOINT'} {jt.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}\tOFFSET {' '.join(_fmt(v) for v in jt.offset)}")
        out.append(f"{pad}\tCHANNELS {len(jt.channels)} {' '.join(jt.channels)}".rstrip())
        for c in children.get(j, []):
            emit(c, depth + 1)
        for off in ends.get(j, []):
            out.append(f"{pad}\tEnd Site")
            out.append(f"{pad}\t{{")
            out.append(f"{pad}\t\tOFFSET {' '.join(_fmt(v) for v in off)}")
            out.append(f"{pad}\t}}")
        out.append(f"{pad}}}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {len(frames)}")
    out.append(f"Frame Time: {frame_time:.8f}")
    for row in frames:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def resample(clip: RawClip, target_fps: float) -> RawClip:
    """Nearest-index decimation to ``target_fps`` (no rotation interpolation)."""
    if target_fps <= 0:
        raise ValueError(f"target_fps must be positive, got {target_fps}")
    src_fps = clip.fps
    if target_fps > src_fps * (1 + 1e-9):
        raise ValueError(f"target_fps {target_fps} exceeds source rate {src_fps:.6g}")
    step = src_fps / target_fps
    if abs(step - round(step)) < 1e-6:
        step = float(round(step))
    n_out = int(math.floor((clip.n_frames - 1) / step + 1e-9)) + 1
    idx = np.minimum(np.round(np.arange(n_out) * step).astype(int), clip.n_frames - 1)
    return RawClip(clip.skeleton, 1.0 / target_fps, clip.frames[idx].copy())


def channel_layout(skeleton: Skeleton) -> list[tuple[list[int], list[int], str]]:
    """Per joint: (position column indices, rotation column indices, Euler order)."""
    layout = []
    col = 0
    for jt in skeleton.joints:
        pos_cols, rot_cols = [], []
        for ch in jt.channels:
            (pos_cols if ch in POS_CHANNELS else rot_cols).append(col)
            col += 1
        pos_names = [ch for ch in jt.channels if ch in POS_CHANNELS]
        if pos_names and pos_names != list(POS_CHANNELS):
            raise SkeletonError(f"joint {jt.name!r}: position channels must be X,Y,Z in order")
        layout.append((pos_cols, rot_cols, jt.rotation_order))
    return layout


def clip_local_quats(clip: RawClip) -> np.ndarray:
    """Local joint rotations as quaternions, shape (frames, joints, 4)."""
    layout = channel_layout(clip.skeleton)
    q = np.zeros((clip.n_frames, clip.skeleton.n_joints, 4))
    q[..., 0] = 1.0
    for j, (_, rot_cols, order) in enumerate(layout):
        if rot_cols:
            q[:, j] = euler_to_quat(clip.frames[:, rot_cols], order)
    return q


def clip_translations(clip: RawClip) -> np.ndarray:
    """Per-joint local translations (frames, joints, 3): position channels where
    present, otherwise the bone offset."""
    layout = channel_layout(clip.skeleton)
    t = np.broadcast_to(clip.skeleton.offsets, (clip.n_frames,) + clip.skeleton.offsets.shape).copy()
    for j, (pos_cols, _, _) in enumerate(layout):
        if pos_cols:
            t[:, j] = clip.frames[:, pos_cols]
    return t


def clip_world_positions(clip: RawClip) -> np.ndarray:
    """World-space joint positions (frames, joints, 3) by hierarchical FK."""
    q = clip_local_quats(clip)
    trans = clip_translations(clip)
    parents = clip.skeleton.parents
    J = clip.skeleton.n_joints
    world_q = np.zeros_like(q)
    pos = np.zeros((clip.n_frames, J, 3))
    world_q[:, 0] = q[:, 0]
    pos[:, 0] = trans[:, 0]
    for j in range(1, J):
        p = parents[j]
        pos[:, j] = pos[:, p] + np_quat_rotate(world_q[:, p], trans[:, j])
        world_q[:, j] = np_quat_mul(world_q[:, p], q[:, j])
    return pos
