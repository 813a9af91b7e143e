"""Joint hierarchy shared by the mocap reader and the FK layer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROT_CHANNELS = ("Xrotation", "Yrotation", "Zrotation")
POS_CHANNELS = ("Xposition", "Yposition", "Zposition")


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple
    channels: tuple = ()

    @property
    def rotation_order(self) -> str:
        """Euler order as axis letters in channel order, e.g. ``"ZXY"``."""
        return "".join(c[0] for c in self.channels if c in ROT_CHANNELS)


@dataclass(frozen=True)
class Skeleton:
    joints: tuple
    # (parent joint index, offset) for BVH "End Site" blocks; kept for export only
    end_sites: tuple = ()
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        joints = tuple(self.joints)
        object.__setattr__(self, "joints", joints)
        if not joints:
            raise SkeletonError("skeleton has no joints")
        if joints[0].parent is not None:
            raise SkeletonError("joint 0 must be the root (no parent)")
        for j, jt in enumerate(joints[1:], start=1):
            if jt.parent is None:
                raise SkeletonError(f"joint {j} ({jt.name}) has no parent; only the root may")
            if not 0 <= jt.parent < j:
                raise SkeletonError(f"joint {j} ({jt.name}) parent {jt.parent} breaks topological order")
        names = [jt.name for jt in joints]
        if len(set(names)) != len(names):
            raise SkeletonError("duplicate joint names")
        object.__setattr__(self, "_offsets",
                           np.array([jt.offset for jt in joints], dtype=np.float64).reshape(-1, 3))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def names(self) -> list[str]:
        return [jt.name for jt in self.joints]

    @property
    def parents(self) -> np.ndarray:
        """Parent indices with -1 for the root."""
        return np.array([-1 if jt.parent is None else jt.parent for jt in self.joints])

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets.copy()

    @property
    def channel_count(self) -> int:
        return sum(len(jt.channels) for jt in self.joints)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SkeletonError(f"no joint named {name!r}") from None

    def bone_lengths(self) -> np.ndarray:
        """Offset norm of each non-root joint (length of the bone to its parent)."""
        return np.linalg.norm(self._offsets[1:], axis=1)

    def mismatch(self, other: "Skeleton", tol: float = 1e-4) -> str | None:
        """Describe the first structural difference to ``other``, or None."""
        if self.n_joints != other.n_joints:
            return f"joint count {self.n_joints} != {other.n_joints}"
        for a, b in zip(self.joints, other.joints):
            if a.name != b.name or a.parent != b.parent:
                return f"joint {a.name!r}/{b.name!r} differs in name or parent"
            if np.max(np.abs(np.subtract(a.offset, b.offset))) > tol:
                return f"joint {a.name!r} offset differs"
        return None


# Canonical 24-joint layout (cm).  Y is up, the rest pose faces +Z, the
# character's left is +X.
_CANONICAL = [
    ("Hips", None, (0.0, 0.0, 0.0)),
    ("LeftUpLeg", 0, (9.0, -4.0, 0.0)),
    ("LeftLeg", 1, (0.0, -42.0, 0.0)),
    ("LeftFoot", 2, (0.0, -41.0, 0.0)),
    ("LeftToeBase", 3, (0.0, -6.0, 13.0)),
    ("RightUpLeg", 0, (-9.0, -4.0, 0.0)),
    ("RightLeg", 5, (0.0, -42.0, 0.0)),
    ("RightFoot", 6, (0.0, -41.0, 0.0)),
    ("RightToeBase", 7, (0.0, -6.0, 13.0)),
    ("Spine", 0, (0.0, 10.0, 0.0)),
    ("Spine1", 9, (0.0, 12.0, 0.0)),
    ("Spine2", 10, (0.0, 12.0, 0.0)),
    ("Neck", 11, (0.0, 14.0, 0.0)),
    ("Head", 12, (0.0, 10.0, 2.0)),
    ("LeftShoulder", 11, (4.0, 11.0, 0.0)),
    ("LeftArm", 14, (14.0, 0.0, 0.0)),
    ("LeftForeArm", 15, (0.0, -28.0, 0.0)),
    ("LeftHand", 16, (0.0, -25.0, 0.0)),
    ("LeftHandIndex", 17, (0.0, -9.0, 0.0)),
    ("RightShoulder", 11, (-4.0, 11.0, 0.0)),
    ("RightArm", 19, (-14.0, 0.0, 0.0)),
    ("RightForeArm", 20, (0.0, -28.0, 0.0)),
    ("RightHand", 21, (0.0, -25.0, 0.0)),
    ("RightHandIndex", 22, (0.0, -9.0, 0.0)),
]

ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")


def canonical_skeleton() -> Skeleton:
    joints = [Joint(name, parent, offset, ROOT_CHANNELS if parent is None else JOINT_CHANNELS)
              for name, parent, offset in _CANONICAL]
    ends = ((4, (0.0, 0.0, 5.0)), (8, (0.0, 0.0, 5.0)), (13, (0.0, 12.0, 0.0)),
            (18, (0.0, -5.0, 0.0)), (23, (0.0, -5.0, 0.0)))
    return Skeleton(tuple(joints), ends)


HIP_NAME_CANDIDATES = (
    ("LeftUpLeg", "RightUpLeg"),
    ("LeftHip", "RightHip"),
    ("LHip", "RHip"),
    ("lhip", "rhip"),
    ("LeftThigh", "RightThigh"),
)


def find_hips(skeleton: Skeleton) -> tuple[int, int]:
    """Indices of the (left, right) hip joints, matched by common naming schemes."""
    names = skeleton.names
    for left, right in HIP_NAME_CANDIDATES:
        if left in names and right in names:
            return names.index(left), names.index(right)
    raise SkeletonError("cannot identify left/right hip joints; pass hip indices explicitly")
