import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfn.core import tensor as T
from dfn.core.tensor import Tensor
from dfn.kinematics import (QuaternionNormError, axis_angle_quat, euler_to_quat,
                            fk_jacobian_check, forward_kinematics, np_forward_kinematics,
                            np_quat_mul, np_quat_rotate, quat_mul, quat_normalize, quat_rotate,
                            quats_to_euler_zxy)
from dfn.skeleton import Joint, Skeleton, canonical_skeleton
from dfn.core.gradcheck import grad_check


def chain(*offsets):
    joints = [Joint("j0", None, offsets[0])]
    joints += [Joint(f"j{i}", i - 1, off) for i, off in enumerate(offsets[1:], start=1)]
    return Skeleton(tuple(joints))


def random_quats(rng, shape):
    q = rng.normal(size=shape + (4,))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def test_quat_normalize_examples():
    np.testing.assert_allclose(quat_normalize(Tensor([2.0, 0, 0, 0])).data, [1, 0, 0, 0])
    np.testing.assert_allclose(quat_normalize(Tensor([0.0, 3, 4, 0])).data, [0, 0.6, 0.8, 0])


def test_quat_normalize_near_zero_names_joint():
    q = np.tile([1.0, 0, 0, 0], (3, 1))
    q[2] = [1e-12, 0, 0, 0]
    with pytest.raises(QuaternionNormError, match="joint 2") as info:
        quat_normalize(Tensor(q))
    assert info.value.joint == 2


def test_quat_rotate_examples():
    v = np.array([0.3, -2.0, 5.0])
    np.testing.assert_allclose(quat_rotate(Tensor([1.0, 0, 0, 0]), v).data, v)
    qz = axis_angle_quat((0, 0, 1), np.pi / 2)
    np.testing.assert_allclose(quat_rotate(Tensor(qz), np.array([1.0, 0, 0])).data, [0, 1, 0], atol=1e-7)
    qy = axis_angle_quat((0, 1, 0), np.pi)
    np.testing.assert_allclose(quat_rotate(Tensor(qy), np.array([1.0, 0, 1])).data, [-1, 0, -1], atol=1e-7)


unit_quat = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 0.1).map(lambda q: np.array(q) / np.linalg.norm(q))
vec3 = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).map(np.array)


@settings(max_examples=100, deadline=None)
@given(unit_quat, vec3)
def test_rotation_preserves_norm(q, v):
    out = quat_rotate(Tensor(q), v).data
    assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-7 * max(1.0, np.linalg.norm(v))


@settings(max_examples=100, deadline=None)
@given(unit_quat, unit_quat, vec3)
def test_rotation_composition(q1, q2, v):
    lhs = np_quat_rotate(np_quat_mul(q1, q2), v)
    rhs = np_quat_rotate(q1, np_quat_rotate(q2, v))
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_primitive_gradients():
    rng = np.random.default_rng(0)
    a, b = Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    v = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 3)))
    rep = grad_check(lambda: T.tsum(quat_rotate(quat_normalize(quat_mul(a, b)), v) * w), [a, b, v])
    assert rep.max_rel_error < 1e-4


def test_fk_identity_gives_rest_pose():
    sk = canonical_skeleton()
    q = np.tile([1.0, 0, 0, 0], (sk.n_joints, 1))
    pos = np_forward_kinematics(sk, q, root_height=0.0).reshape(-1, 3)
    expected = np.zeros((sk.n_joints, 3))
    for j in range(1, sk.n_joints):
        expected[j] = expected[sk.parents[j]] + sk.offsets[j]
    np.testing.assert_allclose(pos, expected, atol=1e-12)


def test_fk_two_joint_chain():
    sk = chain((0, 0, 0), (0, 10, 0))
    q = np.array([axis_angle_quat((0, 0, 1), np.pi / 2), [1.0, 0, 0, 0]])
    pos = np_forward_kinematics(sk, q, root_height=0.0).reshape(2, 3)
    np.testing.assert_allclose(pos[1] - pos[0], [-10, 0, 0], atol=1e-7)


def test_fk_three_joint_chain():
    # root turns 90 deg about Z, the middle joint a further 90 deg about Z
    sk = chain((0, 0, 0), (0, 10, 0), (0, 5, 0))
    qz = axis_angle_quat((0, 0, 1), np.pi / 2)
    q = np.array([qz, qz, [1.0, 0, 0, 0]])
    pos = np_forward_kinematics(sk, q, root_height=0.0).reshape(3, 3)
    np.testing.assert_allclose(pos, [[0, 0, 0], [-10, 0, 0], [-10, -5, 0]], atol=1e-7)


def test_fk_root_height_and_root_xz():
    sk = canonical_skeleton()
    rng = np.random.default_rng(1)
    pos = np_forward_kinematics(sk, random_quats(rng, (5, sk.n_joints)), root_height=91.0)
    np.testing.assert_array_equal(pos[:, 0], 0.0)
    np.testing.assert_array_equal(pos[:, 2], 0.0)
    np.testing.assert_array_equal(pos[:, 1], 91.0)


def test_fk_bone_lengths_over_random_rotations():
    sk = canonical_skeleton()
    rng = np.random.default_rng(2)
    pos = np_forward_kinematics(sk, random_quats(rng, (1000, sk.n_joints))).reshape(1000, -1, 3)
    bones = np.linalg.norm(pos[:, 1:] - pos[:, sk.parents[1:]], axis=-1)
    assert np.max(np.abs(bones - sk.bone_lengths())) < 1e-5


def test_fk_jacobian_checks():
    sk = canonical_skeleton()
    rest = np.tile([1.0, 0, 0, 0], (sk.n_joints, 1))
    assert fk_jacobian_check(sk, rest, lambda p: T.tsum(p)) < 1e-4
    rand = random_quats(np.random.default_rng(3), (sk.n_joints,))
    assert fk_jacobian_check(sk, rand, lambda p: T.tsum(T.square(p))) < 1e-4
    assert fk_jacobian_check(sk, rand, lambda p: T.tsum(p) * 0.0 + 1.0) == 0.0


def test_fk_rejects_wrong_joint_count():
    with pytest.raises(ValueError, match="joints"):
        forward_kinematics(canonical_skeleton(), Tensor(np.ones((3, 4))))


def test_euler_round_trip_is_continuous():
    rng = np.random.default_rng(4)
    angles = np.cumsum(rng.normal(scale=20.0, size=(200, 3)), axis=0)   # wanders past +-180
    angles[:, 1] = np.clip(angles[:, 1], -80, 80)
    q = euler_to_quat(angles, "ZXY")
    back = quats_to_euler_zxy(q)
    q2 = euler_to_quat(back, "ZXY")
    dots = np.abs(np.sum(q * q2, axis=-1))
    np.testing.assert_allclose(dots, 1.0, atol=1e-9)
    assert np.max(np.abs(np.diff(back, axis=0))) < 180.0


def test_euler_gimbal_lock_keeps_previous_y():
    angles = np.array([[10.0, 80.0, 25.0], [12.0, 90.0, 30.0]])
    back = quats_to_euler_zxy(euler_to_quat(angles, "ZXY"))
    assert back[1, 2] == pytest.approx(back[0, 2])
    np.testing.assert_allclose(np.abs(np.sum(euler_to_quat(back, "ZXY") * euler_to_quat(angles, "ZXY"), -1)),
                               1.0, atol=1e-9)
