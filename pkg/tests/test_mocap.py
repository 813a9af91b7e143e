import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfn.mocap.bvh import (BVHParseError, RawClip, clip_world_positions, parse_bvh, read_bvh,
                           resample, write_bvh)
from dfn.mocap.dataset import MixedSkeletonError, load_dataset, preprocess_directory
from dfn.mocap.features import (FeatureError, GlobalTransform, NormStats, compute_norm_stats,
                                decode_dfnf, encode_dfnf, extract_features, features_from_world,
                                read_dfnf, reconstruct_global, rotate_y, write_dfnf)
from dfn.mocap.synthetic import walking_clip
from dfn.skeleton import canonical_skeleton, find_hips

TWO_JOINT = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Chest
  {
    OFFSET 0 10 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 5 0
    }
  }
}
MOTION
Frames: 1
Frame Time: 0.0333333
0 0 0 0 0 0 0 0 0
"""


def test_parse_two_joint_file():
    clip = parse_bvh(TWO_JOINT)
    assert clip.skeleton.n_joints == 2
    assert clip.skeleton.joints[1].offset == (0.0, 10.0, 0.0)
    assert clip.skeleton.names == ["Hips", "Chest"]
    assert clip.n_frames == 1
    np.testing.assert_array_equal(clip.frames, np.zeros((1, 9)))


def test_zero_frames_is_an_error():
    src = TWO_JOINT.replace("Frames: 1", "Frames: 0").replace("0 0 0 0 0 0 0 0 0\n", "")
    with pytest.raises(BVHParseError, match="line 17"):
        parse_bvh(src)
    assert parse_bvh(src, allow_empty=True).n_frames == 0


def test_bad_numeral_names_line():
    src = TWO_JOINT.replace("0 0 0 0 0 0 0 0 0", "0 0 0 0 zero 0 0 0 0")
    with pytest.raises(BVHParseError, match="line 19") as info:
        parse_bvh(src)
    assert info.value.line == 19


def test_channel_count_mismatch():
    src = TWO_JOINT.replace("0 0 0 0 0 0 0 0 0", "0 0 0 0 0 0 0 0")
    with pytest.raises(BVHParseError, match="line 19"):
        parse_bvh(src)


def test_malformed_hierarchy():
    with pytest.raises(BVHParseError):
        parse_bvh(TWO_JOINT.replace("  OFFSET 0 10 0\n", ""))


def test_write_parse_round_trip():
    clip = walking_clip(1.0, 30.0, seed=2)
    text = write_bvh(clip.skeleton, clip.frame_time, clip.frames)
    back = parse_bvh(text)
    assert back.skeleton.names == clip.skeleton.names
    assert back.skeleton.end_sites == clip.skeleton.end_sites
    np.testing.assert_allclose(back.frames, clip.frames, atol=5e-7)
    assert write_bvh(back.skeleton, back.frame_time, back.frames) == text


def clip_of(n, fps):
    sk = parse_bvh(TWO_JOINT).skeleton
    return RawClip(sk, 1.0 / fps, np.arange(n * 9, dtype=float).reshape(n, 9))


def test_resample_examples():
    assert resample(clip_of(120, 120), 30).n_frames == 30
    c = clip_of(121, 120)
    r = resample(c, 30)
    assert r.n_frames == 31
    np.testing.assert_array_equal(r.frames, c.frames[::4])
    assert r.frame_time == pytest.approx(1 / 30)
    same = resample(clip_of(30, 30), 30)
    np.testing.assert_array_equal(same.frames, clip_of(30, 30).frames)


def test_resample_rejects_bad_rates():
    with pytest.raises(ValueError):
        resample(clip_of(10, 30), 0)
    with pytest.raises(ValueError):
        resample(clip_of(10, 30), 60)


# -- features -----------------------------------------------------------------------

def canonical_clip(root_pos, yaw_deg):
    sk = canonical_skeleton()
    n = len(root_pos)
    frames = np.zeros((n, sk.channel_count))
    frames[:, :3] = root_pos
    frames[:, 5] = yaw_deg      # root Yrotation (ZXY order -> column 5)
    return RawClip(sk, 1 / 30, frames)


def test_stationary_clip():
    clip = canonical_clip(np.tile([3.0, 90.0, -7.0], (6, 1)), np.full(6, 40.0))
    f, start = extract_features(clip)
    assert f.shape == (5, 76)
    np.testing.assert_allclose(f[:, 72:], 0.0, atol=1e-12)
    np.testing.assert_allclose(f[:, :72], np.tile(f[0, :72], (5, 1)), atol=1e-12)
    assert start.heading == pytest.approx(np.radians(40.0))


def test_rigid_translation_velocity():
    n = 8
    root = np.stack([2.0 * np.arange(n), np.full(n, 90.0), np.zeros(n)], axis=1)
    f, _ = extract_features(canonical_clip(root, np.zeros(n)))
    np.testing.assert_allclose(f[:, 72:], np.tile([2.0, 0, 0, 0], (n - 1, 1)), atol=1e-12)


def test_rotation_in_place():
    n = 8
    clip = canonical_clip(np.tile([0.0, 90.0, 0.0], (n, 1)), np.degrees(0.1 * np.arange(n)))
    f, _ = extract_features(clip)
    np.testing.assert_allclose(f[:, 75], 0.1, atol=1e-12)
    np.testing.assert_allclose(f[:, 72:75], 0.0, atol=1e-12)
    np.testing.assert_allclose(f[:, :72], np.tile(f[0, :72], (n - 1, 1)), atol=1e-9)


def test_root_xz_is_zero_and_length_contract():
    clip = walking_clip(2.0, 30.0, seed=1)
    f, _ = extract_features(clip)
    assert f.shape == (clip.n_frames - 1, 76)
    assert np.all(f[:, 0] == 0.0) and np.all(f[:, 2] == 0.0)
    assert np.all(np.isfinite(f))


def test_round_trip_reconstruction():
    for seed in range(3):
        clip = walking_clip(3.0, 30.0, seed=seed)
        f, start = extract_features(clip)
        world = clip_world_positions(clip)[:-1]
        assert np.max(np.abs(reconstruct_global(f, start) - world)) < 1e-6


def test_facing_idempotence():
    f, _ = extract_features(walking_clip(2.0, 30.0, seed=4))
    local = f[:, :72].reshape(-1, 24, 3)
    f2, start = features_from_world(local, find_hips(canonical_skeleton()))
    np.testing.assert_allclose(f2[:, :72], f[:-1, :72], atol=1e-6)
    assert start.heading == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-500, 500), st.floats(-500, 500))
def test_rigid_motion_invariance(angle, dx, dz):
    world = clip_world_positions(walking_clip(1.0, 30.0, seed=5))
    hips = find_hips(canonical_skeleton())
    f, _ = features_from_world(world, hips)
    moved = rotate_y(world, angle) + np.array([dx, 0.0, dz])
    g, _ = features_from_world(moved, hips)
    assert np.max(np.abs(f - g)) < 1e-6


def test_degenerate_facing_reports_frame():
    world = clip_world_positions(walking_clip(1.0, 30.0, seed=0))
    l, r = find_hips(canonical_skeleton())
    world[3, l] = world[3, r] + np.array([0.0, 5.0, 0.0])
    with pytest.raises(FeatureError, match="frame 3"):
        features_from_world(world, (l, r))


def test_reconstruct_examples():
    f = np.zeros((4, 76))
    f[:, 3 * 5:3 * 5 + 3] = [1.0, 2.0, 3.0]                        # one joint offset
    out = reconstruct_global(f, GlobalTransform((0, 0, 0), np.pi / 2))
    np.testing.assert_allclose(out[:, 5], np.tile([3.0, 2.0, -1.0], (4, 1)), atol=1e-12)
    f = np.zeros((4, 76))
    f[:, 72] = 1.0
    out = reconstruct_global(f, GlobalTransform((5, 0, 0), 0.0))
    np.testing.assert_allclose(out[:, 0, 0], [5, 6, 7, 8])
    with pytest.raises(FeatureError):
        reconstruct_global(np.zeros((0, 76)), GlobalTransform((0, 0, 0), 0.0))


def test_heading_is_wrapped():
    assert GlobalTransform((0, 0, 0), 3 * np.pi).heading == pytest.approx(np.pi)
    assert GlobalTransform((0, 0, 0), -np.pi).heading == pytest.approx(np.pi)


# -- normalization and containers ----------------------------------------------

def test_norm_stats_examples():
    const = np.tile(np.arange(76.0), (5, 1))
    s = compute_norm_stats([const])
    np.testing.assert_array_equal(s.mean, np.arange(76.0))
    assert np.all(s.std == 1.0) and s.clamped.sum() == 76
    two = np.zeros((2, 76))
    two[1, 0] = 2.0
    s = compute_norm_stats([two])
    assert s.mean[0] == 1.0 and s.std[0] == 1.0 and not s.clamped[0]
    with pytest.raises(ValueError):
        compute_norm_stats([])


def test_normalize_inverse_and_csv():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(50, 76)) * 10 + 3
    s = compute_norm_stats([data[:20], data[20:]])
    x = rng.normal(size=76)
    assert np.max(np.abs(s.denormalize(s.normalize(x)) - x)) < 1e-9
    back = NormStats.from_csv(s.to_csv())
    np.testing.assert_array_equal(back.mean, s.mean)
    np.testing.assert_array_equal(back.std, s.std)


def test_dfnf_round_trip(tmp_path):
    f = np.random.default_rng(1).normal(size=(7, 76))
    blob = encode_dfnf(f)
    assert blob[:4] == b"DFNF" and len(blob) == 16 + 4 * 7 * 76
    np.testing.assert_allclose(decode_dfnf(blob), f, atol=1e-6)
    write_dfnf(tmp_path / "a.dfnf", f)
    np.testing.assert_array_equal(read_dfnf(tmp_path / "a.dfnf"), decode_dfnf(blob))
    with pytest.raises(ValueError):
        decode_dfnf(blob[:-4])


# -- dataset directory -----------------------------------------------------------

def write_clip(path, clip):
    path.write_text(write_bvh(clip.skeleton, clip.frame_time, clip.frames))


def test_preprocess_and_load(tmp_path):
    src = tmp_path / "bvh"
    src.mkdir()
    write_clip(src / "a.bvh", walking_clip(2.0, 120.0, seed=0))
    write_clip(src / "b.bvh", walking_clip(1.0, 120.0, seed=1))
    data = preprocess_directory(src, tmp_path / "data", fps=30)
    assert [len(s) for s in data.sequences] == [59, 29]
    back = load_dataset(tmp_path / "data")
    assert back.names == ["a.dfnf", "b.dfnf"]
    np.testing.assert_array_equal(back.sequences[0], data.sequences[0])
    np.testing.assert_array_equal(back.stats.mean, data.stats.mean)
    assert back.skeleton.mismatch(canonical_skeleton()) is None
    assert read_bvh(tmp_path / "data" / "skeleton.bvh", allow_empty=True).n_frames == 0


def test_preprocess_single_file_length(tmp_path):
    src = tmp_path / "bvh"
    src.mkdir()
    clip = walking_clip(1.0, 30.0, seed=3)
    write_clip(src / "walk.bvh", clip)
    data = preprocess_directory(src, tmp_path / "out", fps=30)
    assert len(read_dfnf(tmp_path / "out" / "walk.dfnf")) == clip.n_frames - 1 == len(data.sequences[0])


def test_preprocess_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        preprocess_directory(tmp_path / "empty", tmp_path / "out")
    assert not (tmp_path / "out").exists()
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    (mixed / "two.bvh").write_text(TWO_JOINT.replace("Frames: 1", "Frames: 2") + "0 0 0 0 0 0 0 0 0\n")
    write_clip(mixed / "walk.bvh", walking_clip(1.0, 30.0))
    with pytest.raises(MixedSkeletonError, match="walk.bvh"):
        preprocess_directory(mixed, tmp_path / "out2")
    assert not (tmp_path / "out2").exists()
