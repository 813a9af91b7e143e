"""Shared datasets and trained models.

``smoke_run`` is the expensive one: 15 s of synthetic walking, 2000 steps per
stage.  It is session-scoped so every acceptance criterion reuses one run.
"""
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from dfn.mocap.bvh import write_bvh
from dfn.mocap.dataset import preprocess_directory
from dfn.mocap.synthetic import walking_clip
from dfn.training import TrainConfig, format_config, train_stage


def write_corpus(root: Path, seconds: float, seed: int = 0, source_fps: float = 120.0) -> Path:
    bvh_dir = root / "bvh"
    bvh_dir.mkdir(parents=True, exist_ok=True)
    clip = walking_clip(seconds, source_fps, seed=seed)
    (bvh_dir / "walk.bvh").write_text(write_bvh(clip.skeleton, clip.frame_time, clip.frames))
    return bvh_dir


def tiny_config(data_dir, checkpoint_dir, steps: int = 4, **kw) -> TrainConfig:
    """Small widths and few steps: exercises every code path in seconds."""
    base = dict(data_dir=str(data_dir), checkpoint_dir=str(checkpoint_dir), steps=steps,
                batch_size=2, stage1_batch_frames=16, enc_widths=(32,), quat_dec_widths=(32,),
                vel_dec_widths=(8,), horizon_H=4, summary_dim=16, s_dim=4, f_dim=4,
                window_len=12, window_stride=8, kl_anneal_steps=2, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


def write_config(path: Path, cfg: TrainConfig) -> Path:
    path.write_text(format_config(cfg), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    data_dir = root / "data"
    preprocess_directory(write_corpus(root, 4.0, seed=1), data_dir, fps=30)
    return data_dir


@pytest.fixture(scope="session")
def tiny_trained(tmp_path_factory, small_data):
    """All three stages trained for a handful of steps."""
    root = tmp_path_factory.mktemp("tiny")
    cfg = tiny_config(small_data, root / "ckpt")
    for stage in (1, 2, 3):
        train_stage(cfg, stage)
    return write_config(root / "train.cfg", cfg), cfg


@dataclass
class SmokeRun:
    config_path: Path
    config: TrainConfig
    results: dict
    seconds: float


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    data_dir = root / "data"
    preprocess_directory(write_corpus(root, 15.0, seed=0), data_dir, fps=30)
    cfg = TrainConfig(data_dir=str(data_dir), checkpoint_dir=str(root / "ckpt"), steps=2000, log_every=100)
    t0 = time.perf_counter()
    results = {stage: train_stage(cfg, stage) for stage in (1, 2, 3)}
    return SmokeRun(write_config(root / "smoke.cfg", cfg), cfg, results, time.perf_counter() - t0)

