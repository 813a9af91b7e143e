"""Staged training: pose auto-encoder, trajectory embedding, dynamics model.

Each stage loads and freezes the checkpoints of the stages before it.  All
randomness derives from ``config.seed`` so identical configs give
bit-identical checkpoints.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import tensor as T
from .core.checkpoint import load_checkpoint, save_checkpoint
from .core.optim import Adam, StepConfig
from .core.tensor import Tensor
from .dynamics import DynamicsConfig, DynamicsModel, LossReport, LossWeights, sequence_elbo
from .mocap.dataset import Dataset, load_dataset
from .pose_autoencoder import PoseAEConfig, PoseAutoencoder, pose_recon_loss
from .skeleton import Skeleton
from .trajectory import TrajectoryConfig, TrajectoryEmbedding, trajectory_loss

log = logging.getLogger(__name__)

STAGES = (1, 2, 3)


class ConfigError(ValueError):
    pass


class PrerequisiteError(FileNotFoundError):
    pass


class TrainingError(FloatingPointError):
    def __init__(self, stage: int, step: int, message: str):
        self.stage, self.step = stage, step
        super().__init__(f"stage {stage} aborted at step {step}: {message}")


@dataclass
class TrainConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    log_dir: str = ""
    stage: int = 0
    steps: int = 2000
    steps_stage1: int = 0
    steps_stage2: int = 0
    steps_stage3: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 16
    stage1_batch_frames: int = 64
    seed: int = 0
    clip_norm: float = 10.0
    log_every: int = 50
    # stage 1
    pose_code_dim: int = 12
    vel_code_dim: int = 4
    enc_widths: tuple = (256, 128)
    quat_dec_widths: tuple = (128, 128)
    vel_dec_widths: tuple = (32,)
    # stage 2
    horizon_H: int = 16
    summary_dim: int = 128
    teacher_forcing_ratio: float = 0.0
    # stage 3
    s_dim: int = 32
    f_dim: int = 64
    td_pairs_K: int = 4
    kl_anneal_steps: int = 1000
    window_len: int = 64
    window_stride: int = 16
    resample_period: int = 1

    def steps_for(self, stage: int) -> int:
        n = getattr(self, f"steps_stage{stage}") or self.steps
        if n <= 0:
            raise ConfigError("steps must be positive")
        return n

    @property
    def log_path(self) -> Path:
        return Path(self.log_dir or self.checkpoint_dir)

    def checkpoint_path(self, stage: int) -> Path:
        return Path(self.checkpoint_dir) / f"stage{stage}.dfnw"

    def pose_config(self) -> PoseAEConfig:
        return PoseAEConfig(self.pose_code_dim, self.vel_code_dim, tuple(self.enc_widths),
                            tuple(self.quat_dec_widths), tuple(self.vel_dec_widths))

    def trajectory_config(self) -> TrajectoryConfig:
        return TrajectoryConfig(self.horizon_H, self.summary_dim, self.teacher_forcing_ratio)

    def dynamics_config(self, z_dim: int) -> DynamicsConfig:
        return DynamicsConfig(z_dim=z_dim, summary_dim=self.summary_dim, s_dim=self.s_dim,
                              f_dim=self.f_dim, horizon=self.horizon_H, td_pairs=self.td_pairs_K)


def _coerce(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, base_dir: Path | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment).

    Relative ``data_dir``/``checkpoint_dir``/``log_dir`` resolve against
    ``base_dir``.
    """
    defaults = TrainConfig()
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, getattr(defaults, key))
    cfg = dataclasses.replace(defaults, **values)
    if base_dir is not None:
        for key in ("data_dir", "checkpoint_dir", "log_dir"):
            v = getattr(cfg, key)
            if v and not Path(v).is_absolute():
                setattr(cfg, key, str(Path(base_dir) / v))
    return cfg


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# -- windows -----------------------------------------------------------------

def window_count(length: int, window_len: int, stride: int) -> int:
    return 0 if length < window_len else (length - window_len) // stride + 1


def make_windows(lengths, window_len: int, stride: int, horizon: int,
                 seed: int | None = 0) -> list[tuple[int, int]]:
    """(sequence index, start) pairs of overlapping windows in seeded shuffled order.

    ``lengths`` may be sequence lengths or the sequences themselves.  Windows
    never cross sequence boundaries; sequences shorter than the window are
    skipped.  ``seed=None`` keeps natural order.
    """
    if window_len <= horizon + 1:
        raise ValueError(f"window_len {window_len} must exceed H+1 = {horizon + 1}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    lengths = [n if isinstance(n, (int, np.integer)) else len(n) for n in lengths]
    out = [(i, s) for i, n in enumerate(lengths)
           for s in range(0, window_count(n, window_len, stride) * stride, stride)]
    if not out:
        raise ValueError(f"no sequence is long enough for a {window_len}-frame window")
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(out))
        out = [out[k] for k in order]
    return out


# -- run log ----------------------------------------------------------------

class RunLog:
    """Append-only CSV of per-step loss terms."""

    def __init__(self, path, columns):
        self.path = Path(path)
        self.columns = ["step", "kind", "wall_time"] + list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._last_step = -1
        with open(self.path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(self.columns)
        self._t0 = time.perf_counter()

    def record(self, step: int, kind: str, values: dict) -> None:
        if step < self._last_step:
            raise ValueError("run log steps must be monotone")
        self._last_step = step
        row = [step, kind, f"{time.perf_counter() - self._t0:.3f}"]
        row += [repr(float(values[c])) for c in self.columns[3:]]
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(row)


@dataclass
class StageResult:
    stage: int
    checkpoint: Path
    log: Path
    initial_loss: float
    final_loss: float
    initial_terms: dict = field(default_factory=dict)
    final_terms: dict = field(default_factory=dict)


# -- model loading ------------------------------------------------------------

def _require(path: Path, stage: int, needed_by: int) -> dict:
    if not path.is_file():
        raise PrerequisiteError(f"stage {needed_by} requires the stage-{stage} checkpoint {path}")
    return load_checkpoint(path)


def load_models(checkpoint_dir, stages=(1, 2, 3), skeleton: Skeleton | None = None):
    """Load trained stages from ``checkpoint_dir``; returns a tuple in stage order."""
    d = Path(checkpoint_dir)
    out = []
    need = max(stages)
    if 1 in stages:
        out.append(PoseAutoencoder.from_tensors(_require(d / "stage1.dfnw", 1, need), skeleton))
    if 2 in stages:
        out.append(TrajectoryEmbedding.from_tensors(_require(d / "stage2.dfnw", 2, need)))
    if 3 in stages:
        out.append(DynamicsModel.from_tensors(_require(d / "stage3.dfnw", 3, need)))
    for model in out:
        model.store.freeze()
    return tuple(out)


def _rng(cfg: TrainConfig, stage: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stage, purpose])


def _check_finite(stage: int, step: int, value: float, runlog: RunLog, values: dict) -> None:
    if not np.isfinite(value):
        runlog.record(step, "abort", values)
        raise TrainingError(stage, step, "non-finite loss")


def _optimizer(cfg: TrainConfig) -> Adam:
    return Adam(StepConfig(cfg.learning_rate, clip_norm=cfg.clip_norm or None))


# -- stage 1 ------------------------------------------------------------------

def _train_stage1(cfg: TrainConfig, data: Dataset) -> StageResult:
    model = PoseAutoencoder(data.skeleton, data.stats, cfg.pose_config(), seed=cfg.seed)
    frames = model.normalize(np.concatenate(data.sequences))
    runlog = RunLog(cfg.log_path / "stage1_log.csv", ["total"])
    rng = _rng(cfg, 1, 0)
    opt = _optimizer(cfg)

    def evaluate():
        with T.no_grad():
            return float(pose_recon_loss(model, frames).data)

    initial = evaluate()
    runlog.record(0, "eval", {"total": initial})
    steps = cfg.steps_for(1)
    for step in range(1, steps + 1):
        idx = rng.integers(0, len(frames), cfg.stage1_batch_frames)
        model.store.zero_grad()
        loss = pose_recon_loss(model, frames[idx])
        value = float(loss.data)
        _check_finite(1, step, value, runlog, {"total": value})
        loss.backward()
        opt.step(model.store)
        if step % cfg.log_every == 0:
            runlog.record(step, "train", {"total": value})
    final = evaluate()
    runlog.record(steps, "eval", {"total": final})
    path = cfg.checkpoint_path(1)
    save_checkpoint(path, model.to_tensors())
    return StageResult(1, path, runlog.path, initial, final)


# -- stage 2 ------------------------------------------------------------------

def latent_sequences(pose_ae: PoseAutoencoder, sequences) -> list[np.ndarray]:
    with T.no_grad():
        return [pose_ae.encode(Tensor(pose_ae.normalize(s))).data for s in sequences]


def _train_stage2(cfg: TrainConfig, data: Dataset) -> StageResult:
    (pose_ae,) = load_models(cfg.checkpoint_dir, (1,), data.skeleton)
    zs = latent_sequences(pose_ae, data.sequences)
    H = cfg.horizon_H
    starts = [(i, s) for i, z in enumerate(zs) for s in range(len(z) - H)]
    if not starts:
        raise ValueError(f"no sequence has the {H + 1} frames a trajectory window needs")
    model = TrajectoryEmbedding(pose_ae.config.code_dim, cfg.trajectory_config(), seed=cfg.seed)
    runlog = RunLog(cfg.log_path / "stage2_log.csv", ["total", "rec", "smooth"])
    rng = _rng(cfg, 2, 0)
    tf_rng = _rng(cfg, 2, 1)
    opt = _optimizer(cfg)

    def windows(sel):
        return np.stack([zs[i][s:s + H + 1] for i, s in sel])

    eval_windows = windows(starts)

    def evaluate():
        with T.no_grad():
            out = trajectory_loss(model, pose_ae, eval_windows)
        return {"total": float(out.total.data), "rec": float(out.rec.data),
                "smooth": float(out.smooth.data)}

    initial = evaluate()
    runlog.record(0, "eval", initial)
    steps = cfg.steps_for(2)
    for step in range(1, steps + 1):
        pick = rng.integers(0, len(starts), cfg.batch_size)
        model.store.zero_grad()
        out = trajectory_loss(model, pose_ae, windows([starts[k] for k in pick]), rng=tf_rng)
        values = {"total": float(out.total.data), "rec": float(out.rec.data),
                  "smooth": float(out.smooth.data)}
        _check_finite(2, step, values["total"], runlog, values)
        out.total.backward()
        opt.step(model.store)
        if step % cfg.log_every == 0:
            runlog.record(step, "train", values)
    final = evaluate()
    runlog.record(steps, "eval", final)
    path = cfg.checkpoint_path(2)
    save_checkpoint(path, model.to_tensors())
    return StageResult(2, path, runlog.path, initial["total"], final["total"], initial, final)


# -- stage 3 ------------------------------------------------------------------

def summary_sequences(traj: TrajectoryEmbedding, zs) -> list[np.ndarray]:
    """``m_t`` for every frame that has ``H`` successors."""
    H = traj.horizon
    out = []
    with T.no_grad():
        for z in zs:
            n = len(z) - H
            if n <= 0:
                out.append(np.zeros((0, traj.config.summary_dim)))
                continue
            idx = np.arange(n)[:, None] + np.arange(H + 1)
            out.append(traj.encode(Tensor(z[idx])).data)
    return out


def kl_weight(step: int, anneal_steps: int) -> float:
    """Linear KL annealing from 0 at step 0 to 1 at ``anneal_steps``."""
    if anneal_steps <= 0:
        return 1.0
    return min(1.0, step / anneal_steps)


def _train_stage3(cfg: TrainConfig, data: Dataset) -> StageResult:
    pose_ae, traj = load_models(cfg.checkpoint_dir, (1, 2), data.skeleton)
    if traj.horizon != cfg.horizon_H:
        raise ConfigError(f"horizon_H {cfg.horizon_H} differs from the stage-2 checkpoint ({traj.horizon})")
    zs = latent_sequences(pose_ae, data.sequences)
    ms = summary_sequences(traj, zs)
    H, W = cfg.horizon_H, cfg.window_len
    wins = make_windows([len(z) for z in zs], W, cfg.window_stride, H, seed=None)
    model = DynamicsModel(cfg.dynamics_config(pose_ae.config.code_dim), seed=cfg.seed)
    terms = list(LossReport.TERMS)
    runlog = RunLog(cfg.log_path / "stage3_log.csv", ["total", "beta"] + terms)
    shuffle_rng = _rng(cfg, 3, 0)
    noise_rng = _rng(cfg, 3, 1)
    opt = _optimizer(cfg)

    def batch(sel):
        z = np.stack([zs[i][s:s + W] for i, s in sel])
        m = np.stack([ms[i][s:s + W - H] for i, s in sel])
        return z, m

    eval_z, eval_m = batch(wins)

    def evaluate():
        with T.no_grad():
            rep = sequence_elbo(model, eval_z, eval_m, LossWeights(beta=1.0), _rng(cfg, 3, 2))
        return {**rep.as_dict(), "beta": 1.0}

    initial = evaluate()
    runlog.record(0, "eval", initial)
    steps = cfg.steps_for(3)
    order: list = []
    for step in range(1, steps + 1):
        if len(order) < cfg.batch_size:
            order += [wins[k] for k in shuffle_rng.permutation(len(wins))]
        sel, order = order[:cfg.batch_size], order[cfg.batch_size:]
        beta = kl_weight(step - 1, cfg.kl_anneal_steps)
        z, m = batch(sel)
        model.store.zero_grad()
        rep = sequence_elbo(model, z, m, LossWeights(beta=beta), noise_rng)
        values = {**rep.as_dict(), "beta": beta}
        _check_finite(3, step, rep.total, runlog, values)
        rep.loss.backward()
        opt.step(model.store)
        if step % cfg.log_every == 0:
            runlog.record(step, "train", values)
    final = evaluate()
    runlog.record(steps, "eval", final)
    path = cfg.checkpoint_path(3)
    save_checkpoint(path, model.to_tensors())
    return StageResult(3, path, runlog.path, initial["total"], final["total"], initial, final)


def train_stage(cfg: TrainConfig, stage: int | None = None, data: Dataset | None = None) -> StageResult:
    stage = stage or cfg.stage
    if stage not in STAGES:
        raise ConfigError(f"stage must be one of {STAGES}, got {stage}")
    ckpt = Path(cfg.checkpoint_dir)
    for prev in range(1, stage):
        if not (ckpt / f"stage{prev}.dfnw").is_file():
            raise PrerequisiteError(f"stage {stage} requires the stage-{prev} checkpoint "
                                    f"{ckpt / f'stage{prev}.dfnw'}")
    data = data or load_dataset(cfg.data_dir)
    log.info("training stage %d for %d steps", stage, cfg.steps_for(stage))
    t0 = time.perf_counter()
    result = {1: _train_stage1, 2: _train_stage2, 3: _train_stage3}[stage](cfg, data)
    log.info("stage %d done in %.1fs: loss %.4g -> %.4g", stage, time.perf_counter() - t0,
             result.initial_loss, result.final_loss)
    return result


def train_all(cfg: TrainConfig, data: Dataset | None = None) -> list[StageResult]:
    data = data or load_dataset(cfg.data_dir)
    return [train_stage(cfg, s, data) for s in STAGES]
