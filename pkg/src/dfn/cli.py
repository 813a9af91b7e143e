"""``dfn`` command-line interface.

Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O or input-data
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .core.checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint
from .dynamics import generate
from .mocap.bvh import BVHParseError, read_bvh, write_bvh
from .mocap.dataset import MixedSkeletonError, clip_to_features, load_dataset, preprocess_directory, read_manifest
from .mocap.export import motion_to_clip
from .mocap.features import GlobalTransform, read_dfnf, root_trajectory, wrap_angle
from .mocap.synthetic import walking_clip
from .training import (STAGES, ConfigError, PrerequisiteError, TrainConfig, latent_sequences,
                       load_config, load_models, train_stage)

log = logging.getLogger("dfn")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
EVAL_MODES = ("pca", "divergence", "meandist")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(ValueError):
    pass


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, text.encode("utf-8"))


# -- shared loading -------------------------------------------------------------

def _config_from_args(args) -> TrainConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    if not (args.checkpoints and args.data):
        raise UsageError("give --config, or both --checkpoints and --data")
    return TrainConfig(data_dir=args.data, checkpoint_dir=args.checkpoints)


def _frame_time(cfg: TrainConfig) -> float:
    rows = read_manifest(cfg.data_dir)
    return 1.0 / float(rows[0]["fps"]) if rows else 1.0 / 30.0


def load_prefix(path, cfg: TrainConfig, max_frames: int = 64) -> tuple[np.ndarray, GlobalTransform]:
    """Raw prefix features from a DFNF or BVH file, truncated to ``max_frames``.

    BVH input is resampled to the dataset rate and keeps its global
    placement; DFNF input starts at the origin facing +Z.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"prefix file not found: {path}")
    if path.suffix.lower() == ".bvh":
        feats, start = clip_to_features(read_bvh(path), 1.0 / _frame_time(cfg))
    else:
        feats, start = read_dfnf(path), GlobalTransform((0.0, 0.0, 0.0), 0.0)
    if len(feats) < 2:
        raise UsageError(f"prefix {path} has {len(feats)} frames; at least 2 are needed")
    return feats[:max_frames], start


def continuation_start(prefix: np.ndarray, start: GlobalTransform) -> GlobalTransform:
    """Global transform of the frame right after the prefix."""
    pos, heading = root_trajectory(prefix, start)
    J = (prefix.shape[1] - 4) // 3
    step = prefix[-1, 3 * J:3 * J + 3].copy()
    step[1] = 0.0
    c, s = np.cos(heading[-1]), np.sin(heading[-1])
    world_step = np.array([step[0] * c + step[2] * s, 0.0, -step[0] * s + step[2] * c])
    return GlobalTransform(tuple(pos[-1] + world_step), wrap_angle(heading[-1] + prefix[-1, -1]))


def default_prefix(cfg: TrainConfig, n_frames: int) -> np.ndarray:
    data = load_dataset(cfg.data_dir)
    return data.sequences[0][:n_frames]


# -- commands -----------------------------------------------------------------

def cmd_preprocess(args) -> int:
    data = preprocess_directory(args.input, args.output, fps=args.fps)
    print(f"wrote {len(data.sequences)} sequences ({data.n_frames} frames) to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    stages = [args.stage] if args.stage else ([cfg.stage] if cfg.stage else list(STAGES))
    for st in stages:
        r = train_stage(cfg, st)
        print(f"stage {st}: loss {r.initial_loss:.6g} -> {r.final_loss:.6g}; checkpoint {r.checkpoint}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.frames < 0:
        raise UsageError("--frames must be >= 0")
    cfg = _config_from_args(args)
    skeleton = read_bvh(Path(cfg.data_dir) / "skeleton.bvh", allow_empty=True).skeleton
    pose_ae, _, dyn = load_models(cfg.checkpoint_dir, (1, 2, 3), skeleton)
    prefix, start = load_prefix(args.prefix, cfg, args.prefix_frames)
    rng = ev.spawn_rngs(args.seed, 1)
    res = generate(dyn, pose_ae, prefix, args.frames, rng,
                   resample_period=args.resample_period or cfg.resample_period)
    motion = res.motion[0]
    quats = pose_ae.decode_rotations(res.z[0, res.prefix_len:])
    clip = motion_to_clip(pose_ae.skeleton, motion, quats, continuation_start(prefix, start),
                          _frame_time(cfg))
    _write_text(args.out, write_bvh(clip.skeleton, clip.frame_time, clip.frames))
    trace = Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace.csv")
    P = res.prefix_len
    zd, sd = res.z.shape[-1], res.s.shape[-1]
    rows = ([str(t - P + 1), "warmup" if t < P else "generated", *res.z[0, t], *res.s[0, t]]
            for t in range(res.z.shape[1]))
    header = ["t", "phase"] + [f"z{i}" for i in range(zd)] + [f"s{i}" for i in range(sd)]
    _write_text(trace, ev.csv_text(header, rows))
    print(f"wrote {args.frames} frames to {args.out} and latent trace to {trace}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    out = Path(args.out)
    if args.mode == "pca":
        data = load_dataset(cfg.data_dir)
        (pose_ae,) = load_models(cfg.checkpoint_dir, (1,), data.skeleton)
        zs = latent_sequences(pose_ae, data.sequences)
        result = ev.pca_fit_project(np.concatenate(zs), 2)
        labels = [(name, i) for name, z in zip(data.names, zs) for i in range(len(z))]
        _write_text(out / "pca.csv", ev.pca_csv(result, labels))
        if args.svg:
            groups, k = {}, 0
            for name, z in zip(data.names, zs):
                groups[name] = result.projected[k:k + len(z)]
                k += len(z)
            _write_text(out / "pca.svg", ev.scatter_svg("latent PCA", groups))
        print(f"explained variance ratio: {', '.join(f'{v:.4f}' for v in result.explained_variance_ratio)}")
        return EXIT_OK

    skeleton = read_bvh(Path(cfg.data_dir) / "skeleton.bvh", allow_empty=True).skeleton
    pose_ae, _, dyn = load_models(cfg.checkpoint_dir, (1, 2, 3), skeleton)
    if args.prefix:
        prefix, _ = load_prefix(args.prefix, cfg, args.prefix_frames)
    else:
        prefix = default_prefix(cfg, args.prefix_frames)
    period = args.resample_period or cfg.resample_period

    if args.mode == "divergence":
        t_list = tuple(int(t) for t in args.t_list.split(","))
        table = ev.divergence_scatter(dyn, pose_ae, prefix, args.n, t_list, seed=args.seed,
                                      resample_period=period)
        _write_text(out / "divergence.csv", ev.divergence_csv(table))
        _write_text(out / "dispersion.csv", ev.dispersion_csv(table))
        if args.svg and table.dispersion_defined:
            pca = ev.pca_fit_project(table.z, 2)
            groups = {f"t={t}": pca.projected[table.t == t] for t in table.t_list}
            _write_text(out / "divergence.svg", ev.scatter_svg("z at selected frames (PCA)", groups))
        disp = table.dispersion("z")
        print("z dispersion: " + ", ".join(f"t={t}: {disp[t]:.4f}" for t in table.t_list))
        return EXIT_OK

    # meandist
    data = load_dataset(cfg.data_dir)
    res = generate(dyn, pose_ae, prefix, args.length, ev.spawn_rngs(args.seed, args.n), period)
    gm, gv = ev.mean_distance_distribution(res.motion)
    tm, tv = ev.mean_distance_distribution(ev.training_windows(data.sequences, args.length, args.stride))
    _write_text(out / "meandist.csv", ev.meandist_csv(gm, gv, tm, tv))
    if args.svg:
        _write_text(out / "meandist.svg", ev.meandist_svg(gm, gv, tm, tv))
    lo = max(1, args.length * 3 // 4)
    cmp = ev.compare_to_band(gm, tm, tv, (lo, args.length))
    print(f"t in [{lo}, {args.length}]: max |generated - train| / train sd = {cmp.z_scores.max():.3f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    head = path.read_bytes()[:4]
    if head == b"DFNW":
        for name, arr in sorted(load_checkpoint(path).items()):
            shape = "x".join(str(d) for d in arr.shape) or "scalar"
            print(f"{name}\t{shape}")
    elif head == b"DFNF":
        f = read_dfnf(path)
        print(f"frames {f.shape[0]}, dim {f.shape[1]}")
        print(f"root height mean {f[:, 1].mean():.3f} cm, speed mean "
              f"{np.linalg.norm(f[:, -4:-1], axis=1).mean():.3f} cm/frame")
    elif path.suffix.lower() == ".bvh":
        clip = read_bvh(path, allow_empty=True)
        print(f"joints {clip.skeleton.n_joints}, channels {clip.skeleton.channel_count}, "
              f"frames {clip.n_frames}, fps {clip.fps:.3f}")
        for j in clip.skeleton.joints:
            print(f"  {j.name}\tparent={j.parent}\toffset={tuple(round(v, 4) for v in j.offset)}")
    else:
        raise UsageError(f"unrecognized file type: {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    clip = walking_clip(args.seconds, args.fps, seed=args.seed)
    _write_text(args.out, write_bvh(clip.skeleton, clip.frame_time, clip.frames))
    print(f"wrote {clip.n_frames} frames to {args.out}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfn", description="Stochastic motion generation with future-conditioned latent dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="convert a directory of BVH files to feature files")
    sp.add_argument("--input", required=True, help="directory of .bvh files sharing one skeleton")
    sp.add_argument("--output", required=True, help="dataset directory to write")
    sp.add_argument("--fps", type=float, default=30.0, help="training frame rate (default 30)")
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("train", help="train one stage or all stages")
    sp.add_argument("--config", required=True)
    sp.add_argument("--stage", type=int, choices=STAGES, help="stage to train (default: config, else all)")
    sp.set_defaults(func=cmd_train)

    def model_args(sp):
        sp.add_argument("--config", help="training config naming data and checkpoint directories")
        sp.add_argument("--checkpoints", help="checkpoint directory (without --config)")
        sp.add_argument("--data", help="dataset directory (without --config)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--prefix-frames", type=int, default=20, help="prefix length cap (<= 64)")
        sp.add_argument("--resample-period", type=int, default=0,
                        help="resample the future state every N frames (default: config value)")

    sp = sub.add_parser("generate", help="generate motion from a prefix")
    model_args(sp)
    sp.add_argument("--prefix", required=True, help="DFNF or BVH prefix file")
    sp.add_argument("--frames", type=int, required=True)
    sp.add_argument("--out", required=True, help="output BVH path")
    sp.add_argument("--trace", help="latent trace CSV (default: <out>.trace.csv)")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="diversity diagnostics")
    model_args(sp)
    sp.add_argument("--mode", required=True, choices=EVAL_MODES)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--prefix", help="prefix file (default: first training sequence)")
    sp.add_argument("--n", type=int, default=64, help="number of generated sequences")
    sp.add_argument("--t-list", default="32,128", help="comma-separated frames for divergence")
    sp.add_argument("--length", type=int, default=128, help="generated length for meandist")
    sp.add_argument("--stride", type=int, default=8, help="training window stride for meandist")
    sp.add_argument("--svg", action="store_true", help="also write SVG plots")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("inspect", help="summarize a DFNW, DFNF or BVH file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("synth-walk", help="write a procedural walking BVH")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seconds", type=float, default=15.0)
    sp.add_argument("--fps", type=float, default=120.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def _setup_logging() -> None:
    name = os.environ.get("DFN_LOG_LEVEL", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    prefix_frames = getattr(args, "prefix_frames", None)
    if prefix_frames is not None and not 2 <= prefix_frames <= 64:
        print("dfn: error: --prefix-frames must be in [2, 64]", file=sys.stderr)
        return EXIT_ARGS
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dfn: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (FileNotFoundError, PrerequisiteError, CheckpointError, BVHParseError,
            MixedSkeletonError, OSError) as exc:
        print(f"dfn: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as exc:
        print(f"dfn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"dfn: error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
