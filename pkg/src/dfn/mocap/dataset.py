"""On-disk feature datasets: a directory of DFNF files plus manifest, stats and skeleton."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core.checkpoint import atomic_write_bytes
from ..skeleton import Skeleton
from .bvh import RawClip, read_bvh, resample, write_bvh
from .features import NormStats, compute_norm_stats, extract_features, read_dfnf, write_dfnf

log = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
STATS = "stats.csv"
SKELETON = "skeleton.bvh"
MANIFEST_COLUMNS = ("file", "frames", "source", "fps", "start_x", "start_y", "start_z", "heading")


class MixedSkeletonError(ValueError):
    def __init__(self, offenders: list[tuple[str, str]]):
        self.offenders = offenders
        lines = "\n".join(f"  {name}: {why}" for name, why in offenders)
        super().__init__(f"input files do not share one skeleton:\n{lines}")


@dataclass
class Dataset:
    sequences: list
    names: list
    stats: NormStats
    skeleton: Skeleton

    @property
    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)


def clip_to_features(clip: RawClip, fps: float | None):
    if fps is not None and abs(clip.fps - fps) > 1e-6:
        clip = resample(clip, fps)
    return extract_features(clip)


def preprocess_directory(in_dir, out_dir, fps: float | None = 30.0) -> Dataset:
    """Convert every ``*.bvh`` under ``in_dir`` to features in ``out_dir``.

    All files must share one skeleton (joint names and offsets).  Nothing is
    written when validation fails.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    if not in_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {in_dir}")
    paths = sorted(in_dir.glob("*.bvh"))
    if not paths:
        raise FileNotFoundError(f"no .bvh files in {in_dir}")
    clips = [(p, read_bvh(p)) for p in paths]
    reference = clips[0][1].skeleton
    offenders = [(p.name, why) for p, c in clips[1:] if (why := reference.mismatch(c.skeleton))]
    if offenders:
        raise MixedSkeletonError(offenders)

    rows, seqs, names = [], [], []
    for p, clip in clips:
        feats, start = clip_to_features(clip, fps)
        seqs.append(feats)
        names.append(p.stem + ".dfnf")
        rows.append((names[-1], len(feats), p.name, repr(float(fps or clip.fps)),
                     *(repr(v) for v in start.position), repr(start.heading)))
        log.info("%s: %d frames -> %d feature frames", p.name, clip.n_frames, len(feats))
    stats = compute_norm_stats(seqs)
    if stats.clamped.any():
        log.info("%d feature dimensions have near-zero variance; std clamped to 1",
                 int(stats.clamped.sum()))

    out_dir.mkdir(parents=True, exist_ok=True)
    for name, feats in zip(names, seqs):
        write_dfnf(out_dir / name, feats)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    writer.writerows(rows)
    atomic_write_bytes(out_dir / MANIFEST, buf.getvalue().encode("utf-8"))
    atomic_write_bytes(out_dir / STATS, stats.to_csv().encode("utf-8"))
    frame_time = 1.0 / (fps or clips[0][1].fps)
    atomic_write_bytes(out_dir / SKELETON, write_bvh(reference, frame_time, np.zeros((0, reference.channel_count))).encode("utf-8"))
    # read the stats back so training sees exactly what is on disk
    return Dataset([read_dfnf(out_dir / n) for n in names], names,
                   NormStats.from_csv(stats.to_csv()), reference)


def read_manifest(data_dir) -> list[dict]:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def load_dataset(data_dir) -> Dataset:
    """Read the outputs of :func:`preprocess_directory`."""
    d = Path(data_dir)
    names, seqs = [], []
    for row in read_manifest(d):
        feats = read_dfnf(d / row["file"])
        if len(feats) != int(row["frames"]):
            raise ValueError(f"{row['file']}: manifest lists {row['frames']} frames, file has {len(feats)}")
        names.append(row["file"])
        seqs.append(feats)
    stats_path = d / STATS
    if not stats_path.is_file():
        raise FileNotFoundError(f"normalization stats not found: {stats_path}")
    stats = NormStats.from_csv(stats_path.read_text(encoding="utf-8"))
    skeleton = read_bvh(d / SKELETON, allow_empty=True).skeleton
    return Dataset(seqs, names, stats, skeleton)
