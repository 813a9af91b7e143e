"""Diversity diagnostics: PCA projection, divergence over time, mean-distance curves.

Outputs are plain CSV plus optional single-file SVG plots written with a fixed
number format, so repeated runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dynamics import DynamicsModel, generate


# -- PCA ------------------------------------------------------------------------

@dataclass
class PCAResult:
    projected: np.ndarray       # (N, k)
    components: np.ndarray      # (k, D) unit rows
    mean: np.ndarray            # (D,)
    explained_variance_ratio: np.ndarray  # (k,)

    def project(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) @ self.components.T


def pca_fit_project(points: np.ndarray, out_dim: int = 2) -> PCAResult:
    """Center, take the top principal directions by SVD and project.

    Component signs are fixed so the largest-magnitude loading is positive,
    which makes the output independent of row order.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs at least 2 points in an (N, D) array")
    if not 1 <= out_dim <= X.shape[1]:
        raise ValueError(f"out_dim must be in [1, {X.shape[1]}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, sing, vt = np.linalg.svd(Xc, full_matrices=False)
    k = out_dim
    comps = np.zeros((k, X.shape[1]))
    r = min(k, vt.shape[0])
    comps[:r] = vt[:r]
    for i in range(r):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    var = sing ** 2
    total = var.sum()
    ratio = np.zeros(k)
    if total > 0:
        ratio[:r] = var[:r] / total
    return PCAResult(Xc @ comps.T, comps, mean, ratio)


# -- distances ------------------------------------------------------------------

def mean_pairwise_distance(points: np.ndarray) -> float:
    """Mean Euclidean distance over unordered pairs of rows; NaN for fewer than 2."""
    X = np.asarray(points, dtype=np.float64)
    n = len(X)
    if n < 2:
        return float("nan")
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    iu = np.triu_indices(n, 1)
    return float(np.mean(np.sqrt(d2[iu])))


def pose_columns(dim: int, positions_only: bool = True) -> slice:
    """Columns used as "the pose" in distance statistics."""
    return slice(0, dim - 4) if positions_only else slice(0, dim)


def mean_distance_distribution(motions, positions_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per time step, the mean and variance over sequences of the distance
    from each pose to that time step's mean pose.

    ``motions``: (N, T, D) array or a list of equal-length (T, D) arrays.
    """
    if isinstance(motions, np.ndarray):
        M = np.asarray(motions, dtype=np.float64)
    else:
        lengths = {len(m) for m in motions}
        if len(lengths) > 1:
            raise ValueError(f"sequences have different lengths: {sorted(lengths)}")
        M = np.stack([np.asarray(m, dtype=np.float64) for m in motions])
    if M.ndim != 3 or M.shape[0] == 0:
        raise ValueError("motions must be a non-empty (N, T, D) set")
    P = M[..., pose_columns(M.shape[-1], positions_only)]
    # offset from the first sequence: identical sequences give exactly zero
    centre = P[:1] + (P - P[:1]).mean(axis=0, keepdims=True)
    dist = np.linalg.norm(P - centre, axis=-1)      # (N, T)
    return dist.mean(axis=0), dist.var(axis=0)


def training_windows(sequences, length: int, stride: int) -> np.ndarray:
    """All (length)-frame windows of the training features, (N, length, D)."""
    out = [s[i:i + length] for s in sequences for i in range(0, len(s) - length + 1, stride)]
    if not out:
        raise ValueError(f"no training sequence has {length} frames")
    return np.stack(out)


@dataclass
class BandComparison:
    t: np.ndarray            # 1-based time steps compared
    generated: np.ndarray    # generated mean distance at t
    train_mean: np.ndarray
    train_std: np.ndarray
    n_sigma: float

    @property
    def z_scores(self) -> np.ndarray:
        return np.abs(self.generated - self.train_mean) / np.maximum(self.train_std, 1e-12)

    @property
    def inside(self) -> bool:
        return bool(np.all(self.z_scores <= self.n_sigma))


def compare_to_band(gen_mean: np.ndarray, train_mean: np.ndarray, train_var: np.ndarray,
                    t_range: tuple[int, int], n_sigma: float = 3.0) -> BandComparison:
    """Check the generated curve against the training band at 1-based ``t`` in ``t_range``."""
    lo, hi = t_range
    idx = np.arange(lo - 1, hi)
    return BandComparison(idx + 1, gen_mean[idx], train_mean[idx], np.sqrt(train_var[idx]), n_sigma)


# -- generation-driven diagnostics ------------------------------------------------

def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """``n`` independent streams derived from one seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class DivergenceTable:
    t_list: tuple
    seq_ids: np.ndarray      # (rows,)
    t: np.ndarray            # (rows,)
    z: np.ndarray            # (rows, z_dim)
    s: np.ndarray            # (rows, s_dim)
    motion: np.ndarray       # (n_sequences, max(t_list), feature_dim)

    @property
    def n_sequences(self) -> int:
        return int(self.seq_ids.max()) + 1 if len(self.seq_ids) else 0

    @property
    def dispersion_defined(self) -> bool:
        return self.n_sequences >= 2

    def dispersion(self, field: str = "z") -> dict[int, float]:
        """Mean pairwise distance among sequences at each requested t."""
        data = getattr(self, field)
        return {t: mean_pairwise_distance(data[self.t == t]) for t in self.t_list}

    def pose_dispersion(self, positions_only: bool = True) -> dict[int, float]:
        cols = pose_columns(self.motion.shape[-1], positions_only)
        return {t: mean_pairwise_distance(self.motion[:, t - 1, cols]) for t in self.t_list}


def divergence_scatter(model: DynamicsModel, pose_ae, prefix: np.ndarray, n_sequences: int,
                       t_list: Sequence[int] = (32, 128), seed: int = 0,
                       rngs: Sequence[np.random.Generator] | None = None,
                       resample_period: int = 1) -> DivergenceTable:
    """Generate ``n_sequences`` continuations of one prefix and record ``z_t``, ``s_t``.

    ``t`` counts generated frames from 1.  Streams come from ``seed`` unless
    ``rngs`` is given (pass identical generators to get zero dispersion).
    """
    t_list = tuple(int(t) for t in t_list)
    if not t_list or min(t_list) < 1:
        raise ValueError("t_list must hold positive frame indices")
    if rngs is None:
        if n_sequences < 1:
            raise ValueError("n_sequences must be >= 1")
        rngs = spawn_rngs(seed, n_sequences)
    rngs = list(rngs)
    n = len(rngs)
    length = max(t_list)
    res = generate(model, pose_ae, prefix, length, rngs, resample_period)
    P = res.prefix_len
    ids = np.repeat(np.arange(n), len(t_list))
    ts = np.tile(np.array(t_list), n)
    z = res.z[ids, P + ts - 1]
    s = res.s[ids, P + ts - 1]
    return DivergenceTable(t_list, ids, ts, z, s, res.motion)


# -- CSV and SVG --------------------------------------------------------------------

def _num(x: float) -> str:
    return f"{float(x):.9g}"


def csv_text(header: Sequence[str], rows, comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    return buf.getvalue()


def pca_csv(result: PCAResult, labels: Sequence[tuple[str, int]]) -> str:
    k = result.projected.shape[1]
    ratio = ", ".join(_num(v) for v in result.explained_variance_ratio)
    header = ["sequence", "frame"] + [f"pc{i + 1}" for i in range(k)]
    rows = ([name, str(frame), *p] for (name, frame), p in zip(labels, result.projected))
    return csv_text(header, rows, [f"explained_variance_ratio: {ratio}"])


def divergence_csv(table: DivergenceTable) -> str:
    zd, sd = table.z.shape[1], table.s.shape[1]
    header = ["sequence", "t"] + [f"z{i}" for i in range(zd)] + [f"s{i}" for i in range(sd)]
    rows = ([str(i), str(t), *z, *s] for i, t, z, s in zip(table.seq_ids, table.t, table.z, table.s))
    return csv_text(header, rows)


def dispersion_csv(table: DivergenceTable) -> str:
    dz, ds, dp = table.dispersion("z"), table.dispersion("s"), table.pose_dispersion()
    rows = ([str(t), dz[t], ds[t], dp[t]] for t in table.t_list)
    comments = [] if table.dispersion_defined else ["dispersion undefined: fewer than 2 sequences"]
    return csv_text(["t", "z_mean_pairwise", "s_mean_pairwise", "pose_mean_pairwise"], rows, comments)


def meandist_csv(gen_mean, gen_var, train_mean, train_var) -> str:
    rows = ([str(t + 1), gm, gv, tm, tv]
            for t, (gm, gv, tm, tv) in enumerate(zip(gen_mean, gen_var, train_mean, train_var)))
    return csv_text(["t", "generated_mean", "generated_var", "train_mean", "train_var"], rows)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


class _Canvas:
    def __init__(self, title: str, xs: np.ndarray, ys: np.ndarray, width=640, height=420, pad=50):
        self.w, self.h, self.pad = width, height, pad
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        self.x0, self.x1 = float(np.min(xs)), float(np.max(xs))
        self.y0, self.y1 = float(np.min(ys)), float(np.max(ys))
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
            f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
            'fill="none" stroke="black"/>',
            f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{self.x0:.4g}</text>',
            f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="end">{self.x1:.4g}</text>',
            f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{self.y0:.4g}</text>',
            f'<text x="{pad - 4}" y="{pad + 10}" font-size="10" text-anchor="end">{self.y1:.4g}</text>',
        ]

    def px(self, x, y):
        sx = self.pad + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.pad)
        sy = self.h - self.pad - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.pad)
        return sx, sy

    def line(self, x, y, color, dash=False):
        sx, sy = self.px(x, y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, sy))
        extra = ' stroke-dasharray="4 3"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>')

    def dots(self, x, y, color, r=2.0):
        sx, sy = self.px(x, y)
        self.parts += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{r}" fill="{color}" fill-opacity="0.7"/>'
                       for a, b in zip(sx, sy)]

    def legend(self, labels):
        for i, (label, color) in enumerate(labels):
            y = self.pad + 14 + 14 * i
            self.parts.append(f'<rect x="{self.w - self.pad - 120}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{self.w - self.pad - 105}" y="{y + 1}" font-size="11">{label}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def scatter_svg(title: str, groups: dict[str, np.ndarray]) -> str:
    """Scatter of 2-D point groups, one colour per group."""
    allp = np.concatenate([np.asarray(g, float) for g in groups.values()])
    c = _Canvas(title, allp[:, 0], allp[:, 1])
    labels = []
    for i, (name, pts) in enumerate(groups.items()):
        color = _PALETTE[i % len(_PALETTE)]
        c.dots(pts[:, 0], pts[:, 1], color)
        labels.append((name, color))
    c.legend(labels)
    return c.svg()


def meandist_svg(gen_mean, gen_var, train_mean, train_var) -> str:
    t = np.arange(1, len(gen_mean) + 1)
    tm, ts = np.asarray(train_mean), np.sqrt(np.asarray(train_var))
    ys = np.concatenate([gen_mean, tm + 3 * ts, np.maximum(tm - 3 * ts, 0)])
    c = _Canvas("mean distance to average pose", t, ys)
    c.line(t, tm, _PALETTE[0])
    c.line(t, tm + 3 * ts, _PALETTE[0], dash=True)
    c.line(t, np.maximum(tm - 3 * ts, 0), _PALETTE[0], dash=True)
    c.line(t, gen_mean, _PALETTE[1])
    c.legend([("training (3 sd band)", _PALETTE[0]), ("generated", _PALETTE[1])])
    return c.svg()
