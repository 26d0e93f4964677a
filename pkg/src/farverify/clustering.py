"""K-means pseudo-labeling: clustering, WCCS, K-sweep, elbow, refinement.

Embeddings are L2-normalized before clustering, which ties the squared
euclidean objective to cosine similarity exactly:

    ||z - c||^2 = ||z||^2 + ||c||^2 - 2 z.c

so the mean within-cluster cosine (WCCS) is a monotone proxy of the
K-means objective on unit vectors. The cluster count is chosen at the
elbow of the WCCS-versus-K curve: after min-max normalizing both axes,
the entry farthest from the chord joining the first and last sweep
points wins (ties toward smaller K). Elbow picking is a judgment call,
so the full distance profile is returned for manual override.

All operations are deterministic given their seed: restarts use seeds
seed, seed+1, ..., points are processed in utt_id order, and centroid
accumulation uses a fixed per-cluster order.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .corpus import EmbeddingSet
from .errors import (
    CoverageMismatch,
    DimensionMismatch,
    DomainMismatch,
    EmptyInput,
    FlatCurve,
    InvalidSweep,
    KTooLarge,
    RefresherCoverageMismatch,
    TooFewPoints,
    ZeroCentroid,
)

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6
DEFAULT_RESTARTS = 5
DEFAULT_SWEEP_GRID: tuple[int, ...] = tuple(range(40, 201, 10))
DEFAULT_ROUNDS = 2

# Normalized chord distances below this are numerically zero: the curve
# has no usable elbow and the chosen K is flagged low-confidence.
_FLAT_DISTANCE = 1e-9


@dataclass(frozen=True)
class ClusterModel:
    """K centroids plus an utt_id -> cluster-index assignment."""

    k: int
    centroids: np.ndarray
    assignments: Mapping[str, int]
    objective: float
    objective_trace: tuple[float, ...]
    seed_used: int
    n_iter: int

    def __post_init__(self):
        cent = np.asarray(self.centroids, dtype=np.float64)
        cent.flags.writeable = False
        object.__setattr__(self, "centroids", cent)
        object.__setattr__(self, "assignments", dict(self.assignments))


class SweepEntry(NamedTuple):
    k: int
    wccs: float
    objective: float
    seed_used: int
    restarts_used: int


@dataclass(frozen=True)
class SweepResult:
    """WCCS and K-means objective for each candidate cluster count."""

    entries: tuple[SweepEntry, ...]

    def __post_init__(self):
        entries = tuple(SweepEntry(*e) for e in self.entries)
        ks = [e.k for e in entries]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise InvalidSweep("sweep entries must be sorted by strictly increasing k")
        object.__setattr__(self, "entries", entries)

    @property
    def k_values(self) -> tuple[int, ...]:
        return tuple(e.k for e in self.entries)

    @property
    def wccs_values(self) -> tuple[float, ...]:
        return tuple(e.wccs for e in self.entries)


@dataclass(frozen=True)
class ElbowResult:
    """Chosen K plus the normalized chord-distance profile behind it."""

    k: int
    index: int
    distances: tuple[float, ...]
    low_confidence: bool


@dataclass(frozen=True)
class PseudoLabels:
    """Cluster-derived surrogate speaker labels for a set of utterances."""

    labels: Mapping[str, int]
    k: int
    round: int = 0

    def __post_init__(self):
        labels = dict(self.labels)
        used = sorted(set(labels.values()))
        if used != list(range(len(used))):
            raise CoverageMismatch("labels must form the set {0..k-1}")
        if self.k != len(used):
            raise CoverageMismatch(f"k={self.k} but {len(used)} distinct labels")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class RefineRound:
    """Everything produced by one pseudo-labeling round."""

    round: int
    sweep: SweepResult
    elbow: ElbowResult
    model: ClusterModel
    labels: PseudoLabels


# --------------------------------------------------------------------------
# K-means
# --------------------------------------------------------------------------

def _sorted_unit_points(embeddings: EmbeddingSet) -> tuple[list[str], np.ndarray]:
    """Unit-normalized rows in utt_id order (canonical processing order)."""
    order = sorted(range(len(embeddings)), key=lambda i: embeddings.ids[i])
    ids = [embeddings.ids[i] for i in order]
    pts = embeddings.unit_matrix()[order]
    return ids, np.ascontiguousarray(pts)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted (k-means++) seeding."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = points[first]
    chosen[first] = True
    diff = points - centers[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, k):
        total = float(d2.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(np.argmin(chosen))  # duplicates exhausted the spread
        centers[j] = points[idx]
        chosen[idx] = True
        diff = points - centers[j]
        np.minimum(d2, np.einsum("ij,ij->i", diff, diff), out=d2)
    return centers


def _segment_means(points: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    """Per-cluster means, accumulated in fixed (utt_id-sorted) point order."""
    order = np.argsort(assign, kind="stable")
    sorted_assign = assign[order]
    starts = np.searchsorted(sorted_assign, np.arange(k), side="left")
    sums = np.add.reduceat(points[order], starts, axis=0)
    counts = np.bincount(assign, minlength=k)
    return sums / counts[:, None]


def _repair_empty(points: np.ndarray, assign: np.ndarray, centers: np.ndarray,
                  row_sq: np.ndarray) -> np.ndarray:
    """Reseed each empty cluster with the farthest point from its centroid.

    Only points whose current cluster keeps >= 2 members are eligible, so
    the repair never empties another cluster.
    """
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k)
    while True:
        empties = np.flatnonzero(counts == 0)
        if empties.size == 0:
            return assign
        j = int(empties[0])
        dist = row_sq - 2.0 * (points @ centers[j])
        dist[counts[assign] < 2] = -np.inf
        p = int(np.argmax(dist))
        counts[assign[p]] -= 1
        counts[j] += 1
        assign[p] = j


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    n, _ = points.shape
    k = centers.shape[0]
    row_sq = np.einsum("ij,ij->i", points, points)
    prev_assign: np.ndarray | None = None
    prev_obj: float | None = None
    trace: list[float] = []
    assign = np.zeros(n, dtype=np.intp)
    for _ in range(max_iter):
        cent_sq = np.einsum("ij,ij->i", centers, centers)
        proxy = cent_sq[None, :] - 2.0 * (points @ centers.T)
        assign = np.argmin(proxy, axis=1)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        assign = _repair_empty(points, assign, centers, row_sq)
        centers = _segment_means(points, assign, k)
        diff = points - centers[assign]
        obj = float(np.einsum("ij,ij->", diff, diff)) / n
        trace.append(obj)
        if prev_obj is not None and prev_obj - obj <= tol * max(prev_obj, 1e-300):
            prev_assign = assign
            break
        prev_assign = assign
        prev_obj = obj
    return centers, assign, trace


def kmeans(
    embeddings: EmbeddingSet,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    restarts: int = DEFAULT_RESTARTS,
) -> ClusterModel:
    """Lloyd K-means over L2-normalized embeddings.

    Runs ``restarts`` independent fits with seeds seed, seed+1, ... and
    returns the one with the lowest mean squared distance objective.
    Returned centroids are exact means of their assigned points and no
    cluster is empty.
    """
    n = len(embeddings)
    if n == 0:
        raise EmptyInput("cannot cluster an empty embedding set")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points ({n})")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    ids, points = _sorted_unit_points(embeddings)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        centers0 = _kmeanspp_init(points, k, rng)
        centers, assign, trace = _lloyd(points, centers0, max_iter, tol)
        obj = trace[-1]
        if best is None or obj < best[0]:
            best = (obj, seed + r, centers, assign, trace)

    obj, seed_used, centers, assign, trace = best
    assignments = {utt: int(c) for utt, c in zip(ids, assign)}
    return ClusterModel(
        k=k,
        centroids=centers,
        assignments=assignments,
        objective=obj,
        objective_trace=tuple(trace),
        seed_used=seed_used,
        n_iter=len(trace),
    )


# --------------------------------------------------------------------------
# WCCS and the K sweep
# --------------------------------------------------------------------------

def wccs(embeddings: EmbeddingSet, model: ClusterModel) -> float:
    """Mean cosine between each point and its assigned centroid.

    A point that coincides bitwise with its centroid contributes exactly
    1.0, so a K=N model scores exactly 1.0.
    """
    if set(model.assignments) != set(embeddings.ids):
        raise CoverageMismatch("model assignments do not cover the embedding set")
    unit = embeddings.unit_matrix()
    assign = np.fromiter(
        (model.assignments[utt] for utt in embeddings.ids),
        dtype=np.intp,
        count=len(embeddings),
    )
    cent = model.centroids[assign]
    cent_norm = np.linalg.norm(model.centroids, axis=1)
    if np.any(cent_norm[np.unique(assign)] == 0.0):
        raise ZeroCentroid("a used centroid has zero norm")
    num = np.einsum("ij,ij->i", unit, cent)
    den = np.linalg.norm(unit, axis=1) * cent_norm[assign]
    cos = np.clip(num / den, -1.0, 1.0)
    exact = np.all(unit == cent, axis=1)
    cos[exact] = 1.0
    return float(cos.mean())


def sweep(
    embeddings: EmbeddingSet,
    k_values: Sequence[int],
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    restarts: int = DEFAULT_RESTARTS,
) -> SweepResult:
    """Run kmeans + wccs for every K in a strictly increasing grid."""
    ks = [int(k) for k in k_values]
    if not ks:
        raise InvalidSweep("k_values is empty")
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise InvalidSweep("k_values must be strictly increasing")
    if ks[0] < 1:
        raise InvalidSweep("k_values must be >= 1")
    if ks[-1] > len(embeddings):
        raise KTooLarge(f"k={ks[-1]} exceeds the number of points ({len(embeddings)})")
    entries = []
    for k in ks:
        model = kmeans(embeddings, k, seed=seed, max_iter=max_iter, tol=tol, restarts=restarts)
        entries.append(SweepEntry(k, wccs(embeddings, model), model.objective, seed, restarts))
    return SweepResult(tuple(entries))


def detect_elbow(result: SweepResult) -> ElbowResult:
    """Pick K at the maximum chord distance of the normalized WCCS curve."""
    entries = result.entries
    if len(entries) < 3:
        raise TooFewPoints(f"elbow detection needs >= 3 sweep entries, got {len(entries)}")
    ys = np.array([e.wccs for e in entries], dtype=np.float64)
    if not np.all(np.isfinite(ys)):
        raise InvalidSweep("sweep contains non-finite wccs values")
    if float(ys.max() - ys.min()) < 1e-12:
        raise FlatCurve("all wccs values are equal; no elbow exists")
    xs = np.array([e.k for e in entries], dtype=np.float64)
    xs = (xs - xs[0]) / (xs[-1] - xs[0])
    ys = (ys - ys.min()) / (ys.max() - ys.min())
    dx, dy = xs[-1] - xs[0], ys[-1] - ys[0]
    chord = float(np.hypot(dx, dy))
    dist = np.abs(dx * (ys[0] - ys) - (xs[0] - xs) * dy) / chord
    interior = dist[1:-1]
    i = 1 + int(np.argmax(interior))
    low_confidence = float(interior.max()) < _FLAT_DISTANCE
    return ElbowResult(
        k=entries[i].k,
        index=i,
        distances=tuple(dist.tolist()),
        low_confidence=low_confidence,
    )


# --------------------------------------------------------------------------
# pseudo-labels and refinement
# --------------------------------------------------------------------------

def assign_pseudo_labels(
    embeddings: EmbeddingSet, model: ClusterModel, round_index: int = 0
) -> PseudoLabels:
    """Label every utterance by its nearest centroid (ties to smaller index).

    Labels are re-packed to {0..k-1} in centroid-index order, so they
    always partition the input even when some centroid attracts nothing.
    """
    if model.centroids.shape[1] != embeddings.dim:
        raise DimensionMismatch(
            f"model dim {model.centroids.shape[1]} != embeddings dim {embeddings.dim}"
        )
    unit = embeddings.unit_matrix()
    cent_sq = np.einsum("ij,ij->i", model.centroids, model.centroids)
    proxy = cent_sq[None, :] - 2.0 * (unit @ model.centroids.T)
    raw = np.argmin(proxy, axis=1)
    used = np.unique(raw)
    remap = {int(old): new for new, old in enumerate(used.tolist())}
    labels = {utt: remap[int(c)] for utt, c in zip(embeddings.ids, raw)}
    return PseudoLabels(labels=labels, k=len(used), round=round_index)


Refresher = Callable[[PseudoLabels], EmbeddingSet]


def refine_loop(
    embeddings: EmbeddingSet,
    refresher: Refresher,
    rounds: int = DEFAULT_ROUNDS,
    k_values: Sequence[int] = DEFAULT_SWEEP_GRID,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    restarts: int = DEFAULT_RESTARTS,
) -> list[RefineRound]:
    """Iterate sweep -> elbow -> kmeans -> pseudo-labels -> refresh.

    The refresher stands in for fine-tuning a speaker model on the
    pseudo-labels and re-extracting embeddings; it must return a set
    over exactly the same utt_ids.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    expected = set(embeddings.ids)
    current = embeddings
    out: list[RefineRound] = []
    for r in range(rounds):
        sw = sweep(current, k_values, seed=seed, max_iter=max_iter, tol=tol, restarts=restarts)
        el = detect_elbow(sw)
        model = kmeans(current, el.k, seed=seed, max_iter=max_iter, tol=tol, restarts=restarts)
        labels = assign_pseudo_labels(current, model, round_index=r)
        out.append(RefineRound(round=r, sweep=sw, elbow=el, model=model, labels=labels))
        if r + 1 < rounds:
            current = refresher(labels)
            if set(current.ids) != expected:
                raise RefresherCoverageMismatch(
                    "refresher changed the utterance set between rounds"
                )
    return out


# --------------------------------------------------------------------------
# partition agreement
# --------------------------------------------------------------------------

def _label_map(labeling) -> Mapping[str, object]:
    if isinstance(labeling, PseudoLabels):
        return labeling.labels
    return dict(labeling)


def nmi(a, b) -> float:
    """Normalized mutual information (arithmetic-mean normalization).

    Accepts PseudoLabels or any utt_id -> label mapping. Returns 1.0 for
    partitions identical up to relabeling; if exactly one side is a
    single cluster the score is 0.0.
    """
    map_a, map_b = _label_map(a), _label_map(b)
    if set(map_a) != set(map_b):
        raise DomainMismatch("labelings cover different utterance sets")
    keys = sorted(map_a)
    _, ia = np.unique([str(map_a[k]) for k in keys], return_inverse=True)
    _, ib = np.unique([str(map_b[k]) for k in keys], return_inverse=True)
    n = len(keys)
    na, nb = ia.max() + 1, ib.max() + 1
    cont = np.zeros((na, nb))
    np.add.at(cont, (ia, ib), 1.0)
    p = cont / n
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    ha = float(-np.sum(pa[pa > 0] * np.log(pa[pa > 0])))
    hb = float(-np.sum(pb[pb > 0] * np.log(pb[pb > 0])))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = p > 0
    mi = float(np.sum(p[nz] * (np.log(p[nz]) - np.log(np.outer(pa, pb)[nz]))))
    value = mi / ((ha + hb) / 2.0)
    return min(1.0, max(0.0, value))


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def format_sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    buf.write("k,wccs,objective\n")
    for e in result.entries:
        buf.write(f"{e.k},{e.wccs!r},{e.objective!r}\n")
    return buf.getvalue()


def parse_sweep_csv(text: str) -> SweepResult:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "k,wccs,objective":
        raise InvalidSweep("sweep CSV must start with header 'k,wccs,objective'")
    entries = []
    for ln in lines[1:]:
        k, w, o = ln.split(",")
        entries.append(SweepEntry(int(k), float(w), float(o), 0, 0))
    return SweepResult(tuple(entries))


def format_labels(labels: PseudoLabels) -> str:
    return "".join(f"{utt}\t{labels.labels[utt]}\n" for utt in sorted(labels.labels))


def parse_labels(text: str, round_index: int = 0) -> PseudoLabels:
    table: dict[str, int] = {}
    for ln in text.splitlines():
        if not ln.strip():
            continue
        utt, lab = ln.split("\t")
        table[utt] = int(lab)
    return PseudoLabels(labels=table, k=len(set(table.values())), round=round_index)


def format_cluster_model(model: ClusterModel) -> str:
    buf = io.StringIO()
    k, d = model.centroids.shape
    buf.write(f"{k} {d}\n")
    for row in model.centroids:
        buf.write(" ".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def parse_cluster_model(text: str) -> np.ndarray:
    """Centroid matrix from the `k d` + rows format."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    k, d = (int(t) for t in lines[0].split())
    rows = [np.array([float(t) for t in ln.split()]) for ln in lines[1 : 1 + k]]
    mat = np.vstack(rows)
    if mat.shape != (k, d):
        raise DimensionMismatch(f"model header {k}x{d} does not match rows {mat.shape}")
    return mat
