"""Verification metrics: DET curves, EER, minimum detection cost.

The decision rule is accept iff score >= threshold (ties accepted).
Candidate thresholds are all distinct observed scores plus one value
below the minimum and one above the maximum, so the curve always
contains the reject-none (p_miss=0, p_fa=1) and reject-all
(p_miss=1, p_fa=0) operating points.

The detection cost is

    C_det(t) = c_miss * p_miss(t) * p_tar + c_fa * p_fa(t) * (1 - p_tar)

minimized over thresholds and, by default, normalized by the best
trivial-system cost min(c_miss * p_tar, c_fa * (1 - p_tar)), which maps
it into [0, 1]. Defaults are p_tar = 0.01 and unit costs.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import corpus
from .corpus import (
    EmbeddingSet,
    Manifest,
    ScoreRecord,
    TrialPair,
    derive_tags,
)
from .errors import (
    ConfigInvalid,
    MissingLabel,
    NoNontargets,
    NoTargets,
    ScoreTrialMismatch,
    UnknownId,
    ZeroVector,
)

_SCORE_CHUNK = 1 << 15


@dataclass(frozen=True)
class DcfParams:
    """Detection-cost parameters (prior and per-error costs)."""

    p_tar: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        if not 0.0 < self.p_tar < 1.0:
            raise ConfigInvalid(f"p_tar must be in (0,1), got {self.p_tar}")
        if self.c_miss <= 0.0 or self.c_fa <= 0.0:
            raise ConfigInvalid("c_miss and c_fa must be positive")


DEFAULT_DCF = DcfParams()


@dataclass(frozen=True)
class DetCurve:
    """Operating points (threshold, p_miss, p_fa) at increasing thresholds.

    Consecutive thresholds that realize the same (p_miss, p_fa) point are
    collapsed, keeping the smallest threshold.
    """

    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray
    n_target: int
    n_nontarget: int

    def __post_init__(self):
        for name in ("thresholds", "p_miss", "p_fa"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.thresholds) == len(self.p_miss) == len(self.p_fa)):
            raise ConfigInvalid("curve arrays must have equal length")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ConfigInvalid("thresholds must be strictly increasing")
        if np.any(np.diff(self.p_miss) < 0) or np.any(np.diff(self.p_fa) > 0):
            raise ConfigInvalid("p_miss must be non-decreasing and p_fa non-increasing")

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.p_miss.tolist(), self.p_fa.tolist()))


class MinDcfResult(NamedTuple):
    value: float
    threshold: float


@dataclass(frozen=True)
class StratumMetrics:
    """EER and minimum detection cost over one subset of trials."""

    eer: float
    min_dcf: float
    threshold: float
    n_target: int
    n_nontarget: int


@dataclass(frozen=True)
class MetricsReport:
    """Overall metrics plus per-condition strata (incl. an 'overall' key)."""

    eer: float
    min_dcf: float
    threshold: float
    n_target: int
    n_nontarget: int
    strata: Mapping[str, StratumMetrics] = field(default_factory=dict)


# --------------------------------------------------------------------------
# trial scoring
# --------------------------------------------------------------------------

def _resolve_units(emb: EmbeddingSet, mean: np.ndarray | None):
    """Unit rows (optionally mean-subtracted); zero rows are flagged lazily."""
    if mean is None:
        return emb.unit_matrix(), None
    shifted = emb.matrix - mean
    norms = np.linalg.norm(shifted, axis=1)
    bad = norms == 0.0
    safe = np.where(bad, 1.0, norms)
    return shifted / safe[:, None], bad


def score_trials(
    enroll: EmbeddingSet,
    test: EmbeddingSet,
    trials: Sequence[TrialPair],
    *,
    sub_mean: bool = False,
    enroll_groups: Mapping[str, Sequence[str]] | None = None,
    chunk_size: int = _SCORE_CHUNK,
) -> list[ScoreRecord]:
    """Cosine-score every trial, preserving trial order.

    With ``sub_mean`` the corpus mean (over the enroll and test sets) is
    subtracted from every embedding before normalization. An entry of
    ``enroll_groups`` maps an enrollment model id to several utterance
    ids of the enroll set; their (optionally mean-subtracted) vectors
    are averaged and then normalized.
    """
    mean = None
    if sub_mean:
        if enroll is test:
            mean = enroll.matrix.mean(axis=0)
        else:
            total = enroll.matrix.sum(axis=0) + test.matrix.sum(axis=0)
            mean = total / (len(enroll) + len(test))
    e_unit, e_bad = _resolve_units(enroll, mean)
    if test is enroll:
        t_unit, t_bad = e_unit, e_bad
    else:
        t_unit, t_bad = _resolve_units(test, mean)

    # Enrollment models may aggregate several utterances.
    group_rows: dict[str, int] = {}
    if enroll_groups:
        base = enroll.matrix if mean is None else enroll.matrix - mean
        extra = np.empty((len(enroll_groups), enroll.dim))
        for gi, (gid, members) in enumerate(enroll_groups.items()):
            if not members:
                raise UnknownId(f"enrollment model {gid!r} has no utterances")
            rows = [enroll.index_of(u) for u in members]
            avg = base[rows].mean(axis=0)
            norm = float(np.linalg.norm(avg))
            if norm == 0.0:
                raise ZeroVector(f"enrollment model {gid!r} averages to a zero vector")
            extra[gi] = avg / norm
            group_rows[gid] = gi
        e_unit = np.vstack([e_unit, extra])
        if e_bad is not None:
            e_bad = np.concatenate([e_bad, np.zeros(len(enroll_groups), dtype=bool)])

    e_index = dict(enroll._index)
    for gid, gi in group_rows.items():
        e_index[gid] = len(enroll) + gi  # model ids shadow plain utterances
    t_index = test._index

    n = len(trials)
    e_idx = np.empty(n, dtype=np.intp)
    t_idx = np.empty(n, dtype=np.intp)
    for i, pair in enumerate(trials):
        ei = e_index.get(pair.enroll_id)
        if ei is None:
            raise UnknownId(f"trial {i}: unknown enroll id {pair.enroll_id!r}")
        ti = t_index.get(pair.test_id)
        if ti is None:
            raise UnknownId(f"trial {i}: unknown test id {pair.test_id!r}")
        e_idx[i] = ei
        t_idx[i] = ti

    if e_bad is not None and np.any(e_bad[e_idx]):
        i = int(np.flatnonzero(e_bad[e_idx])[0])
        raise ZeroVector(f"trial {i}: enroll embedding is zero after mean subtraction")
    if t_bad is not None and np.any(t_bad[t_idx]):
        i = int(np.flatnonzero(t_bad[t_idx])[0])
        raise ZeroVector(f"trial {i}: test embedding is zero after mean subtraction")

    scores = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        rows_e = e_unit[e_idx[start:stop]]
        rows_t = t_unit[t_idx[start:stop]]
        np.einsum("ij,ij->i", rows_e, rows_t, out=scores[start:stop])
    np.clip(scores, -1.0, 1.0, out=scores)

    return [
        ScoreRecord(p.enroll_id, p.test_id, s)
        for p, s in zip(trials, scores.tolist())
    ]


# --------------------------------------------------------------------------
# DET curve / EER / minDCF
# --------------------------------------------------------------------------

def _split_scores(
    scores: Sequence[ScoreRecord], trials: Sequence[TrialPair]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-trial score array plus target mask; validates coverage/labels."""
    table: dict[tuple[str, str], float] = {}
    for rec in scores:
        key = (rec.enroll_id, rec.test_id)
        old = table.get(key)
        if old is not None and old != rec.score:
            raise ScoreTrialMismatch(f"conflicting scores for pair {key}")
        table[key] = rec.score
    values = np.empty(len(trials))
    is_target = np.empty(len(trials), dtype=bool)
    for i, pair in enumerate(trials):
        if pair.label is None:
            raise MissingLabel(f"trial {i} ({pair.enroll_id}, {pair.test_id}) is unlabeled")
        s = table.get((pair.enroll_id, pair.test_id))
        if s is None:
            raise ScoreTrialMismatch(
                f"no score for trial ({pair.enroll_id}, {pair.test_id})"
            )
        values[i] = s
        is_target[i] = pair.label == corpus.TARGET
    return values, is_target


def _curve_from_scores(tar: np.ndarray, non: np.ndarray) -> DetCurve:
    if tar.size == 0:
        raise NoTargets("no target trials")
    if non.size == 0:
        raise NoNontargets("no nontarget trials")
    tar = np.sort(tar)
    non = np.sort(non)
    distinct = np.unique(np.concatenate([tar, non]))
    thr = np.concatenate([[distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]])
    p_miss = np.searchsorted(tar, thr, side="left") / tar.size
    p_fa = (non.size - np.searchsorted(non, thr, side="left")) / non.size
    keep = np.ones(len(thr), dtype=bool)
    keep[1:] = (np.diff(p_miss) != 0) | (np.diff(p_fa) != 0)
    return DetCurve(thr[keep], p_miss[keep], p_fa[keep], int(tar.size), int(non.size))


def det_curve(scores: Sequence[ScoreRecord], trials: Sequence[TrialPair]) -> DetCurve:
    """Build the DET curve of a fully labeled, fully scored trial list."""
    values, is_target = _split_scores(scores, trials)
    return _curve_from_scores(values[is_target], values[~is_target])


def eer(curve: DetCurve) -> float:
    """Equal error rate by linear interpolation on the operating points."""
    pm, pf = curve.p_miss, curve.p_fa
    diff = pm - pf
    i = int(np.argmax(diff >= 0.0))
    if diff[i] == 0.0:
        return float(pm[i])
    denom = (pm[i] - pm[i - 1]) - (pf[i] - pf[i - 1])
    t = (pf[i - 1] - pm[i - 1]) / denom
    return float(pm[i - 1] + t * (pm[i] - pm[i - 1]))


def min_dcf_detail(curve: DetCurve, params: DcfParams = DEFAULT_DCF) -> MinDcfResult:
    """Minimum detection cost and the first threshold attaining it."""
    cost = (
        params.c_miss * params.p_tar * curve.p_miss
        + params.c_fa * (1.0 - params.p_tar) * curve.p_fa
    )
    if params.normalize:
        cost = cost / min(params.c_miss * params.p_tar, params.c_fa * (1.0 - params.p_tar))
    i = int(np.argmin(cost))
    return MinDcfResult(float(cost[i]), float(curve.thresholds[i]))


def min_dcf(curve: DetCurve, params: DcfParams = DEFAULT_DCF) -> float:
    return min_dcf_detail(curve, params).value


# --------------------------------------------------------------------------
# stratified reporting
# --------------------------------------------------------------------------

_STRATA_ORDER = (
    "overall",
    corpus.TAG_TD,
    corpus.TAG_TI,
    "visit_gap_0",
    "visit_gap_1",
    "visit_gap_2",
    "dist_-1.5M",
    "dist_1M",
    "dist_3M",
    "dist_5M",
    "dist_NA",
)


def _stratum_sort_key(tag: str):
    try:
        return (0, _STRATA_ORDER.index(tag))
    except ValueError:
        return (1, tag)


def _stratum_metrics(tar: np.ndarray, non: np.ndarray, params: DcfParams) -> StratumMetrics:
    curve = _curve_from_scores(tar, non)
    best = min_dcf_detail(curve, params)
    return StratumMetrics(
        eer=eer(curve),
        min_dcf=best.value,
        threshold=best.threshold,
        n_target=curve.n_target,
        n_nontarget=curve.n_nontarget,
    )


def stratified_report(
    scores: Sequence[ScoreRecord],
    trials: Sequence[TrialPair],
    manifest: Manifest | None = None,
    params: DcfParams = DEFAULT_DCF,
) -> MetricsReport:
    """Overall and per-condition metrics.

    Tags stored on the trials are used when present; otherwise they are
    derived from the manifest. A stratum with fewer than two targets or
    two nontargets is omitted rather than reported as zero.
    """
    values, is_target = _split_scores(scores, trials)
    members: dict[str, list[int]] = {}
    for i, pair in enumerate(trials):
        tags = pair.tags
        if not tags:
            if manifest is None:
                raise MissingLabel(
                    f"trial {i} has no tags and no manifest was provided"
                )
            tags = derive_tags(manifest.meta(pair.enroll_id), manifest.meta(pair.test_id))
        for tag in tags:
            members.setdefault(tag, []).append(i)

    overall = _stratum_metrics(values[is_target], values[~is_target], params)
    strata: dict[str, StratumMetrics] = {"overall": overall}
    for tag in sorted(members, key=_stratum_sort_key):
        idx = np.asarray(members[tag], dtype=np.intp)
        mask = np.zeros(len(trials), dtype=bool)
        mask[idx] = True
        tar = values[mask & is_target]
        non = values[mask & ~is_target]
        if tar.size < 2 or non.size < 2:
            continue
        strata[tag] = _stratum_metrics(tar, non, params)

    return MetricsReport(
        eer=overall.eer,
        min_dcf=overall.min_dcf,
        threshold=overall.threshold,
        n_target=overall.n_target,
        n_nontarget=overall.n_nontarget,
        strata=strata,
    )


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def report_to_dict(report: MetricsReport) -> dict:
    def one(m: StratumMetrics) -> dict:
        return {
            "eer": m.eer,
            "min_dcf": m.min_dcf,
            "threshold": m.threshold,
            "n_target": m.n_target,
            "n_nontarget": m.n_nontarget,
        }

    ordered = sorted(report.strata, key=_stratum_sort_key)
    return {
        "eer": report.eer,
        "min_dcf": report.min_dcf,
        "threshold": report.threshold,
        "n_target": report.n_target,
        "n_nontarget": report.n_nontarget,
        "strata": {tag: one(report.strata[tag]) for tag in ordered},
    }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def format_report_table(report: MetricsReport) -> str:
    """Aligned-column text: one row per stratum, EER% and minDCF columns."""
    rows = [("stratum", "EER%", "minDCF", "thr", "#tar", "#non")]
    for tag in sorted(report.strata, key=_stratum_sort_key):
        m = report.strata[tag]
        rows.append(
            (
                tag,
                f"{100.0 * m.eer:.3f}",
                f"{m.min_dcf:.3f}",
                f"{m.threshold:.4f}",
                str(m.n_target),
                str(m.n_nontarget),
            )
        )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = [
        "  ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(row, widths)))
        for row in rows
    ]
    return "\n".join(lines) + "\n"


def det_to_csv(curve: DetCurve) -> str:
    buf = io.StringIO()
    buf.write("threshold,p_miss,p_fa\n")
    for t, pm, pf in curve.points:
        buf.write(f"{t!r},{pm!r},{pf!r}\n")
    return buf.getvalue()
