"""DER and JER scoring with optimal reference/hypothesis speaker mapping.

DIHARD conventions by default: collar 0, overlapped speech always scored.
The speaker mapping maximizes total ref/hyp overlap (equivalently it
minimizes confusion for fixed missed/false-alarm), computed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .timeline import (
    EPS,
    Annotation,
    Interval,
    Uem,
    crop,
    intersect_intervals,
    merge_intervals,
    total_length,
)

# Instances whose smaller side exceeds this fall back to scipy's Hungarian
# solver; below it an exact subset-DP with documented tie-breaks is used.
_DP_LIMIT = 16


@dataclass(frozen=True)
class DerBreakdown:
    """DER components in seconds plus the rate itself.

    der = (missed + false_alarm + confusion) / total_ref_speech; NaN when
    the reference contains no speech (DER undefined).
    """

    missed: float
    false_alarm: float
    confusion: float
    total_ref_speech: float
    der: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.der)

    @property
    def error_seconds(self) -> float:
        return self.missed + self.false_alarm + self.confusion


@dataclass(frozen=True)
class SpeakerMapping:
    """Partial injective map between speaker index sets.

    pairs are (ref index, hyp index) with strictly positive overlap;
    total is the summed overlap, the maximum attainable over injective
    maps.
    """

    pairs: tuple[tuple[int, int], ...]
    total: float

    def hyp_to_ref(self) -> dict[int, int]:
        return {h: r for r, h in self.pairs}

    def ref_to_hyp(self) -> dict[int, int]:
        return {r: h for r, h in self.pairs}


def overlap_matrix(ref: Annotation, hyp: Annotation) -> np.ndarray:
    """Seconds of simultaneous activity for every (ref, hyp) speaker pair.

    Rows follow ref.speakers(), columns hyp.speakers() (sorted labels).
    """
    if ref.recording_id != hyp.recording_id:
        raise ValueError(
            f"recordings differ: {ref.recording_id!r} vs {hyp.recording_id!r}")
    ref_sup = [ref.support(s) for s in ref.speakers()]
    hyp_sup = [hyp.support(s) for s in hyp.speakers()]
    mat = np.zeros((len(ref_sup), len(hyp_sup)))
    for i, rs in enumerate(ref_sup):
        for j, hs in enumerate(hyp_sup):
            mat[i, j] = total_length(intersect_intervals(rs, hs))
    return mat


def _assign_dp(cost: np.ndarray) -> list[tuple[int, int]]:
    """Exact max-total injective assignment via subset DP over columns.

    Requires cost.shape[1] <= _DP_LIMIT. Rows may be left unassigned.
    Ties prefer the lexicographically smallest (row, col) pairs.
    """
    rows, cols = cost.shape
    nmask = 1 << cols
    masks = np.arange(nmask)
    # f[i][avail] = best total using rows i.. with available column set avail
    f = np.zeros((rows + 1, nmask))
    for i in range(rows - 1, -1, -1):
        f[i] = f[i + 1]
        for j in range(cols):
            bit = 1 << j
            have = masks[(masks & bit) != 0]
            cand = cost[i, j] + f[i + 1][have ^ bit]
            f[i][have] = np.maximum(f[i][have], cand)
    pairs = []
    avail = nmask - 1
    for i in range(rows):
        best = f[i][avail]
        for j in range(cols):
            bit = 1 << j
            if avail & bit and cost[i, j] + f[i + 1][avail ^ bit] == best:
                pairs.append((i, j))
                avail ^= bit
                break
    return pairs


def _assign_scipy(cost: np.ndarray) -> list[tuple[int, int]]:
    from scipy.optimize import linear_sum_assignment

    # Tiny lexicographic bias so equal-total solutions resolve
    # deterministically; far below any millisecond-scale duration split.
    rows, cols = cost.shape
    scale = 1e-9 * (1.0 + cost.max()) / (rows * cols + 1) ** 2
    bias = scale * (rows * cols - (np.arange(rows)[:, None] * cols + np.arange(cols)))
    r, c = linear_sum_assignment(cost + bias, maximize=True)
    return list(zip(r.tolist(), c.tolist()))


def optimal_mapping(overlaps: np.ndarray) -> SpeakerMapping:
    """Injective (ref, hyp) index map maximizing summed overlap.

    Zero-overlap pairs are dropped from the result; they contribute
    nothing and would pin arbitrary labels together.
    """
    overlaps = np.asarray(overlaps, dtype=float)
    if overlaps.size == 0:
        return SpeakerMapping((), 0.0)
    if overlaps.min() < 0:
        raise ValueError("overlap matrix must be non-negative")
    if min(overlaps.shape) <= _DP_LIMIT:
        if overlaps.shape[1] <= _DP_LIMIT:
            raw = _assign_dp(overlaps)
        else:
            raw = [(i, j) for j, i in _assign_dp(overlaps.T)]
    else:
        raw = _assign_scipy(overlaps)
    pairs = tuple(sorted((i, j) for i, j in raw if overlaps[i, j] > 0))
    total = float(sum(overlaps[i, j] for i, j in pairs))
    return SpeakerMapping(pairs, total)


def _collar_zones(ref: Annotation, collar: float) -> tuple[Interval, ...]:
    if collar <= 0:
        return ()
    zones = []
    for t in ref.turns:
        zones.append((max(0.0, t.onset - collar), t.onset + collar))
        zones.append((max(0.0, t.end - collar), t.end + collar))
    return merge_intervals(zones)


def _scored_regions(ref: Annotation, hyp: Annotation, collar: float):
    """Homogeneous scoring tiles with collar zones excised."""
    from .timeline import sweep_active_sets

    turns = list(ref.turns) + list(hyp.turns)
    if not turns:
        return
    lo = min(t.onset for t in turns)
    hi = max(t.end for t in turns)
    excluded = _collar_zones(ref, collar)
    cuts = {lo, hi}
    for t in turns:
        cuts.update((t.onset, t.end))
    for s, e in excluded:
        cuts.update((s, e))
    bounds = sorted(b for b in cuts if lo - EPS <= b <= hi + EPS)
    dedup = [bounds[0]]
    for b in bounds[1:]:
        if b - dedup[-1] > EPS:
            dedup.append(b)
    zone = 0
    for s, e, active_ref, active_hyp in sweep_active_sets(ref, hyp, dedup):
        if excluded:
            mid = 0.5 * (s + e)
            while zone < len(excluded) and excluded[zone][1] - EPS <= mid:
                zone += 1
            if zone < len(excluded) and excluded[zone][0] - EPS <= mid:
                continue
        yield e - s, active_ref, active_hyp


def der(ref: Annotation, hyp: Annotation, collar: float = 0.0,
        uem: Uem | None = None) -> DerBreakdown:
    """Diarization error rate with MI/FA/CF breakdown.

    Region-based scoring over the UEM-cropped extent, overlapped speech
    always scored, +-collar around every reference boundary excised.
    Per region of length d: missed += d * max(0, Nref - Nhyp),
    false_alarm += d * max(0, Nhyp - Nref) and confusion covers mapped
    speakers that do not line up. total_ref_speech is in speaker-seconds.
    """
    if collar < 0:
        raise ValueError("collar must be >= 0")
    if uem is not None:
        ref, hyp = crop(ref, uem), crop(hyp, uem)
    ref_labels, hyp_labels = ref.speakers(), hyp.speakers()
    ref_idx = {s: i for i, s in enumerate(ref_labels)}
    hyp_idx = {s: i for i, s in enumerate(hyp_labels)}

    regions = list(_scored_regions(ref, hyp, collar))
    # Map on the scored overlap so the collar cannot leak excised errors
    # back in through the assignment.
    scored_overlap = np.zeros((len(ref_idx), len(hyp_idx)))
    for d, active_ref, active_hyp in regions:
        for r in active_ref:
            for h in active_hyp:
                scored_overlap[ref_idx[r], hyp_idx[h]] += d
    mapping = optimal_mapping(scored_overlap)
    mapped_ref_label = {hyp_labels[h]: ref_labels[r] for r, h in mapping.pairs}

    missed = false_alarm = confusion = total_ref = 0.0
    for d, active_ref, active_hyp in regions:
        n_ref, n_hyp = len(active_ref), len(active_hyp)
        correct = sum(1 for h in active_hyp if mapped_ref_label.get(h) in active_ref)
        missed += d * max(0, n_ref - n_hyp)
        false_alarm += d * max(0, n_hyp - n_ref)
        confusion += d * (min(n_ref, n_hyp) - correct)
        total_ref += d * n_ref
    rate = (missed + false_alarm + confusion) / total_ref if total_ref > 0 else math.nan
    return DerBreakdown(missed, false_alarm, confusion, total_ref, rate)


def der_mapping(ref: Annotation, hyp: Annotation, collar: float = 0.0,
                uem: Uem | None = None) -> dict[str, str]:
    """The DER-optimal hypothesis-label -> reference-label map."""
    if uem is not None:
        ref, hyp = crop(ref, uem), crop(hyp, uem)
    mapping = optimal_mapping(overlap_matrix(ref, hyp))
    ref_labels, hyp_labels = ref.speakers(), hyp.speakers()
    return {hyp_labels[h]: ref_labels[r] for r, h in mapping.pairs}


def jer(ref: Annotation, hyp: Annotation, uem: Uem | None = None) -> float:
    """Jaccard error rate: mean over reference speakers of
    1 - |ref activity & mapped hyp activity| / |union|, using the
    DER-optimal mapping; unmapped reference speakers score 1. NaN when
    the reference is empty.
    """
    if uem is not None:
        ref, hyp = crop(ref, uem), crop(hyp, uem)
    ref_labels = ref.speakers()
    if not ref_labels:
        return math.nan
    mapping = optimal_mapping(overlap_matrix(ref, hyp))
    ref_to_hyp = mapping.ref_to_hyp()
    hyp_labels = hyp.speakers()
    scores = []
    for i, label in enumerate(ref_labels):
        if i not in ref_to_hyp:
            scores.append(1.0)
            continue
        rs = ref.support(label)
        hs = hyp.support(hyp_labels[ref_to_hyp[i]])
        inter = total_length(intersect_intervals(rs, hs))
        union = total_length(merge_intervals(list(rs) + list(hs)))
        scores.append(1.0 - inter / union if union > 0 else 1.0)
    return float(np.mean(scores))
