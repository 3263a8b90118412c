"""Rank-weighted label voting over multiple diarization hypotheses.

Stages: rank hypotheses by weighted mutual DER, relabel them into a
common namespace, then vote per region. The tie rule decides what
happens to speakers tied at the estimated-count cutoff: "modified"
keeps all of them on the whole region (preserving overlap), "original"
splits the region uniformly among them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveWeightError
from .metrics import der, optimal_mapping, overlap_matrix
from .timeline import EPS, Annotation, Turn

# Votes are sums of normalized rank weights; ties are compared at well
# below the smallest possible genuine weight split.
_VOTE_EPS = 1e-9


@dataclass(frozen=True)
class HypothesisSet:
    """An ordered set of same-recording hypotheses with optional
    per-hypothesis manual weights (default 1)."""

    hypotheses: tuple[Annotation, ...]
    manual_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.hypotheses:
            raise ValueError("need at least one hypothesis")
        rec = self.hypotheses[0].recording_id
        for h in self.hypotheses:
            if h.recording_id != rec:
                raise ValueError("all hypotheses must share one recording")
        if not self.manual_weights:
            object.__setattr__(self, "manual_weights", (1.0,) * len(self.hypotheses))
        if len(self.manual_weights) != len(self.hypotheses):
            raise ValueError("one manual weight per hypothesis required")
        for w in self.manual_weights:
            if w <= 0:
                raise NonPositiveWeightError(f"manual weight must be > 0, got {w}")

    @property
    def recording_id(self) -> str:
        return self.hypotheses[0].recording_id

    def __len__(self) -> int:
        return len(self.hypotheses)


@dataclass(frozen=True)
class RankWeights:
    """Ranking outcome: mutual-DER scores, 1-based ranks and normalized
    vote weights, all ordered like the input hypotheses."""

    scores: tuple[float, ...]
    ranks: tuple[int, ...]
    vote_weights: tuple[float, ...]


@dataclass(frozen=True)
class VoteRegion:
    """One voting tile: accumulated per-speaker weight and the weighted
    mean active-speaker count that sets the target speaker number."""

    start: float
    end: float
    votes: dict[str, float] = field(default_factory=dict)
    count_estimate: float = 0.0


def _mutual_der(ref: Annotation, hyp: Annotation) -> float:
    b = der(ref, hyp)
    if b.defined:
        return b.der
    # empty reference: perfect if the hypothesis is empty too, else hopeless
    return 0.0 if b.error_seconds == 0 else math.inf


def rank_hypotheses(hset: HypothesisSet, rank_exponent: float = 1.0) -> RankWeights:
    """Rank by weighted average DER against all other hypotheses.

    score_k is the mean DER over pairs (H_k as reference, H_k' as
    hypothesis); hypotheses sort ascending by manual_weight_k * score_k
    with ties broken by input order. Rank r receives vote weight
    (1/r) ** rank_exponent, normalized to sum 1.
    """
    k = len(hset)
    if k == 1:
        return RankWeights((0.0,), (1,), (1.0,))
    scores = []
    for i, ref in enumerate(hset.hypotheses):
        vals = [_mutual_der(ref, hyp) for j, hyp in enumerate(hset.hypotheses) if j != i]
        scores.append(sum(vals) / (k - 1))
    keyed = sorted(range(k), key=lambda i: (hset.manual_weights[i] * scores[i], i))
    ranks = [0] * k
    for position, i in enumerate(keyed, start=1):
        ranks[i] = position
    raw = [(1.0 / r) ** rank_exponent for r in ranks]
    norm = sum(raw)
    return RankWeights(tuple(scores), tuple(ranks), tuple(w / norm for w in raw))


def _fresh_label(label: str, used: set[str]) -> str:
    if label not in used:
        return label
    n = 2
    while f"{label}-{n}" in used:
        n += 1
    return f"{label}-{n}"


def map_labels(hset: HypothesisSet, ranking: RankWeights) -> HypothesisSet:
    """Relabel all hypotheses into the rank-1 hypothesis's namespace.

    Hypotheses are processed in rank order; each is aligned by maximum
    overlap against the union of the already-mapped ones. Labels with no
    positive-overlap partner get fresh labels instead of being forced
    onto an anchor speaker.
    """
    order = sorted(range(len(hset)), key=lambda i: ranking.ranks[i])
    rec = hset.recording_id
    pool_turns: list[Turn] = []
    pool_labels: set[str] = set()
    mapped: dict[int, Annotation] = {}
    for i in order:
        hyp = hset.hypotheses[i]
        if not pool_turns:
            relabeled = hyp
        else:
            pool = Annotation(rec, tuple(pool_turns))
            mapping = optimal_mapping(overlap_matrix(pool, hyp))
            pool_list, hyp_list = pool.speakers(), hyp.speakers()
            rename = {hyp_list[h]: pool_list[r] for r, h in mapping.pairs}
            for label in hyp_list:
                if label not in rename:
                    rename[label] = _fresh_label(label, pool_labels)
            relabeled = hyp.rename(rename)
        mapped[i] = relabeled
        pool_turns.extend(relabeled.turns)
        pool_labels.update(relabeled.speakers())
    return HypothesisSet(tuple(mapped[i] for i in range(len(hset))), hset.manual_weights)


def _half_up(x: float) -> int:
    # round to 9 decimals first so 1.4999999999 from float noise counts as 1.5
    return int(math.floor(round(x, 9) + 0.5))


def vote_regions(mapped: HypothesisSet, ranking: RankWeights) -> list[VoteRegion]:
    """Cut the timeline at every turn boundary and accumulate weighted
    votes and the active-count estimate per region."""
    cuts: set[float] = set()
    for hyp in mapped.hypotheses:
        for t in hyp.turns:
            cuts.update((t.onset, t.end))
    bounds: list[float] = []
    for b in sorted(cuts):
        if not bounds or b - bounds[-1] > EPS:
            bounds.append(b)
    nregions = len(bounds) - 1
    if nregions <= 0:
        return []
    labels = sorted({s for hyp in mapped.hypotheses for s in hyp.speakers()})
    label_idx = {s: i for i, s in enumerate(labels)}
    barr = np.asarray(bounds)
    votes = np.zeros((len(labels), nregions))
    count_est = np.zeros(nregions)
    for hyp, w in zip(mapped.hypotheses, ranking.vote_weights):
        for t in hyp.turns:
            i0 = int(np.searchsorted(barr, t.onset - EPS))
            i1 = int(np.searchsorted(barr, t.end - EPS))
            votes[label_idx[t.speaker], i0:i1] += w
            count_est[i0:i1] += w
    regions = []
    for r in range(nregions):
        tally = {labels[i]: float(votes[i, r])
                 for i in np.flatnonzero(votes[:, r] > _VOTE_EPS)}
        regions.append(VoteRegion(bounds[r], bounds[r + 1], tally,
                                  float(count_est[r])))
    return regions


def vote(mapped: HypothesisSet, ranking: RankWeights,
         tie_rule: str = "modified") -> Annotation:
    """Weighted region voting over hypotheses in a common label space.

    In each region every hypothesis adds its vote weight to its active
    speakers, the target count is the half-up-rounded weighted mean of
    active-speaker counts, and the top-voted speakers fill it. Speakers
    tied at the cutoff are all kept on the whole region ("modified") or
    get equal slices of it ("original"). Adjacent regions with equal
    speaker sets merge.
    """
    if tie_rule not in ("modified", "original"):
        raise ValueError(f"unknown tie rule {tie_rule!r}")
    rec = mapped.recording_id
    out: list[Turn] = []
    for region in vote_regions(mapped, ranking):
        start, end = region.start, region.end
        n_hat = _half_up(region.count_estimate)
        if n_hat <= 0:
            continue
        items = sorted(region.votes.items(), key=lambda kv: (-kv[1], kv[0]))
        if not items:
            continue
        if len(items) < n_hat:
            chosen_full = [label for label, _ in items]
            tied: list[str] = []
        else:
            v_star = items[n_hat - 1][1]
            chosen_full = [label for label, v in items if v > v_star + _VOTE_EPS]
            tied = [label for label, v in items if abs(v - v_star) <= _VOTE_EPS]
        for label in chosen_full:
            out.append(Turn(rec, label, start, end - start))
        if not tied:
            continue
        if tie_rule == "modified" or len(tied) == 1:
            for label in tied:
                out.append(Turn(rec, label, start, end - start))
        else:
            width = (end - start) / len(tied)
            for j, label in enumerate(tied):
                out.append(Turn(rec, label, start + j * width, width))
    return Annotation(rec, tuple(out))


def combine(hset: HypothesisSet, tie_rule: str = "modified",
            rank_exponent: float = 1.0) -> Annotation:
    """Full fusion: rank, map labels, vote. Defaults reproduce the
    overlap-preserving modified system."""
    if len(hset) == 1:
        return hset.hypotheses[0]
    ranking = rank_hypotheses(hset, rank_exponent)
    mapped = map_labels(hset, ranking)
    return vote(mapped, ranking, tie_rule)
