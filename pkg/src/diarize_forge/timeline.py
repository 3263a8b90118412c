"""Continuous-time speaker activity: turns, annotations, RTTM/UEM I/O,
interval algebra and frame discretization.

All times are seconds as floats. Comparisons use EPS = 1e-6 s; file I/O
quantizes to 1 ms. Values are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import MalformedLineError, NonPositiveDurationError

# Time comparison tolerance (seconds). RTTM I/O quantizes to 1 ms, so
# anything below this is noise.
EPS = 1e-6

Interval = tuple[float, float]


# ---------------------------------------------------------------------------
# Interval algebra on sorted, merged (start, end) lists
# ---------------------------------------------------------------------------

def merge_intervals(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    """Sort intervals and merge any that overlap or touch within EPS."""
    ivs = sorted((s, e) for s, e in intervals if e - s > EPS)
    if not ivs:
        return ()
    merged = [ivs[0]]
    for s, e in ivs[1:]:
        ls, le = merged[-1]
        if s <= le + EPS:
            if e > le:
                merged[-1] = (ls, e)
        else:
            merged.append((s, e))
    return tuple(merged)


def intersect_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> tuple[Interval, ...]:
    """Intersection of two merged interval lists."""
    out: list[Interval] = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if e - s > EPS:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return tuple(out)


def subtract_intervals(a: Sequence[Interval], b: Sequence[Interval]) -> tuple[Interval, ...]:
    """Parts of `a` not covered by `b`; both merged interval lists."""
    out: list[Interval] = []
    j = 0
    for s, e in a:
        cur = s
        while j < len(b) and b[j][1] <= cur + EPS:
            j += 1
        k = j
        while k < len(b) and b[k][0] < e - EPS:
            bs, be = b[k]
            if bs - cur > EPS:
                out.append((cur, bs))
            cur = max(cur, be)
            if be >= e - EPS:
                break
            k += 1
        if e - cur > EPS:
            out.append((cur, e))
    return merge_intervals(out)


def total_length(intervals: Sequence[Interval]) -> float:
    return sum(e - s for s, e in intervals)


def quantize_ms(t: float) -> float:
    """Quantize a time to millisecond resolution (I/O convention)."""
    return round(t * 1000.0) / 1000.0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Turn:
    """One labeled speech segment: `speaker` talks on `recording_id`
    from `onset` for `duration` seconds."""

    recording_id: str
    speaker: str
    onset: float
    duration: float

    def __post_init__(self):
        if not self.recording_id:
            raise ValueError("recording_id must be non-empty")
        if not self.speaker:
            raise ValueError("speaker must be non-empty")
        if self.onset < 0:
            raise ValueError(f"onset must be >= 0, got {self.onset}")
        if self.duration <= 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")

    @property
    def end(self) -> float:
        return self.onset + self.duration

    def __contains__(self, t: float) -> bool:
        return self.onset - EPS <= t < self.end - EPS


@dataclass(frozen=True)
class Annotation:
    """The diarization of one recording: a normalized set of turns.

    Normalization happens on construction: turns are sorted by
    (onset, speaker) and same-speaker turns that overlap or touch
    (gap <= EPS) are merged, so per speaker the turns are disjoint.
    Normalizing an already-normalized annotation is the identity.
    """

    recording_id: str
    turns: tuple[Turn, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for turn in self.turns:
            if turn.recording_id != self.recording_id:
                raise ValueError(
                    f"turn recording {turn.recording_id!r} != annotation "
                    f"recording {self.recording_id!r}")
        object.__setattr__(self, "turns", self._normalize(self.turns))

    def _normalize(self, turns: Sequence[Turn]) -> tuple[Turn, ...]:
        by_speaker: dict[str, list[Interval]] = {}
        for t in turns:
            by_speaker.setdefault(t.speaker, []).append((t.onset, t.end))
        merged: list[Turn] = []
        for speaker, ivs in by_speaker.items():
            for s, e in merge_intervals(ivs):
                merged.append(Turn(self.recording_id, speaker, s, e - s))
        merged.sort(key=lambda t: (t.onset, t.speaker))
        return tuple(merged)

    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({t.speaker for t in self.turns}))

    def support(self, speaker: str) -> tuple[Interval, ...]:
        """Merged activity intervals of one speaker."""
        return merge_intervals((t.onset, t.end) for t in self.turns if t.speaker == speaker)

    def speech_timeline(self) -> tuple[Interval, ...]:
        """Merged union of all speakers' activity."""
        return merge_intervals((t.onset, t.end) for t in self.turns)

    def total_speech(self) -> float:
        """Speaker-seconds: sum of all turn durations."""
        return sum(t.duration for t in self.turns)

    def extent(self) -> Interval:
        if not self.turns:
            return (0.0, 0.0)
        return (min(t.onset for t in self.turns), max(t.end for t in self.turns))

    def rename(self, mapping: Mapping[str, str]) -> "Annotation":
        """Relabel speakers; labels absent from `mapping` are kept."""
        return Annotation(self.recording_id, tuple(
            Turn(t.recording_id, mapping.get(t.speaker, t.speaker), t.onset, t.duration)
            for t in self.turns))


def overlap_timeline(annotation: Annotation) -> tuple[Interval, ...]:
    """Intervals where >= 2 speakers are simultaneously active."""
    events: list[tuple[float, int]] = []
    for t in annotation.turns:
        events.append((t.onset, 1))
        events.append((t.end, -1))
    events.sort()
    out: list[Interval] = []
    depth = 0
    start = None
    for time, delta in events:
        depth += delta
        if depth >= 2 and start is None:
            start = time
        elif depth < 2 and start is not None:
            out.append((start, time))
            start = None
    return merge_intervals(out)


@dataclass(frozen=True)
class ScoringRegion:
    """A homogeneous scoring tile: active speaker sets are constant inside."""

    start: float
    end: float
    active_ref: frozenset[str]
    active_hyp: frozenset[str]

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class Uem:
    """Evaluation map: scoring intervals per recording."""

    regions: Mapping[str, tuple[Interval, ...]]

    def __post_init__(self):
        object.__setattr__(self, "regions", {
            rec: merge_intervals(ivs) for rec, ivs in self.regions.items()})

    def intervals(self, recording_id: str) -> tuple[Interval, ...] | None:
        return self.regions.get(recording_id)


# ---------------------------------------------------------------------------
# RTTM / UEM I/O
# ---------------------------------------------------------------------------

def parse_rttm(text: str) -> list[Annotation]:
    """Parse RTTM text into one Annotation per recording.

    Expected line format (whitespace-separated, >= 10 fields):
    SPEAKER <rec> <chan> <onset> <dur> <NA> <NA> <speaker> <NA> <NA>

    Raises MalformedLineError / NonPositiveDurationError with the
    1-based line number on bad input.
    """
    turns_by_rec: dict[str, list[Turn]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 10:
            raise MalformedLineError(line_no, f"expected >= 10 fields, got {len(fields)}")
        if fields[0] != "SPEAKER":
            raise MalformedLineError(line_no, f"expected SPEAKER record, got {fields[0]!r}")
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise MalformedLineError(line_no, "onset/duration not numeric") from None
        if duration <= 0:
            raise NonPositiveDurationError(line_no)
        if onset < 0:
            raise MalformedLineError(line_no, f"negative onset {onset}")
        rec, speaker = fields[1], fields[7]
        turns_by_rec.setdefault(rec, []).append(Turn(rec, speaker, onset, duration))
    return [Annotation(rec, tuple(turns)) for rec, turns in sorted(turns_by_rec.items())]


def write_rttm(annotations: Iterable[Annotation]) -> str:
    """Render annotations as canonical RTTM: 3-decimal times, turns
    sorted by (recording, onset, speaker). write(parse(write(x))) is
    byte-identical to write(x)."""
    rows = []
    for ann in annotations:
        for t in ann.turns:
            rows.append((ann.recording_id, quantize_ms(t.onset), t.speaker,
                         quantize_ms(t.duration)))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    lines = [
        f"SPEAKER {rec} 1 {onset:.3f} {dur:.3f} <NA> <NA> {spk} <NA> <NA>"
        for rec, onset, spk, dur in rows
    ]
    return "".join(line + "\n" for line in lines)


def parse_uem(text: str) -> Uem:
    """Parse UEM text: one "<rec> <chan> <start> <end>" line per interval."""
    regions: dict[str, list[Interval]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 4:
            raise MalformedLineError(line_no, f"expected 4 fields, got {len(fields)}")
        try:
            start, end = float(fields[2]), float(fields[3])
        except ValueError:
            raise MalformedLineError(line_no, "start/end not numeric") from None
        if end <= start:
            raise MalformedLineError(line_no, f"end {end} <= start {start}")
        regions.setdefault(fields[0], []).append((start, end))
    return Uem(regions)


def write_uem(uem: Uem) -> str:
    lines = []
    for rec in sorted(uem.regions):
        for s, e in uem.regions[rec]:
            lines.append(f"{rec} 1 {quantize_ms(s):.3f} {quantize_ms(e):.3f}")
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# Timeline operations
# ---------------------------------------------------------------------------

def crop(annotation: Annotation, uem: Uem) -> Annotation:
    """Intersect every turn with the UEM scoring intervals of its
    recording. Identity when the UEM does not cover the recording."""
    zones = uem.intervals(annotation.recording_id)
    if zones is None:
        return annotation
    turns = []
    for t in annotation.turns:
        for s, e in intersect_intervals([(t.onset, t.end)], zones):
            turns.append(Turn(t.recording_id, t.speaker, s, e - s))
    return Annotation(annotation.recording_id, tuple(turns))


def _dedupe_boundaries(values: Iterable[float]) -> list[float]:
    out: list[float] = []
    for v in sorted(values):
        if not out or v - out[-1] > EPS:
            out.append(v)
    return out


def sweep_active_sets(ref: Annotation, hyp: Annotation, bounds: Sequence[float]):
    """Active (ref, hyp) speaker sets per consecutive boundary pair.

    All turn edges must already be in `bounds` (within EPS); turns
    reaching past either end count as active from/to the outermost
    boundary. Yields (start, end, active_ref, active_hyp).
    """
    n = len(bounds)
    if n < 2:
        return
    arr = np.asarray(bounds)
    events: list[list[tuple[int, str, int]]] = [[] for _ in range(n)]
    for side, ann in enumerate((ref, hyp)):
        if not ann.turns:
            continue
        onsets = np.fromiter((t.onset for t in ann.turns), float, len(ann.turns))
        ends = np.fromiter((t.end for t in ann.turns), float, len(ann.turns))
        i0s = np.minimum(np.searchsorted(arr, onsets - EPS), n - 1)
        i1s = np.minimum(np.searchsorted(arr, ends - EPS), n - 1)
        for t, i0, i1 in zip(ann.turns, i0s, i1s):
            if i1 > i0:
                events[i0].append((side, t.speaker, 1))
                events[i1].append((side, t.speaker, -1))
    counts: tuple[dict[str, int], dict[str, int]] = ({}, {})
    active: tuple[frozenset[str], frozenset[str]] = (frozenset(), frozenset())
    for i in range(n - 1):
        if events[i]:
            for side, speaker, delta in events[i]:
                c = counts[side].get(speaker, 0) + delta
                if c:
                    counts[side][speaker] = c
                else:
                    counts[side].pop(speaker, None)
            active = (frozenset(counts[0]), frozenset(counts[1]))
        yield bounds[i], bounds[i + 1], active[0], active[1]


def regionize(ref: Annotation, hyp: Annotation, extent: Interval) -> list[ScoringRegion]:
    """Tile `extent` into regions whose active speaker sets (on both
    sides) are constant. Boundaries are the sorted union of all turn
    onsets/offsets clipped to the extent; regions tile the extent
    exactly.
    """
    lo, hi = extent
    if hi - lo <= EPS:
        return []
    cuts = {lo, hi}
    for ann in (ref, hyp):
        for t in ann.turns:
            for b in (t.onset, t.end):
                if lo - EPS < b < hi + EPS:
                    cuts.add(min(max(b, lo), hi))
    bounds = _dedupe_boundaries(cuts)
    # Snap the outermost boundaries back onto the extent so the tiles
    # sum to exactly hi - lo.
    bounds[0], bounds[-1] = lo, hi
    return [ScoringRegion(s, e, active_ref, active_hyp)
            for s, e, active_ref, active_hyp in sweep_active_sets(ref, hyp, bounds)]


def to_frames(annotation: Annotation, frame_shift: float, num_frames: int) -> np.ndarray:
    """Discretize to a binary (speakers x frames) activity matrix.

    Frame t is active for a speaker iff the frame center
    (t + 0.5) * frame_shift lies inside one of the speaker's turns.
    Speaker rows follow sorted label order.
    """
    if frame_shift <= 0:
        raise ValueError("frame_shift must be > 0")
    speakers = annotation.speakers()
    mat = np.zeros((len(speakers), num_frames), dtype=np.int8)
    index = {s: i for i, s in enumerate(speakers)}
    for t in annotation.turns:
        first = int(np.ceil(t.onset / frame_shift - 0.5 - 1e-9))
        last = int(np.ceil(t.end / frame_shift - 0.5 - 1e-9)) - 1
        first = max(first, 0)
        last = min(last, num_frames - 1)
        if last >= first:
            mat[index[t.speaker], first:last + 1] = 1
    return mat


def from_frames(matrix: np.ndarray, speakers: Sequence[str], frame_shift: float,
                recording_id: str) -> Annotation:
    """Inverse of to_frames: consecutive active frames become turns with
    frame-aligned boundaries."""
    if matrix.shape[0] != len(speakers):
        raise ValueError(f"{matrix.shape[0]} rows but {len(speakers)} speakers")
    turns = []
    for row, speaker in zip(np.asarray(matrix), speakers):
        active = np.flatnonzero(row)
        if active.size == 0:
            continue
        breaks = np.flatnonzero(np.diff(active) > 1)
        starts = np.concatenate(([active[0]], active[breaks + 1]))
        ends = np.concatenate((active[breaks], [active[-1]]))
        for s, e in zip(starts, ends):
            turns.append(Turn(recording_id, speaker, float(s) * frame_shift,
                              float(e - s + 1) * frame_shift))
    return Annotation(recording_id, tuple(turns))
