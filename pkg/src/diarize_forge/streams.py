"""Frame-posterior streams: VAD fusion (averaging, thresholding, median
filtering), VAD-driven cleanup of diarization output and heuristic
second-speaker assignment on detected overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EvenWindowError,
    FormatError,
    LengthMismatchError,
    MissingPosteriorsError,
)
from .timeline import (
    EPS,
    Annotation,
    Interval,
    Turn,
    intersect_intervals,
    merge_intervals,
    subtract_intervals,
)


@dataclass(frozen=True)
class PosteriorMatrix:
    """Per-frame speaker activity probabilities, one row per speaker."""

    recording_id: str
    frame_shift: float
    values: np.ndarray
    speaker_ids: tuple[str, ...]

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be > 0")
        if vals.min(initial=0.0) < -1e-9 or vals.max(initial=0.0) > 1.0 + 1e-9:
            raise ValueError("posteriors must lie in [0, 1]")
        if len(self.speaker_ids) != vals.shape[0]:
            raise ValueError(
                f"{len(self.speaker_ids)} speaker ids for {vals.shape[0]} rows")

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    @property
    def num_speakers(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class BinaryStream:
    """Thresholded single-channel activity at a fixed frame shift."""

    recording_id: str
    frame_shift: float
    values: np.ndarray

    def __post_init__(self):
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be > 0")
        object.__setattr__(self, "values",
                           np.asarray(self.values, dtype=bool).ravel())

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


def average_posteriors(streams: Sequence[PosteriorMatrix]) -> PosteriorMatrix:
    """Elementwise mean of single-speaker posterior streams."""
    if not streams:
        raise ValueError("need at least one stream")
    first = streams[0]
    for s in streams[1:]:
        if s.num_frames != first.num_frames or abs(s.frame_shift - first.frame_shift) > EPS:
            raise LengthMismatchError(
                f"stream grids differ: {s.num_frames}@{s.frame_shift} vs "
                f"{first.num_frames}@{first.frame_shift}")
        if s.num_speakers != first.num_speakers:
            raise LengthMismatchError("streams have different speaker counts")
    mean = np.mean([s.values for s in streams], axis=0)
    return PosteriorMatrix(first.recording_id, first.frame_shift, mean,
                           first.speaker_ids)


def threshold(stream: PosteriorMatrix, theta: float) -> BinaryStream:
    """value >= theta is active (closed comparison)."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    if stream.num_speakers != 1:
        raise ValueError("threshold expects a single-speaker stream")
    return BinaryStream(stream.recording_id, stream.frame_shift,
                        stream.values[0] >= theta)


def median_filter(stream: BinaryStream, window: int) -> BinaryStream:
    """Centered binary median with inactive (0) boundary padding."""
    if window < 1 or window % 2 == 0:
        raise EvenWindowError(f"window must be odd and >= 1, got {window}")
    if window == 1 or stream.num_frames == 0:
        return stream
    counts = np.convolve(stream.values.astype(int), np.ones(window, dtype=int),
                         mode="same")
    return BinaryStream(stream.recording_id, stream.frame_shift,
                        counts > window // 2)


def segments_from_stream(stream: BinaryStream) -> tuple[Interval, ...]:
    """Maximal active-frame runs as [t * shift, (t + n) * shift) intervals."""
    active = np.flatnonzero(stream.values)
    if active.size == 0:
        return ()
    breaks = np.flatnonzero(np.diff(active) > 1)
    starts = np.concatenate(([active[0]], active[breaks + 1]))
    ends = np.concatenate((active[breaks], [active[-1]]))
    shift = stream.frame_shift
    return tuple((float(s) * shift, float(e + 1) * shift) for s, e in zip(starts, ends))


def filter_false_alarms(diar: Annotation, vad: Sequence[Interval]) -> Annotation:
    """Clip every turn to the VAD speech timeline."""
    zones = merge_intervals(vad)
    turns = []
    for t in diar.turns:
        for s, e in intersect_intervals([(t.onset, t.end)], zones):
            turns.append(Turn(t.recording_id, t.speaker, s, e - s))
    return Annotation(diar.recording_id, tuple(turns))


def recover_missed(diar: Annotation, vad: Sequence[Interval],
                   posteriors: PosteriorMatrix) -> Annotation:
    """Fill VAD speech not covered by any speaker with the per-frame
    argmax-posterior speaker (ties: lowest speaker index).

    Output support is exactly diar support union VAD support: recovered
    pieces are clipped to the uncovered intervals, so VAD boundaries are
    honored below frame resolution.
    """
    uncovered = subtract_intervals(merge_intervals(vad), diar.speech_timeline())
    shift = posteriors.frame_shift
    winners = np.argmax(posteriors.values, axis=0)  # argmax picks lowest index on ties
    new_turns = list(diar.turns)
    for a, b in uncovered:
        k0 = int(np.floor(a / shift + 1e-9))
        k1 = int(np.ceil(b / shift - 1e-9)) - 1
        for k in range(k0, k1 + 1):
            lo, hi = max(a, k * shift), min(b, (k + 1) * shift)
            if hi - lo <= EPS:
                continue
            if k >= posteriors.num_frames:
                raise MissingPosteriorsError(
                    f"frame {k} at {lo:.3f}s beyond posterior matrix "
                    f"({posteriors.num_frames} frames)")
            speaker = posteriors.speaker_ids[winners[k]]
            new_turns.append(Turn(diar.recording_id, speaker, lo, hi - lo))
    return Annotation(diar.recording_id, tuple(new_turns))


def _interval_gap(a: Interval, b: Interval) -> float:
    if b[0] >= a[1]:
        return b[0] - a[1]
    if a[0] >= b[1]:
        return a[0] - b[1]
    return 0.0


def assign_overlaps(diar: Annotation, overlap: Sequence[Interval]) -> Annotation:
    """Add the temporally closest other speaker as a second speaker on
    each overlap region.

    Regions are split at diarization boundaries first; pieces that
    already have two speakers (or none) are left alone. Equidistant
    candidates resolve to the lexicographically smaller label.
    """
    supports = {s: diar.support(s) for s in diar.speakers()}
    if len(supports) < 2:
        return diar
    cuts = sorted({b for t in diar.turns for b in (t.onset, t.end)})
    pieces: list[Interval] = []
    for a, b in merge_intervals(overlap):
        inner = [a] + [c for c in cuts if a + EPS < c < b - EPS] + [b]
        pieces.extend((s, e) for s, e in zip(inner[:-1], inner[1:]) if e - s > EPS)
    new_turns = list(diar.turns)
    for a, b in pieces:
        mid = 0.5 * (a + b)
        active = [t.speaker for t in diar.turns if mid in t]
        if len(active) != 1:
            continue
        current = active[0]
        best: tuple[float, str] | None = None
        for other, sup in supports.items():
            if other == current or not sup:
                continue
            dist = min(_interval_gap((a, b), iv) for iv in sup)
            if best is None or (dist, other) < best:
                best = (dist, other)
        if best is not None:
            new_turns.append(Turn(diar.recording_id, best[1], a, b - a))
    return Annotation(diar.recording_id, tuple(new_turns))


# ---------------------------------------------------------------------------
# POST file format: "POST <rec> <S> <T> <frame_shift_s>" + S rows of T
# values (text) or raw little-endian float32 (binary). Speaker names are
# not stored; readers assign spk0..spkS-1.
# ---------------------------------------------------------------------------

def write_posteriors(pm: PosteriorMatrix, binary: bool = False) -> bytes:
    header = f"POST {pm.recording_id} {pm.num_speakers} {pm.num_frames} {pm.frame_shift:.6g}\n"
    if binary:
        return header.encode() + pm.values.astype("<f4").tobytes()
    rows = "".join(" ".join(str(v) for v in row) + "\n" for row in pm.values)
    return (header + rows).encode()


def read_posteriors(blob: bytes) -> PosteriorMatrix:
    from .embeddings import _parse_matrix_payload

    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError("missing POST header line")
    fields = blob[:nl].decode("ascii", errors="replace").split()
    if len(fields) != 5 or fields[0] != "POST":
        raise FormatError(f"bad POST header: {blob[:nl]!r}")
    rec = fields[1]
    try:
        n_spk, n_frames = int(fields[2]), int(fields[3])
        shift = float(fields[4])
    except ValueError:
        raise FormatError(f"non-numeric POST header fields: {blob[:nl]!r}") from None
    values = np.clip(_parse_matrix_payload(blob[nl + 1:], n_spk, n_frames, 1), 0.0, 1.0)
    return PosteriorMatrix(rec, shift, values,
                           tuple(f"spk{i}" for i in range(n_spk)))
