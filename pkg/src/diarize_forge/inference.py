"""Drivers that orchestrate frame-posterior decoders: iterative
inference past the decoder's speaker cap, multi-K ensembling through the
modified fusion, and pairwise refinement of an existing diarization.

Decoders are abstracted as PosteriorSource: anything that can decode up
to k_max speaker rows over a masked frame subset. A file-backed source
replays stored POST matrices, which also serves as the noise-free oracle
in tests.
"""

from __future__ import annotations

import abc
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingRecordingError, SourceFailureError
from .fusion import HypothesisSet, combine
from .streams import BinaryStream, PosteriorMatrix, read_posteriors
from .timeline import Annotation, Interval, Turn, merge_intervals, subtract_intervals, to_frames


class PosteriorSource(abc.ABC):
    """A per-frame speaker-activity decoder.

    decode() returns a matrix whose columns correspond, in order, to the
    True positions of the mask; rows are at most k_max speakers. Sources
    that cannot decode non-contiguous frame subsets must set
    supports_partial_frames = False, which disables iterative inference.
    """

    max_speakers: int = 5
    supports_partial_frames: bool = True

    @abc.abstractmethod
    def frame_grid(self, recording_id: str) -> tuple[float, int]:
        """(frame_shift, num_frames) of the recording's posterior grid."""

    @abc.abstractmethod
    def decode(self, recording_id: str, frame_mask: BinaryStream,
               k_max: int) -> PosteriorMatrix:
        ...


class MatrixPosteriorSource(PosteriorSource):
    """Replays stored posterior matrices, slicing by mask and keeping the
    k_max rows with the largest summed activity inside the mask (ties:
    lower row index)."""

    def __init__(self, matrices: dict[str, PosteriorMatrix], max_speakers: int = 5):
        self._matrices = dict(matrices)
        self.max_speakers = max_speakers

    def frame_grid(self, recording_id: str) -> tuple[float, int]:
        pm = self.matrix(recording_id)
        return pm.frame_shift, pm.num_frames

    def matrix(self, recording_id: str) -> PosteriorMatrix:
        """The full stored matrix for one recording."""
        if recording_id not in self._matrices:
            raise MissingRecordingError(recording_id)
        return self._matrices[recording_id]

    def decode(self, recording_id: str, frame_mask: BinaryStream,
               k_max: int) -> PosteriorMatrix:
        pm = self.matrix(recording_id)
        if frame_mask.num_frames != pm.num_frames:
            raise SourceFailureError(
                f"mask has {frame_mask.num_frames} frames, stored matrix has "
                f"{pm.num_frames}")
        k_max = min(k_max, self.max_speakers)
        cols = pm.values[:, frame_mask.values]
        if cols.shape[0] > k_max:
            sums = cols.sum(axis=1)
            order = np.argsort(-sums, kind="stable")[:k_max]
            rows = np.sort(order)
            cols = cols[rows]
            ids = tuple(pm.speaker_ids[i] for i in rows)
        else:
            ids = pm.speaker_ids
        return PosteriorMatrix(recording_id, pm.frame_shift, cols, ids)


class FilePosteriorSource(MatrixPosteriorSource):
    """Lazily loads POST files from a directory, indexed by the
    recording id in each file's header."""

    def __init__(self, directory: str | Path, max_speakers: int = 5):
        super().__init__({}, max_speakers)
        self._paths: dict[str, Path] = {}
        directory = Path(directory)
        if not directory.is_dir():
            raise MissingRecordingError(f"no such directory: {directory}")
        for path in sorted(directory.glob("*.post")):
            with open(path, "rb") as fh:
                head = fh.readline().decode("ascii", errors="replace").split()
            if len(head) >= 2 and head[0] == "POST":
                self._paths[head[1]] = path

    def matrix(self, recording_id: str) -> PosteriorMatrix:
        if recording_id not in self._matrices:
            if recording_id not in self._paths:
                raise MissingRecordingError(recording_id)
            self._matrices[recording_id] = read_posteriors(
                self._paths[recording_id].read_bytes())
        return self._matrices[recording_id]

    def recordings(self) -> list[str]:
        return sorted(self._paths)


def file_posterior_source(directory: str | Path,
                          max_speakers: int = 5) -> FilePosteriorSource:
    return FilePosteriorSource(directory, max_speakers)


@dataclass(frozen=True)
class IterConfig:
    k_first: int = 5
    k_later: int = 5
    activity_threshold: float = 0.5
    max_rounds: int = 20

    def __post_init__(self):
        if not 1 <= self.k_first <= self.k_later:
            raise ValueError(
                f"need 1 <= k_first <= k_later, got {self.k_first}/{self.k_later}")
        if not 0.0 <= self.activity_threshold <= 1.0:
            raise ValueError("activity_threshold must be in [0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def _frame_runs(abs_frames: np.ndarray, shift: float) -> list[Interval]:
    """Absolute frame indices -> merged [k*shift, (k+n)*shift) intervals."""
    if abs_frames.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(abs_frames) > 1)
    starts = np.concatenate(([abs_frames[0]], abs_frames[breaks + 1]))
    ends = np.concatenate((abs_frames[breaks], [abs_frames[-1]]))
    return [(float(s) * shift, float(e + 1) * shift) for s, e in zip(starts, ends)]


def iterative_inference(source: PosteriorSource, recording_id: str,
                        cfg: IterConfig = IterConfig()) -> Annotation:
    """Decode more speakers than the source's cap by re-decoding frames
    left silent by earlier rounds.

    Round 1 decodes at most k_first speakers on all frames; while the
    decoded speaker count reaches the cap, the frames where every decoded
    speaker is inactive are re-decoded with k_later. Speakers found in
    different rounds have disjoint frame supports by construction.
    """
    if not source.supports_partial_frames:
        raise SourceFailureError(
            "source cannot decode masked frame subsets; iterative inference "
            "is disabled for it")
    shift, num_frames = source.frame_grid(recording_id)
    mask = np.ones(num_frames, dtype=bool)
    turns: list[Turn] = []
    speaker_count = 0
    # a cap beyond the source's capability would stop iteration early
    k = min(cfg.k_first, source.max_speakers)
    k_later = min(cfg.k_later, source.max_speakers)
    for _ in range(cfg.max_rounds):
        if not mask.any():
            break
        pm = source.decode(recording_id, BinaryStream(recording_id, shift, mask), k)
        if pm.num_speakers > k or pm.num_frames != int(mask.sum()):
            raise SourceFailureError(
                f"decode returned {pm.num_speakers}x{pm.num_frames} for "
                f"k_max={k}, {int(mask.sum())} masked frames")
        active = pm.values >= cfg.activity_threshold
        abs_idx = np.flatnonzero(mask)
        estimated = 0
        for row in active:
            if not row.any():
                continue
            estimated += 1
            label = f"spk{speaker_count}"
            speaker_count += 1
            for s, e in _frame_runs(abs_idx[row], shift):
                turns.append(Turn(recording_id, label, s, e - s))
        if estimated < k:
            break
        new_mask = mask.copy()
        new_mask[abs_idx[active.any(axis=0)]] = False
        assert new_mask.sum() < mask.sum(), "mask must shrink every round"
        mask = new_mask
        k = k_later
    return Annotation(recording_id, tuple(turns))


def multi_k_ensemble(source: PosteriorSource, recording_id: str,
                     cfg: IterConfig = IterConfig()) -> Annotation:
    """Iterative inference for first-round caps 1..5, fused with the
    modified tie rule and equal manual weights."""
    runs = []
    for k_first in range(1, 6):
        run_cfg = dataclasses.replace(cfg, k_first=k_first,
                                      k_later=max(cfg.k_later, k_first))
        runs.append(iterative_inference(source, recording_id, run_cfg))
    return combine(HypothesisSet(tuple(runs)), tie_rule="modified")


def _pair_priority(ann: Annotation):
    """Unordered speaker pairs, most shared (then longest) first."""
    from .timeline import intersect_intervals, total_length

    speakers = ann.speakers()
    supports = {s: ann.support(s) for s in speakers}
    scored = []
    for i, a in enumerate(speakers):
        for b in speakers[i + 1:]:
            shared = total_length(intersect_intervals(supports[a], supports[b]))
            length = total_length(supports[a]) + total_length(supports[b])
            scored.append((-shared, -length, a, b))
    scored.sort()
    return [(a, b) for _, _, a, b in scored]


def eendasp_refine(initial: Annotation, pair_source: PosteriorSource,
                   rounds: int = 1, activity_threshold: float = 0.5) -> Annotation:
    """Re-decode speaker pairs with a 2-speaker source and patch their
    activities; all other speakers stay untouched.

    For each pair (in priority order, recomputed every sweep) the
    decoded frames are the pair's activity plus silence inside their
    joint extent; frames with third-party speech are excluded. Decoded
    rows align to the pair by maximal overlap and only the differing
    frames are applied, so an identity source is an exact fixed point.
    """
    if len(initial.speakers()) < 2:
        return initial
    rec = initial.recording_id
    shift, num_frames = pair_source.frame_grid(rec)
    current = initial
    for _ in range(rounds):
        for a, b in _pair_priority(current):
            current = _refine_pair(current, pair_source, a, b, shift,
                                   num_frames, activity_threshold)
    return current


def _refine_pair(current: Annotation, source: PosteriorSource, a: str, b: str,
                 shift: float, num_frames: int, threshold: float) -> Annotation:
    rec_id = current.recording_id
    speakers = current.speakers()
    frames = to_frames(current, shift, num_frames).astype(bool)
    idx = {s: i for i, s in enumerate(speakers)}
    act_a, act_b = frames[idx[a]], frames[idx[b]]
    pair_any = act_a | act_b
    if not pair_any.any():
        return current
    others = np.zeros(num_frames, dtype=bool)
    for s in speakers:
        if s not in (a, b):
            others |= frames[idx[s]]
    lo, hi = np.flatnonzero(pair_any)[[0, -1]]
    mask = np.zeros(num_frames, dtype=bool)
    mask[lo:hi + 1] = True
    mask &= ~others
    if not mask.any():
        return current
    pm = source.decode(rec_id, BinaryStream(rec_id, shift, mask), 2)
    if pm.num_speakers != 2 or pm.num_frames != int(mask.sum()):
        raise SourceFailureError(
            f"pair source returned {pm.num_speakers}x{pm.num_frames}, "
            f"expected 2x{int(mask.sum())}")
    decoded = pm.values >= threshold
    cur_a, cur_b = act_a[mask], act_b[mask]
    straight = int(np.sum(decoded[0] & cur_a)) + int(np.sum(decoded[1] & cur_b))
    crossed = int(np.sum(decoded[0] & cur_b)) + int(np.sum(decoded[1] & cur_a))
    if crossed > straight:
        decoded = decoded[::-1]
    abs_idx = np.flatnonzero(mask)
    new_turns = [t for t in current.turns if t.speaker not in (a, b)]
    for label, cur, dec in ((a, cur_a, decoded[0]), (b, cur_b, decoded[1])):
        support = list(current.support(label))
        off = _frame_runs(abs_idx[cur & ~dec], shift)
        on = _frame_runs(abs_idx[dec & ~cur], shift)
        if off:
            support = list(subtract_intervals(support, merge_intervals(off)))
        if on:
            support = list(merge_intervals(support + on))
        for s, e in support:
            new_turns.append(Turn(rec_id, label, s, e - s))
    return Annotation(rec_id, tuple(new_turns))
