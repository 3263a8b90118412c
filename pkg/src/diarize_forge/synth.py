"""Seeded synthetic scenarios: reference annotations, corrupted
hypotheses, PLDA-consistent embeddings and oracle posteriors.

Everything is a pure function of (spec, seed). Randomness comes from
numpy's counter-based Philox generator keyed through SeedSequence spawn
paths, so independent named substreams are reproducible across runs and
platforms. Generated times are quantized to 1 ms, matching RTTM I/O.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleOverlapError
from .plda import PldaModel
from .embeddings import EmbeddingSequence
from .streams import PosteriorMatrix
from .timeline import (
    Annotation,
    Turn,
    overlap_timeline,
    quantize_ms,
    to_frames,
    total_length,
)


def rng_stream(seed: int, *labels: str) -> np.random.Generator:
    """Independent, named, reproducible random substream."""
    path = tuple(zlib.crc32(label.encode()) for label in labels)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=path)))


@dataclass(frozen=True)
class ScenarioSpec:
    num_speakers: int
    duration: float
    target_overlap_ratio: float = 0.0
    mean_turn: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.num_speakers < 1:
            raise ValueError("num_speakers must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if not 0.0 <= self.target_overlap_ratio < 1.0:
            raise ValueError("target_overlap_ratio must be in [0, 1)")


@dataclass(frozen=True)
class CorruptionSpec:
    boundary_jitter_std: float = 0.0
    deletion_rate: float = 0.0
    insertion_rate: float = 0.0
    confusion_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("deletion_rate", "insertion_rate", "confusion_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def measured_overlap_ratio(annotation: Annotation) -> float:
    """Overlapped time as a fraction of total speech (union) time."""
    union = total_length(annotation.speech_timeline())
    if union == 0:
        return 0.0
    return total_length(overlap_timeline(annotation)) / union


def _draw_reference(spec: ScenarioSpec, rng: np.random.Generator,
                    recording_id: str) -> Annotation:
    target = spec.target_overlap_ratio
    turns: list[Turn] = []
    prev_speaker = None
    prev_end = 0.0
    covered2_until = 0.0  # keeps overlaps pairwise: never re-enter this zone
    t_end = 0.0
    union = 0.0
    ovl = 0.0
    while t_end < spec.duration:
        if spec.num_speakers == 1:
            speaker = "spk0"
        else:
            others = [i for i in range(spec.num_speakers)
                      if f"spk{i}" != prev_speaker]
            speaker = f"spk{rng.choice(others)}"
        dur = float(np.clip(rng.exponential(spec.mean_turn),
                            0.3, 4.0 * spec.mean_turn))
        overlap = 0.0
        if turns and target > 0:
            # steer realized overlap/union toward the target exactly
            wanted = (target * (union + dur) - ovl) / (1.0 + target)
            avail = max(0.0, prev_end - covered2_until)
            overlap = float(np.clip(wanted, 0.0, 0.95 * min(dur, avail)))
        if overlap > 1e-3:
            onset = prev_end - overlap
        else:
            overlap = 0.0
            onset = t_end + float(rng.exponential(0.25 * spec.mean_turn))
        onset = quantize_ms(max(0.0, onset))
        end = quantize_ms(onset + dur)
        if end <= onset:
            continue
        overlap = max(0.0, prev_end - onset)
        turns.append(Turn(recording_id, speaker, onset, end - onset))
        union += (end - onset) - overlap
        ovl += overlap
        if overlap > 0:
            covered2_until = prev_end
        prev_speaker = speaker
        prev_end = end
        t_end = max(t_end, end)
    return Annotation(recording_id, tuple(turns))


def gen_reference(spec: ScenarioSpec, recording_id: str = "synth") -> Annotation:
    """Alternating-speaker reference with exponential turn lengths and a
    controlled overlap ratio (within +-5% absolute of the target)."""
    if spec.num_speakers == 1 and spec.target_overlap_ratio > 0:
        raise InfeasibleOverlapError("one speaker cannot overlap with itself")
    last = None
    for attempt in range(8):
        rng = rng_stream(spec.seed, "reference", f"attempt{attempt}")
        ann = _draw_reference(spec, rng, recording_id)
        last = ann
        if abs(measured_overlap_ratio(ann) - spec.target_overlap_ratio) <= 0.05:
            return ann
    raise InfeasibleOverlapError(
        f"could not realize overlap {spec.target_overlap_ratio:.2f} "
        f"(best draw reached {measured_overlap_ratio(last):.2f})")


def corrupt(ref: Annotation, spec: CorruptionSpec) -> Annotation:
    """Jitter boundaries, delete/insert turns and confuse speaker labels."""
    jit = rng_stream(spec.seed, "jitter")
    dele = rng_stream(spec.seed, "delete")
    ins = rng_stream(spec.seed, "insert")
    conf = rng_stream(spec.seed, "confuse")
    speakers = list(ref.speakers())
    out: list[Turn] = []
    for t in ref.turns:
        if dele.uniform() < spec.deletion_rate:
            continue
        onset, end = t.onset, t.end
        if spec.boundary_jitter_std > 0:
            onset = max(0.0, onset + jit.normal(0.0, spec.boundary_jitter_std))
            end = end + jit.normal(0.0, spec.boundary_jitter_std)
            onset, end = quantize_ms(onset), quantize_ms(max(end, onset + 0.05))
        speaker = t.speaker
        if len(speakers) > 1 and conf.uniform() < spec.confusion_rate:
            speaker = conf.choice([s for s in speakers if s != t.speaker])
        out.append(Turn(t.recording_id, str(speaker), onset, end - onset))
    if spec.insertion_rate > 0 and ref.turns:
        extent_end = ref.extent()[1]
        mean_dur = float(np.mean([t.duration for t in ref.turns]))
        for _ in range(len(ref.turns)):
            if ins.uniform() >= spec.insertion_rate:
                continue
            onset = quantize_ms(ins.uniform(0.0, extent_end))
            dur = quantize_ms(float(np.clip(ins.exponential(mean_dur), 0.2, None)))
            out.append(Turn(ref.recording_id, str(ins.choice(speakers)), onset, dur))
    return Annotation(ref.recording_id, tuple(out))


def window_labels(ref: Annotation, window: float, hop: float,
                  num_windows: int) -> list[str]:
    """Majority speaker per extraction window; ties break to the
    lexicographically smaller label, silent windows inherit the previous
    (or next) labeled window."""
    labels: list[str | None] = []
    for i in range(num_windows):
        lo, hi = i * hop, i * hop + window
        best: tuple[float, str] | None = None
        for s in ref.speakers():
            dur = sum(max(0.0, min(hi, e) - max(lo, b)) for b, e in ref.support(s))
            if dur > 1e-9 and (best is None or (-dur, s) < best):
                best = (-dur, s)
        labels.append(best[1] if best else None)
    if all(v is None for v in labels):
        raise ValueError("annotation has no speech in the window range")
    filled: list[str | None] = []
    last: str | None = None
    for v in labels:
        if v is not None:
            last = v
        filled.append(last)
    nxt: str | None = None
    for i in range(len(filled) - 1, -1, -1):
        if labels[i] is not None:
            nxt = labels[i]
        if filled[i] is None:
            filled[i] = nxt
    return filled


def gen_embeddings(ref: Annotation, plda: PldaModel, window: float = 1.5,
                   hop: float = 0.25, seed: int = 0) -> EmbeddingSequence:
    """Embeddings drawn from the PLDA generative model on the window
    grid covering the annotation: speaker means ~ N(mean, between),
    vectors ~ N(speaker_mean, within)."""
    extent_end = ref.extent()[1]
    num_windows = max(1, int(np.floor((extent_end - window) / hop + 1e-9)) + 1)
    labels = window_labels(ref, window, hop, num_windows)
    dim = plda.dim
    bvals, bvecs = np.linalg.eigh(plda.between_class)
    b_half = bvecs @ np.diag(np.sqrt(np.clip(bvals, 0.0, None))) @ bvecs.T
    w_chol = np.linalg.cholesky(plda.within_class)
    means = {}
    for s in sorted(set(labels)):
        srng = rng_stream(seed, "speaker-mean", s)
        means[s] = plda.mean + b_half @ srng.standard_normal(dim)
    nrng = rng_stream(seed, "embedding-noise")
    vectors = np.vstack([
        means[lab] + w_chol @ nrng.standard_normal(dim) for lab in labels])
    stamps = tuple((i * hop, i * hop + window) for i in range(num_windows))
    return EmbeddingSequence(ref.recording_id, stamps, vectors)


def gen_posteriors(ref: Annotation, frame_shift: float, noise_std: float = 0.0,
                   seed: int = 0) -> PosteriorMatrix:
    """Oracle per-speaker posteriors: 1 on activity, 0 elsewhere, plus
    clipped Gaussian noise."""
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    extent_end = ref.extent()[1]
    num_frames = max(1, int(np.ceil(extent_end / frame_shift - 1e-9)))
    base = to_frames(ref, frame_shift, num_frames).astype(float)
    if noise_std > 0:
        rng = rng_stream(seed, "posterior-noise")
        base = np.clip(base + rng.normal(0.0, noise_std, size=base.shape), 0.0, 1.0)
    return PosteriorMatrix(ref.recording_id, frame_shift, base, ref.speakers())
