"""Windowed speaker embeddings: container, file I/O and the
center/whiten/LDA preprocessing chain used before PLDA scoring.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import FormatError
from .timeline import EPS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingSequence:
    """T embedding vectors with their (start, end) extraction windows.

    Windows are expected on a uniform grid (1.5 s window / 0.25 s hop by
    convention) but only strictly increasing starts are enforced.
    """

    recording_id: str
    timestamps: tuple[tuple[float, float], ...]
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        object.__setattr__(self, "vectors", vec)
        if vec.ndim != 2:
            raise ValueError("vectors must be a T x D matrix")
        if len(self.timestamps) != vec.shape[0]:
            raise ValueError(
                f"{len(self.timestamps)} timestamps for {vec.shape[0]} vectors")
        starts = [s for s, _ in self.timestamps]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("timestamps must be strictly increasing by start")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def write_embeddings(seq: EmbeddingSequence, binary: bool = False) -> bytes:
    """Serialize as "ARK2 <rec> <T> <D> <window_s> <hop_s>" plus either
    text rows or raw little-endian float32."""
    if len(seq) == 0:
        raise FormatError("cannot serialize an empty embedding sequence")
    window = seq.timestamps[0][1] - seq.timestamps[0][0]
    hop = (seq.timestamps[1][0] - seq.timestamps[0][0]) if len(seq) > 1 else window
    for i, (s, e) in enumerate(seq.timestamps):
        if abs((e - s) - window) > EPS or abs(s - i * hop) > 1e-3:
            raise FormatError("ARK2 requires a uniform window/hop grid")
    header = f"ARK2 {seq.recording_id} {len(seq)} {seq.dim} {window:.6g} {hop:.6g}\n"
    if binary:
        return header.encode() + seq.vectors.astype("<f4").tobytes()
    rows = "".join(" ".join(str(v) for v in row) + "\n" for row in seq.vectors)
    return (header + rows).encode()


def _parse_matrix_payload(payload: bytes, rows: int, cols: int, line_no: int) -> np.ndarray:
    """Shared text-or-binary matrix payload decoding."""
    try:
        text = payload.decode("ascii")
        data = np.array([float(v) for v in text.split()])
        if data.size == rows * cols:
            return data.reshape(rows, cols)
        raise ValueError
    except (UnicodeDecodeError, ValueError):
        pass
    if len(payload) == 4 * rows * cols:
        return np.frombuffer(payload, dtype="<f4").astype(float).reshape(rows, cols)
    raise FormatError(
        f"line {line_no}: payload is neither {rows}x{cols} text nor "
        f"{4 * rows * cols} bytes of float32")


def read_embeddings(blob: bytes) -> EmbeddingSequence:
    """Parse an ARK2 embedding file (text or binary payload)."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError("missing ARK2 header line")
    fields = blob[:nl].decode("ascii", errors="replace").split()
    if len(fields) != 6 or fields[0] != "ARK2":
        raise FormatError(f"bad ARK2 header: {blob[:nl]!r}")
    rec = fields[1]
    try:
        t, d = int(fields[2]), int(fields[3])
        window, hop = float(fields[4]), float(fields[5])
    except ValueError:
        raise FormatError(f"non-numeric ARK2 header fields: {blob[:nl]!r}") from None
    vectors = _parse_matrix_payload(blob[nl + 1:], t, d, 1)
    stamps = tuple((i * hop, i * hop + window) for i in range(t))
    return EmbeddingSequence(rec, stamps, vectors)


@dataclass(frozen=True)
class Preprocessor:
    """Centering + whitening + optional LDA projection.

    transform(x) = lda_projection @ whitener @ (x - center); the
    whitener maps the training distribution to identity covariance.
    """

    center: np.ndarray
    whitener: np.ndarray
    lda_projection: np.ndarray

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(vectors, dtype=float))
        return (x - self.center) @ self.whitener.T @ self.lda_projection.T

    @property
    def output_dim(self) -> int:
        return self.lda_projection.shape[0]


def _inv_sqrt_psd(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0 or vals.min() < 1e-12 * vals.max():
        # near-singular covariance: regularize and carry on
        eps = 1e-6 * np.trace(cov) / cov.shape[0]
        if eps <= 0:
            eps = 1e-6
        log.warning("singular covariance regularized with eps=%.3g", eps)
        vals, vecs = np.linalg.eigh(cov + eps * np.eye(cov.shape[0]))
        vals = np.clip(vals, eps * 1e-3, None)
    return vecs @ np.diag(vals ** -0.5) @ vecs.T


def fit_preprocessor(embeddings: np.ndarray, labels=None,
                     target_dim: int | None = None) -> Preprocessor:
    """Fit centering/whitening on raw embeddings, then LDA to target_dim.

    target_dim None or == D skips LDA (identity projection); otherwise
    class labels are required and the projection maximizes the usual
    between/within generalized eigenvalue objective on whitened data.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a matrix with >= 2 samples")
    dim = x.shape[1]
    center = x.mean(axis=0)
    cov = np.cov(x, rowvar=False, ddof=1).reshape(dim, dim)
    whitener = _inv_sqrt_psd(cov)
    if target_dim is None or target_dim == dim:
        return Preprocessor(center, whitener, np.eye(dim))
    if not 0 < target_dim < dim:
        raise ValueError(f"target_dim must be in (0, {dim}], got {target_dim}")
    if labels is None:
        raise ValueError("LDA reduction requires class labels")

    xw = (x - center) @ whitener.T
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("LDA needs >= 2 classes")
    gmean = xw.mean(axis=0)
    sw = np.zeros((dim, dim))
    sb = np.zeros((dim, dim))
    for c in classes:
        xc = xw[labels == c]
        cm = xc.mean(axis=0)
        sw += (xc - cm).T @ (xc - cm)
        sb += xc.shape[0] * np.outer(cm - gmean, cm - gmean)
    sw /= x.shape[0]
    sb /= x.shape[0]
    sw += 1e-10 * np.trace(sw) / dim * np.eye(dim)
    vals, vecs = scipy.linalg.eigh(sb, sw)
    order = np.argsort(vals)[::-1][:target_dim]
    proj = vecs[:, order].T
    # deterministic eigenvector signs
    for row in proj:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1
    return Preprocessor(center, whitener, proj)
