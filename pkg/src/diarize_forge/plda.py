"""Two-covariance PLDA: training, interpolation and same/different
speaker log-likelihood-ratio scoring.

Model: speaker identity y ~ N(mean, between_class), observation
x | y ~ N(y, within_class). The LLR compares the joint Gaussian of a
pair under tied vs independent identities and has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateClassesError, DimensionMismatchError


def _check_symmetric(mat: np.ndarray, name: str, tol: float = 1e-9):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.abs(mat - mat.T).max() > tol:
        raise ValueError(f"{name} must be symmetric to {tol}")


@dataclass(frozen=True)
class PldaModel:
    mean: np.ndarray
    between_class: np.ndarray
    within_class: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "between_class",
                           np.asarray(self.between_class, dtype=float))
        object.__setattr__(self, "within_class",
                           np.asarray(self.within_class, dtype=float))
        _check_symmetric(self.between_class, "between_class")
        _check_symmetric(self.within_class, "within_class")
        d = self.mean.shape[0]
        if self.between_class.shape != (d, d) or self.within_class.shape != (d, d):
            raise DimensionMismatchError("mean/between/within dimensions disagree")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _clip_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return vecs @ np.diag(np.clip(vals, 0.0, None)) @ vecs.T


def train_plda(embeddings: np.ndarray, labels) -> PldaModel:
    """Moment-based two-covariance estimation.

    within_class is the pooled within-class scatter (N - C denominator);
    between_class is the scatter of class means (C - 1 denominator) with
    the within-class sampling noise W * mean(1/n_c) subtracted, then
    clipped to PSD.
    """
    x = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateClassesError(f"need >= 2 classes, got {classes.size}")
    dim = x.shape[1]
    mean = x.mean(axis=0)
    within = np.zeros((dim, dim))
    means = []
    inv_counts = []
    for c in classes:
        xc = x[labels == c]
        if xc.shape[0] < 2:
            raise DegenerateClassesError(f"class {c!r} has < 2 samples")
        cm = xc.mean(axis=0)
        means.append(cm)
        inv_counts.append(1.0 / xc.shape[0])
        within += (xc - cm).T @ (xc - cm)
    within /= x.shape[0] - classes.size
    means = np.asarray(means)
    centered = means - mean
    between_raw = centered.T @ centered / (classes.size - 1)
    between = _clip_psd(between_raw - within * np.mean(inv_counts))
    return PldaModel(mean, between, within)


def interpolate_plda(p1: PldaModel, p2: PldaModel, alpha: float) -> PldaModel:
    """Field-wise convex combination alpha * p1 + (1 - alpha) * p2."""
    if p1.dim != p2.dim:
        raise DimensionMismatchError(f"{p1.dim} vs {p2.dim}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return PldaModel(
        alpha * p1.mean + (1 - alpha) * p2.mean,
        alpha * p1.between_class + (1 - alpha) * p2.between_class,
        alpha * p1.within_class + (1 - alpha) * p2.within_class,
    )


class _LlrTerms:
    """Precomputed quadratic form of the pairwise LLR.

    llr(e1, e2) = 0.5 e1'Qe1 + 0.5 e2'Qe2 + e1'Pe2 + const on centered
    embeddings, derived from the block 2x2 joint covariance.
    """

    def __init__(self, model: PldaModel):
        b = model.between_class
        total = b + model.within_class
        total_inv = np.linalg.inv(total)
        inner = total - b @ total_inv @ b
        m1 = np.linalg.inv(inner)
        p = m1 @ b @ total_inv
        self.mean = model.mean
        self.q = total_inv - m1
        self.p = 0.5 * (p + p.T)
        self.const = 0.5 * (np.linalg.slogdet(total)[1]
                            - np.linalg.slogdet(inner)[1])


def plda_llr(model: PldaModel, e1: np.ndarray, e2: np.ndarray) -> float:
    """Log p(e1, e2 | same speaker) - log p(e1, e2 | different)."""
    terms = _LlrTerms(model)
    a = np.asarray(e1, dtype=float) - terms.mean
    b = np.asarray(e2, dtype=float) - terms.mean
    return float(0.5 * a @ terms.q @ a + 0.5 * b @ terms.q @ b
                 + a @ terms.p @ b + terms.const)


def plda_llr_matrix(model: PldaModel, embeddings: np.ndarray) -> np.ndarray:
    """All-pairs LLR matrix (T x T, symmetric) for clustering."""
    x = np.asarray(embeddings, dtype=float) - model.mean
    terms = _LlrTerms(model)
    quad = 0.5 * np.einsum("ij,ij->i", x @ terms.q, x)
    cross = x @ terms.p @ x.T
    return quad[:, None] + quad[None, :] + cross + terms.const


# ---------------------------------------------------------------------------
# Serialization: text matrix sections MEAN / BETWEEN / WITHIN
# ---------------------------------------------------------------------------

def write_plda(model: PldaModel) -> str:
    lines = [f"PLDA {model.dim}", "MEAN",
             " ".join(str(v) for v in model.mean)]
    for name, mat in (("BETWEEN", model.between_class),
                      ("WITHIN", model.within_class)):
        lines.append(name)
        lines.extend(" ".join(str(v) for v in row) for row in mat)
    return "".join(line + "\n" for line in lines)


def read_plda(text: str) -> PldaModel:
    from .errors import FormatError

    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("PLDA"):
        raise FormatError("missing PLDA header")
    try:
        dim = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise FormatError(f"bad PLDA header: {lines[0]!r}") from None
    sections: dict[str, list[list[float]]] = {}
    current = None
    for ln in lines[1:]:
        if ln in ("MEAN", "BETWEEN", "WITHIN"):
            current = ln
            sections[current] = []
            continue
        if current is None:
            raise FormatError(f"data before section marker: {ln!r}")
        try:
            sections[current].append([float(v) for v in ln.split()])
        except ValueError:
            raise FormatError(f"non-numeric value in {current}: {ln!r}") from None
    for name, rows in (("MEAN", 1), ("BETWEEN", dim), ("WITHIN", dim)):
        if name not in sections or len(sections[name]) != rows:
            raise FormatError(f"section {name} must have {rows} rows")
    return PldaModel(
        np.asarray(sections["MEAN"][0]),
        np.asarray(sections["BETWEEN"]),
        np.asarray(sections["WITHIN"]),
    )
