"""VB-HMM refinement of an initial embedding clustering, plus the
average-linkage AHC that seeds it.

The HMM has one state per speaker, self-transition p_loop and uniform
switch mass (1 - p_loop) / (S - 1). Emissions come from the PLDA: a
speaker vector y_s ~ N(0, I) in the eigenvoice space V = between^1/2
yields x | s ~ N(mean + V y_s, within). Variational inference
alternates Gaussian q(y_s) updates with forward-backward over the HMM;
acoustic log-likelihoods are scaled by fa and the eigenvoice prior by
fb, as usual for this family of models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .embeddings import EmbeddingSequence
from .errors import EmptyInitError
from .plda import PldaModel


@dataclass(frozen=True)
class VbxParams:
    p_loop: float = 0.80
    fa: float = 0.3
    fb: float = 17.0
    max_iters: int = 40
    elbo_tol: float = 1e-4
    min_occupancy: float = 0.02

    def __post_init__(self):
        if not 0.0 < self.p_loop < 1.0:
            raise ValueError(f"p_loop must be in (0, 1), got {self.p_loop}")
        if self.fa <= 0 or self.fb <= 0:
            raise ValueError("fa and fb must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def ahc(llr_matrix: np.ndarray, threshold: float) -> np.ndarray:
    """Average-linkage agglomeration over a symmetric similarity matrix.

    Merges the best pair while its average score exceeds the threshold;
    ties pick the pair with the smallest indices. Returns integer labels
    numbered by each cluster's smallest member.
    """
    sim = np.asarray(llr_matrix, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity matrix must be square")
    if sim.size and np.abs(sim - sim.T).max() > 1e-6:
        raise ValueError("similarity matrix must be symmetric")
    n = sim.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int)
    sums = sim.copy()
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    members: list[list[int]] = [[i] for i in range(n)]
    while active.sum() > 1:
        scores = sums / np.outer(sizes, sizes)
        scores[~active, :] = -np.inf
        scores[:, ~active] = -np.inf
        np.fill_diagonal(scores, -np.inf)
        flat = int(np.argmax(scores))  # first max = smallest (i, j) row-major
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        if not scores[i, j] > threshold:
            break
        sums[i, :] += sums[j, :]
        sums[:, i] += sums[:, j]
        sizes[i] += sizes[j]
        active[j] = False
        members[i].extend(members[j])
    labels = np.zeros(n, dtype=int)
    for new_id, idx in enumerate(sorted(np.flatnonzero(active))):
        labels[members[idx]] = new_id
    return labels


def _log_transitions(n_speakers: int, p_loop: float) -> np.ndarray:
    if n_speakers == 1:
        return np.zeros((1, 1))
    switch = (1.0 - p_loop) / (n_speakers - 1)
    trans = np.full((n_speakers, n_speakers), math.log(switch))
    np.fill_diagonal(trans, math.log(p_loop))
    return trans


def _forward_backward(log_emit: np.ndarray, log_trans: np.ndarray):
    """Exact HMM posteriors; returns (responsibilities, log normalizer)."""
    t_len, s = log_emit.shape
    log_pi = -math.log(s)
    fwd = np.zeros((t_len, s))
    fwd[0] = log_pi + log_emit[0]
    for t in range(1, t_len):
        fwd[t] = log_emit[t] + logsumexp(fwd[t - 1][:, None] + log_trans, axis=0)
    bwd = np.zeros((t_len, s))
    for t in range(t_len - 2, -1, -1):
        bwd[t] = logsumexp(log_trans + (log_emit[t + 1] + bwd[t + 1])[None, :], axis=1)
    log_z = float(logsumexp(fwd[-1]))
    gamma = np.exp(fwd + bwd - log_z)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, log_z


def _sym_sqrt(mat: np.ndarray, clip: bool = True) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if clip:
        vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def _inv_sym_sqrt(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """(W^-1/2, log det W); W must be positive definite."""
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() <= 0:
        eps = 1e-9 * max(np.trace(mat), 1.0) / mat.shape[0]
        vals = np.clip(vals, eps, None)
    return vecs @ np.diag(vals ** -0.5) @ vecs.T, float(np.sum(np.log(vals)))


def vbx_cluster(seq: EmbeddingSequence, plda: PldaModel, init_labels,
                params: VbxParams = VbxParams()):
    """Refine init_labels with VB-HMM inference.

    Returns (labels, responsibilities T x S, elbo_trace). Speakers whose
    total responsibility drops below min_occupancy * T are removed
    between iterations. The ELBO is monotone within stretches where the
    speaker set is unchanged; a drop restarts the comparison baseline.
    """
    init = np.asarray(init_labels)
    t_len = len(seq)
    if init.size == 0 or t_len == 0:
        raise EmptyInitError("need at least one embedding and one init label")
    if init.shape[0] != t_len:
        raise ValueError(f"{init.shape[0]} labels for {t_len} embeddings")
    _, init_ids = np.unique(init, return_inverse=True)
    n_spk = int(init_ids.max()) + 1

    white, logdet_w = _inv_sym_sqrt(plda.within_class)
    xw = (seq.vectors - plda.mean) @ white.T            # whitened residuals
    v_eig = white @ _sym_sqrt(plda.between_class)       # eigenvoice map
    gram = v_eig.T @ v_eig
    dim = xw.shape[1]
    frame_const = -0.5 * dim * math.log(2 * math.pi) - 0.5 * logdet_w
    xnorm = np.einsum("ij,ij->i", xw, xw)

    gamma = np.zeros((t_len, n_spk))
    gamma[np.arange(t_len), init_ids] = 1.0

    elbo_trace: list[float] = []
    prev_elbo: float | None = None
    eye = np.eye(dim)
    for _ in range(params.max_iters):
        n_spk = gamma.shape[1]
        # (a) speaker model updates q(y_s) = N(alpha_s, cov_s)
        occ = gamma.sum(axis=0)
        stats = gamma.T @ xw                              # S x D
        prec = params.fb * eye[None, :, :] + params.fa * occ[:, None, None] * gram
        cov = np.linalg.inv(prec)
        alpha = params.fa * np.einsum("sij,sj->si", cov, stats @ v_eig)
        # (b) expected emission log-likelihoods, scaled by fa
        proj = v_eig @ alpha.T                            # D x S
        cross = xw @ proj                                 # T x S
        anorm = np.einsum("si,ij,sj->s", alpha, gram, alpha)
        trace_term = np.einsum("ij,sji->s", gram, cov)
        log_emit = params.fa * (frame_const - 0.5 * (
            xnorm[:, None] - 2.0 * cross + anorm[None, :] + trace_term[None, :]))
        gamma, log_z = _forward_backward(log_emit, _log_transitions(n_spk, params.p_loop))
        # ELBO = HMM evidence + prior/entropy terms of q(y)
        sign, logdet_cov = np.linalg.slogdet(cov)
        y_terms = float(np.sum(
            -0.5 * params.fb * (np.einsum("si,si->s", alpha, alpha)
                                + np.einsum("sii->s", cov))
            + 0.5 * logdet_cov
            + 0.5 * dim * (1.0 + (1.0 - params.fb) * math.log(2 * math.pi))))
        elbo = log_z + y_terms
        elbo_trace.append(elbo)
        converged = False
        if prev_elbo is not None:
            assert elbo >= prev_elbo - 1e-8 * abs(prev_elbo) - 1e-12, (
                f"ELBO decreased: {prev_elbo} -> {elbo}")
            converged = abs(elbo - prev_elbo) < params.elbo_tol * abs(prev_elbo)
        prev_elbo = elbo
        # (c) drop starved speakers between iterations
        occ = gamma.sum(axis=0)
        keep = occ >= params.min_occupancy * t_len
        if not keep.any():
            keep[int(np.argmax(occ))] = True
        if not keep.all():
            gamma = gamma[:, keep]
            row_sums = gamma.sum(axis=1, keepdims=True)
            dead = row_sums[:, 0] <= 0
            if dead.any():
                gamma[dead] = 1.0 / gamma.shape[1]
                row_sums[dead] = 1.0
            gamma /= row_sums
            prev_elbo = None   # model changed; restart the monotone stretch
            converged = False  # give the smaller model at least one pass
        if converged:
            break

    labels = np.unique(np.argmax(gamma, axis=1), return_inverse=True)[1]
    return labels, gamma, elbo_trace
