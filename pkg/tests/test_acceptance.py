"""Acceptance suite: one test per criterion, each printing a PASS line
(run with `pytest tests/test_acceptance.py -v -s` to see them).

All expected values are either computed by an independent oracle inside
the test (exhaustive enumeration, closed forms, direct interval
algebra) or asserted as exact identities. Scenario times for the exact
metric-oracle checks sit on a 1/1024 s grid so float sums carry no
rounding and `==` comparisons are meaningful.
"""

import itertools
import math
import time

import numpy as np

from diarize_forge.fusion import HypothesisSet, combine, rank_hypotheses
from diarize_forge.inference import IterConfig, MatrixPosteriorSource, eendasp_refine, iterative_inference
from diarize_forge.metrics import der, jer, optimal_mapping, overlap_matrix
from diarize_forge.pipeline import parse_config, run_pipeline
from diarize_forge.plda import PldaModel, plda_llr, plda_llr_matrix
from diarize_forge.streams import (
    PosteriorMatrix,
    filter_false_alarms,
    median_filter,
    recover_missed,
    segments_from_stream,
    threshold,
)
from diarize_forge.synth import (
    CorruptionSpec,
    ScenarioSpec,
    corrupt,
    gen_embeddings,
    gen_posteriors,
    gen_reference,
    window_labels,
)
from diarize_forge.timeline import (
    Annotation,
    Turn,
    intersect_intervals,
    overlap_timeline,
    parse_rttm,
    subtract_intervals,
    total_length,
    write_rttm,
)
from diarize_forge.vbx import ahc, vbx_cluster

MODULE_T0 = time.perf_counter()


def binary_grid_annotation(rng, rec, prefix, n_speakers, n_turns):
    """Turn boundaries on a 1/1024 s grid: all float arithmetic on the
    derived durations is exact."""
    grid = 1.0 / 1024
    turns = []
    for _ in range(n_turns):
        onset = int(rng.integers(0, 61440)) * grid
        dur = int(rng.integers(64, 8192)) * grid
        turns.append(Turn(rec, f"{prefix}{int(rng.integers(0, n_speakers))}",
                          onset, dur))
    return Annotation(rec, tuple(turns))


def brute_force_best(matrix: np.ndarray) -> float:
    """Exhaustive max-total injective map (the independent oracle)."""
    rows, cols = matrix.shape
    k = min(rows, cols)
    best = 0.0
    for rsel in itertools.combinations(range(rows), k):
        for csel in itertools.permutations(range(cols), k):
            total = 0.0
            for r, c in zip(rsel, csel):
                total += matrix[r, c]
            if total > best:
                best = total
    return best


def support_diff(a: Annotation, b: Annotation) -> float:
    """Max per-speaker symmetric support difference in seconds."""
    worst = 0.0
    for s in set(a.speakers()) | set(b.speakers()):
        sa, sb = a.support(s), b.support(s)
        worst = max(worst, total_length(subtract_intervals(sa, sb))
                    + total_length(subtract_intervals(sb, sa)))
    return worst


def test_criterion_1_metric_oracle_equivalence():
    t0 = time.perf_counter()
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        ref = binary_grid_annotation(rng, "r", "s", int(rng.integers(1, 5)),
                                     int(rng.integers(1, 21)))
        hyp = binary_grid_annotation(rng, "r", "h", int(rng.integers(1, 7)),
                                     int(rng.integers(1, 21)))
        m = overlap_matrix(ref, hyp)
        assert optimal_mapping(m).total == brute_force_best(m)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 1 PASS: optimal mapping == exhaustive search on "
          f"1000 scenario pairs, exact, in {elapsed:.2f}s")


def test_criterion_2_identity_metrics():
    for seed in range(100):
        rng = np.random.default_rng(10_000 + seed)
        x = binary_grid_annotation(rng, "r", "s", int(rng.integers(1, 5)),
                                   int(rng.integers(1, 16)))
        b = der(x, x)
        assert (b.missed, b.false_alarm, b.confusion) == (0.0, 0.0, 0.0)
        assert b.der == 0.0
        assert jer(x, x) == 0.0
    print("ACCEPTANCE 2 PASS: der(x,x) == 0 and jer(x,x) == 0 exactly on "
          "100 seeded scenarios")


def test_criterion_3_fusion_unanimity():
    for seed in range(50):
        h = gen_reference(ScenarioSpec(3 + seed % 2, 60.0, 0.25, seed=seed), "r")
        assert total_length(overlap_timeline(h)) > 0, "scenario must overlap"
        modified = combine(HypothesisSet((h, h, h)), tie_rule="modified")
        assert support_diff(modified, h) <= 1e-3
        original = combine(HypothesisSet((h, h, h)), tie_rule="original")
        assert total_length(overlap_timeline(original)) == 0.0
    print("ACCEPTANCE 3 PASS: unanimous fusion preserves input (modified) "
          "and removes all overlap (original) on 50 scenarios")


def test_criterion_4_ranking_weights():
    # worked two-hypothesis example
    h1 = Annotation("r", (Turn("r", "A", 0.0, 10.0),))
    h2 = Annotation("r", (Turn("r", "A", 0.0, 8.0),))
    rw = rank_hypotheses(HypothesisSet((h1, h2)))
    assert abs(rw.scores[0] - 0.200) <= 1e-9
    assert abs(rw.scores[1] - 0.250) <= 1e-9
    assert rw.ranks == (1, 2)
    flipped = rank_hypotheses(HypothesisSet((h1, h2), (2.0, 1.0)))
    assert flipped.ranks == (2, 1)
    # weight-scale invariance, byte-identical output
    hyps = tuple(
        corrupt(gen_reference(ScenarioSpec(3, 90.0, 0.15, seed=77), "r"),
                CorruptionSpec(0.05, 0.05, 0.05, 0.05, seed=k)) for k in range(5))
    weights = (2.0, 2.0, 1.0, 4.0, 3.0)
    base_rank = rank_hypotheses(HypothesisSet(hyps, weights))
    base_rttm = write_rttm([combine(HypothesisSet(hyps, weights))])
    for c in (0.5, 3.0, 10.0):
        scaled = tuple(w * c for w in weights)
        rw_c = rank_hypotheses(HypothesisSet(hyps, scaled))
        assert rw_c.ranks == base_rank.ranks
        assert np.allclose(rw_c.vote_weights, base_rank.vote_weights, atol=1e-12)
        assert write_rttm([combine(HypothesisSet(hyps, scaled))]) == base_rttm
    print("ACCEPTANCE 4 PASS: scores (0.200, 0.250) reproduced to 1e-9, "
          "manual-weight rank flip and scale invariance byte-identical for "
          "c in {0.5, 3, 10}")


def test_criterion_5_ensemble_gain_trend():
    beat_mean = beat_worst = 0
    n = 200
    for seed in range(n):
        ref = gen_reference(ScenarioSpec(3, 90.0, 0.15, seed=seed), "r")
        hyps = tuple(
            corrupt(ref, CorruptionSpec(0.05 + 0.03 * k, 0.04 + 0.02 * k,
                                        0.04 + 0.02 * k, 0.03 + 0.03 * k,
                                        seed=1000 * seed + k))
            for k in range(5))
        fused = combine(HypothesisSet(hyps))
        ders = [der(ref, h).der for h in hyps]
        fused_der = der(ref, fused).der
        beat_mean += fused_der <= np.mean(ders)
        beat_worst += fused_der <= max(ders)
    assert beat_mean >= 0.90 * n, f"fused beat mean in only {beat_mean}/{n}"
    assert beat_worst >= 0.99 * n, f"fused beat worst in only {beat_worst}/{n}"
    print(f"ACCEPTANCE 5 PASS: fused DER <= mean input DER in {beat_mean}/{n} "
          f"and <= worst input DER in {beat_worst}/{n} scenarios")


def test_criterion_6_vbx():
    # closed-form PLDA LLR value
    unit = PldaModel(np.zeros(1), np.eye(1), np.eye(1))
    want = 0.5 * math.log(4.0 / 3.0)
    assert abs(plda_llr(unit, np.zeros(1), np.zeros(1)) - want) <= 1e-9
    # clustering accuracy and ELBO monotonicity at separation ratio 25
    dim = 16
    plda = PldaModel(np.zeros(dim), 25.0 * np.eye(dim), np.eye(dim))
    for n_spk in (2, 3, 4):
        ref = gen_reference(ScenarioSpec(n_spk, 150.0, 0.0, seed=600 + n_spk), "r")
        seq = gen_embeddings(ref, plda, seed=601 + n_spk)
        truth = window_labels(ref, 1.5, 0.25, len(seq))
        init = ahc(plda_llr_matrix(plda, seq.vectors), threshold=0.0)
        labels, gamma, trace = vbx_cluster(seq, plda, init)
        for prev, cur in zip(trace, trace[1:]):
            assert cur >= prev - 1e-8 * abs(prev) - 1e-12
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
        correct = 0
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            _, counts = np.unique([truth[i] for i in idx], return_counts=True)
            correct += counts.max()
        accuracy = correct / len(truth)
        assert accuracy >= 0.99, f"S={n_spk}: accuracy {accuracy:.4f}"
    print("ACCEPTANCE 6 PASS: LLR closed form to 1e-9, ELBO non-decreasing, "
          ">= 99% window accuracy for S in {2, 3, 4}")


def test_criterion_7_postprocessing():
    n = 100
    strict = 0
    for seed in range(n):
        ref = gen_reference(ScenarioSpec(3, 120.0, 0.0, seed=seed), "r")
        hyp = corrupt(ref, CorruptionSpec(0.1, 0.25, 0.4, 0.0, seed=seed + 9999))
        spk_pm = gen_posteriors(ref, 0.02, noise_std=0.1, seed=seed)
        vad_pm = PosteriorMatrix("r", 0.02, spk_pm.values.max(axis=0)[None, :],
                                 ("speech",))
        vad = segments_from_stream(median_filter(threshold(vad_pm, 0.5), 11))
        d0 = der(ref, hyp).der
        filtered = filter_false_alarms(hyp, vad)
        assert total_length(subtract_intervals(filtered.speech_timeline(), vad)) <= 1e-9
        d1 = der(ref, filtered).der
        recovered = recover_missed(filtered, vad, spk_pm)
        sym = (total_length(subtract_intervals(recovered.speech_timeline(), vad))
               + total_length(subtract_intervals(vad, recovered.speech_timeline())))
        assert sym <= 1e-3
        d2 = der(ref, recovered).der
        strict += (d1 < d0) and (d2 < d1)
    assert strict >= 0.95 * n, f"strict DER decrease in only {strict}/{n}"
    print(f"ACCEPTANCE 7 PASS: support invariants exact on {n} scenarios, "
          f"DER strictly decreased through both stages in {strict}/{n}")


def test_criterion_8_iterative_inference():
    ref = gen_reference(ScenarioSpec(7, 300.0, 0.0, seed=321), "r")
    source = MatrixPosteriorSource({"r": gen_posteriors(ref, 0.01)},
                                   max_speakers=5)
    out = iterative_inference(source, "r", IterConfig(k_first=5))
    assert len(out.speakers()) == 7
    recovered_der = der(ref, out).der
    assert recovered_der < 0.02
    sups = [out.support(s) for s in out.speakers()]
    for i in range(len(sups)):
        for j in range(i + 1, len(sups)):
            assert total_length(intersect_intervals(sups[i], sups[j])) == 0.0
    # adversarial termination: noisy sources, varying sizes
    for seed in range(100):
        spec = ScenarioSpec(1 + seed % 8, 60.0, 0.0, seed=seed)
        noisy = gen_posteriors(gen_reference(spec, "r"), 0.05,
                               noise_std=0.2 + 0.003 * seed, seed=seed)
        src = MatrixPosteriorSource({"r": noisy}, max_speakers=4)
        iterative_inference(src, "r", IterConfig(k_first=4, k_later=4,
                                                 max_rounds=8))
    print(f"ACCEPTANCE 8 PASS: 7-speaker scenario recovered at DER "
          f"{100 * recovered_der:.2f}% with disjoint round supports; 100 "
          f"adversarial runs terminated")


def test_criterion_9_eendasp_fixed_point():
    for seed in (11, 12):
        initial = gen_reference(ScenarioSpec(3, 120.0, 0.15, seed=seed), "r")
        source = MatrixPosteriorSource({"r": gen_posteriors(initial, 0.01)},
                                       max_speakers=2)
        base = write_rttm([initial])
        for rounds in (1, 3):
            refined = eendasp_refine(initial, source, rounds=rounds)
            assert write_rttm([refined]) == base
    print("ACCEPTANCE 9 PASS: identity pair source is a byte-identical fixed "
          "point for rounds in {1, 3}")


def test_criterion_10_determinism_and_formats(tmp_path):
    # RTTM round-trip byte stability
    for seed in range(25):
        ann = gen_reference(ScenarioSpec(2 + seed % 4, 60.0,
                                         0.1 * (seed % 3), seed=seed), f"rec{seed}")
        first = write_rttm([ann])
        assert write_rttm(parse_rttm(first)) == first
    # parallel vs serial pipeline outputs byte-identical
    refs, hyp_paths = [], []
    for i in range(6):
        refs.append(gen_reference(ScenarioSpec(3, 60.0, 0.1, seed=500 + i),
                                  f"rec{i}"))
    for k in range(3):
        hyps = [corrupt(r, CorruptionSpec(0.05, 0.1, 0.1, 0.1,
                                          seed=700 + 13 * k + i))
                for i, r in enumerate(refs)]
        p = tmp_path / f"h{k}.rttm"
        p.write_text(write_rttm(hyps))
        hyp_paths.append(p)
    (tmp_path / "ref.rttm").write_text(write_rttm(refs))
    cfg = tmp_path / "run.ini"
    cfg.write_text(
        "[meta]\nversion = 1\n\n[inputs]\n"
        f"hypotheses = {', '.join(p.name for p in hyp_paths)}\n"
        "reference = ref.rttm\n\n[run]\nstages = combine\n\n"
        "[output]\nrttm = fused.rttm\n")
    config = parse_config(cfg)
    serial = run_pipeline(config, workers=1)
    parallel = run_pipeline(config, workers=4)
    assert serial.rttm_text == parallel.rttm_text
    elapsed = time.perf_counter() - MODULE_T0
    assert elapsed < 300.0
    print(f"ACCEPTANCE 10 PASS: RTTM round-trip byte-stable, parallel == "
          f"serial pipeline output; acceptance module took {elapsed:.1f}s")
