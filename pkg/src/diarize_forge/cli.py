"""diarize-forge command line: score, combine, vbx, postprocess,
iterate, synth and pipeline subcommands.

Exit codes: 0 success, 1 scoring undefined (no reference speech),
2 input/config error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .embeddings import fit_preprocessor, read_embeddings
from .errors import DiarizeForgeError, WeightCountMismatchError
from .fusion import HypothesisSet, combine
from .inference import FilePosteriorSource, IterConfig, iterative_inference, multi_k_ensemble
from .metrics import der, jer
from .pipeline import (
    PostprocessParams,
    parse_config,
    postprocess_annotation,
    run_pipeline,
)
from .plda import interpolate_plda, plda_llr_matrix, read_plda
from .report import RunReport, StageScore, format_table, write_report
from .streams import assign_overlaps
from .synth import ScenarioSpec, gen_reference
from .timeline import Annotation, Turn, parse_rttm, parse_uem, write_rttm
from .vbx import VbxParams, ahc, vbx_cluster


def _read_rttm_file(path: str) -> list[Annotation]:
    return parse_rttm(Path(path).read_text())


def _read_uem(path: str | None):
    if path is None:
        return None
    return parse_uem(Path(path).read_text())


def _write_output(text: str, path: str):
    out = Path(path)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def cmd_score(args) -> int:
    refs = {a.recording_id: a for a in _read_rttm_file(args.reference)}
    hyps = {a.recording_id: a for a in _read_rttm_file(args.hypothesis)}
    uem = _read_uem(args.uem)
    report = RunReport()
    for rec in sorted(refs):
        hyp = hyps.get(rec)
        if hyp is None:
            print(f"warning: recording {rec} missing from hypothesis, "
                  f"scored as all-missed", file=sys.stderr)
            hyp = Annotation(rec)
        report.scores.append(StageScore(
            rec, "score", der(refs[rec], hyp, collar=args.collar, uem=uem),
            jer(refs[rec], hyp, uem=uem)))
        report.timings[rec] = 0.0
    extra = sorted(set(hyps) - set(refs))
    if extra:
        print(f"warning: hypothesis recordings not in reference: "
              f"{', '.join(extra)}", file=sys.stderr)
    print(format_table(report), end="")
    if args.report_dir:
        for path in write_report(report, args.report_dir):
            print(f"wrote {path}", file=sys.stderr)
    return 0 if report.aggregate("score").breakdown.defined else 1


# ---------------------------------------------------------------------------
# combine
# ---------------------------------------------------------------------------

def _parse_weights(raw: str | None, n_files: int) -> tuple[float, ...] | None:
    if raw is None:
        return None
    weights = tuple(float(v) for v in raw.replace(",", " ").split())
    if len(weights) != n_files:
        raise WeightCountMismatchError(
            f"{len(weights)} weights for {n_files} hypothesis files")
    return weights


def cmd_combine(args) -> int:
    weights = _parse_weights(args.weights, len(args.hypotheses))
    maps = [{a.recording_id: a for a in _read_rttm_file(f)}
            for f in args.hypotheses]
    outputs = []
    for rec in sorted({rec for m in maps for rec in m}):
        hyps, rec_weights = [], []
        for i, m in enumerate(maps):
            if rec in m:
                hyps.append(m[rec])
                rec_weights.append(weights[i] if weights else 1.0)
        hset = HypothesisSet(tuple(hyps), tuple(rec_weights))
        outputs.append(combine(hset, args.tie_rule, args.rank_exponent))
    _write_output(write_rttm(outputs), args.output)
    return 0


# ---------------------------------------------------------------------------
# vbx
# ---------------------------------------------------------------------------

def _vbx_turns(seq, labels) -> list[Turn]:
    """Hop-sized slices per window, merged over equal-label runs; the
    last turn extends to the end of the final window."""
    hop = seq.timestamps[1][0] - seq.timestamps[0][0] if len(seq) > 1 else (
        seq.timestamps[0][1] - seq.timestamps[0][0])
    turns = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i < len(labels) and labels[i] == labels[start]:
            continue
        onset = seq.timestamps[start][0]
        end = seq.timestamps[i - 1][0] + hop if i < len(labels) else seq.timestamps[-1][1]
        turns.append(Turn(seq.recording_id, f"spk{labels[start]}", onset, end - onset))
        start = i
    return turns


def cmd_vbx(args) -> int:
    plda = read_plda(Path(args.plda).read_text())
    if args.plda2:
        plda = interpolate_plda(plda, read_plda(Path(args.plda2).read_text()),
                                args.alpha)
    params = VbxParams(p_loop=args.p_loop, fa=args.fa, fb=args.fb,
                       max_iters=args.max_iters)
    overlap_map = {}
    if args.overlap_rttm:
        for a in _read_rttm_file(args.overlap_rttm):
            overlap_map[a.recording_id] = a.speech_timeline()
    outputs = []
    files = sorted(Path(args.embeddings).glob("*.ark2"))
    if not files:
        raise DiarizeForgeError(f"no .ark2 files in {args.embeddings}")
    for path in files:
        seq = read_embeddings(path.read_bytes())
        vectors = seq.vectors
        if args.whiten:
            vectors = fit_preprocessor(vectors).transform(vectors)
        init = ahc(plda_llr_matrix(plda, vectors), args.ahc_threshold)
        labels, _, _ = vbx_cluster(seq, plda, init, params)
        ann = Annotation(seq.recording_id, tuple(_vbx_turns(seq, labels)))
        if seq.recording_id in overlap_map:
            ann = assign_overlaps(ann, overlap_map[seq.recording_id])
        outputs.append(ann)
    _write_output(write_rttm(outputs), args.output)
    return 0


# ---------------------------------------------------------------------------
# postprocess
# ---------------------------------------------------------------------------

def cmd_postprocess(args) -> int:
    diars = _read_rttm_file(args.diarization)
    vad_source = FilePosteriorSource(args.vad_posteriors, max_speakers=1)
    spk_source = None
    if args.speaker_posteriors:
        spk_source = FilePosteriorSource(args.speaker_posteriors, max_speakers=64)
    if not args.skip_recover and spk_source is None:
        raise DiarizeForgeError(
            "missed-speech recovery needs --speaker-posteriors "
            "(or pass --skip-recover)")
    params = PostprocessParams(
        Path(args.vad_posteriors),
        Path(args.speaker_posteriors) if args.speaker_posteriors else None,
        args.theta, args.median_window,
        filter_fa=not args.skip_filter,
        recover_mi=not args.skip_recover)
    outputs = []
    for ann in diars:
        vad_pm = vad_source.matrix(ann.recording_id)
        spk_pm = spk_source.matrix(ann.recording_id) if spk_source else None
        current = ann
        for _, current in postprocess_annotation(ann, vad_pm, spk_pm, params):
            pass
        outputs.append(current)
    _write_output(write_rttm(outputs), args.output)
    return 0


# ---------------------------------------------------------------------------
# iterate
# ---------------------------------------------------------------------------

def cmd_iterate(args) -> int:
    source = FilePosteriorSource(args.source, max_speakers=args.max_speakers)
    recs = args.recordings or source.recordings()
    outputs = []
    for rec in recs:
        if ".." in args.k_first:
            lo, hi = (int(v) for v in args.k_first.split("..", 1))
            if (lo, hi) != (1, 5):
                runs = []
                for k in range(lo, hi + 1):
                    cfg = IterConfig(k_first=k, k_later=max(args.k_later, k),
                                     activity_threshold=args.threshold,
                                     max_rounds=args.max_rounds)
                    runs.append(iterative_inference(source, rec, cfg))
                outputs.append(combine(HypothesisSet(tuple(runs))))
            else:
                cfg = IterConfig(k_first=5, k_later=args.k_later,
                                 activity_threshold=args.threshold,
                                 max_rounds=args.max_rounds)
                outputs.append(multi_k_ensemble(source, rec, cfg))
        else:
            k = int(args.k_first)
            cfg = IterConfig(k_first=k, k_later=max(args.k_later, k),
                             activity_threshold=args.threshold,
                             max_rounds=args.max_rounds)
            outputs.append(iterative_inference(source, rec, cfg))
    _write_output(write_rttm(outputs), args.output)
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = ScenarioSpec(args.speakers, args.duration, args.overlap,
                        args.mean_turn, args.seed)
    ann = gen_reference(spec, recording_id=args.recording_id)
    _write_output(write_rttm([ann]), args.output)
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def cmd_pipeline(args) -> int:
    config = parse_config(args.config)
    result = run_pipeline(config, workers=args.workers)
    _write_output(result.rttm_text, str(config.output_rttm))
    print(f"wrote {config.output_rttm}", file=sys.stderr)
    if result.report.scores:
        print(format_table(result.report), end="")
    if config.report_dir:
        for path in write_report(result.report, config.report_dir):
            print(f"wrote {path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diarize-forge",
        description="speaker diarization scoring, fusion and clustering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="DER/JER scoring with MI/FA/CF breakdown")
    p.add_argument("reference", help="reference RTTM file")
    p.add_argument("hypothesis", help="hypothesis RTTM file")
    p.add_argument("--collar", type=float, default=0.0)
    p.add_argument("--uem", help="UEM scoring map")
    p.add_argument("--report-dir", help="write report.tsv and figures here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("combine",
                       help="fuse hypotheses by rank-weighted label voting")
    p.add_argument("hypotheses", nargs="+", help="hypothesis RTTM files")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--weights", help="comma-separated manual weights, one per file")
    p.add_argument("--tie-rule", choices=("modified", "original"),
                   default="modified")
    p.add_argument("--rank-exponent", type=float, default=1.0)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("vbx", help="AHC + VB-HMM embedding clustering")
    p.add_argument("--embeddings", required=True, help="directory of .ark2 files")
    p.add_argument("--plda", required=True, help="PLDA model file")
    p.add_argument("--plda2", help="second PLDA model to interpolate with")
    p.add_argument("--alpha", type=float, default=0.5,
                   help="interpolation weight of the first PLDA")
    p.add_argument("--p-loop", type=float, default=0.80)
    p.add_argument("--fa", type=float, default=0.3)
    p.add_argument("--fb", type=float, default=17.0)
    p.add_argument("--max-iters", type=int, default=40)
    p.add_argument("--ahc-threshold", type=float, default=0.0)
    p.add_argument("--whiten", action="store_true",
                   help="center+whiten embeddings per recording before scoring")
    p.add_argument("--overlap-rttm", help="overlap detector output; adds the "
                                          "nearest other speaker on each region")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_vbx)

    p = sub.add_parser("postprocess", help="VAD filter + missed speech recovery")
    p.add_argument("diarization", help="input diarization RTTM")
    p.add_argument("--vad-posteriors", required=True,
                   help="directory of 1-row POST files")
    p.add_argument("--speaker-posteriors",
                   help="directory of per-speaker POST files")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--median-window", type=int, default=11)
    p.add_argument("--skip-filter", action="store_true")
    p.add_argument("--skip-recover", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("iterate", help="iterative inference over a posterior source")
    p.add_argument("--source", required=True, help="directory of POST files")
    p.add_argument("--k-first", default="5",
                   help="first-round speaker cap, or a range like 1..5 for the "
                        "multi-K ensemble")
    p.add_argument("--k-later", type=int, default=5)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-rounds", type=int, default=20)
    p.add_argument("--max-speakers", type=int, default=5,
                   help="source capability cap")
    p.add_argument("--recordings", nargs="*", help="subset of recordings")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("synth", help="generate a synthetic reference RTTM")
    p.add_argument("--speakers", type=int, required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--overlap", type=float, default=0.0)
    p.add_argument("--mean-turn", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recording-id", default="synth")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="run a configured stage graph")
    p.add_argument("config", help="pipeline INI config")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel recordings (default: DIARIZE_FORGE_THREADS "
                        "or cpu count)")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except DiarizeForgeError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
