"""Pipeline configuration and per-recording parallel execution.

The config is a versioned INI file; recordings are independent work
units, so parallel and serial runs produce byte-identical outputs: each
worker runs pure functions and the results are assembled in sorted
recording order.
"""

from __future__ import annotations

import configparser
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ConfigError,
    FormatError,
    GridMismatchError,
    WeightCountMismatchError,
)
from .fusion import HypothesisSet, combine
from .inference import FilePosteriorSource
from .metrics import der, jer
from .report import RunReport, StageScore
from .streams import (
    PosteriorMatrix,
    filter_false_alarms,
    median_filter,
    recover_missed,
    segments_from_stream,
    threshold,
)
from .timeline import EPS, Annotation, Uem, parse_rttm, parse_uem, write_rttm

CONFIG_VERSION = 1
_STAGES = ("combine", "postprocess")


@dataclass(frozen=True)
class CombineParams:
    weights: tuple[float, ...] | None = None
    tie_rule: str = "modified"
    rank_exponent: float = 1.0


@dataclass(frozen=True)
class PostprocessParams:
    vad_posteriors: Path
    speaker_posteriors: Path | None = None
    theta: float = 0.5
    median_window: int = 11
    filter_fa: bool = True
    recover_mi: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    hypotheses: tuple[Path, ...]
    stages: tuple[str, ...]
    output_rttm: Path
    reference: Path | None = None
    uem: Path | None = None
    report_dir: Path | None = None
    workers: int | None = None
    combine_params: CombineParams = CombineParams()
    postprocess_params: PostprocessParams | None = None


def _get(parser: configparser.ConfigParser, section: str, key: str,
         fallback=None):
    if parser.has_option(section, key):
        return parser.get(section, key)
    return fallback


def _paths(raw: str) -> tuple[Path, ...]:
    parts = [p.strip() for chunk in raw.split(",") for p in chunk.split()]
    return tuple(Path(p) for p in parts if p)


def parse_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such file: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as err:
        raise ConfigError(str(err)) from None

    version = _get(parser, "meta", "version")
    if version is None:
        raise ConfigError("missing required key", "meta", "version")
    if version.strip() != str(CONFIG_VERSION):
        raise ConfigError(f"unsupported version {version!r} (expected "
                          f"{CONFIG_VERSION})", "meta", "version")

    raw_hyps = _get(parser, "inputs", "hypotheses")
    if not raw_hyps:
        raise ConfigError("missing required key", "inputs", "hypotheses")
    hypotheses = _paths(raw_hyps)
    base = path.parent
    hypotheses = tuple(p if p.is_absolute() else base / p for p in hypotheses)
    for p in hypotheses:
        if not p.is_file():
            raise ConfigError(f"no such file: {p}", "inputs", "hypotheses")

    def resolve_opt(section: str, key: str, must_exist=True) -> Path | None:
        raw = _get(parser, section, key)
        if raw is None:
            return None
        p = Path(raw.strip())
        p = p if p.is_absolute() else base / p
        if must_exist and not p.exists():
            raise ConfigError(f"no such path: {p}", section, key)
        return p

    reference = resolve_opt("inputs", "reference")
    uem = resolve_opt("inputs", "uem")

    raw_stages = _get(parser, "run", "stages", "combine")
    stages = tuple(s.strip() for chunk in raw_stages.split(",")
                   for s in chunk.split() if s.strip())
    if not stages:
        raise ConfigError("stage list is empty", "run", "stages")
    for s in stages:
        if s not in _STAGES:
            raise ConfigError(f"unknown stage {s!r} (known: {', '.join(_STAGES)})",
                              "run", "stages")
    if len(set(stages)) != len(stages):
        raise ConfigError("duplicate stage", "run", "stages")
    if "combine" in stages and "postprocess" in stages and \
            stages.index("combine") > stages.index("postprocess"):
        raise ConfigError("combine must run before postprocess", "run", "stages")
    workers = None
    raw_workers = _get(parser, "run", "workers")
    if raw_workers is not None:
        try:
            workers = int(raw_workers)
        except ValueError:
            raise ConfigError(f"not an integer: {raw_workers!r}", "run",
                              "workers") from None
        if workers < 1:
            raise ConfigError("workers must be >= 1", "run", "workers")

    combine_params = CombineParams()
    if parser.has_section("stage:combine"):
        weights = None
        raw_w = _get(parser, "stage:combine", "weights")
        if raw_w:
            try:
                weights = tuple(float(v) for v in raw_w.replace(",", " ").split())
            except ValueError:
                raise ConfigError(f"bad weights {raw_w!r}", "stage:combine",
                                  "weights") from None
        tie_rule = _get(parser, "stage:combine", "tie_rule", "modified").strip()
        if tie_rule not in ("modified", "original"):
            raise ConfigError(f"tie_rule must be modified|original, got {tie_rule!r}",
                              "stage:combine", "tie_rule")
        try:
            exponent = float(_get(parser, "stage:combine", "rank_exponent", "1.0"))
        except ValueError:
            raise ConfigError("rank_exponent must be a number",
                              "stage:combine", "rank_exponent") from None
        combine_params = CombineParams(weights, tie_rule, exponent)

    postprocess_params = None
    if "postprocess" in stages:
        if not parser.has_section("stage:postprocess"):
            raise ConfigError("stage declared but section missing",
                              "stage:postprocess")
        vad = resolve_opt("stage:postprocess", "vad_posteriors")
        if vad is None:
            raise ConfigError("missing required key", "stage:postprocess",
                              "vad_posteriors")
        spk = resolve_opt("stage:postprocess", "speaker_posteriors")
        try:
            theta = float(_get(parser, "stage:postprocess", "theta", "0.5"))
            window = int(_get(parser, "stage:postprocess", "median_window", "11"))
        except ValueError:
            raise ConfigError("theta/median_window must be numeric",
                              "stage:postprocess") from None
        if not 0.0 <= theta <= 1.0:
            raise ConfigError("theta must be in [0, 1]", "stage:postprocess", "theta")
        if window < 1 or window % 2 == 0:
            raise ConfigError("median_window must be odd and >= 1",
                              "stage:postprocess", "median_window")
        filter_fa = parser.getboolean("stage:postprocess", "filter", fallback=True)
        recover_mi = parser.getboolean("stage:postprocess", "recover", fallback=True)
        if recover_mi and spk is None:
            raise ConfigError("recover needs speaker_posteriors",
                              "stage:postprocess", "speaker_posteriors")
        postprocess_params = PostprocessParams(vad, spk, theta, window,
                                               filter_fa, recover_mi)

    raw_out = _get(parser, "output", "rttm")
    if not raw_out:
        raise ConfigError("missing required key", "output", "rttm")
    out_rttm = Path(raw_out.strip())
    out_rttm = out_rttm if out_rttm.is_absolute() else base / out_rttm
    report_dir = resolve_opt("output", "report_dir", must_exist=False)
    return PipelineConfig(hypotheses, stages, out_rttm, reference, uem,
                          report_dir, workers, combine_params, postprocess_params)


def resolve_workers(explicit: int | None = None) -> int:
    """--workers flag wins, then DIARIZE_FORGE_THREADS, then cpu count."""
    if explicit is not None:
        return max(1, explicit)
    env = os.environ.get("DIARIZE_FORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DIARIZE_FORGE_THREADS={env!r} is not an integer")
    return os.cpu_count() or 1


def vad_timeline_from_posteriors(pm: PosteriorMatrix, theta: float,
                                 median_window: int):
    """Posterior stream -> thresholded, median-filtered speech intervals."""
    if pm.num_speakers != 1:
        raise FormatError(f"VAD stream must have 1 row, got {pm.num_speakers}")
    return segments_from_stream(median_filter(threshold(pm, theta), median_window))


def postprocess_annotation(diar: Annotation, vad_pm: PosteriorMatrix,
                           spk_pm: PosteriorMatrix | None,
                           params: PostprocessParams):
    """Apply filter/recover per the params; yields (stage name, result)."""
    if spk_pm is not None and abs(vad_pm.frame_shift - spk_pm.frame_shift) > EPS:
        raise GridMismatchError(
            f"VAD frame shift {vad_pm.frame_shift} != speaker frame shift "
            f"{spk_pm.frame_shift}")
    vad = vad_timeline_from_posteriors(vad_pm, params.theta, params.median_window)
    current = diar
    if params.filter_fa:
        current = filter_false_alarms(current, vad)
        yield "filter_fa", current
    if params.recover_mi:
        current = recover_missed(current, vad, spk_pm)
        yield "recover_mi", current


@dataclass
class PipelineResult:
    outputs: dict[str, Annotation]
    report: RunReport
    rttm_text: str


def _score_rows(rec: str, staged: list[tuple[str, Annotation]],
                reference: Annotation | None, uem: Uem | None) -> list[StageScore]:
    if reference is None:
        return []
    rows = []
    for stage, ann in staged:
        rows.append(StageScore(rec, stage, der(reference, ann, uem=uem),
                               jer(reference, ann, uem=uem)))
    return rows


def run_pipeline(config: PipelineConfig, workers: int | None = None) -> PipelineResult:
    """Execute the configured stage list over every recording."""
    hyp_maps: list[dict[str, Annotation]] = []
    for path in config.hypotheses:
        hyp_maps.append({a.recording_id: a for a in parse_rttm(path.read_text())})
    if config.combine_params.weights is not None and "combine" in config.stages:
        if len(config.combine_params.weights) != len(config.hypotheses):
            raise WeightCountMismatchError(
                f"{len(config.combine_params.weights)} weights for "
                f"{len(config.hypotheses)} hypothesis files")
    references: dict[str, Annotation] = {}
    if config.reference is not None:
        references = {a.recording_id: a
                      for a in parse_rttm(config.reference.read_text())}
    uem = parse_uem(config.uem.read_text()) if config.uem else None

    vad_source = spk_source = None
    pp = config.postprocess_params
    if pp is not None:
        vad_source = FilePosteriorSource(pp.vad_posteriors, max_speakers=1)
        if pp.speaker_posteriors is not None:
            spk_source = FilePosteriorSource(pp.speaker_posteriors,
                                             max_speakers=64)

    recordings = sorted({rec for m in hyp_maps for rec in m})

    def process(rec: str):
        t0 = time.perf_counter()
        staged: list[tuple[str, Annotation]] = []
        hyps = [m[rec] for m in hyp_maps if rec in m]
        weights = config.combine_params.weights
        if "combine" in config.stages:
            if weights is not None and len(hyps) == len(weights):
                hset = HypothesisSet(tuple(hyps), weights)
            else:
                hset = HypothesisSet(tuple(hyps))
            current = combine(hset, config.combine_params.tie_rule,
                              config.combine_params.rank_exponent)
            staged.append(("combine", current))
        else:
            current = hyps[0]
            staged.append(("input", current))
        if pp is not None and "postprocess" in config.stages:
            vad_pm = vad_source.matrix(rec)
            spk_pm = spk_source.matrix(rec) if spk_source is not None else None
            for stage, ann in postprocess_annotation(current, vad_pm, spk_pm, pp):
                current = ann
                staged.append((stage, current))
        elapsed = time.perf_counter() - t0
        rows = _score_rows(rec, staged, references.get(rec), uem)
        return rec, current, rows, elapsed

    n_workers = resolve_workers(workers if workers is not None else config.workers)
    if n_workers == 1 or len(recordings) <= 1:
        results = [process(rec) for rec in recordings]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(process, recordings))

    outputs: dict[str, Annotation] = {}
    report = RunReport()
    for rec, ann, rows, elapsed in sorted(results, key=lambda r: r[0]):
        outputs[rec] = ann
        report.scores.extend(rows)
        report.timings[rec] = elapsed
    # reference recordings with no hypothesis at all: scored as all-missed
    for rec in sorted(set(references) - set(recordings)):
        empty = Annotation(rec)
        report.scores.extend(_score_rows(rec, [("missing", empty)],
                                         references[rec], uem))
    rttm_text = write_rttm(outputs.values())
    return PipelineResult(outputs, report, rttm_text)
