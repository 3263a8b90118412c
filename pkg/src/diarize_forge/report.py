"""Run reports: per-recording, per-stage scoring tables plus rendered
figures. The delimited output (report.tsv) and the PNG figures land side
by side in the report directory."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .metrics import DerBreakdown


@dataclass(frozen=True)
class StageScore:
    recording_id: str
    stage: str
    breakdown: DerBreakdown
    jer: float


@dataclass
class RunReport:
    """Scores per (recording, stage) and wall-clock time per recording."""

    scores: list[StageScore] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def stages(self) -> list[str]:
        seen: list[str] = []
        for s in self.scores:
            if s.stage not in seen:
                seen.append(s.stage)
        return seen

    def recordings(self) -> list[str]:
        return sorted({s.recording_id for s in self.scores} | set(self.timings))

    def aggregate(self, stage: str) -> StageScore:
        """Pool error seconds over recordings; JER averages per file."""
        rows = [s for s in self.scores if s.stage == stage]
        missed = sum(s.breakdown.missed for s in rows)
        fa = sum(s.breakdown.false_alarm for s in rows)
        conf = sum(s.breakdown.confusion for s in rows)
        total = sum(s.breakdown.total_ref_speech for s in rows)
        der = (missed + fa + conf) / total if total > 0 else math.nan
        jers = [s.jer for s in rows if not math.isnan(s.jer)]
        jer = sum(jers) / len(jers) if jers else math.nan
        return StageScore("ALL", stage, DerBreakdown(missed, fa, conf, total, der), jer)

    @property
    def total_seconds(self) -> float:
        return sum(self.timings.values())


_COLUMNS = ("recording", "stage", "missed_s", "false_alarm_s", "confusion_s",
            "total_ref_s", "der_pct", "jer_pct", "wall_s")


def _row(score: StageScore, wall: float | None) -> str:
    b = score.breakdown
    der_pct = f"{100 * b.der:.2f}" if b.defined else "undef"
    jer_pct = f"{100 * score.jer:.2f}" if not math.isnan(score.jer) else "undef"
    wall_s = f"{wall:.3f}" if wall is not None else ""
    return "\t".join((score.recording_id, score.stage, f"{b.missed:.3f}",
                      f"{b.false_alarm:.3f}", f"{b.confusion:.3f}",
                      f"{b.total_ref_speech:.3f}", der_pct, jer_pct, wall_s))


def report_tsv(report: RunReport) -> str:
    lines = ["\t".join(_COLUMNS)]
    for score in report.scores:
        lines.append(_row(score, report.timings.get(score.recording_id)))
    for stage in report.stages():
        lines.append(_row(report.aggregate(stage), report.total_seconds))
    return "".join(line + "\n" for line in lines)


def format_table(report: RunReport, stage: str | None = None) -> str:
    """Human-readable table for one stage (default: the last one)."""
    stages = report.stages()
    if not stages:
        return "no scored recordings\n"
    stage = stage or stages[-1]
    rows = [s for s in report.scores if s.stage == stage]
    rows.append(report.aggregate(stage))
    header = f"{'recording':<20} {'MI(s)':>9} {'FA(s)':>9} {'CF(s)':>9} {'total(s)':>10} {'DER%':>7} {'JER%':>7}"
    out = [header, "-" * len(header)]
    for s in rows:
        b = s.breakdown
        der_pct = f"{100 * b.der:.2f}" if b.defined else "undef"
        jer_pct = f"{100 * s.jer:.2f}" if not math.isnan(s.jer) else "undef"
        out.append(f"{s.recording_id:<20} {b.missed:>9.2f} {b.false_alarm:>9.2f} "
                   f"{b.confusion:>9.2f} {b.total_ref_speech:>10.2f} "
                   f"{der_pct:>7} {jer_pct:>7}")
    return "".join(line + "\n" for line in out)


def render_figures(report: RunReport, out_dir: Path) -> list[Path]:
    """Write the MI/FA/CF breakdown bars and, with several stages, the
    per-stage DER trend as PNG files next to report.tsv."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []
    stages = report.stages()
    if not stages:
        return written
    final = stages[-1]
    rows = [s for s in report.scores if s.stage == final]
    if rows:
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(rows) + 2), 3.5))
        names = [s.recording_id for s in rows]
        mi = [s.breakdown.missed for s in rows]
        fa = [s.breakdown.false_alarm for s in rows]
        cf = [s.breakdown.confusion for s in rows]
        ax.bar(names, mi, label="missed")
        ax.bar(names, fa, bottom=mi, label="false alarm")
        ax.bar(names, cf, bottom=[a + b for a, b in zip(mi, fa)], label="confusion")
        ax.set_ylabel("error (s)")
        ax.set_title(f"error breakdown ({final})")
        ax.legend(fontsize=8)
        plt.xticks(rotation=30, ha="right", fontsize=8)
        fig.tight_layout()
        path = out_dir / "error_breakdown.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    if len(stages) > 1:
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        for rec in report.recordings():
            ys, xs = [], []
            for stage in stages:
                match = [s for s in report.scores
                         if s.stage == stage and s.recording_id == rec]
                if match and match[0].breakdown.defined:
                    xs.append(stage)
                    ys.append(100 * match[0].breakdown.der)
            if xs:
                ax.plot(xs, ys, marker="o", label=rec)
        agg = [100 * report.aggregate(s).breakdown.der for s in stages]
        ax.plot(stages, agg, marker="s", linewidth=2, color="black", label="ALL")
        ax.set_ylabel("DER (%)")
        ax.set_title("DER by stage")
        ax.legend(fontsize=7)
        plt.xticks(rotation=20, ha="right", fontsize=8)
        fig.tight_layout()
        path = out_dir / "stage_trend.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def write_report(report: RunReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tsv = out / "report.tsv"
    tsv.write_text(report_tsv(report))
    return [tsv] + render_figures(report, out)
