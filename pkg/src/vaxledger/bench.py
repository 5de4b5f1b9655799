"""Scenario execution, metrics aggregation, and CSV/table reporting.

`run_scenario` sweeps a scenario's TPS levels, each on a fresh simulated
world; results are deterministic per (config, seed). Response time is measured
client-side, request to acknowledgment. The per-role busy fractions are a
utilization proxy, not a reproduction of host CPU/memory percentages.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .engine import LevelMetrics, run_level
from .ledger import chain_snapshot_lines
from .netsim import TraceWriter
from .scenario import ScenarioConfig

__all__ = ["MetricsReport", "run_scenario", "export_csv", "render_csv_table", "CSV_HEADER"]

CSV_HEADER = "step,tps,response_time_ms,peer_bandwidth_kb,ordering_bandwidth_kb,errors,saturated"


@dataclass(frozen=True)
class MetricsReport:
    step: str
    levels: tuple  # of LevelMetrics

    def level(self, tps) -> LevelMetrics:
        for metrics in self.levels:
            if metrics.tps == float(tps):
                return metrics
        raise KeyError(f"no metrics for tps level {tps}")


def run_scenario(
    config: ScenarioConfig,
    *,
    trace_path=None,
    snapshot_path=None,
) -> MetricsReport:
    """Run every TPS level of the scenario and aggregate a MetricsReport.

    `trace_path` dumps the newline-delimited event trace of all levels;
    `snapshot_path` exports the final level's ledger for audit/determinism
    comparisons.
    """
    levels = []
    last_run = None
    trace_fh = open(trace_path, "w", encoding="utf-8") if trace_path else None
    try:
        tracer = TraceWriter(trace_fh) if trace_fh else None
        for level in config.tps_levels:
            metrics, run = run_level(config, level, tracer)
            levels.append(metrics)
            last_run = run
    finally:
        if trace_fh:
            trace_fh.close()
    if snapshot_path and last_run is not None:
        with open(snapshot_path, "w", encoding="utf-8") as fh:
            for line in chain_snapshot_lines(last_run.chain):
                fh.write(line)
                fh.write("\n")
    return MetricsReport(step=config.step, levels=tuple(levels))


def _format_tps(tps: float) -> str:
    return f"{tps:g}"


def report_to_csv_text(report: MetricsReport) -> str:
    if not report.levels:
        raise ValueError("cannot export an empty report")
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for m in report.levels:
        out.write(
            f"{report.step},{_format_tps(m.tps)},{m.mean_response_ms:.1f},"
            f"{m.peer_bandwidth_kb:.1f},{m.ordering_bandwidth_kb:.1f},"
            f"{m.error_count},{'true' if m.saturated else 'false'}\n"
        )
    return out.getvalue()


def export_csv(report: MetricsReport, path) -> None:
    """Write one row per TPS level; fixed 1-decimal precision, diff-stable."""
    text = report_to_csv_text(report)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IOError(f"cannot write report to {path}: {exc}") from exc


def render_csv_table(csv_text: str) -> str:
    """Render exported CSV as an aligned text table."""
    rows = [line.split(",") for line in csv_text.strip().splitlines() if line]
    if not rows:
        raise ValueError("empty CSV")
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)))
        if index == 0:
            lines.append("  ".join("-" * widths[i] for i in range(len(widths))))
    return "\n".join(lines) + "\n"
