"""
Output files: per-step cell dumps, run reports, comparison reports and study tables.
All files are UTF-8 with LF line endings; write errors propagate to the caller.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Sequence

from analysis import StepComparison, StudyResult
from grid import GridSet, write_csv
from scheme import EmitFn, RunReport

log = logging.getLogger(__name__)

STUDY_COLUMNS = (
    "h",
    "rho",
    "T",
    "time_full_s",
    "time_boundary_s",
    "numerical_error",
    "cells_touched_full",
    "cells_touched_boundary",
)


def json_safe(data):
    """Non-finite floats become the strings "inf", "-inf" and "nan"; strict JSON has no literal for them."""
    if isinstance(data, float) and not math.isfinite(data):
        return "nan" if math.isnan(data) else ("inf" if data > 0 else "-inf")
    if isinstance(data, dict):
        return {k: json_safe(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [json_safe(v) for v in data]
    return data


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json_safe(data), indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n", encoding="utf-8")
    return path


def dump_path(out_dir: str | Path, scenario: str, variant: str, step: int, kind: str) -> Path:
    return Path(out_dir) / f"{scenario}_{variant}_step{step:04d}_{kind}.csv"


def make_emitter(out_dir: str | Path, scenario: str) -> EmitFn:
    """Per-step callback for scheme.run writing boundary, outer and (full scheme) full dumps."""

    def emit(variant: str, step: int, boundary: GridSet, outer: GridSet, full: GridSet | None) -> None:
        write_csv(dump_path(out_dir, scenario, variant, step, "boundary"), boundary, "boundary")
        write_csv(dump_path(out_dir, scenario, variant, step, "outer"), outer, "outer")
        if full is not None:
            write_csv(dump_path(out_dir, scenario, variant, step, "full"), full, "full")

    return emit


def write_run_report(report: RunReport, path: str | Path) -> Path:
    out = write_json(path, report.to_dict())
    log.info("Wrote run report %s (%d steps)", out, len(report.steps))
    return out


def write_comparison(comparisons: Sequence[StepComparison], path: str | Path, out_dir: str | Path | None = None, prefix: str = "") -> Path:
    """Equality report; symmetric differences of mismatching steps are dumped next to it."""
    steps = []
    for c in comparisons:
        entry = c.to_dict()
        if out_dir is not None and not c.equal:
            for kind, diff in (("boundary", c.boundary_diff), ("outer", c.outer_diff)):
                if len(diff):
                    diff_path = Path(out_dir) / f"{prefix}mismatch_step{c.index:04d}_{kind}.csv"
                    write_csv(diff_path, diff, kind)
                    entry[f"{kind}_diff_file"] = diff_path.name
        steps.append(entry)
    data = {"all_equal": all(c.equal for c in comparisons), "steps": steps}
    return write_json(path, data)


def _seconds(ms: float | None) -> float | None:
    return None if ms is None else ms / 1000.0


def study_rows(study: StudyResult) -> list[dict]:
    return [
        {
            "h": r.h,
            "rho": r.rho,
            "T": r.T,
            "time_full_s": _seconds(r.wall_ms_full),
            "time_boundary_s": _seconds(r.wall_ms_boundary),
            "numerical_error": r.hausdorff_error,
            "cells_touched_full": r.cells_touched_full,
            "cells_touched_boundary": r.cells_touched_boundary,
        }
        for r in study.records
    ]


def write_study_csv(study: StudyResult, path: str | Path) -> Path:
    """One row per h; fitted slopes as trailing '#' lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=STUDY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in study_rows(study):
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
        for key in ("order_h", "cost_rate_full", "cost_rate_boundary"):
            value = getattr(study, key)
            f.write(f"# {key}={'' if value is None else repr(value)}\n")
    return path


def write_study_json(study: StudyResult, path: str | Path) -> Path:
    data = study.to_dict()
    data["rows"] = study_rows(study)
    return write_json(path, data)
