"""One-axis experiment sweeps with a deterministic aggregate.

A sweep clones the experiment once per value, runs the full pipeline for
each, and collects one (value, base, novel, harmonic) row per run. Value
validation happens up front; a run that fails mid-sweep is recorded and
skipped so the completed rows survive. Aggregation uses exact summation
and the population standard deviation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace

from . import metrics as M
from . import trainer as TR
from .errors import PromptFusionError, UsageError

AXES = ("prompt_length", "sigma", "lambda_d", "lambda_g", "adaptation_on_off")


def mean_std(values) -> tuple:
    """(mean, population std) via exact summation."""
    xs = [float(v) for v in values]
    if not xs:
        raise UsageError("cannot aggregate zero values")
    m = math.fsum(xs) / len(xs)
    var = math.fsum((x - m) ** 2 for x in xs) / len(xs)
    return m, math.sqrt(var)


def _apply(exp: TR.ExperimentConfig, axis: str, value) -> TR.ExperimentConfig:
    if axis == "prompt_length":
        if not isinstance(value, int) or isinstance(value, bool):
            raise UsageError(f"prompt_length takes integers, got {value!r}")
        return replace(exp, train=replace(exp.train, prompt_length=value))
    if axis == "sigma":
        return replace(exp, adapter=replace(exp.adapter, sigma=float(value)))
    if axis == "lambda_d":
        return replace(exp, train=replace(exp.train, lambda_d=float(value)))
    if axis == "lambda_g":
        return replace(exp, train=replace(exp.train, lambda_g=float(value)))
    if axis == "adaptation_on_off":
        if value == "on":
            return exp
        if value == "off":
            return replace(exp, train=replace(exp.train, epochs_stage2=0))
        raise UsageError(f"adaptation axis takes 'on' or 'off', got {value!r}")
    raise UsageError(f"unknown sweep axis {axis!r}; choose from {AXES}")


@dataclass
class SweepResult:
    axis: str
    values: list
    rows: list  # {"value", "base", "novel", "harmonic"} per completed run
    failures: list  # {"value", "type", "error"} per failed run
    aggregate: dict  # {col}_mean / {col}_std over completed rows, or empty
    base_fingerprint: str

    def to_json_dict(self) -> dict:
        return {"axis": self.axis, "values": list(self.values),
                "rows": [dict(r) for r in self.rows],
                "failures": [dict(f) for f in self.failures],
                "aggregate": dict(self.aggregate),
                "base_fingerprint": self.base_fingerprint}


def aggregate_rows(rows) -> dict:
    out = {}
    for col in ("base", "novel", "harmonic"):
        m, s = mean_std([r[col] for r in rows])
        out[f"{col}_mean"] = m
        out[f"{col}_std"] = s
    return out


def sweep(exp: TR.ExperimentConfig, axis: str, values=None, out_dir=None,
          sink=None) -> SweepResult:
    """Run the pipeline once per value and tabulate the accuracies.

    `adaptation_on_off` defaults to ("on", "off"): on keeps the configured
    stage-2 epochs, off forces them to zero. Every other axis needs at
    least two explicit values.
    """
    if axis not in AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    if axis == "adaptation_on_off":
        values = list(values) if values else ["on", "off"]
        if sorted(values) != ["off", "on"]:
            raise UsageError(
                f"adaptation_on_off sweeps exactly ['on', 'off'], got {values}"
            )
    else:
        values = list(values) if values else []
        if len(values) < 2:
            raise UsageError("a sweep needs at least two values")
    configs = [(v, _apply(exp, axis, v)) for v in values]  # fail fast

    rows, failures = [], []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for i, (value, one) in enumerate(configs):
        run_dir = None
        if out_dir is not None:
            run_dir = os.path.join(out_dir, f"run_{i:02d}_{value}")
        try:
            rep = TR.run_pipeline(one, out_dir=run_dir, sink=sink).report
        except PromptFusionError as err:
            failures.append({"value": value, "type": type(err).__name__,
                             "error": str(err)})
            continue
        rows.append({"value": value, "base": rep.base_accuracy,
                     "novel": rep.novel_accuracy, "harmonic": rep.harmonic})
    aggregate = aggregate_rows(rows) if rows else {}
    result = SweepResult(axis=axis, values=values, rows=rows,
                         failures=failures, aggregate=aggregate,
                         base_fingerprint=TR.config_fingerprint(exp))
    if out_dir is not None:
        emit_sweep(result, out_dir)
    return result


def emit_sweep(result: SweepResult, out_dir) -> dict:
    """sweep.json plus the same table formats a single run emits."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"sweep": os.path.join(out_dir, "sweep.json"),
             "tables": os.path.join(out_dir, "tables.csv"),
             "plotdata": os.path.join(out_dir, "plotdata.csv")}
    with open(paths["sweep"], "w") as fh:
        json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    agg = None
    if result.aggregate:
        agg = {"base_mean": result.aggregate["base_mean"],
               "novel_mean": result.aggregate["novel_mean"],
               "harmonic_mean": result.aggregate["harmonic_mean"],
               "harmonic_std": result.aggregate["harmonic_std"]}
    M.write_tables_csv(paths["tables"], result.axis, result.rows, agg)
    M.write_plotdata_csv(paths["plotdata"], result.rows)
    return paths
