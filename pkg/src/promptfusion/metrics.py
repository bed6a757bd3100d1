"""Split evaluation, harmonic-mean arithmetic, and report files.

Accuracies travel as percentages in reports (matching how results tables
are usually printed) and as fractions inside `evaluate`, which also
returns a per-image dump so any reported number can be recounted from
raw predictions.

`report.json` holds full-precision values and is bitwise reproducible for
a fixed config and seed; wall-clock time and other run-local facts go to
`run_meta.json` next to it. `tables.csv` rounds to two decimals for
reading, `plotdata.csv` keeps six significant digits for plotting.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoders as E
from . import head as H
from .errors import NumericError, UsageError


def harmonic_mean(base: float, novel: float) -> float:
    """2ab/(a+b) for two accuracies in (0, 100]; equal inputs pass through
    untouched so idempotence holds exactly in floating point."""
    if base <= 0 or novel <= 0:
        raise NumericError(f"harmonic mean needs positive inputs, got {base}, {novel}")
    if base > 100 or novel > 100:
        raise NumericError(f"accuracies are percentages <= 100, got {base}, {novel}")
    if base == novel:
        return float(base)
    return 2.0 * base * novel / (base + novel)


@dataclass(frozen=True)
class SplitResult:
    accuracy: float  # fraction in [0, 1]
    per_class: dict  # class name -> fraction
    dump: tuple  # per image: {"index", "label", "class", "pred", "pred_class", "correct"}


def class_features(weights, cfg, class_names, prompts=None):
    """Joint-space text feature matrix (C, d_joint) for the given names."""
    cps = E.build_class_prompts(class_names, weights.vocab, cfg)
    feats = [E.encode_text(weights, cfg, q, prompts=prompts) for q in cps.queries]
    return H.stack_features(feats)


def evaluate(weights, cfg, prompts, adapter, dataset, split: str) -> SplitResult:
    """Top-1 accuracy over a split, restricting the label set to that
    split's classes."""
    examples = dataset.split(split)
    if not examples:
        raise UsageError(f"split {split!r} is empty")
    if split == "base":
        names = [dataset.class_names[i] for i in dataset.base_ids]
    elif split == "novel":
        names = [dataset.class_names[i] for i in dataset.novel_ids]
    else:
        names = list(dataset.class_names)
    z = class_features(weights, cfg, names, prompts=prompts)
    local = {name: i for i, name in enumerate(names)}
    hits = {name: [0, 0] for name in names}
    dump = []
    for idx, ex in enumerate(examples):
        f = E.encode_image(weights, cfg, ex.image, prompts=prompts, adapter=adapter)
        pred = H.predict(H.similarity(z, f), cfg.tau)
        k = int(np.argmax(pred.probs))
        want = local[ex.class_name]
        correct = k == want
        hits[ex.class_name][0] += int(correct)
        hits[ex.class_name][1] += 1
        dump.append({"index": idx, "label": want, "class": ex.class_name,
                     "pred": k, "pred_class": names[k], "correct": bool(correct)})
    per_class = {name: c / n for name, (c, n) in hits.items() if n}
    total = sum(c for c, _ in hits.values())
    count = sum(n for _, n in hits.values())
    return SplitResult(accuracy=total / count, per_class=per_class, dump=tuple(dump))


@dataclass
class EvalReport:
    base_accuracy: float  # percent
    novel_accuracy: float  # percent
    harmonic: float  # percent
    zero_shot_base: float  # percent
    zero_shot_novel: float  # percent
    per_class: dict  # class name -> percent
    config_fingerprint: str
    dataset_fingerprint: str
    prompt_checksums: dict  # side -> {"init": hex, "final": hex, "untouched": bool}
    backbone_checksum: dict  # {"before": hex, "after": hex}
    mode: str
    sweep: dict = field(default_factory=dict)  # axis, rows, aggregate
    runtime_seconds: float = 0.0  # excluded from report.json, see run_meta.json

    def __post_init__(self):
        want = harmonic_mean(self.base_accuracy, self.novel_accuracy)
        if abs(self.harmonic - want) > 1e-9:
            raise NumericError(
                f"harmonic mean field {self.harmonic} disagrees with accuracies ({want})"
            )

    def to_json_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("runtime_seconds")
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EvalReport":
        return cls(runtime_seconds=0.0, **doc)


def _sig6(x) -> str:
    return f"{float(x):.6g}"


def write_tables_csv(path, axis: str, rows, aggregate=None) -> None:
    """Accuracy table with two-decimal percentages; one row per sweep value
    plus mean and std rows when an aggregate is given."""
    with open(path, "w") as fh:
        fh.write(f"{axis},base,novel,harmonic\n")
        for row in rows:
            fh.write(f"{row['value']},{row['base']:.2f},{row['novel']:.2f},"
                     f"{row['harmonic']:.2f}\n")
        if aggregate:
            fh.write(f"mean,{aggregate['base_mean']:.2f},"
                     f"{aggregate['novel_mean']:.2f},"
                     f"{aggregate['harmonic_mean']:.2f}\n")
            fh.write(f"std,,,{aggregate['harmonic_std']:.2f}\n")


def write_plotdata_csv(path, rows) -> None:
    """x versus harmonic mean, six significant digits."""
    with open(path, "w") as fh:
        fh.write("x,harmonic\n")
        for row in rows:
            fh.write(f"{row['value']},{_sig6(row['harmonic'])}\n")


def emit_report(report: EvalReport, out_dir, meta=None) -> dict:
    """Write report.json / tables.csv / plotdata.csv / run_meta.json;
    returns {name: path}. Everything run-specific but not reproducible
    (wall clock, plus whatever `meta` carries) goes to run_meta.json so
    report.json stays bitwise stable for a fixed config."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["report"] = os.path.join(out_dir, "report.json")
    with open(paths["report"], "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    meta_doc = {"runtime_seconds": report.runtime_seconds}
    meta_doc.update(meta or {})
    paths["meta"] = os.path.join(out_dir, "run_meta.json")
    with open(paths["meta"], "w") as fh:
        json.dump(meta_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    rows = report.sweep.get("rows") or [{
        "value": "-",
        "base": report.base_accuracy,
        "novel": report.novel_accuracy,
        "harmonic": report.harmonic,
    }]
    axis = report.sweep.get("axis", "single_run")
    paths["tables"] = os.path.join(out_dir, "tables.csv")
    write_tables_csv(paths["tables"], axis, rows, report.sweep.get("aggregate"))
    paths["plotdata"] = os.path.join(out_dir, "plotdata.csv")
    write_plotdata_csv(paths["plotdata"], rows)
    return paths
