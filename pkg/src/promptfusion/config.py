"""Experiment assembly from one JSON document.

The document has five optional sections (model, adapter, data, train,
warm). Validation happens in two passes that are reported together:
the shipped JSON Schema pins structure, field names, types, and enum
values, then each section's constructor enforces ranges and cross-field
rules. A failing load raises one ConfigError listing every problem.

Dotted-path overrides ("train.lambda_d" = "0.8") patch the document
before validation, so an override is checked exactly like a file value.
"""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema

from . import encoders as E
from .data import DatasetSpec
from .errors import ConfigError
from .fusion import AdapterConfig
from .trainer import ExperimentConfig, TrainConfig, WarmConfig

SECTIONS = ("model", "adapter", "data", "train", "warm")

PRESETS = {"desk": E.desk_preset, "full": E.full_preset}


def load_schema() -> dict:
    text = (resources.files("promptfusion") / "schema" / "experiment.json"
            ).read_text()
    return json.loads(text)


def _schema_errors(doc) -> list:
    """[(top-level section or '<root>', message), ...] sorted by path."""
    validator = jsonschema.Draft202012Validator(load_schema())
    pairs = []
    for err in sorted(validator.iter_errors(doc),
                      key=lambda e: [str(p) for p in e.absolute_path]):
        path = [str(p) for p in err.absolute_path]
        where = ".".join(path) if path else "<root>"
        pairs.append((path[0] if path else "<root>",
                      f"{where}: {err.message}"))
    return pairs


def _build_model(section: dict) -> E.ModelConfig:
    section = dict(section)
    preset = section.pop("preset", "desk")
    return PRESETS[preset](**section)


_BUILDERS = {
    "model": _build_model,
    "adapter": lambda s: AdapterConfig(**s),
    "data": DatasetSpec.from_json_dict,
    "train": lambda s: TrainConfig(**s),
    "warm": lambda s: WarmConfig(**s),
}


def build_experiment(doc: dict) -> ExperimentConfig:
    """Validate `doc` and construct the full experiment config.

    Sections that failed the schema pass are not constructed, so each
    problem is reported once, at the layer that saw it first.
    """
    pairs = _schema_errors(doc)
    problems = [msg for _, msg in pairs]
    skip = {head for head, _ in pairs}
    parts = {}
    if isinstance(doc, dict) and "<root>" not in skip:
        for name, build in _BUILDERS.items():
            if name in skip:
                continue
            try:
                parts[name] = build(dict(doc.get(name, {})))
            except ConfigError as err:
                problems.extend(f"{name}: {p}" for p in err.problems)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**parts)


def coerce(text: str):
    """JSON literal if it parses, raw string otherwise ('0.8' -> 0.8,
    'true' -> True, 'desk' -> 'desk')."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, pairs) -> dict:
    """New document with each ('section.field', text) pair patched in."""
    out = copy.deepcopy(doc)
    problems = []
    for path, text in pairs:
        head, _, tail = path.partition(".")
        if head not in SECTIONS or not tail or "." in tail:
            problems.append(
                f"override path must be <section>.<field> with a section in"
                f" {SECTIONS}, got {path!r}")
            continue
        out.setdefault(head, {})[tail] = coerce(text)
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a JSON document (or start from {}), apply overrides, build."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
    doc = apply_overrides(doc, overrides)
    return build_experiment(doc)
