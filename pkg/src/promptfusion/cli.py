"""Command line entry points.

Exit codes: 0 success, 1 configuration or usage problems, 2 runtime
failures, 3 training divergence. `run` and `sweep` accept dotted
overrides after the named options, e.g. `--train.lambda_d 0.8` or
`--model.tau=0.05`; values parse as JSON literals with plain-string
fallback, exactly like file values.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys

import click
import numpy as np

from . import __version__
from . import config as C
from . import head as H
from . import metrics as M
from . import sweep as SW
from . import tensor as T
from . import trainer as TR
from .data import DatasetSpec, generate_dataset, materialize
from .errors import (ConfigError, DivergenceError, NumericError,
                     PromptFusionError, UsageError)
from .fusion import AdapterConfig, adapt

_EXIT = {"ConfigError": 1, "UsageError": 1, "DivergenceError": 3}


def _exit_code(err: BaseException) -> int:
    if isinstance(err, (ConfigError, UsageError)):
        return 1
    if isinstance(err, DivergenceError):
        return 3
    return 2


def guarded(fn):
    """Map package errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.exceptions.Exit, click.ClickException, SystemExit):
            raise
        except Exception as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(_exit_code(err))

    return wrapper


def parse_override_tokens(tokens) -> list:
    """('--train.lambda_d', '0.8') and '--model.tau=0.05' forms into
    (path, text) pairs."""
    pairs = []
    toks = list(tokens)
    i = 0
    while i < len(toks):
        tok = toks[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(
                f"expected a --section.field override, got {tok!r}")
        body = tok[2:]
        if "=" in body:
            path, _, text = body.partition("=")
            pairs.append((path, text))
            i += 1
            continue
        if i + 1 >= len(toks):
            raise ConfigError(f"override {tok!r} is missing a value")
        pairs.append((body, toks[i + 1]))
        i += 2
    return pairs


def _echo_scores(rep: M.EvalReport) -> None:
    click.echo(f"base accuracy    {rep.base_accuracy:6.2f}")
    click.echo(f"novel accuracy   {rep.novel_accuracy:6.2f}")
    click.echo(f"harmonic mean    {rep.harmonic:6.2f}")
    click.echo(f"zero-shot base   {rep.zero_shot_base:6.2f}")
    click.echo(f"zero-shot novel  {rep.zero_shot_novel:6.2f}")


@click.group()
@click.version_option(__version__)
def main():
    """Token-wise prompt tuning over a frozen dual encoder."""


@main.command(context_settings={"ignore_unknown_options": True})
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON experiment document; defaults to built-in values.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for logs, checkpoints, and the report.")
@click.option("--repeats", default=1, type=int, show_default=True,
              help="Average scores over N runs with stepped training seeds.")
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
@guarded
def run(config_path, out_dir, repeats, overrides):
    """Train both stages and evaluate base and novel splits."""
    exp = C.load_config(config_path,
                        overrides=parse_override_tokens(overrides))
    if repeats < 1:
        raise UsageError(f"repeats must be >= 1, got {repeats}")
    if repeats == 1:
        result = TR.run_pipeline(exp, out_dir=out_dir)
        _echo_scores(result.report)
    else:
        reports = []
        for i in range(repeats):
            part = dataclasses.replace(
                exp, train=dataclasses.replace(exp.train,
                                               seed=exp.train.seed + i))
            sub = os.path.join(out_dir, f"repeat_{i:02d}") if out_dir else None
            rep = TR.run_pipeline(part, out_dir=sub).report
            click.echo(f"repeat {i}: base {rep.base_accuracy:.2f}"
                       f" novel {rep.novel_accuracy:.2f}"
                       f" harmonic {rep.harmonic:.2f}")
            reports.append(rep)
        for name, vals in (
                ("base accuracy", [r.base_accuracy for r in reports]),
                ("novel accuracy", [r.novel_accuracy for r in reports]),
                ("harmonic mean", [r.harmonic for r in reports])):
            mean, std = SW.mean_std(vals)
            click.echo(f"{name:<16} {mean:6.2f} +- {std:.2f}"
                       f" over {repeats} runs")
    if out_dir:
        click.echo(f"artifacts under {out_dir}")


@main.command(context_settings={"ignore_unknown_options": True})
@click.option("--axis", required=True,
              help=f"One of {', '.join(SW.AXES)}.")
@click.option("--values", "values_text", default=None,
              help="Comma-separated values; JSON literals are coerced.")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.argument("overrides", nargs=-1, type=click.UNPROCESSED)
@guarded
def sweep(axis, values_text, config_path, out_dir, overrides):
    """Run the pipeline once per value of one axis and tabulate."""
    exp = C.load_config(config_path,
                        overrides=parse_override_tokens(overrides))
    values = None
    if values_text is not None:
        values = [C.coerce(v.strip()) for v in values_text.split(",")]
    result = SW.sweep(exp, axis, values, out_dir=out_dir)
    for row in result.rows:
        click.echo(f"{axis}={row['value']}: base {row['base']:.2f}"
                   f" novel {row['novel']:.2f}"
                   f" harmonic {row['harmonic']:.2f}")
    for failure in result.failures:
        click.echo(f"{axis}={failure['value']}: failed"
                   f" ({failure['type']}: {failure['error']})", err=True)
    if result.aggregate:
        click.echo(f"harmonic {result.aggregate['harmonic_mean']:.2f}"
                   f" +- {result.aggregate['harmonic_std']:.2f}"
                   f" over {len(result.rows)} runs")
    if out_dir:
        click.echo(f"artifacts under {out_dir}")
    if result.failures:
        codes = {_EXIT.get(f["type"], 2) for f in result.failures}
        sys.exit(3 if 3 in codes else max(codes))


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--shots", default=16, type=int, show_default=True,
              help="Training images per base class.")
@click.option("--eval-per-class", default=64, type=int, show_default=True)
@guarded
def gen_data(out_dir, seed, shots, eval_per_class):
    """Render the synthetic dataset to disk with a manifest."""
    spec = DatasetSpec(seed=seed, shots=shots, eval_per_class=eval_per_class)
    manifest = materialize(generate_dataset(spec), out_dir)
    n = sum(len(v) for v in manifest["splits"].values())
    click.echo(f"wrote {n} images across {len(manifest['splits'])}"
               f" splits under {out_dir}")
    click.echo(f"fingerprint {manifest['fingerprint']}")


@main.command()
@click.option("--run", "run_dir", required=True, type=click.Path(),
              help="Directory a previous `run --out` wrote.")
@click.option("--emit", is_flag=True,
              help="Rewrite the table and plot files from report.json.")
@guarded
def report(run_dir, emit):
    """Summarize a finished run and recheck its derived numbers."""
    path = os.path.join(run_dir, "report.json")
    if not os.path.isfile(path):
        raise UsageError(f"no report.json under {run_dir}")
    with open(path) as fh:
        rep = M.EvalReport.from_json_dict(json.load(fh))
    _echo_scores(rep)
    click.echo(f"mode             {rep.mode}")
    click.echo(f"config           {rep.config_fingerprint[:16]}")
    click.echo(f"dataset          {rep.dataset_fingerprint[:16]}")
    for side, info in sorted(rep.prompt_checksums.items()):
        touched = "untouched" if info.get("untouched") else "tuned"
        click.echo(f"{side + ' prompts':<17}{touched}")
    if emit:
        paths = M.emit_report(rep, run_dir)
        click.echo(f"rewrote {paths['tables']} and {paths['plotdata']}")


@main.command("grad-check")
@click.option("--eps", default=1e-3, type=float, show_default=True)
@click.option("--threshold", default=1e-3, type=float, show_default=True)
@click.option("--prompt-length", default=2, type=int, show_default=True)
@guarded
def grad_check(eps, threshold, prompt_length):
    """Audit backward gradients of both stage-1 phase losses against
    float64 central differences."""
    worst = 0.0
    for phase in ("language", "vision"):
        err = TR.stage1_grad_audit(phase=phase, eps=eps, m=prompt_length)
        click.echo(f"{phase:<9} max relative error {err:.3e}")
        worst = max(worst, err)
    if worst > threshold:
        raise NumericError(
            f"gradient audit failed: {worst:.3e} > {threshold}")
    click.echo(f"gradient audit passed ({worst:.3e} <= {threshold})")


@main.command()
@guarded
def selftest():
    """Quick numeric smoke checks; seconds, not minutes."""
    checks = []

    img = np.random.default_rng(0).random((16, 16, 3)).astype(np.float32)
    same = adapt(img, AdapterConfig(alpha=1.0))
    checks.append(("fusion identity at alpha=1",
                   float(np.abs(same - img).max()) < 1e-6))

    pred = H.predict(H.Logits(T.Tensor(np.float32([0.1, 0.4, 0.2]))), 0.5)
    self_kl = float(H.kl_loss(pred, pred).data)
    checks.append(("self distillation is zero", self_kl == 0.0))

    checks.append(("harmonic mean oracle",
                   abs(M.harmonic_mean(80.0, 60.0) - 68.5714) < 5e-4))

    err = TR.stage1_grad_audit(phase="language")
    checks.append(("language grad audit", err < 1e-3))

    failed = [name for name, ok in checks if not ok]
    for name, ok in checks:
        click.echo(f"{'ok  ' if ok else 'FAIL'} {name}")
    if failed:
        raise NumericError(f"selftest failures: {', '.join(failed)}")
    click.echo("selftest passed")


if __name__ == "__main__":
    main()
