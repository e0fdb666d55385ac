"""qexplore command line: gen | train | test | baseline | probe | stats."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .harness import (
    DEFAULT_PROBE_PATTERNS,
    RunSettings,
    cmd_baseline,
    cmd_gen,
    cmd_probe,
    cmd_stats,
    cmd_test,
    cmd_train,
)
from .sim import GenParams


def _settings(seed, steps, repeats, epsilon, gamma, embedding, embed_dim, disable_feature):
    return RunSettings(
        seed=seed,
        steps=steps,
        repeats=repeats,
        epsilon=epsilon,
        gamma=gamma,
        embed_dim=embed_dim,
        embedding_file=embedding,
        disabled=tuple(disable_feature),
    )


def _run_options(f):
    for option in reversed(
        [
            click.option("--seed", default=0, show_default=True, help="Master seed."),
            click.option("--steps", default=2000, show_default=True, help="Iterations per episode."),
            click.option("--epsilon", default=0.2, show_default=True),
            click.option("--gamma", default=0.6, show_default=True),
            click.option("--embedding", type=click.Path(exists=True), default=None,
                         help="Word-embedding table file (defaults to hash embeddings)."),
            click.option("--embed-dim", default=16, show_default=True,
                         help="Hash-embedding dimension (ignored with --embedding)."),
            click.option("--disable-feature", multiple=True,
                         type=click.Choice(["fcr", "fcd", "txc"]), help="Zero out a feature (ablation)."),
            click.option("--fold", default="all", show_default=True,
                         type=click.Choice(["all", "even", "odd"]), help="Corpus half by seed parity."),
        ]
    ):
        f = option(f)
    return f


@click.group()
def main():
    """Coverage-guided GUI exploration with a learned event-priority model."""


@main.command("gen")
@click.option("--out", required=True, type=click.Path(), help="Corpus output directory.")
@click.option("--count", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--pages", default=GenParams.page_count, show_default=True)
@click.option("--events-min", default=GenParams.events_min, show_default=True)
@click.option("--events-max", default=GenParams.events_max, show_default=True)
@click.option("--depth", default=GenParams.depth, show_default=True)
@click.option("--crashes", default=GenParams.crash_count, show_default=True)
@click.option("--vocab-weight", default=GenParams.functional_vocab_weight, show_default=True)
def gen_command(out, count, seed, pages, events_min, events_max, depth, crashes, vocab_weight):
    """Generate a corpus of synthetic apps plus a checksummed manifest."""
    try:
        base = GenParams(
            page_count=pages,
            events_min=events_min,
            events_max=events_max,
            depth=depth,
            crash_count=crashes,
            functional_vocab_weight=vocab_weight,
        )
        manifest = cmd_gen(out, count, seed, base)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"wrote {count} apps and {manifest}")


@main.command("train")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--model", required=True, type=click.Path(), help="Checkpoint to create or resume.")
@click.option("--out", required=True, type=click.Path())
@_run_options
def train_command(corpus, model, out, fold, disable_feature, embed_dim, embedding, gamma, epsilon, steps, seed):
    """Train across the corpus; model persists from app to app."""
    try:
        settings = _settings(seed, steps, 1, epsilon, gamma, embedding, embed_dim, disable_feature)
        path = cmd_train(corpus, model, out, settings, fold)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"checkpoint written to {path}")


def _echo_failures(failures):
    for name, message in failures:
        click.echo(f"app {name} failed: {message}", err=True)


@main.command("test")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--repeats", default=3, show_default=True)
@click.option("--carry-model", is_flag=True,
              help="Keep updating one in-memory model across test apps instead of reloading.")
@_run_options
def test_command(corpus, model, out, repeats, carry_model, fold, disable_feature, embed_dim,
                 embedding, gamma, epsilon, steps, seed):
    """Explore test apps starting from a trained checkpoint."""
    try:
        settings = _settings(seed, steps, repeats, epsilon, gamma, embedding, embed_dim, disable_feature)
        csv_path, failures = cmd_test(corpus, model, out, settings, fold, carry_model)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_failures(failures)
    click.echo(f"report written to {csv_path}")


@main.command("baseline")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--repeats", default=3, show_default=True)
@_run_options
def baseline_command(corpus, out, repeats, fold, disable_feature, embed_dim, embedding,
                     gamma, epsilon, steps, seed):
    """Uniform-random exploration over the same loop (no model, no training)."""
    try:
        settings = _settings(seed, steps, repeats, epsilon, gamma, embedding, embed_dim, disable_feature)
        csv_path, failures = cmd_baseline(corpus, out, settings, fold)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_failures(failures)
    click.echo(f"report written to {csv_path}")


@main.command("probe")
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--text", default="", show_default=True, help="Fixed label text for the grid.")
@click.option("--fcr-max", default=5, show_default=True)
@click.option("--pattern", multiple=True, help="FCD pattern like '(6#1);(1#1);(1#1)' (repeatable).")
@click.option("--embedding", type=click.Path(exists=True), default=None)
def probe_command(model, out, text, fcr_max, pattern, embedding):
    """Q values over a synthetic feature grid (rows: FCD patterns, cols: FCR)."""
    try:
        table, _ = cmd_probe(
            model,
            out,
            patterns=tuple(pattern) or DEFAULT_PROBE_PATTERNS,
            fcr_values=tuple(range(fcr_max + 1)),
            text=text,
            embedding_file=embedding,
        )
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(table, nl=False)


@main.command("stats")
@click.option("--traces", required=True, type=click.Path(exists=True),
              help="Trace directory (or a single .jsonl file).")
@click.option("--out", required=True, type=click.Path())
def stats_command(traces, out):
    """Expected-action rates from trace logs."""
    traces = Path(traces)
    files = sorted(traces.glob("*.jsonl")) if traces.is_dir() else [traces]
    if not files:
        raise click.ClickException(f"no trace files under {traces}")
    try:
        result = cmd_stats(files, out)
    except Exception as exc:
        raise click.ClickException(str(exc)) from exc
    for path, lineno, message in result.malformed:
        click.echo(f"malformed trace line {path}:{lineno}: {message}", err=True)
    click.echo(
        f"mixed pages: {result.mixed_pages}\n"
        f"agent expected-action rate: {result.agent_rate:.4f}\n"
        f"random expectation: {result.random_expectation:.4f}\n"
        f"difference: {result.difference:+.4f}"
    )
    if result.malformed:
        sys.exit(1)


if __name__ == "__main__":
    main()
