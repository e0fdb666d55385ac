"""Experiment orchestration: corpus generation, training, testing, probes, stats.

Every command is deterministic under one master seed; per-episode RNG
streams are derived from (seed, command, app, repeat) so app order and
repeat count never leak randomness across runs.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import report
from .agent import AgentConfig, run_episode
from .features import EmbeddingProvider, FeatureConfig, txc_feature, FeatureBundle
from .nn import Architecture, AdamState, QNetwork, load_model, save_model
from .sim import GenParams, SimApp, generate_app

MANIFEST_NAME = "manifest.json"

DEFAULT_PROBE_PATTERNS = (
    "(6#1);(1#1);(1#1)",
    "(1#6);(1#1);(1#1)",
    "(1#1);(6#1);(1#1)",
    "(1#1);(1#6);(1#1)",
    "(1#1);(1#1);(6#1)",
    "(1#1);(1#1);(1#6)",
    "(1#1);(1#1);(1#1)",
    "(0#0);(0#0);(0#0)",
)


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from labelled parts; platform-independent."""
    data = "/".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RunSettings:
    """Knobs shared by train/test/baseline runs."""

    seed: int = 0
    steps: int = 2000
    repeats: int = 3
    epsilon: float = 0.2
    gamma: float = 0.6
    embed_dim: int = 16
    embedding_file: str | None = None
    disabled: tuple[str, ...] = ()

    def provider(self) -> EmbeddingProvider:
        if self.embedding_file:
            return EmbeddingProvider.from_table_file(self.embedding_file)
        return EmbeddingProvider(self.embed_dim)

    def feature_config(self, provider: EmbeddingProvider) -> FeatureConfig:
        return FeatureConfig(embed_dim=provider.dim, disabled=frozenset(self.disabled))

    def agent_config(self) -> AgentConfig:
        return AgentConfig(gamma=self.gamma, epsilon=self.epsilon, step_limit=self.steps)


# ----------------------------------------------------------------------
# corpus


def cmd_gen(out_dir: str | Path, count: int, master_seed: int, base: GenParams = GenParams()) -> Path:
    """Write `count` seeded app specs plus a checksummed manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    apps = []
    for i in range(count):
        app_seed = master_seed * 1000 + i
        app = generate_app(replace(base, seed=app_seed))
        name = f"app_{i:03d}.json"
        path = out / name
        path.write_text(app.to_json(), encoding="utf-8")
        apps.append(
            {
                "file": name,
                "seed": app_seed,
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            }
        )
    params = {
        "page_count": base.page_count,
        "events_min": base.events_min,
        "events_max": base.events_max,
        "depth": base.depth,
        "crash_count": base.crash_count,
        "functional_vocab_weight": base.functional_vocab_weight,
    }
    manifest = {
        "qxp_corpus": 1,
        "master_seed": master_seed,
        "count": count,
        "params": params,
        "apps": apps,
    }
    manifest_path = out / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def corpus_apps(corpus_dir: str | Path, fold: str = "all") -> list[tuple[str, int, Path]]:
    """(name, seed, path) triples from a corpus manifest, optionally one fold.

    Folds split by app-seed parity: "even" and "odd".
    """
    corpus = Path(corpus_dir)
    manifest_path = corpus / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"{corpus}: no {MANIFEST_NAME}; run the gen command first")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    triples = []
    for entry in manifest["apps"]:
        seed = entry["seed"]
        if fold == "even" and seed % 2 != 0:
            continue
        if fold == "odd" and seed % 2 != 1:
            continue
        triples.append((Path(entry["file"]).stem, seed, corpus / entry["file"]))
    if fold not in ("all", "even", "odd"):
        raise ValueError(f"unknown fold {fold!r}")
    return triples


# ----------------------------------------------------------------------
# train / test / baseline


def _cumulative_crashes(crashes, n_steps: int) -> list[int]:
    counts = [0] * n_steps
    for t, _ in crashes:
        if t < n_steps:
            counts[t] += 1
    total = 0
    out = []
    for c in counts:
        total += c
        out.append(total)
    return out


def cmd_train(
    corpus_dir: str | Path,
    model_path: str | Path,
    out_dir: str | Path,
    settings: RunSettings,
    fold: str = "all",
) -> Path:
    """Train sequentially over the corpus; the model persists across apps.

    Resumes from an existing checkpoint at model_path, otherwise builds a
    fresh network. Writes per-app coverage curves (CSV + figure) and the
    final checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    provider = settings.provider()
    feature_cfg = settings.feature_config(provider)
    agent_cfg = settings.agent_config()
    arch = Architecture.for_features(feature_cfg)

    model_path = Path(model_path)
    if model_path.exists():
        net, adam = load_model(model_path, expect=arch)
    else:
        net = QNetwork.create(arch, derive_seed(settings.seed, "init"))
        adam = AdamState.for_network(net)

    apps = corpus_apps(corpus_dir, fold)
    if not apps:
        raise ValueError(f"corpus {corpus_dir} has no apps in fold {fold!r}")

    rows = []
    curves = {}
    for name, _, path in apps:
        env = SimApp.load(path)
        rng = random.Random(derive_seed(settings.seed, "train", name))
        result = run_episode(net, adam, env, agent_cfg, feature_cfg, provider, rng)
        crash_counts = _cumulative_crashes(result.crashes, settings.steps)
        for i, coverage in enumerate(result.coverage_curve):
            rows.append([name, i, f"{coverage:.6f}", crash_counts[i]])
        curves[name] = result.coverage_curve

    report.write_csv(out / "train_curves.csv", report.CURVE_HEADER, rows)
    report.save_coverage_figure(curves, out / "train_coverage.png", "training coverage")
    save_model(net, adam, model_path)
    return model_path


def _run_corpus(
    corpus_dir,
    out_dir,
    settings: RunSettings,
    fold: str,
    *,
    policy: str,
    model_path=None,
    carry_model: bool = False,
    label: str,
):
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    provider = settings.provider()
    feature_cfg = settings.feature_config(provider)
    agent_cfg = settings.agent_config()
    arch = Architecture.for_features(feature_cfg)

    carried = None
    if policy == "dqn":
        carried = load_model(model_path, expect=arch)  # validates up front

    rows = []
    curves: dict[str, np.ndarray] = {}
    failures = []
    for name, _, path in corpus_apps(corpus_dir, fold):
        try:
            per_repeat = []
            for rep in range(settings.repeats):
                if policy == "dqn":
                    net, adam = carried if carry_model else load_model(model_path)
                else:
                    net = adam = None
                env = SimApp.load(path)
                rng = random.Random(derive_seed(settings.seed, label, name, rep))
                result = run_episode(net, adam, env, agent_cfg, feature_cfg, provider, rng, policy)
                crash_counts = _cumulative_crashes(result.crashes, settings.steps)
                for i, coverage in enumerate(result.coverage_curve):
                    rows.append([name, rep, i, f"{coverage:.6f}", crash_counts[i]])
                per_repeat.append(result.coverage_curve)
                trace_path = out / "traces" / f"{name}_r{rep}.jsonl"
                with open(trace_path, "w", encoding="utf-8") as fh:
                    for trace in result.traces:
                        fh.write(json.dumps(trace.to_dict(), sort_keys=True) + "\n")
            if per_repeat and per_repeat[0]:
                curves[name] = np.mean(np.array(per_repeat), axis=0)
        except Exception as exc:  # keep going; report the app-level failure
            failures.append((name, f"{type(exc).__name__}: {exc}"))

    csv_path = report.write_csv(out / "results.csv", report.RESULT_HEADER, rows)
    report.save_coverage_figure(
        {k: list(v) for k, v in curves.items()}, out / f"{label}_coverage.png",
        f"{label} coverage (mean over {settings.repeats} repeats)",
    )
    return csv_path, failures


def cmd_test(
    corpus_dir: str | Path,
    model_path: str | Path,
    out_dir: str | Path,
    settings: RunSettings,
    fold: str = "all",
    carry_model: bool = False,
):
    """Per app x repeat, run the loaded model (fresh copy each episode unless
    carry_model); never mutates the on-disk checkpoint."""
    return _run_corpus(
        corpus_dir,
        out_dir,
        settings,
        fold,
        policy="dqn",
        model_path=model_path,
        carry_model=carry_model,
        label="test",
    )


def cmd_baseline(corpus_dir: str | Path, out_dir: str | Path, settings: RunSettings, fold: str = "all"):
    """Uniform-random policy over the same loop; same CSV schema, no checkpoint."""
    return _run_corpus(corpus_dir, out_dir, settings, fold, policy="random", label="baseline")


# ----------------------------------------------------------------------
# probe


def parse_fcd_pattern(pattern: str, generations: int, histogram_len: int) -> np.ndarray:
    """Parse "(A#B);(C#D);..." into per-generation histograms [A, B, 0, ...]."""
    pairs = re.findall(r"\((\d+)\s*#\s*(\d+)\)", pattern)
    if len(pairs) != generations:
        raise ValueError(f"pattern {pattern!r} must have {generations} (A#B) groups")
    out = np.zeros((generations, histogram_len), dtype=np.int64)
    for m, (a, b) in enumerate(pairs):
        out[m][0] = int(a)
        out[m][1] = int(b)
    return out


def cmd_probe(
    model_path: str | Path,
    out_dir: str | Path,
    patterns=DEFAULT_PROBE_PATTERNS,
    fcr_values=tuple(range(6)),
    text: str = "",
    embedding_file: str | None = None,
):
    """Q values on a synthetic feature grid; returns (table text, q ndarray).

    Rows are FCD patterns, columns FCR counts, text held fixed. Writes CSV,
    a rendered table, and a heatmap figure.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, _ = load_model(model_path)
    arch = net.arch
    cfg = FeatureConfig(
        generations=arch.generations,
        histogram_len=arch.histogram_len,
        embed_dim=arch.embed_dim,
        max_words=arch.max_words,
    )
    provider = (
        EmbeddingProvider.from_table_file(embedding_file)
        if embedding_file
        else EmbeddingProvider(arch.embed_dim)
    )
    txc = txc_feature(provider, text, cfg)

    q_table = np.zeros((len(patterns), len(fcr_values)))
    rows = []
    for i, pattern in enumerate(patterns):
        fcd = parse_fcd_pattern(pattern, arch.generations, arch.histogram_len)
        bundles = [FeatureBundle(fcr=f, fcd=fcd, txc=txc) for f in fcr_values]
        q_table[i] = net.forward_many(bundles)
        for j, f in enumerate(fcr_values):
            rows.append([pattern, f, repr(float(q_table[i, j]))])

    report.write_csv(out / "probe.csv", report.PROBE_HEADER, rows)
    report.save_probe_figure(list(patterns), list(fcr_values), q_table, out / "probe.png")

    width = max(len(p) for p in patterns) + 2
    lines = ["FCD \\ FCR".ljust(width) + "".join(f"{f:>9}" for f in fcr_values)]
    for i, pattern in enumerate(patterns):
        lines.append(pattern.ljust(width) + "".join(f"{q_table[i, j]:>9.2f}" for j in range(len(fcr_values))))
    table = "\n".join(lines) + "\n"
    (out / "probe.txt").write_text(table, encoding="utf-8")
    return table, q_table


# ----------------------------------------------------------------------
# stats


@dataclass
class StatsResult:
    mixed_pages: int
    agent_rate: float
    random_expectation: float
    malformed: list[tuple[str, int, str]]

    @property
    def difference(self) -> float:
        return self.agent_rate - self.random_expectation


def cmd_stats(trace_paths, out_dir: str | Path) -> StatsResult:
    """Expected-action report over trace logs.

    A page counts as mixed when it offers both executed and unexecuted
    events; the agent "acts as expected" when it picks an unexecuted one.
    The analytic random expectation is the mean unexecuted ratio over the
    same pages.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mixed = 0
    expected_hits = 0
    expectation_sum = 0.0
    malformed: list[tuple[str, int, str]] = []
    for path in trace_paths:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    fcrs = record["candidate_fcrs"]
                    chosen = record["chosen_index"]
                    unexecuted = sum(1 for f in fcrs if f == 0)
                    if not (0 <= chosen < len(fcrs)):
                        raise ValueError("chosen_index out of range")
                except (ValueError, KeyError, TypeError) as exc:
                    malformed.append((str(path), lineno, f"{type(exc).__name__}: {exc}"))
                    continue
                if 0 < unexecuted < len(fcrs):
                    mixed += 1
                    expectation_sum += unexecuted / len(fcrs)
                    if fcrs[chosen] == 0:
                        expected_hits += 1

    agent_rate = expected_hits / mixed if mixed else 0.0
    random_expectation = expectation_sum / mixed if mixed else 0.0
    result = StatsResult(mixed, agent_rate, random_expectation, malformed)
    report.write_csv(
        out / "stats.csv",
        report.STATS_HEADER,
        [[mixed, f"{agent_rate:.6f}", f"{random_expectation:.6f}", f"{result.difference:.6f}"]],
    )
    report.save_stats_figure(agent_rate, random_expectation, out / "stats.png")
    return result
