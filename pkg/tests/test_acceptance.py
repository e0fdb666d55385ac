"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The coverage-uplift, expected-action, and probe-ordering criteria share one
module-scoped experiment: a 20-app corpus, two-fold training by seed
parity, 2000 steps per episode, 3 repeats, all under one master seed.
"""

import csv
import hashlib
import random
import shutil
import time
from collections import defaultdict
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from qexplore.agent import AgentConfig, CrashLedger, reward, run_episode
from qexplore.efg import ExplorationGraph
from qexplore.features import EmbeddingProvider, FeatureConfig, fcd_feature
from qexplore.harness import (
    DEFAULT_PROBE_PATTERNS,
    RunSettings,
    cmd_baseline,
    cmd_gen,
    cmd_probe,
    cmd_stats,
    cmd_test,
    cmd_train,
)
from qexplore.nn import AdamState, Architecture, QNetwork
from qexplore.sim import GenParams, generate_app, load_fixture

from conftest import page, random_bundle, small_arch
from test_efg import assert_merge_invariants

ACCEPT_SEED = 0  # master seed of the acceptance experiment
BACKUP_SEED = 1  # documented single reseed allowed for the probe orderings
CORPUS_SIZE = 20
STEPS = 2000
REPEATS = 3


def check(number, label, ok, detail=""):
    print(f"[acceptance {number:02d}] {label}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
    assert ok, f"criterion {number} ({label}) failed: {detail}"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    settings = RunSettings(seed=ACCEPT_SEED, steps=STEPS, repeats=REPEATS)
    started = time.time()
    corpus = root / "corpus"
    cmd_gen(corpus, CORPUS_SIZE, ACCEPT_SEED)  # default GenParams
    models = {}
    for fold_index, (train_fold, test_fold) in enumerate((("even", "odd"), ("odd", "even"))):
        model = root / f"model_fold{fold_index}.ckpt"
        cmd_train(corpus, model, root / f"train_fold{fold_index}", settings, fold=train_fold)
        cmd_test(corpus, model, root / f"test_fold{fold_index}", settings, fold=test_fold)
        models[fold_index] = model
    cmd_baseline(corpus, root / "baseline", settings, fold="all")
    wall = time.time() - started
    return SimpleNamespace(root=root, corpus=corpus, models=models, settings=settings, wall=wall)


def per_app_final_coverage(csv_path):
    last = {}
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            last[(row["app"], row["repeat"])] = float(row["coverage"])
    by_app = defaultdict(list)
    for (app, _), coverage in last.items():
        by_app[app].append(coverage)
    return {app: float(np.mean(values)) for app, values in by_app.items()}


# ----------------------------------------------------------------------
# 1. gradient correctness


def _smooth_instance(arch, instance, rng, margin=1e-3):
    """Random (network, bundle) pair at which the network is locally smooth.

    Central differences are an oracle only where the function is
    differentiable, so instances with a ReLU pre-activation or a max-pool
    gap inside the margin are redrawn (seeded, deterministic).
    """
    for attempt in range(100):
        net = QNetwork.create(arch, seed=instance * 1000 + attempt)
        for name in net.params:
            if name.endswith("_b"):
                net.params[name] += rng.uniform(-0.5, 0.5, net.params[name].shape)
        bundle = random_bundle(arch, rng)
        cache = net._forward_cached([bundle])
        smallest = min(
            float(np.abs(cache[key]).min())
            for key in ("z1", "z2", "txc_pre", "fcr_pre", "fcd_pre")
        )
        for w in arch.filter_widths:
            conv = (
                np.einsum("bplw,flw->bfp", cache[f"windows{w}"], net.params[f"conv{w}_w"])
                + net.params[f"conv{w}_b"][None, :, None]
            )
            ranked = np.sort(conv[0], axis=1)
            smallest = min(smallest, float((ranked[:, -1] - ranked[:, -2]).min()))
        if smallest > margin:
            return net, bundle
    raise AssertionError(f"no smooth instance found for seed {instance}")


def test_01_gradient_correctness():
    arch = small_arch()
    h = 1e-5
    started = time.time()
    worst = 0.0
    rng = np.random.default_rng(20240001)
    for instance in range(50):
        net, bundle = _smooth_instance(arch, instance, rng)
        analytic = net.backward(bundle, 1.0)
        for name, value in net.params.items():
            it = np.nditer(value, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = value[idx]
                value[idx] = orig + h
                up = net.forward(bundle)
                value[idx] = orig - h
                down = net.forward(bundle)
                value[idx] = orig
                numeric = (up - down) / (2 * h)
                rel = abs(analytic[name][idx] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, rel)
    elapsed = time.time() - started
    check(
        1,
        "gradient correctness",
        worst <= 1e-6 and elapsed < 60.0,
        f"worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


# ----------------------------------------------------------------------
# 2. Bellman-target oracle equivalence on a hand-built 3-page app


def test_02_q_target_oracle_equivalence():
    env = load_fixture("motivating_example")
    assert len(env.pages) == 3
    fcfg = FeatureConfig(embed_dim=8)
    arch = Architecture.for_features(fcfg)
    net = QNetwork.create(arch, seed=2)
    adam = AdamState.for_network(net)
    result = run_episode(
        net, adam, env, AgentConfig(step_limit=50), fcfg, EmbeddingProvider(8), random.Random(2)
    )
    exact = True
    for trace, sample in zip(result.traces, result.memory):
        expected = trace.reward + 0.6 * (max(trace.next_q_values) if trace.next_q_values else 0.0)
        exact = exact and sample.target_q == expected
    check(2, "Bellman target equals independent oracle", exact and len(result.memory) == 50)


# ----------------------------------------------------------------------
# 3. FCD golden encoding


def test_03_fcd_golden_encoding():
    graph = ExplorationGraph()
    home = graph.update_graph(None, page("Home", ("go", "click")))
    go = home.events[0]
    children = page("Child", *[(f"w{i}", "click") for i in range(20)])
    snap = graph.update_graph(go, children)
    for index in range(8):
        graph.record_execution(snap.events[index])
        graph.record_execution(snap.events[index])
    encoded = fcd_feature(graph, go, FeatureConfig(embed_dim=8))
    check(
        3,
        "FCD golden case [12,0,8,0,...]",
        encoded[0].tolist() == [12, 0, 8, 0, 0, 0, 0, 0, 0, 0],
        str(encoded[0].tolist()),
    )


# ----------------------------------------------------------------------
# 4. reward table


def test_04_reward_table():
    cfg = AgentConfig()
    ledger = CrashLedger()
    outcomes = [
        reward(True, None, ledger, cfg),  # coverage up
        reward(True, "crash X", ledger, cfg),  # coverage up + new crash
        reward(False, "crash Y", ledger, cfg),  # new crash only
        reward(False, None, ledger, cfg),  # nothing
    ]
    duplicate = reward(False, "crash Y", ledger, cfg)
    check(
        4,
        "reward table {+5,+5,+5,-2} and duplicate-crash -2",
        outcomes == [5.0, 5.0, 5.0, -2.0] and duplicate == -2.0,
        f"{outcomes} dup={duplicate}",
    )


# ----------------------------------------------------------------------
# 5. coverage uplift over the random baseline


def test_05_coverage_uplift(pipeline):
    agent = {}
    agent.update(per_app_final_coverage(pipeline.root / "test_fold0" / "results.csv"))
    agent.update(per_app_final_coverage(pipeline.root / "test_fold1" / "results.csv"))
    baseline = per_app_final_coverage(pipeline.root / "baseline" / "results.csv")
    apps = sorted(agent)
    assert sorted(baseline) == apps and len(apps) == CORPUS_SIZE
    agent_mean = np.mean([agent[a] for a in apps])
    baseline_mean = np.mean([baseline[a] for a in apps])
    uplift = agent_mean / baseline_mean - 1.0
    wins = sum(1 for a in apps if agent[a] > baseline[a])
    ok = uplift >= 0.10 and wins / len(apps) >= 0.70 and pipeline.wall < 1200.0
    check(
        5,
        "coverage uplift >=10% relative, win rate >=70%",
        ok,
        f"agent {agent_mean:.4f} vs baseline {baseline_mean:.4f} "
        f"(+{uplift * 100:.1f}%), wins {wins}/{len(apps)}, pipeline {pipeline.wall:.0f}s",
    )


# ----------------------------------------------------------------------
# 6. expected-action rate


def test_06_expected_action_rate(pipeline):
    traces = sorted((pipeline.root / "test_fold0" / "traces").glob("*.jsonl"))
    traces += sorted((pipeline.root / "test_fold1" / "traces").glob("*.jsonl"))
    result = cmd_stats(traces, pipeline.root / "stats")
    ok = (
        result.mixed_pages > 0
        and result.agent_rate >= 0.70
        and result.difference >= 0.15
        and not result.malformed
    )
    check(
        6,
        "expected-action rate >=70% and >=15 points above random",
        ok,
        f"rate {result.agent_rate:.4f}, random {result.random_expectation:.4f}, "
        f"mixed pages {result.mixed_pages}",
    )


# ----------------------------------------------------------------------
# 7. probe orderings on the trained fold-1 model


def probe_orderings(model_path, out_dir):
    _, q = cmd_probe(model_path, out_dir)
    patterns = list(DEFAULT_PROBE_PATTERNS)
    zero_row = patterns.index("(0#0);(0#0);(0#0)")
    ones_row = patterns.index("(1#1);(1#1);(1#1)")
    first_gen_rich = patterns.index("(6#1);(1#1);(1#1)")
    first_gen_spent = patterns.index("(1#6);(1#1);(1#1)")
    fresh_dominates = q[zero_row, 0] > np.delete(q, 0, axis=1).max()
    ones = q[ones_row]
    nonincreasing_pairs = sum(1 for i in range(5) if ones[i] >= ones[i + 1])
    unexecuted_children_win = q[first_gen_rich, 1] > q[first_gen_spent, 1]
    ok = fresh_dominates and nonincreasing_pairs >= 5 and unexecuted_children_win
    detail = (
        f"fresh max {fresh_dominates}, nonincreasing {nonincreasing_pairs}/5, "
        f"(6#1)>(1#6)@1 {unexecuted_children_win}"
    )
    return ok, detail


def test_07_probe_orderings(pipeline, tmp_path):
    ok, detail = probe_orderings(pipeline.models[1], pipeline.root / "probe")
    used_seed = ACCEPT_SEED
    if not ok:
        # documented one-time reseed: retrain fold 1 under the backup seed
        used_seed = BACKUP_SEED
        settings = RunSettings(seed=BACKUP_SEED, steps=STEPS, repeats=REPEATS)
        corpus = tmp_path / "corpus_backup"
        cmd_gen(corpus, CORPUS_SIZE, BACKUP_SEED)
        model = tmp_path / "model_fold1.ckpt"
        cmd_train(corpus, model, tmp_path / "train_fold1", settings, fold="odd")
        ok, detail = probe_orderings(model, tmp_path / "probe")
    check(7, "probe orderings (fresh-event max, FCR monotone, child freshness)", ok,
          f"{detail} [seed {used_seed}]")


# ----------------------------------------------------------------------
# 8. full-pipeline determinism


def _mini_pipeline(root: Path):
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)
    settings = RunSettings(seed=7, steps=250, repeats=1)
    corpus = root / "corpus"
    cmd_gen(corpus, 4, 7, GenParams(page_count=12, depth=4))
    model = root / "model.ckpt"
    cmd_train(corpus, model, root / "train", settings, fold="even")
    cmd_test(corpus, model, root / "test", settings, fold="odd")
    cmd_baseline(corpus, root / "baseline", settings, fold="odd")
    cmd_probe(model, root / "probe")
    cmd_stats(sorted((root / "test" / "traces").glob("*.jsonl")), root / "stats")


def _tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_08_pipeline_determinism(tmp_path):
    first = tmp_path / "run_a"
    second = tmp_path / "run_b"
    _mini_pipeline(first)
    _mini_pipeline(second)
    ha, hb = _tree_hash(first), _tree_hash(second)
    check(8, "gen->train->test->probe byte-identical across runs", ha == hb, ha[:16])


# ----------------------------------------------------------------------
# 9. epsilon-greedy statistics


def test_09_epsilon_greedy_statistics():
    env = generate_app(GenParams(seed=123))
    fcfg = FeatureConfig(embed_dim=16)
    arch = Architecture.for_features(fcfg)
    net = QNetwork.create(arch, seed=9)
    adam = AdamState.for_network(net)
    cfg = AgentConfig(step_limit=2000)
    result = run_episode(net, adam, env, cfg, fcfg, EmbeddingProvider(16), random.Random(99))
    randoms = sum(1 for t in result.traces if t.iteration >= cfg.warmup and t.was_random)
    n = cfg.step_limit - cfg.warmup
    mu = n * cfg.epsilon
    sigma = (n * cfg.epsilon * (1.0 - cfg.epsilon)) ** 0.5
    ok = mu - 4 * sigma <= randoms <= mu + 4 * sigma
    check(
        9,
        "post-warm-up random actions within 4 sigma of Binomial(1980, 0.2)",
        ok,
        f"{randoms} in [{mu - 4 * sigma:.1f}, {mu + 4 * sigma:.1f}]",
    )


# ----------------------------------------------------------------------
# 10. merge-class invariant fuzz


def test_10_merge_class_fuzz():
    graph = ExplorationGraph()
    rng = random.Random(77)
    activities = ("A", "B", "C")
    labels = ("", "ok", "save", "next", "open", "cancel", "list item", "menu entry")
    kinds = ("click", "edit", "scroll", "long_click")
    vertices = []
    for op in range(10000):
        if not vertices or rng.random() < 0.3:
            raw = page(
                rng.choice(activities),
                *[(rng.choice(labels), rng.choice(kinds)) for _ in range(rng.randint(1, 6))],
            )
            executed = rng.choice(vertices) if vertices and rng.random() < 0.7 else None
            snap = graph.update_graph(executed, raw)
            vertices.extend(snap.events)
        else:
            graph.record_execution(rng.choice(vertices))
        if op % 200 == 0:
            assert_merge_invariants(graph)
    assert_merge_invariants(graph)
    check(10, "10,000 random graph ops keep merge-class counts equal", True,
          f"{graph.vertex_count} vertices, {graph.page_count} pages")
