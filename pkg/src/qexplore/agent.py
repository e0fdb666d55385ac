"""DQN agent: action selection, rewards, Q targets, replay, episode loop.

One agent drives one environment, strictly sequentially within an episode.
The exploration graph, replay memory, and crash ledger are created fresh
per episode; only the network weights persist across apps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .efg import ExplorationGraph, PageSnapshot
from .features import EmbeddingProvider, FeatureBundle, FeatureConfig, build_bundle
from .nn import AdamState, QNetwork, TrainingSample, train_batch
from .sim import SimApp, random_input


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.6
    epsilon: float = 0.2
    warmup: int = 20
    reward_pos: float = 5.0
    reward_neg: float = -2.0
    history_batch: int = 4
    system_event_period: int = 10
    step_limit: int = 2000

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0,1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon must be in [0,1]")
        if min(self.warmup, self.history_batch, self.system_event_period) < 0 or self.step_limit < 0:
            raise ValueError("counts must be non-negative")


class CrashLedger:
    """Crash messages seen so far; uniqueness is exact string match."""

    def __init__(self):
        self._seen: set[str] = set()

    def is_new(self, message: str) -> bool:
        return message not in self._seen

    def record(self, message: str) -> None:
        self._seen.add(message)

    def __contains__(self, message: str) -> bool:
        return message in self._seen

    def __len__(self) -> int:
        return len(self._seen)


def q_target(r: float, next_qs, gamma: float) -> float:
    """Bellman target r + gamma * max(next_qs); an empty next state maxes to 0."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must be in [0,1]")
    best = max(next_qs) if len(next_qs) else 0.0
    return float(r + gamma * best)


def select_action(q_values, iteration: int, cfg: AgentConfig, rng: random.Random) -> tuple[int, bool]:
    """Pick a candidate index; returns (index, was_random).

    Warm-up iterations pick uniformly and never touch q_values; afterwards
    epsilon-greedy applies, with argmax ties broken toward the lowest index.
    """
    n = len(q_values)
    if n == 0:
        raise ValueError("empty candidate list")
    if iteration < cfg.warmup:
        return rng.randrange(n), True
    if rng.random() < cfg.epsilon:
        return rng.randrange(n), True
    best = 0
    for i in range(1, n):
        if q_values[i] > q_values[best]:
            best = i
    return best, False


def reward(coverage_increased: bool, crash_message: str | None, ledger: CrashLedger, cfg: AgentConfig) -> float:
    """Positive when coverage grew or a never-seen crash appeared; negative otherwise.

    A present crash message is recorded in the ledger either way.
    """
    novel = crash_message is not None and ledger.is_new(crash_message)
    if crash_message is not None:
        ledger.record(crash_message)
    return cfg.reward_pos if (coverage_increased or novel) else cfg.reward_neg


def sample_batch(
    memory: list[TrainingSample], current: TrainingSample, n: int, rng: random.Random
) -> list[TrainingSample]:
    """Current sample plus up to n distinct history samples, uniform without replacement."""
    if n < 0:
        raise ValueError("history size must be non-negative")
    k = min(n, len(memory))
    history = rng.sample(memory, k) if k else []
    return history + [current]


@dataclass(frozen=True)
class IterationTrace:
    iteration: int
    page_id: int
    event_id: int
    chosen_index: int
    was_random: bool
    reward: float
    coverage: float
    crash: str | None
    q_values: tuple[float, ...]
    candidate_fcrs: tuple[int, ...]
    next_q_values: tuple[float, ...]
    target: float | None
    loss: float | None
    system_event: str | None
    system_crash: str | None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "page_id": self.page_id,
            "event_id": self.event_id,
            "chosen_index": self.chosen_index,
            "was_random": self.was_random,
            "reward": self.reward,
            "coverage": self.coverage,
            "crash": self.crash,
            "q_values": list(self.q_values),
            "candidate_fcrs": list(self.candidate_fcrs),
            "next_q_values": list(self.next_q_values),
            "target": self.target,
            "loss": self.loss,
            "system_event": self.system_event,
            "system_crash": self.system_crash,
        }


@dataclass
class EpisodeResult:
    coverage_curve: list[float]
    crashes: list[tuple[int, str]]  # (iteration, message), unique messages only
    traces: list[IterationTrace]
    memory: list[TrainingSample]

    @property
    def final_coverage(self) -> float:
        return self.coverage_curve[-1] if self.coverage_curve else 0.0

    @property
    def unique_crashes(self) -> int:
        return len(self.crashes)


class Episode:
    """Mutable state of one exploration run over one app."""

    def __init__(
        self,
        net: QNetwork | None,
        adam: AdamState | None,
        env: SimApp,
        cfg: AgentConfig,
        feature_cfg: FeatureConfig,
        provider: EmbeddingProvider | None,
        rng: random.Random,
        policy: str = "dqn",
    ):
        if policy not in ("dqn", "random"):
            raise ValueError(f"unknown policy {policy!r}")
        if policy == "dqn" and (net is None or adam is None or provider is None):
            raise ValueError("dqn policy needs a network, adam state, and embedding provider")
        self.net = net
        self.adam = adam
        self.env = env
        self.cfg = cfg
        self.feature_cfg = feature_cfg
        self.provider = provider
        self.rng = rng
        self.policy = policy
        self.graph = ExplorationGraph()
        self.memory: list[TrainingSample] = []
        self.ledger = CrashLedger()
        self.crash_log: list[tuple[int, str]] = []
        self.snapshot: PageSnapshot | None = None
        self.bundles: list[FeatureBundle] | None = None

    def launch(self) -> None:
        raw = self.env.launch()
        self.snapshot = self.graph.update_graph(None, raw)
        self._refresh_bundles()

    def _refresh_bundles(self) -> None:
        if self.policy == "dqn":
            self.bundles = [
                build_bundle(self.graph, e, self.feature_cfg, self.provider)
                for e in self.snapshot.events
            ]

    def _note_crash(self, t: int, message: str | None) -> None:
        if message is not None and self.ledger.is_new(message):
            self.crash_log.append((t, message))

    def run_iteration(self, t: int) -> IterationTrace:
        if self.snapshot is None:
            raise ValueError("episode not launched")

        system_kind = system_crash = None
        if t % self.cfg.system_event_period == 0:
            system_kind, sys_out = self.env.system_event(self.rng)
            system_crash = sys_out.crash_message
            self._note_crash(t, system_crash)
            if system_crash is not None:
                self.ledger.record(system_crash)
                # the crash relaunched the app; re-observe like a fresh launch
                self.snapshot = self.graph.update_graph(None, sys_out.page)
                self._refresh_bundles()

        candidates = self.snapshot.events
        candidate_fcrs = tuple(self.graph.fcr_of(e) for e in candidates)
        if self.policy == "dqn":
            q_values = tuple(float(q) for q in self.net.forward_many(self.bundles))
            index, was_random = select_action(q_values, t, self.cfg, self.rng)
        else:
            q_values = ()
            index, was_random = self.rng.randrange(len(candidates)), True
        event = candidates[index]

        text_input = random_input(self.rng) if event.kind == "edit" else None
        outcome = self.env.execute(index, text_input)
        self._note_crash(t, outcome.crash_message)
        r = reward(outcome.coverage_increased, outcome.crash_message, self.ledger, self.cfg)

        previous_page = self.snapshot.page_id
        self.snapshot = self.graph.update_graph(event, outcome.page)
        self.graph.record_execution(event)

        target = loss = None
        next_q_values: tuple[float, ...] = ()
        if self.policy == "dqn":
            chosen_bundle = self.bundles[index]
            self._refresh_bundles()
            next_q_values = tuple(float(q) for q in self.net.forward_many(self.bundles))
            target = q_target(r, next_q_values, self.cfg.gamma)
            current = TrainingSample(chosen_bundle, target)
            batch = sample_batch(self.memory, current, self.cfg.history_batch, self.rng)
            loss = train_batch(self.net, self.adam, batch)
            self.memory.append(current)

        return IterationTrace(
            iteration=t,
            page_id=previous_page,
            event_id=event.event_id,
            chosen_index=index,
            was_random=was_random,
            reward=r,
            coverage=self.env.coverage,
            crash=outcome.crash_message,
            q_values=q_values,
            candidate_fcrs=candidate_fcrs,
            next_q_values=next_q_values,
            target=target,
            loss=loss,
            system_event=system_kind,
            system_crash=system_crash,
        )


def run_episode(
    net: QNetwork | None,
    adam: AdamState | None,
    env: SimApp,
    cfg: AgentConfig,
    feature_cfg: FeatureConfig,
    provider: EmbeddingProvider | None,
    rng: random.Random,
    policy: str = "dqn",
) -> EpisodeResult:
    """Fresh graph/memory/ledger, launch, then cfg.step_limit iterations.

    The network keeps training while testing; the caller decides whether to
    persist the updated weights.
    """
    episode = Episode(net, adam, env, cfg, feature_cfg, provider, rng, policy)
    episode.launch()
    curve: list[float] = []
    traces: list[IterationTrace] = []
    for t in range(cfg.step_limit):
        trace = episode.run_iteration(t)
        curve.append(trace.coverage)
        traces.append(trace)
    return EpisodeResult(curve, episode.crash_log, traces, episode.memory)
