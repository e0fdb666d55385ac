"""DQN-guided GUI exploration over deterministic simulated apps."""

from .agent import (
    AgentConfig,
    CrashLedger,
    Episode,
    EpisodeResult,
    IterationTrace,
    q_target,
    reward,
    run_episode,
    sample_batch,
    select_action,
)
from .efg import EventRecord, ExplorationGraph, PageSnapshot, RawPage
from .features import (
    EmbeddingProvider,
    FeatureBundle,
    FeatureConfig,
    build_bundle,
    fcd_feature,
    fcr_feature,
    tokenize,
    txc_feature,
)
from .nn import (
    AdamState,
    Architecture,
    ModelFormatError,
    QNetwork,
    TrainingSample,
    adam_step,
    load_model,
    save_model,
    train_batch,
)
from .sim import GenParams, SimApp, StepOutcome, generate_app, load_fixture, random_input

__version__ = "0.1.0"
