"""Numeric state-action features: execution counts, child histograms, text embeddings.

All functions here are pure with respect to the graph and provider they are
handed, so they are safe for concurrent read-only use.
"""

from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .efg import EventRecord, ExplorationGraph

FEATURE_NAMES = ("fcr", "fcd", "txc")

_PUNCT = string.punctuation


def tokenize(text: str) -> list[str]:
    """Lowercase, strip leading/trailing punctuation, split on whitespace."""
    words = []
    for raw in text.lower().split():
        word = raw.strip(_PUNCT)
        if word:
            words.append(word)
    return words


@dataclass(frozen=True)
class FeatureConfig:
    """Shape parameters of the feature encoding.

    generations: how many child generations the frequency histograms cover.
    histogram_len: length of each generation histogram; counts clamp into
        the last bucket.
    embed_dim: word-embedding dimension (tests run at 16; 400 reproduces the
        full-scale setting).
    max_words: word positions in the text matrix; longer labels truncate.
    disabled: feature names whose bundles are zeroed (ablation hook).
    """

    generations: int = 3
    histogram_len: int = 10
    embed_dim: int = 400
    max_words: int = 6
    disabled: frozenset = frozenset()

    def __post_init__(self):
        if self.generations < 1 or self.embed_dim < 1 or self.max_words < 1:
            raise ValueError("generations, embed_dim and max_words must be positive")
        if self.histogram_len < 2:
            raise ValueError("histogram_len must be at least 2")
        bad = set(self.disabled) - set(FEATURE_NAMES)
        if bad:
            raise ValueError(f"unknown feature names disabled: {sorted(bad)}")


@dataclass
class FeatureBundle:
    """One state-action encoding: FCR scalar, FCD histograms, TXC matrix."""

    fcr: int
    fcd: np.ndarray  # (generations, histogram_len) int64
    txc: np.ndarray  # (embed_dim, max_words) float64


def _stable_word_seed(word: str) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")


class EmbeddingProvider:
    """Maps words to fixed-length vectors.

    Two sources: a lookup table loaded from a text file, or a deterministic
    hash fallback that seeds a counter-based PRNG per word and draws
    components uniform in [-1, 1]. Table misses fall back to the hash so
    unseen words stay distinguishable.
    """

    def __init__(self, dim: int, table: dict[str, np.ndarray] | None = None):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self.source = "table_file" if table is not None else "deterministic_hash"
        self._table = table or {}
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_table_file(cls, path: str | Path) -> "EmbeddingProvider":
        """Load `word v1 .. vL` lines; optional first line `#dim L`."""
        path = Path(path)
        dim = None
        table: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#dim"):
                    dim = int(line.split()[1])
                    continue
                parts = line.split()
                word, values = parts[0], parts[1:]
                if dim is None:
                    dim = len(values)
                if len(values) != dim:
                    raise ValueError(
                        f"{path}:{lineno}: expected {dim} components for {word!r}, got {len(values)}"
                    )
                table[word] = np.array([float(v) for v in values], dtype=np.float64)
        if dim is None:
            raise ValueError(f"{path}: empty embedding table")
        return cls(dim, table)

    def embed(self, word: str) -> np.ndarray:
        if not word:
            raise ValueError("cannot embed an empty word")
        vec = self._cache.get(word)
        if vec is None:
            vec = self._table.get(word)
            if vec is None:
                rng = np.random.Generator(np.random.Philox(key=_stable_word_seed(word)))
                vec = rng.uniform(-1.0, 1.0, self.dim)
            vec = np.asarray(vec, dtype=np.float64)
            vec.setflags(write=False)
            self._cache[word] = vec
        return vec


def fcr_feature(graph: ExplorationGraph, event: EventRecord) -> int:
    """Execution count of the event's merge class (unclamped)."""
    return graph.fcr_of(event)


def fcd_feature(graph: ExplorationGraph, event: EventRecord, cfg: FeatureConfig) -> np.ndarray:
    """Per-generation histograms of child execution counts.

    Entry [m][i] counts merge classes at distance m+1 executed exactly i
    times; counts of histogram_len-1 or more land in the last bucket.
    """
    out = np.zeros((cfg.generations, cfg.histogram_len), dtype=np.int64)
    for m in range(1, cfg.generations + 1):
        for class_id in graph.children_generation(event, m, k_limit=cfg.generations):
            bucket = min(graph.class_fcr(class_id), cfg.histogram_len - 1)
            out[m - 1][bucket] += 1
    return out


def txc_feature(provider: EmbeddingProvider, text: str, cfg: FeatureConfig) -> np.ndarray:
    """Embedding matrix of the first max_words tokens, zero-padded."""
    if provider.dim != cfg.embed_dim:
        raise ValueError(f"provider dim {provider.dim} != configured {cfg.embed_dim}")
    out = np.zeros((cfg.embed_dim, cfg.max_words), dtype=np.float64)
    for j, word in enumerate(tokenize(text)[: cfg.max_words]):
        out[:, j] = provider.embed(word)
    return out


def build_bundle(
    graph: ExplorationGraph,
    event: EventRecord,
    cfg: FeatureConfig,
    provider: EmbeddingProvider,
) -> FeatureBundle:
    """Assemble the full bundle for one event, honoring disabled features."""
    fcr = 0 if "fcr" in cfg.disabled else fcr_feature(graph, event)
    if "fcd" in cfg.disabled:
        fcd = np.zeros((cfg.generations, cfg.histogram_len), dtype=np.int64)
    else:
        fcd = fcd_feature(graph, event, cfg)
    if "txc" in cfg.disabled:
        txc = np.zeros((cfg.embed_dim, cfg.max_words), dtype=np.float64)
    else:
        txc = txc_feature(provider, event.text, cfg)
    return FeatureBundle(fcr=fcr, fcd=fcd, txc=txc)
