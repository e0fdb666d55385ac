import random

import numpy as np
import pytest

from qexplore.efg import ExplorationGraph, RawPage
from qexplore.features import FeatureBundle
from qexplore.nn import Architecture


def page(activity, *events):
    """Shorthand RawPage: events as (text, kind) pairs."""
    return RawPage(activity, tuple(events))


def small_arch(**overrides):
    base = dict(
        embed_dim=5,
        max_words=4,
        generations=2,
        histogram_len=4,
        filters_per_width=2,
        filter_widths=(2, 3),
        fcr_hidden=3,
        fcd_hidden=4,
        trunk_hidden=(6, 4),
    )
    base.update(overrides)
    return Architecture(**base)


def random_bundle(arch, rng):
    return FeatureBundle(
        fcr=int(rng.integers(0, 7)),
        fcd=rng.integers(0, 5, (arch.generations, arch.histogram_len)),
        txc=rng.normal(size=(arch.embed_dim, arch.max_words)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pyrng():
    return random.Random(1234)


@pytest.fixture
def graph():
    return ExplorationGraph()
