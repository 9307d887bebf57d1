"""Shared fixtures: the default 50-model zoo, its full setting-grid
evaluation, and the exhaustively enumerable toy space. Session-scoped
because several modules (and the acceptance suite) reuse them."""

import pytest

from econas.genotype import (
    NetworkConfig,
    OutputRule,
    SEARCH8,
    ZOO13,
    random_genotype,
)
from econas.proxy import CIFAR10_TABLE, ReducedSetting, format_label
from econas.records import EvaluationRecord
from econas.seeding import derive_rng
from econas.surrogate import SurrogateEvaluator, SurrogateParams, enumerate_space

DEFAULT_SEED = 7
GT_SETTING = ReducedSetting(0, 0, 0, 600)
GT_LABEL = format_label(GT_SETTING)


def make_zoo(count=50, seed=DEFAULT_SEED):
    network = NetworkConfig.for_zoo()
    zoo = []
    seen = set()
    for i in range(count):
        attempt = 0
        while True:
            g = random_genotype(
                derive_rng(seed, "zoo", i, attempt), network, ZOO13,
                OutputRule.ALL_INTERMEDIATE,
            )
            if g.content_hash not in seen:
                break
            attempt += 1
        seen.add(g.content_hash)
        zoo.append(g)
    return zoo


@pytest.fixture(scope="session")
def zoo_genotypes():
    return make_zoo()


@pytest.fixture(scope="session")
def cifar_surrogate():
    return SurrogateEvaluator(SurrogateParams(), CIFAR10_TABLE)


def full_grid_settings():
    """The 200 reduced settings (5 c x 5 r x 2 s x 4 e) plus Ground Truth."""
    settings = [
        ReducedSetting(a, b, c, e)
        for a in range(5)
        for b in range(5)
        for c in range(2)
        for e in (30, 60, 90, 120)
    ]
    return [GT_SETTING] + settings


@pytest.fixture(scope="session")
def grid_records(zoo_genotypes, cifar_surrogate):
    """EvaluationRecords of the default zoo over the full grid + GT."""
    records = []
    for setting in full_grid_settings():
        label = format_label(setting)
        for g in zoo_genotypes:
            result = cifar_surrogate.evaluate(g, setting, 0, setting.epochs)
            records.append(
                EvaluationRecord(
                    model_id=g.content_hash,
                    setting=label,
                    test_accuracy=result.accuracy,
                    train_accuracy=result.train_accuracy,
                    epochs_trained=setting.epochs,
                )
            )
    return records


@pytest.fixture(scope="session")
def grid_accuracies(grid_records):
    grouped = {}
    for rec in grid_records:
        grouped.setdefault(rec.setting, {})[rec.model_id] = rec.test_accuracy
    return grouped


@pytest.fixture(scope="session")
def toy_space():
    return enumerate_space(
        1, SEARCH8, OutputRule.UNUSED_ONLY, params=SurrogateParams.toy(), cap=10**5
    )
