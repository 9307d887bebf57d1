"""Property tests over generated inputs (hypothesis)."""

from hypothesis import given, settings, strategies as st

from econas.genotype import (
    NetworkConfig,
    OutputRule,
    SEARCH8,
    ZOO13,
    decode,
    encode,
    mutate,
    random_genotype,
    slot_diff,
)
from econas.metrics import fractional_ranks, spearman_values
from econas.proxy import ReducedSetting, format_label, nominal_speedup, parse_label
from econas.seeding import derive_rng

settings.register_profile("suite", deadline=None, max_examples=200)
settings.load_profile("suite")


@given(
    c=st.integers(0, 30),
    r=st.integers(0, 30),
    s=st.integers(0, 30),
    e=st.integers(1, 100_000),
)
def test_label_round_trip(c, r, s, e):
    setting = ReducedSetting(c, r, s, e)
    assert parse_label(format_label(setting)) == setting
    assert nominal_speedup(setting) == 2 ** (c + r + s)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
def test_spearman_bounded_and_self_perfect(values):
    assert -1.0 <= spearman_values(values, values[::-1]) <= 1.0
    assert spearman_values(values, values) == 1.0


@given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=50))
def test_fractional_ranks_partition_positions(values):
    ranks = fractional_ranks([float(v) for v in values])
    n = len(values)
    assert sum(ranks) == n * (n + 1) / 2  # rank mass is conserved under ties
    assert all(1.0 <= r <= n for r in ranks)


@given(
    seed=st.integers(0, 10_000),
    node_count=st.integers(1, 6),
    zoo=st.booleans(),
    mutations=st.integers(1, 8),
)
def test_mutation_chain_stays_valid_and_single_step(seed, node_count, zoo, mutations):
    op_set = ZOO13 if zoo else SEARCH8
    rule = OutputRule.ALL_INTERMEDIATE if zoo else OutputRule.UNUSED_ONLY
    g = random_genotype(
        derive_rng("prop", seed), NetworkConfig(node_count=node_count), op_set, rule
    )
    assert decode(encode(g)) == g
    current = g
    for step in range(mutations):
        child = mutate(current, derive_rng("prop-mut", seed, step))
        assert slot_diff(current, child) == 1
        child.normal.validate()
        child.reduction.validate()
        assert decode(encode(child)) == child
        current = child
