import json

import pytest

from econas.genotype import (
    CellSpec,
    Genotype,
    GenotypeError,
    InputRef,
    NetworkConfig,
    NodeSpec,
    NoAlternativeError,
    OperationKind,
    OperationSet,
    OutputRule,
    ParseError,
    SEARCH8,
    ZOO13,
    decode,
    encode,
    legal_inputs,
    mutate,
    random_cell,
    random_genotype,
    slot_diff,
)
from econas.seeding import derive_rng


def make_genotype(seed=0, node_count=4, op_set=SEARCH8, rule=OutputRule.UNUSED_ONLY):
    return random_genotype(
        derive_rng("gen", seed), NetworkConfig(node_count=node_count), op_set, rule
    )


def test_catalog_unique_and_stable():
    values = [op.value for op in OperationKind]
    assert len(values) == len(set(values)) == 15
    for op in OperationKind:
        assert OperationKind(op.value) is op


def test_builtin_op_sets():
    assert len(ZOO13.members) == 13
    assert len(SEARCH8.members) == 8
    assert OperationKind.ZEROS not in ZOO13
    assert OperationKind.ZEROS in SEARCH8
    with pytest.raises(GenotypeError):
        OperationSet("dup", (OperationKind.ZEROS, OperationKind.ZEROS))
    with pytest.raises(GenotypeError):
        OperationSet("empty", ())


def test_random_cell_first_node_uses_cell_inputs():
    # The first intermediate node's input set has exactly the two cell inputs.
    for seed in range(50):
        cell = random_cell(derive_rng(seed), 5, ZOO13, OutputRule.ALL_INTERMEDIATE)
        assert cell.node_count == 5
        first = cell.nodes[0]
        assert first.input_a.kind == InputRef.CELL
        assert first.input_b.kind == InputRef.CELL


def test_random_cell_degenerate_op_set():
    solo = OperationSet("solo", (OperationKind.CONV_3X3,))
    cell = random_cell(derive_rng(1), 1, solo, OutputRule.UNUSED_ONLY)
    node = cell.nodes[0]
    assert node.op_a is OperationKind.CONV_3X3
    assert node.op_b is OperationKind.CONV_3X3
    assert node.input_a in legal_inputs(0)
    assert node.input_b in legal_inputs(0)


def test_random_cell_determinism():
    a = random_cell(derive_rng(42), 5, ZOO13, OutputRule.ALL_INTERMEDIATE)
    b = random_cell(derive_rng(42), 5, ZOO13, OutputRule.ALL_INTERMEDIATE)
    assert a == b


def test_random_cell_empty_error():
    with pytest.raises(GenotypeError):
        random_cell(derive_rng(0), 0, ZOO13, OutputRule.ALL_INTERMEDIATE)


def test_random_genotype_hash_stable_and_seeds_differ():
    g1 = make_genotype(seed=5, node_count=5, op_set=ZOO13)
    g2 = make_genotype(seed=5, node_count=5, op_set=ZOO13)
    assert g1 == g2 and g1.content_hash == g2.content_hash
    differing = sum(
        make_genotype(seed=2 * i).content_hash != make_genotype(seed=2 * i + 1).content_hash
        for i in range(100)
    )
    assert differing >= 99


def test_random_genotype_search_space_valid():
    for seed in range(20):
        g = make_genotype(seed=seed, node_count=4, op_set=SEARCH8)
        assert g.node_count == 4
        g.normal.validate()
        g.reduction.validate()
        for cell in (g.normal, g.reduction):
            for node in cell.nodes:
                assert node.op_a in SEARCH8 and node.op_b in SEARCH8


def test_dag_validity_property():
    # Every input reference points strictly earlier, across sizes and op sets.
    for i in range(10_000):
        node_count = 1 + i % 6
        op_set = ZOO13 if i % 2 else SEARCH8
        cell = random_cell(derive_rng("dag", i), node_count, op_set, OutputRule.UNUSED_ONLY)
        for j, node in enumerate(cell.nodes):
            for ref in (node.input_a, node.input_b):
                if ref.kind == InputRef.NODE:
                    assert ref.index < j


def test_mutate_changes_exactly_one_slot():
    g = make_genotype(seed=3)
    for i in range(500):
        child = mutate(g, derive_rng("mut", i))
        assert slot_diff(g, child) == 1
        assert child.content_hash != g.content_hash
        child.normal.validate()
        child.reduction.validate()


def test_mutate_distribution_uniform_over_cell_and_kind():
    g = make_genotype(seed=9)
    counts = {}
    n = 100_000
    for i in range(n):
        child = mutate(g, derive_rng("dist", i))
        for cell_name in ("normal", "reduction"):
            before, after = getattr(g, cell_name), getattr(child, cell_name)
            if before == after:
                continue
            for na, nb in zip(before.nodes, after.nodes):
                if na == nb:
                    continue
                kind = "op" if (na.op_a != nb.op_a or na.op_b != nb.op_b) else "input"
                counts[(cell_name, kind)] = counts.get((cell_name, kind), 0) + 1
    assert sum(counts.values()) == n
    for key in (("normal", "op"), ("normal", "input"), ("reduction", "op"), ("reduction", "input")):
        assert abs(counts[key] / n - 0.25) < 0.02, (key, counts)


def test_mutate_single_op_set_falls_back_to_inputs():
    solo = OperationSet("solo", (OperationKind.IDENTITY,))
    g = random_genotype(
        derive_rng("solo"), NetworkConfig(node_count=3), solo, OutputRule.UNUSED_ONLY
    )
    for i in range(200):
        child = mutate(g, derive_rng("solo-mut", i))
        # op slots cannot change; the input fallback must carry every mutation
        for ca, cb in zip(
            g.normal.nodes + g.reduction.nodes, child.normal.nodes + child.reduction.nodes
        ):
            assert ca.op_a == cb.op_a and ca.op_b == cb.op_b
        assert slot_diff(g, child) == 1


class _AlwaysOpRng:
    """Forces cell=normal, kind=op on every retry."""

    def randrange(self, n):
        return 0

    def random(self):
        return 0.0


def test_mutate_no_alternative_error():
    solo = OperationSet("solo", (OperationKind.IDENTITY,))
    g = random_genotype(
        derive_rng("solo2"), NetworkConfig(node_count=2), solo, OutputRule.UNUSED_ONLY
    )
    with pytest.raises(NoAlternativeError):
        mutate(g, _AlwaysOpRng())


def test_encode_decode_roundtrip_many():
    for i in range(1000):
        node_count = 1 + i % 5
        op_set = ZOO13 if i % 3 else SEARCH8
        g = random_genotype(
            derive_rng("rt", i), NetworkConfig(node_count=node_count), op_set,
            OutputRule.ALL_INTERMEDIATE if i % 2 else OutputRule.UNUSED_ONLY,
        )
        doc = encode(g)
        g2 = decode(doc)
        assert g2 == g
        assert encode(g2) == doc
        assert g2.content_hash == g.content_hash


def test_encode_canonical():
    g = make_genotype(seed=1)
    doc = encode(g)
    obj = json.loads(doc)
    reordered = json.dumps(obj, sort_keys=True, indent=1) + "\n"
    assert reordered == doc  # already in canonical key order


def test_decode_dangling_reference():
    g = make_genotype(seed=2, node_count=4)
    obj = json.loads(encode(g))
    obj["normal"]["nodes"][3]["input_b"] = "node:5"
    with pytest.raises(ParseError, match=r"normal\.nodes\[3\]\.input_b"):
        decode(json.dumps(obj))


def test_decode_unknown_operation():
    g = make_genotype(seed=2)
    obj = json.loads(encode(g))
    obj["reduction"]["nodes"][0]["op_a"] = "conv_9x9"
    with pytest.raises(ParseError, match="conv_9x9"):
        decode(json.dumps(obj))


def test_decode_malformed_document():
    with pytest.raises(ParseError):
        decode("not json {")
    with pytest.raises(ParseError):
        decode(json.dumps({"kind": "something_else"}))
    g = make_genotype(seed=4)
    obj = json.loads(encode(g))
    obj["node_count"] = 99
    with pytest.raises(ParseError, match="node_count"):
        decode(json.dumps(obj))


def test_hash_equality_iff_structural_equality():
    for i in range(200):
        a = make_genotype(seed=i)
        b = make_genotype(seed=i + 10_000)
        assert (a == b) == (a.content_hash == b.content_hash)
        copy = decode(encode(a))
        assert copy == a and copy.content_hash == a.content_hash
        child = mutate(a, derive_rng("hash-mut", i))
        assert child != a and child.content_hash != a.content_hash


def test_genotype_cross_cell_node_count_mismatch():
    c1 = random_cell(derive_rng(0), 3, SEARCH8, OutputRule.UNUSED_ONLY)
    c2 = random_cell(derive_rng(1), 4, SEARCH8, OutputRule.UNUSED_ONLY)
    with pytest.raises(GenotypeError):
        Genotype(c1, c2, SEARCH8)


def test_genotype_rejects_foreign_operation():
    nodes = (
        NodeSpec(InputRef.cell(0), InputRef.cell(1), OperationKind.CONV_3X3, OperationKind.IDENTITY),
    )
    cell = CellSpec(nodes, OutputRule.UNUSED_ONLY)
    with pytest.raises(GenotypeError, match="conv_3x3"):
        Genotype(cell, cell, SEARCH8)  # conv_3x3 is not a search8 member


def test_network_config_presets():
    assert NetworkConfig.for_zoo().node_count == 5
    assert NetworkConfig.for_search().node_count == 4
    assert NetworkConfig.for_zoo().stack_n == 6
    with pytest.raises(GenotypeError):
        NetworkConfig(node_count=0)
