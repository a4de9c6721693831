import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caqr.errors import ArityMismatch, NodeNotFound, PositionOverflow, UnknownRelation, UnsupportedUnionShape
from caqr.kg import KnowledgeGraph
from caqr.oracle import evaluate_answers
from caqr.queries import (
    ALL_TYPES,
    ANCHOR,
    ANSWER,
    VARIABLE,
    Anchor,
    Intersection,
    Negation,
    Node,
    Projection,
    QueryGraph,
    QueryInstance,
    QueryType,
    Union,
    build_query_graph,
    count_table,
    node_relation_sets,
    read_queries,
    symbolic_graph,
    to_computation_graph,
    to_dnf,
    type_vector,
    write_queries,
)
from caqr.synthetic import random_triples
from naive import HAND_NODES, enumerate_positions

A, V, Q = ANCHOR, VARIABLE, ANSWER


def test_exactly_fourteen_types():
    assert len(ALL_TYPES) == 14
    assert {str(t) for t in ALL_TYPES} == set(HAND_NODES)


def test_2p_graph():
    g = build_query_graph("2p", [7], [1, 2])
    assert [(n.role, n.position) for n in g.nodes] == [(A, 0), (V, 1), (Q, 2)]
    assert g.nodes[0].entity == 7
    assert [(e.src, e.dst, e.relation) for e in g.edges] == [(0, 1, 1), (1, 2, 2)]


def test_ip_graph():
    g = build_query_graph("ip", [3, 4], [0, 1, 2])
    assert [(n.role, n.position) for n in g.nodes] == [(A, 0), (A, 0), (V, 1), (Q, 2)]
    assert {e.relation for e in g.in_edges(2)} == {0, 1}
    assert [e.relation for e in g.in_edges(3)] == [2]


def test_arity_and_relation_checks():
    with pytest.raises(ArityMismatch):
        build_query_graph("2p", [0, 1], [0, 1])
    with pytest.raises(ArityMismatch):
        build_query_graph("2i", [0, 1], [0])
    with pytest.raises(UnknownRelation):
        build_query_graph("1p", [0], [5], num_relations=4)


@pytest.mark.parametrize("t", [str(t) for t in ALL_TYPES])
def test_template_nodes_match_hand_enumeration(t):
    g = symbolic_graph(t)
    assert [(n.role, n.position) for n in g.nodes] == HAND_NODES[t]
    assert [n.position for n in g.nodes] == enumerate_positions(g)


@pytest.mark.parametrize("t", [str(t) for t in ALL_TYPES])
def test_graph_shape_invariants(t):
    g = symbolic_graph(t)
    assert sum(n.role == ANSWER for n in g.nodes) == 1
    for v, n in enumerate(g.nodes):
        ins, outs = len(g.in_edges(v)), len(g.out_edges(v))
        if n.role == ANCHOR:
            assert ins == 0
        elif n.role == ANSWER:
            assert outs == 0 and ins >= 1
        else:
            assert ins >= 1 and outs >= 1
    assert g.nodes[g.answer].position == max(enumerate_positions(g))


def test_max_position_is_three():
    assert max(n.position for t in ALL_TYPES for n in symbolic_graph(t).nodes) == 3


def test_count_tables():
    np.testing.assert_array_equal(count_table(symbolic_graph("1p")), [[1, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0]])
    np.testing.assert_array_equal(count_table(symbolic_graph("ip")), [[2, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]])
    np.testing.assert_array_equal(count_table(symbolic_graph("3i")), [[3, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0]])


@pytest.mark.parametrize("t", [str(t) for t in ALL_TYPES])
def test_count_table_matches_enumeration(t):
    g = symbolic_graph(t)
    expected = np.zeros((3, 4), dtype=int)
    for role, pos in HAND_NODES[t]:
        expected[role, pos] += 1
    table = count_table(g)
    np.testing.assert_array_equal(table, expected)
    assert table.sum() == len(g.nodes) <= 4


def test_type_vectors():
    np.testing.assert_array_equal(
        type_vector(count_table(symbolic_graph("ip"))), [0.5, 0, 0, 0, 0, 0.25, 0, 0, 0, 0, 0.25, 0]
    )
    assert type_vector(count_table(symbolic_graph("1p"))).sum() == 0.5
    np.testing.assert_array_equal(type_vector(np.zeros((3, 4))), np.zeros(12))
    for t in ALL_TYPES:
        tv = type_vector(count_table(symbolic_graph(t)))
        assert tv.min() >= 0 and tv.max() <= 0.75


def test_2i_and_3i_type_vectors_differ():
    assert not np.array_equal(
        type_vector(count_table(symbolic_graph("2i"))), type_vector(count_table(symbolic_graph("3i")))
    )


def test_type_vector_collisions_are_exactly_the_same_shape_groups():
    # the table sees roles and positions only, so union/negation variants of
    # one shape share a vector; everything else is separated
    groups = {}
    for t in ALL_TYPES:
        key = tuple(type_vector(count_table(symbolic_graph(t))))
        groups.setdefault(key, set()).add(str(t))
    assert sorted(map(sorted, groups.values())) == sorted(
        [["1p"], ["2p"], ["3p"], ["2i", "2in", "2u"], ["3i", "3in"], ["inp", "ip", "pi", "pin", "pni", "up"]]
    )


def test_position_overflow():
    deep = QueryGraph(QueryType.P3, (Node(A, 0, 0, 0), Node(Q, 4)), ())
    with pytest.raises(PositionOverflow):
        count_table(deep)


def test_node_relation_sets():
    g = build_query_graph("2p", [0], [5, 6])
    assert node_relation_sets(g, 1) == ({5}, {6})
    g = build_query_graph("ip", [0, 1], [1, 2, 3])
    assert node_relation_sets(g, 2) == ({1, 2}, {3})
    for t in ALL_TYPES:
        s = symbolic_graph(t)
        assert node_relation_sets(s, s.answer)[1] == frozenset()
    with pytest.raises(NodeNotFound):
        node_relation_sets(g, 9)


def strip(cg):
    """Computation graph without slot/node bookkeeping, for readable comparison."""
    if isinstance(cg, Anchor):
        return ("A", cg.entity)
    if isinstance(cg, Projection):
        return ("P", cg.relation, strip(cg.child))
    if isinstance(cg, Negation):
        return ("N", strip(cg.child))
    return ("I" if isinstance(cg, Intersection) else "U", tuple(strip(c) for c in cg.children))


def test_computation_graphs():
    assert strip(to_computation_graph(build_query_graph("1p", [0], [4]))) == ("P", 4, ("A", 0))
    assert strip(to_computation_graph(build_query_graph("2i", [0, 1], [4, 5]))) == (
        "I",
        (("P", 4, ("A", 0)), ("P", 5, ("A", 1))),
    )
    assert strip(to_computation_graph(build_query_graph("2in", [0, 1], [4, 5]))) == (
        "I",
        (("P", 4, ("A", 0)), ("N", ("P", 5, ("A", 1)))),
    )
    assert isinstance(to_computation_graph(build_query_graph("up", [0, 1], [4, 5, 6])).child, Union)


def test_dnf_rewrites():
    assert [strip(d) for d in to_dnf(to_computation_graph(build_query_graph("2u", [0, 1], [4, 5])))] == [
        ("P", 4, ("A", 0)),
        ("P", 5, ("A", 1)),
    ]
    assert [strip(d) for d in to_dnf(to_computation_graph(build_query_graph("up", [0, 1], [4, 5, 6])))] == [
        ("P", 6, ("P", 4, ("A", 0))),
        ("P", 6, ("P", 5, ("A", 1))),
    ]
    cg = to_computation_graph(build_query_graph("2p", [0], [1, 2]))
    assert to_dnf(cg) == [cg]
    with pytest.raises(UnsupportedUnionShape):
        to_dnf(Negation(Union((Anchor(0), Anchor(1)))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["2u", "up"]))
def test_dnf_preserves_answers(seed, t):
    kg = KnowledgeGraph.from_labeled(random_triples(15, 3, 50, seed))
    rng = np.random.default_rng(seed)
    qt = QueryType(t)
    g = build_query_graph(
        qt, rng.integers(kg.num_entities, size=qt.num_anchors), rng.integers(kg.num_relations, size=qt.num_relations)
    )
    cg = to_computation_graph(g)
    merged = frozenset().union(*(evaluate_answers(kg, d) for d in to_dnf(cg)))
    assert merged == evaluate_answers(kg, cg)


def test_query_file_roundtrip(tmp_path, small_graph):
    kg = small_graph
    items = [
        QueryInstance("2i", [0, 1], [2, 3], easy=[4], hard=[5, 6]),
        QueryInstance("pni", [1, 2], [0, 1, 2], easy=[], hard=[7]),
    ]
    path = tmp_path / "q.jsonl"
    write_queries(path, items, kg)
    assert read_queries(path, kg) == items
    first = path.read_text().splitlines()[0]
    assert first.index('"type"') < first.index('"anchors"') < first.index('"relations"') < first.index('"easy_answers"')
