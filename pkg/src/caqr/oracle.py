"""Exact set-semantics answering and dataset grounding."""

from __future__ import annotations

import numpy as np

from .errors import GroundingFailed, UnknownRelation
from .kg import KnowledgeGraph
from .queries import (
    ANCHOR,
    Anchor,
    Intersection,
    Negation,
    Projection,
    QueryInstance,
    Union,
    as_query_type,
    build_query_graph,
    to_computation_graph,
)


def evaluate_answers(kg: KnowledgeGraph, cg) -> frozenset:
    """Answer set of computation graph ``cg`` over ``kg``."""
    if isinstance(cg, Anchor):
        return frozenset((cg.entity,))
    if isinstance(cg, Projection):
        out = set()
        for v in evaluate_answers(kg, cg.child):
            out.update(kg.neighbors(v, cg.relation).tolist())
        return frozenset(out)
    if isinstance(cg, Intersection):
        sets = [evaluate_answers(kg, c) for c in cg.children]
        return frozenset.intersection(*sets)
    if isinstance(cg, Union):
        return frozenset().union(*(evaluate_answers(kg, c) for c in cg.children))
    if isinstance(cg, Negation):
        inner = evaluate_answers(kg, cg.child)
        return frozenset(range(kg.num_entities)) - inner
    raise TypeError(f"not a computation-graph node: {cg!r}")


def answer_instance(kg: KnowledgeGraph, inst: QueryInstance) -> frozenset:
    return evaluate_answers(kg, to_computation_graph(inst.graph()))


def label_easy_hard(kg_train: KnowledgeGraph, kg_full: KnowledgeGraph, inst: QueryInstance) -> QueryInstance:
    """Recompute easy (training-graph) and hard (full minus easy) answers."""
    for r in inst.relations:
        if not (0 <= r < kg_train.num_relations and 0 <= r < kg_full.num_relations):
            raise UnknownRelation(f"relation id {r}")
    cg = to_computation_graph(inst.graph())
    full = evaluate_answers(kg_full, cg)
    if not full:
        return QueryInstance(inst.type, inst.anchors, inst.relations, (), ())
    easy = evaluate_answers(kg_train, cg)
    return QueryInstance(inst.type, inst.anchors, inst.relations, easy, full - easy)


def _ground_once(kg: KnowledgeGraph, t, rng: np.random.Generator):
    """Backward walk: pick an answer entity, then walk each in-edge to its source.

    Returns (anchors, relations) or None when the walk dead-ends.
    """
    tpl = t.template
    n = len(tpl.roles)
    value: list = [None] * n
    rel_of_slot: list = [None] * len(tpl.edges)
    in_edges = {v: [e for e in tpl.edges if e[1] == v] for v in range(n)}
    answer = tpl.roles.index(2)

    targets = [e for e in range(kg.num_entities) if kg.incoming(e)]
    if not targets:
        return None
    value[answer] = int(rng.choice(targets))

    def ground_from(v, x):
        # assign x to node v, then ground everything feeding into v
        value[v] = x
        if tpl.roles[v] == ANCHOR:
            return True
        positive = [e for e in in_edges[v] if not e[3]]
        negative = [e for e in in_edges[v] if e[3]]
        for src, _, slot, _ in positive:
            inc = kg.incoming(x)
            if not inc:
                return False
            h, r = inc[int(rng.integers(len(inc)))]
            rel_of_slot[slot] = r
            if not ground_from(src, h):
                return False
        for src, _, slot, _ in negative:
            # the negated branch should hit some sibling answer other than x
            siblings = _sibling_answers(kg, t, v, value, rel_of_slot, positive)
            siblings.discard(x)
            pool = sorted(siblings) if siblings else [e for e in targets if e != x]
            if not pool:
                return False
            y = int(rng.choice(pool))
            inc = kg.incoming(y)
            if not inc:
                return False
            h, r = inc[int(rng.integers(len(inc)))]
            rel_of_slot[slot] = r
            if not ground_from(src, h):
                return False
        return True

    if not ground_from(answer, value[answer]):
        return None
    anchors = [value[i] for i, role in enumerate(tpl.roles) if role == ANCHOR]
    return anchors, rel_of_slot


def _sibling_answers(kg, t, v, value, rel_of_slot, positive_edges) -> set:
    """Answers at node ``v`` from its already-grounded positive branches."""
    tpl = t.template
    result = None
    for src, _, slot, _ in positive_edges:
        branch = _subtree_answers(kg, tpl, src, value, rel_of_slot)
        r = rel_of_slot[slot]
        proj = set()
        for u in branch:
            proj.update(kg.neighbors(u, r).tolist())
        result = proj if result is None else result & proj
    return result or set()


def _subtree_answers(kg, tpl, v, value, rel_of_slot) -> set:
    if tpl.roles[v] == ANCHOR:
        return {value[v]}
    result = None
    for src, _, slot, neg in (e for e in tpl.edges if e[1] == v):
        branch = _subtree_answers(kg, tpl, src, value, rel_of_slot)
        proj = set()
        for u in branch:
            proj.update(kg.neighbors(u, rel_of_slot[slot]).tolist())
        if neg:
            proj = set(range(kg.num_entities)) - proj
        if result is None:
            result = proj
        elif tpl.union_node == v:
            result |= proj
        else:
            result &= proj
    return result or set()


def _negation_effective(kg: KnowledgeGraph, inst: QueryInstance) -> bool:
    """Every negated branch removes at least one, but not all, sibling answers."""
    g = inst.graph()
    for v in range(len(g.nodes)):
        neg = [e for e in g.in_edges(v) if e.negated]
        if not neg:
            continue
        pos = [e for e in g.in_edges(v) if not e.negated]
        sib = frozenset.intersection(*(_branch_set(kg, g, e) for e in pos))
        for e in neg:
            removed = _branch_set(kg, g, e)
            if not (sib & removed) or sib <= removed:
                return False
    return True


def _branch_set(kg, g, edge) -> frozenset:
    sub = Projection(edge.relation, to_computation_graph(g, edge.src), edge.slot, edge.dst)
    return evaluate_answers(kg, sub)


def ground_query(
    kg_train: KnowledgeGraph,
    kg_full: KnowledgeGraph,
    t,
    rng: np.random.Generator,
    max_tries: int = 100,
    require_hard: bool = False,
) -> QueryInstance:
    """Sample one instance of template ``t`` with a nonempty full-graph answer set.

    With ``require_hard`` (validation/test splits) the instance must also have
    at least one answer that is not derivable from ``kg_train``.
    """
    t = as_query_type(t)
    for _ in range(max_tries):
        grounded = _ground_once(kg_full, t, rng)
        if grounded is None:
            continue
        anchors, relations = grounded
        inst = QueryInstance(t, anchors, relations)
        if t.has_negation and not _negation_effective(kg_full, inst):
            continue
        inst = label_easy_hard(kg_train, kg_full, inst)
        if inst.degenerate or (require_hard and not inst.hard):
            continue
        return inst
    raise GroundingFailed(f"could not ground a {t} query in {max_tries} tries")


def random_instance(kg: KnowledgeGraph, t, rng: np.random.Generator) -> QueryInstance:
    """Uniformly random anchors and relations; the answer set may be empty."""
    t = as_query_type(t)
    anchors = rng.integers(kg.num_entities, size=t.num_anchors).tolist()
    relations = rng.integers(kg.num_relations, size=t.num_relations).tolist()
    build_query_graph(t, anchors, relations, kg.num_relations)
    return QueryInstance(t, anchors, relations)
