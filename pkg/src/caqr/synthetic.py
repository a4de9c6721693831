"""Synthetic graphs and query sets for smoke tests, benchmarks and the CLI."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import GroundingFailed
from .kg import KnowledgeGraph
from .oracle import ground_query
from .queries import QueryInstance, QueryType


def random_triples(num_entities: int, num_relations: int, num_triples: int, seed: int = 0) -> list[tuple[str, str, str]]:
    """Distinct random triples over labels ``e0..`` and ``r0..``, without self loops."""
    if num_entities < 2 or num_relations < 1:
        raise ValueError("need at least two entities and one relation")
    cap = num_entities * (num_entities - 1) * num_relations
    if num_triples > cap:
        raise ValueError(f"at most {cap} distinct triples fit")
    rng = np.random.default_rng(seed)
    seen: set = set()
    out = []
    while len(out) < num_triples:
        h, t = rng.integers(num_entities, size=2)
        r = rng.integers(num_relations)
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        out.append((f"e{h}", f"r{r}", f"e{t}"))
    return out


def split_triples(triples: Sequence, train_fraction: float, seed: int = 0):
    """Random ``(train, full)`` split; ``full`` is the input order unchanged."""
    triples = list(triples)
    rng = np.random.default_rng(seed)
    n_train = max(1, int(round(train_fraction * len(triples))))
    keep = np.sort(rng.permutation(len(triples))[:n_train])
    return [triples[i] for i in keep], triples


def build_graphs(train_triples, full_triples) -> tuple[KnowledgeGraph, KnowledgeGraph]:
    """``(kg_train, kg_full)`` sharing one id space."""
    kg_full = KnowledgeGraph.from_labeled(full_triples)
    return KnowledgeGraph.from_labeled(train_triples, vocab=kg_full), kg_full


def generate_queries(
    kg_train: KnowledgeGraph,
    kg_full: KnowledgeGraph,
    types: Sequence,
    per_type: int,
    seed: int = 0,
    require_hard: bool = False,
    max_failures: int = 20,
) -> list[QueryInstance]:
    """Up to ``per_type`` grounded instances per type, skipping a type after repeated failures."""
    out = []
    for i, t in enumerate(types):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        failures = 0
        made = 0
        while made < per_type and failures < max_failures:
            try:
                out.append(ground_query(kg_train, kg_full, t, rng, require_hard=require_hard))
                made += 1
            except GroundingFailed:
                failures += 1
    return out


def random_kg_with_queries(num_entities=50, num_relations=4, num_triples=200, types=("1p", "2p", "2i"), per_type=20, seed=0):
    """Small graph plus training queries answered on the graph itself."""
    kg = KnowledgeGraph.from_labeled(random_triples(num_entities, num_relations, num_triples, seed))
    return kg, generate_queries(kg, kg, types, per_type, seed)


def structural_dataset(num_anchors: int = 8, answers_per_query: int = 3, seed: int = 0):
    """A graph where the same branch must answer differently inside 1p and 2i.

    For every anchor ``a`` the query ``1p(a, r)`` is labelled with one answer
    set and ``2i((a, r), (a, r))`` with a disjoint one. The labels are
    assigned, not derived from the triples, so only a model that sees the
    query structure can fit both. Returns ``(kg, train, valid)``; ``valid``
    holds the same queries with their answers in the hard slot.
    """
    rng = np.random.default_rng(seed)
    s = answers_per_query
    n_answers = 2 * s * num_anchors
    perm = rng.permutation(n_answers)
    triples = []
    plan = []
    for i in range(num_anchors):
        chunk = perm[2 * s * i : 2 * s * (i + 1)]
        single, joint = chunk[:s], chunk[s:]
        for x in chunk:
            triples.append((f"a{i}", "r", f"x{x}"))
        plan.append((f"a{i}", single, joint))
    kg = KnowledgeGraph.from_labeled(triples)
    r = kg.relation("r")
    train, valid = [], []
    for label, single, joint in plan:
        a = kg.entity(label)
        xs = [kg.entity(f"x{x}") for x in single]
        ys = [kg.entity(f"x{y}") for y in joint]
        train.append(QueryInstance(QueryType.P1, [a], [r], easy=xs))
        train.append(QueryInstance(QueryType.I2, [a, a], [r, r], easy=ys))
        valid.append(QueryInstance(QueryType.P1, [a], [r], hard=xs))
        valid.append(QueryInstance(QueryType.I2, [a, a], [r, r], hard=ys))
    return kg, train, valid
