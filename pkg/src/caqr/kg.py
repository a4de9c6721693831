"""Indexed triple store with materialized inverse relations."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyGraph, IdOutOfRange, ParseError, UnknownEntity, UnknownRelation

INVERSE_SUFFIX = "⁻¹"

HEAD = 0
TAIL = 1
_SIDES = {"head": HEAD, "tail": TAIL, HEAD: HEAD, TAIL: TAIL}

_EMPTY = np.zeros(0, dtype=np.int64)


def _side(side) -> int:
    try:
        return _SIDES[side]
    except KeyError:
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}") from None


class KnowledgeGraph:
    """Read-only triple multiset over dense entity and relation ids.

    With inverses, a relation labelled ``r`` gets id ``2k`` and its inverse
    ``r⁻¹`` gets ``2k + 1``, so ``inverse(r) == r ^ 1``.
    """

    def __init__(
        self,
        entity_labels: list[str],
        relation_labels: list[str],
        triples: np.ndarray,
        has_inverses: bool,
    ):
        self.entity_labels = list(entity_labels)
        self.relation_labels = list(relation_labels)
        self.entity_ids = {label: i for i, label in enumerate(self.entity_labels)}
        self.relation_ids = {label: i for i, label in enumerate(self.relation_labels)}
        self.has_inverses = has_inverses
        self.triples = triples
        self.triples.setflags(write=False)

        forward = defaultdict(list)
        incoming = defaultdict(list)
        heads = defaultdict(set)
        tails = defaultdict(set)
        for h, r, t in triples.tolist():
            forward[(h, r)].append(t)
            incoming[t].append((h, r))
            heads[r].add(h)
            tails[r].add(t)
        self._forward = {k: np.array(sorted(v), dtype=np.int64) for k, v in forward.items()}
        self._incoming = {k: sorted(v) for k, v in incoming.items()}
        self._endpoints = {
            HEAD: {r: np.array(sorted(s), dtype=np.int64) for r, s in heads.items()},
            TAIL: {r: np.array(sorted(s), dtype=np.int64) for r, s in tails.items()},
        }
        self._sample_cache: dict[tuple, np.ndarray] = {}

    @classmethod
    def from_labeled(
        cls,
        triples: Iterable[tuple[str, str, str]],
        add_inverses: bool = True,
        vocab: Optional["KnowledgeGraph"] = None,
    ) -> "KnowledgeGraph":
        """Build from label triples, assigning ids in first-seen order.

        Passing ``vocab`` reuses another graph's label maps so that ids agree
        (e.g. a training split indexed against the full graph).
        """
        if vocab is not None:
            entities = list(vocab.entity_labels)
            relations = list(vocab.relation_labels)
            ent_ids = dict(vocab.entity_ids)
            rel_ids = dict(vocab.relation_ids)
            add_inverses = vocab.has_inverses
        else:
            entities, relations, ent_ids, rel_ids = [], [], {}, {}

        def ent(label):
            if label not in ent_ids:
                if vocab is not None:
                    raise UnknownEntity(label)
                ent_ids[label] = len(entities)
                entities.append(label)
            return ent_ids[label]

        def rel(label):
            if label not in rel_ids:
                if vocab is not None:
                    raise UnknownRelation(label)
                rel_ids[label] = len(relations)
                relations.append(label)
                if add_inverses:
                    rel_ids[label + INVERSE_SUFFIX] = len(relations)
                    relations.append(label + INVERSE_SUFFIX)
            return rel_ids[label]

        seen = set()
        for h, r, t in triples:
            if r.endswith(INVERSE_SUFFIX):
                raise ValueError(f"relation label {r!r} uses the reserved inverse suffix")
            hid, rid, tid = ent(h), rel(r), ent(t)
            seen.add((hid, rid, tid))
            if add_inverses:
                seen.add((tid, rid ^ 1, hid))
        if not seen:
            raise EmptyGraph("knowledge graph has no triples")
        arr = np.array(sorted(seen), dtype=np.int64).reshape(-1, 3)
        return cls(entities, relations, arr, add_inverses)

    @property
    def num_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def num_relations(self) -> int:
        return len(self.relation_labels)

    def __len__(self) -> int:
        return len(self.triples)

    def inverse(self, r: int) -> int:
        self._check_relation(r)
        if not self.has_inverses:
            raise UnknownRelation(f"graph built without inverse relations (r={r})")
        return r ^ 1

    def _check_entity(self, e: int) -> None:
        if not 0 <= e < self.num_entities:
            raise IdOutOfRange(f"entity id {e} not in [0, {self.num_entities})")

    def _check_relation(self, r: int) -> None:
        if not 0 <= r < self.num_relations:
            raise IdOutOfRange(f"relation id {r} not in [0, {self.num_relations})")

    def neighbors(self, e: int, r: int) -> np.ndarray:
        """Sorted tails ``t`` with ``(e, r, t)`` in the graph."""
        self._check_entity(e)
        self._check_relation(r)
        return self._forward.get((e, r), _EMPTY)

    def incoming(self, e: int) -> list[tuple[int, int]]:
        """All ``(head, relation)`` pairs pointing at ``e``."""
        self._check_entity(e)
        return self._incoming.get(e, [])

    def relation_endpoints(self, r: int, side) -> np.ndarray:
        self._check_relation(r)
        return self._endpoints[_side(side)].get(r, _EMPTY)

    def contains(self, h: int, r: int, t: int) -> bool:
        tails = self._forward.get((h, r), _EMPTY)
        i = np.searchsorted(tails, t)
        return bool(i < len(tails) and tails[i] == t)

    def sample_context_ids(self, r: int, side, K: int, seed: int = 0) -> np.ndarray:
        """Up to ``K`` endpoint ids of relation ``r``, sorted and cached.

        The draw is uniform without replacement from a generator seeded by
        ``SeedSequence([seed, r, side])`` so it does not depend on call order.
        """
        if K < 0:
            raise ValueError("K must be nonnegative")
        s = _side(side)
        key = (r, s, K, seed)
        cached = self._sample_cache.get(key)
        if cached is not None:
            return cached
        pool = self.relation_endpoints(r, s)
        if len(pool) <= K:
            out = pool
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed, r, s]))
            out = np.sort(rng.choice(pool, size=K, replace=False))
        out.setflags(write=False)
        self._sample_cache[key] = out
        return out

    def entity(self, label: str) -> int:
        try:
            return self.entity_ids[label]
        except KeyError:
            raise UnknownEntity(label) from None

    def relation(self, label: str) -> int:
        try:
            return self.relation_ids[label]
        except KeyError:
            raise UnknownRelation(label) from None

    def labeled_triples(self, include_inverses: bool = False) -> list[tuple[str, str, str]]:
        out = []
        for h, r, t in self.triples.tolist():
            if self.has_inverses and r % 2 == 1 and not include_inverses:
                continue
            out.append((self.entity_labels[h], self.relation_labels[r], self.entity_labels[t]))
        return out

    def stats(self) -> dict:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "triples": len(self),
            "inverses": self.has_inverses,
        }


def read_triples(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(fields)}")
            rows.append((fields[0], fields[1], fields[2]))
    return rows


def load_triples(path, add_inverses: bool = True, vocab: Optional[KnowledgeGraph] = None) -> KnowledgeGraph:
    """Load a TAB-separated triple file (``#`` lines ignored)."""
    rows = read_triples(path)
    if not rows:
        raise EmptyGraph(f"{path}: no triples")
    return KnowledgeGraph.from_labeled(rows, add_inverses=add_inverses, vocab=vocab)


def write_triples(path, triples: Iterable[tuple[str, str, str]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{h}\t{r}\t{t}\n")
