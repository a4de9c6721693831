"""The fourteen benchmark query templates and their compiled forms.

A :class:`QueryGraph` is a typed instance of a template: anchor, variable and
answer nodes with canonical positions and roles, joined by relation edges
(optionally negated). :func:`to_computation_graph` turns it into an operator
tree; :func:`to_dnf` lifts unions to the top so backends without a union
operator can score disjuncts separately.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ArityMismatch,
    NodeNotFound,
    PositionOverflow,
    UnknownRelation,
    UnsupportedUnionShape,
)

ANCHOR, VARIABLE, ANSWER = 0, 1, 2
ROLE_NAMES = ("anchor", "variable", "answer")
MAX_POSITION = 3
NUM_ROLES = 3
NUM_POSITIONS = MAX_POSITION + 1


class QueryType(str, enum.Enum):
    P1 = "1p"
    P2 = "2p"
    P3 = "3p"
    I2 = "2i"
    I3 = "3i"
    PI = "pi"
    IP = "ip"
    U2 = "2u"
    UP = "up"
    IN2 = "2in"
    IN3 = "3in"
    INP = "inp"
    PIN = "pin"
    PNI = "pni"

    def __str__(self):
        return self.value

    @property
    def template(self) -> "Template":
        return TEMPLATES[self]

    @property
    def num_anchors(self) -> int:
        return self.template.num_anchors

    @property
    def num_relations(self) -> int:
        return len(self.template.edges)

    @property
    def has_negation(self) -> bool:
        return any(e[3] for e in self.template.edges)

    @property
    def has_union(self) -> bool:
        return self.template.union_node is not None


@dataclass(frozen=True)
class Template:
    # node roles in declaration order; anchors are numbered left to right
    roles: tuple[int, ...]
    # (src node, dst node, relation slot, negated)
    edges: tuple[tuple[int, int, int, bool], ...]
    union_node: Optional[int] = None

    @property
    def num_anchors(self) -> int:
        return sum(1 for r in self.roles if r == ANCHOR)


_A, _V, _Q = ANCHOR, VARIABLE, ANSWER
TEMPLATES: dict[QueryType, Template] = {
    QueryType.P1: Template((_A, _Q), ((0, 1, 0, False),)),
    QueryType.P2: Template((_A, _V, _Q), ((0, 1, 0, False), (1, 2, 1, False))),
    QueryType.P3: Template(
        (_A, _V, _V, _Q), ((0, 1, 0, False), (1, 2, 1, False), (2, 3, 2, False))
    ),
    QueryType.I2: Template((_A, _A, _Q), ((0, 2, 0, False), (1, 2, 1, False))),
    QueryType.I3: Template(
        (_A, _A, _A, _Q), ((0, 3, 0, False), (1, 3, 1, False), (2, 3, 2, False))
    ),
    QueryType.IP: Template(
        (_A, _A, _V, _Q), ((0, 2, 0, False), (1, 2, 1, False), (2, 3, 2, False))
    ),
    QueryType.PI: Template(
        (_A, _V, _A, _Q), ((0, 1, 0, False), (1, 3, 1, False), (2, 3, 2, False))
    ),
    QueryType.U2: Template((_A, _A, _Q), ((0, 2, 0, False), (1, 2, 1, False)), union_node=2),
    QueryType.UP: Template(
        (_A, _A, _V, _Q),
        ((0, 2, 0, False), (1, 2, 1, False), (2, 3, 2, False)),
        union_node=2,
    ),
    QueryType.IN2: Template((_A, _A, _Q), ((0, 2, 0, False), (1, 2, 1, True))),
    QueryType.IN3: Template(
        (_A, _A, _A, _Q), ((0, 3, 0, False), (1, 3, 1, False), (2, 3, 2, True))
    ),
    QueryType.INP: Template(
        (_A, _A, _V, _Q), ((0, 2, 0, False), (1, 2, 1, True), (2, 3, 2, False))
    ),
    QueryType.PIN: Template(
        (_A, _V, _A, _Q), ((0, 1, 0, False), (1, 3, 1, False), (2, 3, 2, True))
    ),
    QueryType.PNI: Template(
        (_A, _V, _A, _Q), ((0, 1, 0, False), (1, 3, 1, True), (2, 3, 2, False))
    ),
}

ALL_TYPES: tuple[QueryType, ...] = tuple(QueryType)
NEGATION_TYPES = tuple(t for t in ALL_TYPES if t.has_negation)


def as_query_type(t) -> QueryType:
    return t if isinstance(t, QueryType) else QueryType(str(t))


@dataclass(frozen=True)
class Node:
    role: int
    position: int
    entity: Optional[int] = None  # bound entity for anchors
    slot: Optional[int] = None  # anchor index within the instance


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: int
    slot: int  # index into the instance's relation list
    negated: bool = False


@dataclass(frozen=True)
class QueryGraph:
    type: QueryType
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    union_node: Optional[int] = None

    @property
    def answer(self) -> int:
        return next(i for i, n in enumerate(self.nodes) if n.role == ANSWER)

    @property
    def anchors(self) -> list[int]:
        return [n.entity for n in self.nodes if n.role == ANCHOR]

    @property
    def relations(self) -> list[int]:
        return [e.relation for e in sorted(self.edges, key=lambda e: e.slot)]

    def in_edges(self, v: int) -> list[Edge]:
        return [e for e in self.edges if e.dst == v]

    def out_edges(self, v: int) -> list[Edge]:
        return [e for e in self.edges if e.src == v]


def _positions(num_nodes: int, edges) -> list[int]:
    # longest anchor->v path; templates list nodes in topological order
    pos = [0] * num_nodes
    for _ in range(num_nodes):
        for src, dst, *_ in edges:
            pos[dst] = max(pos[dst], pos[src] + 1)
    return pos


def build_query_graph(
    t,
    anchors: Sequence[int],
    relations: Sequence[int],
    num_relations: Optional[int] = None,
) -> QueryGraph:
    """Instantiate template ``t`` with bound anchors and relations.

    ``num_relations`` (the KG relation vocabulary size) enables the
    UnknownRelation check.
    """
    t = as_query_type(t)
    tpl = t.template
    if len(anchors) != tpl.num_anchors or len(relations) != len(tpl.edges):
        raise ArityMismatch(
            f"{t} expects {tpl.num_anchors} anchors and {len(tpl.edges)} relations, "
            f"got {len(anchors)} and {len(relations)}"
        )
    if num_relations is not None:
        for r in relations:
            if not 0 <= int(r) < num_relations:
                raise UnknownRelation(f"relation id {r}")
    pos = _positions(len(tpl.roles), tpl.edges)
    nodes = []
    k = 0
    for i, role in enumerate(tpl.roles):
        if role == ANCHOR:
            nodes.append(Node(role, pos[i], int(anchors[k]), k))
            k += 1
        else:
            nodes.append(Node(role, pos[i]))
    edges = tuple(Edge(s, d, int(relations[slot]), slot, neg) for s, d, slot, neg in tpl.edges)
    return QueryGraph(t, tuple(nodes), edges, tpl.union_node)


@lru_cache(maxsize=None)
def symbolic_graph(t) -> QueryGraph:
    """Template instance whose anchors and relations are their own slot numbers."""
    t = as_query_type(t)
    return build_query_graph(t, list(range(t.num_anchors)), list(range(t.num_relations)))


def count_table(g: QueryGraph) -> np.ndarray:
    """3x4 counts of (role, position) pairs over the nodes of ``g``."""
    table = np.zeros((NUM_ROLES, NUM_POSITIONS), dtype=np.int64)
    for n in g.nodes:
        if n.position > MAX_POSITION:
            raise PositionOverflow(f"position {n.position} exceeds {MAX_POSITION}")
        table[n.role, n.position] += 1
    return table


def type_vector(table: np.ndarray) -> np.ndarray:
    """Row-major flatten of a count table, scaled by the maximum node count 4."""
    return np.asarray(table, dtype=np.float64).reshape(-1) / 4.0


def node_relation_sets(g: QueryGraph, v: int) -> tuple[frozenset, frozenset]:
    if not 0 <= v < len(g.nodes):
        raise NodeNotFound(f"node {v} not in {g.type} graph with {len(g.nodes)} nodes")
    return (
        frozenset(e.relation for e in g.in_edges(v)),
        frozenset(e.relation for e in g.out_edges(v)),
    )


# --- computation graphs -----------------------------------------------------


@dataclass(frozen=True)
class Anchor:
    entity: int
    slot: int = 0
    node: int = 0


@dataclass(frozen=True)
class Projection:
    relation: int
    child: object
    slot: int = 0
    node: int = 0  # query-graph node this projection lands on


@dataclass(frozen=True)
class Intersection:
    children: tuple


@dataclass(frozen=True)
class Union:
    children: tuple


@dataclass(frozen=True)
class Negation:
    child: object


def to_computation_graph(g: QueryGraph, root: Optional[int] = None):
    """Operator tree rooted at the answer node (or at node ``root``)."""

    def build(v):
        node = g.nodes[v]
        if node.role == ANCHOR:
            return Anchor(node.entity, node.slot, v)
        branches = []
        for e in g.in_edges(v):
            b = Projection(e.relation, build(e.src), e.slot, v)
            branches.append(Negation(b) if e.negated else b)
        if len(branches) == 1:
            return branches[0]
        if g.union_node == v:
            return Union(tuple(branches))
        return Intersection(tuple(branches))

    return build(g.answer if root is None else root)


def to_dnf(cg) -> list:
    """Rewrite into a list of union-free trees whose answer union equals ``cg``."""
    if isinstance(cg, Anchor):
        return [cg]
    if isinstance(cg, Projection):
        return [Projection(cg.relation, c, cg.slot, cg.node) for c in to_dnf(cg.child)]
    if isinstance(cg, Negation):
        inner = to_dnf(cg.child)
        if len(inner) != 1:
            raise UnsupportedUnionShape("union below a negation")
        return [Negation(inner[0])]
    if isinstance(cg, Union):
        return [d for c in cg.children for d in to_dnf(c)]
    if isinstance(cg, Intersection):
        combos = [[]]
        for c in cg.children:
            combos = [prev + [d] for prev in combos for d in to_dnf(c)]
        return [Intersection(tuple(parts)) for parts in combos]
    raise TypeError(f"not a computation-graph node: {cg!r}")


def contains_negation(cg) -> bool:
    if isinstance(cg, Negation):
        return True
    if isinstance(cg, Anchor):
        return False
    if isinstance(cg, Projection):
        return contains_negation(cg.child)
    return any(contains_negation(c) for c in cg.children)


def projections(cg) -> list[Projection]:
    """All projection nodes, children before parents."""
    out = []

    def walk(n):
        if isinstance(n, Projection):
            walk(n.child)
            out.append(n)
        elif isinstance(n, Negation):
            walk(n.child)
        elif isinstance(n, (Intersection, Union)):
            for c in n.children:
                walk(c)

    walk(cg)
    return out


# --- instances and the query file format ------------------------------------


@dataclass
class QueryInstance:
    type: QueryType
    anchors: list[int]
    relations: list[int]
    easy: frozenset = field(default_factory=frozenset)
    hard: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.type = as_query_type(self.type)
        self.anchors = [int(a) for a in self.anchors]
        self.relations = [int(r) for r in self.relations]
        self.easy = frozenset(int(x) for x in self.easy)
        self.hard = frozenset(int(x) for x in self.hard)

    @property
    def answers(self) -> frozenset:
        return self.easy | self.hard

    @property
    def degenerate(self) -> bool:
        return not self.answers

    def graph(self, num_relations: Optional[int] = None) -> QueryGraph:
        return build_query_graph(self.type, self.anchors, self.relations, num_relations)

    def to_record(self, kg) -> dict:
        return {
            "type": str(self.type),
            "anchors": [kg.entity_labels[a] for a in self.anchors],
            "relations": [kg.relation_labels[r] for r in self.relations],
            "easy_answers": sorted(kg.entity_labels[x] for x in self.easy),
            "hard_answers": sorted(kg.entity_labels[x] for x in self.hard),
        }

    @classmethod
    def from_record(cls, rec: dict, kg) -> "QueryInstance":
        t = as_query_type(rec["type"])
        inst = cls(
            t,
            [kg.entity(a) for a in rec["anchors"]],
            [kg.relation(r) for r in rec["relations"]],
            [kg.entity(x) for x in rec.get("easy_answers", [])],
            [kg.entity(x) for x in rec.get("hard_answers", [])],
        )
        inst.graph(kg.num_relations)  # arity check
        return inst


def write_queries(path, instances, kg) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(kg), ensure_ascii=False) + "\n")


def read_queries(path, kg) -> list[QueryInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QueryInstance.from_record(json.loads(line), kg))
    return out
