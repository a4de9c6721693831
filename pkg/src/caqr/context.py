"""Structural and relation-induced query context, and its integration.

For every variable or answer node ``v`` of a query graph the context bundle
holds a position embedding, a role embedding, the graph's type embedding and
a relation-induced embedding (mean embedding of KG entities sitting at the
matching end of the relations incident to ``v``). :func:`integrate` fuses the
bundle into the embedding produced by a projection landing on ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var
from .backends import BetaEmbedding, init_mlp, mlp
from .errors import DimMismatch, NoIncidentRelations, PositionOverflow
from .kg import HEAD, TAIL, KnowledgeGraph
from .queries import (
    ANCHOR,
    MAX_POSITION,
    NUM_POSITIONS,
    NUM_ROLES,
    QueryGraph,
    count_table,
    type_vector,
)

TYPE_VECTOR_SIZE = NUM_ROLES * NUM_POSITIONS


@dataclass(frozen=True)
class ContextFlags:
    use_position: bool = True
    use_role: bool = True
    use_type: bool = True
    use_relation_induced: bool = True


@dataclass
class ContextBundle:
    position: Var
    role: Var
    type: Var
    relation: Var


def init_context_params(rng, pos_dim, role_dim, type_dim, entity_width, query_width, init_range):
    hidden = query_width
    params = {
        "ctx.position": rng.uniform(-init_range, init_range, size=(NUM_POSITIONS, pos_dim)),
        "ctx.role": rng.uniform(-init_range, init_range, size=(NUM_ROLES, role_dim)),
        "ctx.type": rng.uniform(-init_range, init_range, size=(TYPE_VECTOR_SIZE, type_dim)),
    }
    params.update(init_mlp(rng, "ctx.mlp_q", [query_width, hidden, hidden]))
    params.update(init_mlp(rng, "ctx.mlp_i", [pos_dim + role_dim + type_dim + entity_width, hidden, hidden]))
    bound = np.sqrt(6.0 / (3 * hidden))
    params["ctx.out"] = rng.uniform(-bound, bound, size=(2 * hidden, query_width))
    return params


# --- structural context ----------------------------------------------------------


def build_structure_context(tape: Tape, P: dict, g: QueryGraph, v: int, rows: int = 1):
    """Position, role and type embeddings of node ``v``, one row per query."""
    node = g.nodes[v]
    if node.position > MAX_POSITION:
        raise PositionOverflow(f"position {node.position} exceeds {MAX_POSITION}")
    p = tape.gather(P["ctx.position"], np.full(rows, node.position))
    r = tape.gather(P["ctx.role"], np.full(rows, node.role))
    tv = np.tile(type_vector(count_table(g)), (rows, 1))
    return p, r, tape.const(tv) @ P["ctx.type"]


# --- relation-induced context ---------------------------------------------------


def relation_context_plan(kg: KnowledgeGraph, g: QueryGraph, v: int, K: int, seed: int = 0):
    """Entity ids and weights whose weighted sum is the relation-induced embedding.

    Incoming relations contribute sampled tails, outgoing relations sampled
    heads; each side is a mean over its pooled samples, and the two side
    means are averaged. A side with no relations (or no samples) drops out.
    """
    if g.nodes[v].role == ANCHOR:
        raise NoIncidentRelations("anchor nodes carry no relation-induced context")
    in_rel = sorted({e.relation for e in g.in_edges(v)})
    out_rel = sorted({e.relation for e in g.out_edges(v)})
    if not in_rel and not out_rel:
        raise NoIncidentRelations(f"node {v} has no incident relations")
    sides = []
    for rels, side in ((in_rel, TAIL), (out_rel, HEAD)):
        pooled = [kg.sample_context_ids(r, side, K, seed) for r in rels]
        pooled = np.concatenate(pooled) if pooled else np.zeros(0, dtype=np.int64)
        if len(pooled):
            sides.append(pooled)
    if not sides:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    ids = np.concatenate(sides)
    weights = np.concatenate([np.full(len(s), 1.0 / (len(s) * len(sides))) for s in sides])
    return ids, weights


def relation_induced_rows(tape: Tape, P: dict, backend, plans) -> Var:
    """Batched relation-induced embeddings, one plan ``(ids, weights)`` per row."""
    ids = np.concatenate([p[0] for p in plans])
    weights = np.concatenate([p[1] for p in plans])
    segments = np.repeat(np.arange(len(plans)), [len(p[0]) for p in plans])
    if len(ids) == 0:
        return tape.const(np.zeros((len(plans), backend.entity_width)))
    rows = backend.context_rows(tape, P, ids)
    return tape.segment_sum(rows, segments, len(plans), weights)


def relation_induced_embedding(tape, P, backend, kg, g, v, K, seed=0) -> Var:
    return relation_induced_rows(tape, P, backend, [relation_context_plan(kg, g, v, K, seed)])


# --- integration -------------------------------------------------------------------


def build_bundle(tape, P, backend, kg, graphs, v, K, seed, flags: ContextFlags, plans=None) -> ContextBundle:
    """Context bundle for node ``v`` of a batch of same-template graphs."""
    rows = len(graphs)
    p, r, t = build_structure_context(tape, P, graphs[0], v, rows)
    if flags.use_relation_induced:
        if plans is None:
            plans = [relation_context_plan(kg, g, v, K, seed) for g in graphs]
        lv = relation_induced_rows(tape, P, backend, plans)
    else:
        lv = tape.const(np.zeros((rows, backend.entity_width)))
    zero = lambda x: tape.const(np.zeros(x.shape))  # noqa: E731
    return ContextBundle(
        p if flags.use_position else zero(p),
        r if flags.use_role else zero(r),
        t if flags.use_type else zero(t),
        lv,
    )


def integrate(tape: Tape, P: dict, backend, q, bundle: ContextBundle):
    """``W' (MLP_q(q) | MLP_I(p, r, g, l))`` followed by the backend validity map."""
    qv = backend.to_vector(tape, q)
    if qv.shape[-1] != P["ctx.mlp_q.w1"].shape[0]:
        raise DimMismatch(f"query width {qv.shape[-1]} != {P['ctx.mlp_q.w1'].shape[0]}")
    ctx = tape.concat([bundle.position, bundle.role, bundle.type, bundle.relation], axis=-1)
    if ctx.shape[-1] != P["ctx.mlp_i.w1"].shape[0]:
        raise DimMismatch(f"context width {ctx.shape[-1]} != {P['ctx.mlp_i.w1'].shape[0]}")
    hq = mlp(tape, P, "ctx.mlp_q", qv)
    hc = mlp(tape, P, "ctx.mlp_i", ctx)
    return backend.from_vector(tape, tape.concat([hq, hc], axis=-1) @ P["ctx.out"])


# --- variance loss (Beta backend) --------------------------------------------------


def beta_variance(tape: Tape, q: BetaEmbedding) -> Var:
    """Per-dimension variance ``ab / ((a+b)^2 (a+b+1))``."""
    s = q.alpha + q.beta
    return (q.alpha * q.beta) / (s * s * (s + 1.0))


def variance_loss(tape: Tape, q: BetaEmbedding, q_adj: BetaEmbedding) -> Var:
    """L2 norm of the variance shift, one value per row."""
    return tape.l2norm(beta_variance(tape, q) - beta_variance(tape, q_adj), axis=-1)
