"""Batched query embedding: backend operators plus per-projection context integration."""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape
from .backends import make_backend
from .context import ContextFlags, build_bundle, init_context_params, integrate, relation_context_plan
from .errors import NegationUnsupported
from .queries import (
    Anchor,
    Intersection,
    Negation,
    Projection,
    QueryInstance,
    QueryType,
    contains_negation,
    symbolic_graph,
    to_computation_graph,
    to_dnf,
)


def take_rows(tape: Tape, q, idx):
    """Select rows ``idx`` from every field of a backend embedding."""
    return type(q)(*(tape.gather(getattr(q, f.name), idx) for f in dataclasses.fields(q)))


class QueryModel:
    """Parameters and forward computation for one backend (optionally with CaQR)."""

    def __init__(self, cfg, num_entities: int, num_relations: int, params: Optional[dict] = None):
        self.cfg = cfg
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.backend = make_backend(cfg.backend, cfg.dim, cfg.alpha_in)
        self.flags = ContextFlags(cfg.use_position, cfg.use_role, cfg.use_type, cfg.use_relation_induced)
        if params is None:
            params = self._init_params()
        self.params = {k: np.ascontiguousarray(v, dtype=cfg.np_dtype) for k, v in params.items()}
        self._plans: dict = {}

    def _init_params(self) -> dict:
        cfg = self.cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        init_range = cfg.resolved_init_range
        params = self.backend.init_params(rng, self.num_entities, self.num_relations, init_range)
        if cfg.use_caqr:
            params.update(
                init_context_params(
                    rng,
                    cfg.pos_dim,
                    cfg.role_dim,
                    cfg.type_dim,
                    self.backend.entity_width,
                    self.backend.width,
                    init_range,
                )
            )
        return params

    @property
    def integrates(self) -> bool:
        return bool(self.cfg.use_caqr)

    def check_supported(self, types: Sequence) -> None:
        if self.backend.supports_negation:
            return
        bad = sorted({str(t) for t in types if QueryType(str(t)).has_negation})
        if bad:
            raise NegationUnsupported(bad)

    def bind(self, tape: Tape) -> dict:
        return {k: tape.param(k, v) for k, v in self.params.items()}

    # -- forward ------------------------------------------------------------------

    def _plan(self, kg, inst: QueryInstance, v: int):
        key = (inst.type, tuple(inst.relations), v)
        plan = self._plans.get(key)
        if plan is None:
            plan = relation_context_plan(kg, inst.graph(), v, self.cfg.context_samples, self.cfg.seed)
            self._plans[key] = plan
        return plan

    def embed(self, tape: Tape, P: dict, kg, t, batch: Sequence[QueryInstance], use_context: Optional[bool] = None):
        """Answer embeddings of same-type queries, one per DNF disjunct."""
        t = QueryType(str(t))
        if use_context is None:
            use_context = self.integrates
        graph = symbolic_graph(t)
        disjuncts = to_dnf(to_computation_graph(graph))
        if not self.backend.supports_negation and any(contains_negation(d) for d in disjuncts):
            raise NegationUnsupported([str(t)])
        anchors = np.array([inst.anchors for inst in batch], dtype=np.int64)
        relations = np.array([inst.relations for inst in batch], dtype=np.int64)
        backend = self.backend
        bundles: dict = {}
        memo: dict = {}

        def bundle(v):
            if v not in bundles:
                plans = None
                if self.flags.use_relation_induced:
                    plans = [self._plan(kg, inst, v) for inst in batch]
                bundles[v] = build_bundle(
                    tape, P, backend, kg, [graph] * len(batch), v,
                    self.cfg.context_samples, self.cfg.seed, self.flags, plans,
                )
            return bundles[v]

        def emb(n):
            if n in memo:
                return memo[n]
            if isinstance(n, Anchor):
                out = backend.anchor(tape, P, anchors[:, n.slot])
            elif isinstance(n, Projection):
                out = backend.project(tape, P, emb(n.child), relations[:, n.slot])
                if use_context:
                    out = integrate(tape, P, backend, out, bundle(n.node))
            elif isinstance(n, Intersection):
                out = backend.intersect(tape, P, [emb(c) for c in n.children])
            elif isinstance(n, Negation):
                out = backend.negate(tape, emb(n.child))
            else:
                raise TypeError(f"unexpected operator {n!r}")
            memo[n] = out
            return out

        return [emb(d) for d in disjuncts]

    def distances(self, tape: Tape, P: dict, disjuncts: list, ent_idx, query_rows=None):
        """Distance of entity ``ent_idx[i]`` to query row ``query_rows[i]`` (min over disjuncts)."""
        dists = []
        for q in disjuncts:
            if query_rows is not None:
                q = take_rows(tape, q, query_rows)
            dists.append(self.backend.distance(tape, P, ent_idx, q))
        return dists[0] if len(dists) == 1 else tape.min_list(dists)

    def score_all(self, kg, t, batch: Sequence[QueryInstance]) -> np.ndarray:
        """Distances from every entity to every query in ``batch``: shape (len(batch), |V|)."""
        tape = Tape(self.cfg.np_dtype, record=False)
        P = self.bind(tape)
        disjuncts = self.embed(tape, P, kg, t, batch)
        scores = [self.backend.score_all(self.params, q) for q in disjuncts]
        return np.minimum.reduce(scores) if len(scores) > 1 else scores[0]
