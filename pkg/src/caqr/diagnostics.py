"""Gradient checks over every primitive and the full loss, and context timing."""

from __future__ import annotations

import time
from typing import Sequence

import numpy as np

from .autodiff import Tape, grad_check
from .backends import make_backend
from .config import TrainConfig
from .context import relation_induced_embedding
from .kg import KnowledgeGraph
from .model import QueryModel
from .queries import ALL_TYPES, QueryType, build_query_graph
from .synthetic import generate_queries, random_triples
from .trainer import group_loss, make_group

PRIMITIVE_TOLERANCE = 1e-4
FULL_LOSS_TOLERANCE = 1e-3


def _weighted(tape: Tape, out, seed: int):
    """Scalar ``sum(out * w)`` with fixed random ``w`` so no adjoint cancels."""
    w = np.random.default_rng(seed).uniform(0.5, 1.5, size=out.shape)
    return tape.sum(out * tape.const(w)) if out.shape else out


def primitive_cases(seed: int = 7) -> dict:
    """Name -> (tape function, input point) for every primitive."""
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(3, 4))
    n = rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    pos = rng.uniform(0.3, 3.0, size=(3, 4))
    away = np.where(np.abs(m) < 0.1, 0.5, m)  # keep kinks out of the stencil
    idx = np.array([0, 2, 2, 1])
    seg = np.array([0, 1, 1, 0])
    return {
        "add": (lambda t, x: t.add(x["a"], x["b"]), {"a": m, "b": rng.normal(size=(3, 4))}),
        "sub": (lambda t, x: t.sub(x["a"], x["b"]), {"a": m, "b": rng.normal(size=(3, 4))}),
        "mul": (lambda t, x: t.mul(x["a"], x["b"]), {"a": m, "b": rng.normal(size=(3, 4))}),
        "div": (lambda t, x: t.div(x["a"], x["b"]), {"a": m, "b": pos}),
        "add_bias": (lambda t, x: t.add_bias(x["a"], x["b"]), {"a": m, "b": v}),
        "matmul_mm": (lambda t, x: t.matmul(x["a"], x["b"]), {"a": m, "b": n}),
        "matmul_vm": (lambda t, x: t.matmul(x["a"], x["b"]), {"a": v, "b": n}),
        "matmul_mv": (lambda t, x: t.matmul(x["a"], x["b"]), {"a": m, "b": v}),
        "matmul_vv": (lambda t, x: t.matmul(x["a"], x["b"]), {"a": v, "b": rng.normal(size=4)}),
        "concat": (lambda t, x: t.concat([x["a"], x["b"]], axis=-1), {"a": m, "b": rng.normal(size=(3, 2))}),
        "slice": (lambda t, x: t.slice(x["a"], 1, 3), {"a": m}),
        "reshape": (lambda t, x: t.reshape(x["a"], (2, 6)), {"a": m}),
        "gather": (lambda t, x: t.gather(x["a"], idx), {"a": m}),
        "segment_sum": (lambda t, x: t.segment_sum(x["a"], seg, 2, [0.5, 1.0, 2.0, 0.25]), {"a": rng.normal(size=(4, 3))}),
        "sum_axis0": (lambda t, x: t.sum(x["a"], axis=0), {"a": m}),
        "sum_axis1": (lambda t, x: t.sum(x["a"], axis=1), {"a": m}),
        "mean": (lambda t, x: t.mean(x["a"]), {"a": m}),
        "l1norm": (lambda t, x: t.l1norm(x["a"], axis=-1), {"a": away}),
        "l2norm": (lambda t, x: t.l2norm(x["a"], axis=-1), {"a": m}),
        "relu": (lambda t, x: t.relu(x["a"]), {"a": away}),
        "abs": (lambda t, x: t.abs(x["a"]), {"a": away}),
        "sigmoid": (lambda t, x: t.sigmoid(x["a"]), {"a": 3 * m}),
        "softplus": (lambda t, x: t.softplus(x["a"]), {"a": 3 * m}),
        "exp": (lambda t, x: t.exp(x["a"]), {"a": m}),
        "log": (lambda t, x: t.log(x["a"]), {"a": pos}),
        "clamp": (lambda t, x: t.clamp(x["a"], -0.5, 0.5), {"a": np.where(np.abs(np.abs(m) - 0.5) < 0.1, 0.2, m)}),
        "lgamma": (lambda t, x: t.lgamma(x["a"]), {"a": pos}),
        "digamma": (lambda t, x: t.digamma(x["a"]), {"a": pos}),
        "sum_list": (lambda t, x: t.sum_list([x["a"], x["b"], x["c"]]), {"a": m, "b": 2 * m, "c": -m}),
        "mean_list": (lambda t, x: t.mean_list([x["a"], x["b"]]), {"a": m, "b": rng.normal(size=(3, 4))}),
        "min_list": (lambda t, x: t.min_list([x["a"], x["b"]]), {"a": m, "b": m + np.where(rng.random((3, 4)) < 0.5, 0.7, -0.7)}),
        "softmax_list": (
            lambda t, x: t.sum_list([p * c for p, c in zip(t.softmax_list([x["a"], x["b"], x["c"]]), (1.0, 2.0, 3.0))]),
            {"a": m, "b": rng.normal(size=(3, 4)), "c": rng.normal(size=(3, 4))},
        ),
    }


def special_cases(seed: int = 11) -> dict:
    rng = np.random.default_rng(seed)
    small = rng.uniform(0.05, 2.0, size=6)
    large = rng.uniform(5.0, 400.0, size=6)
    return {
        "lgamma_small": (lambda t, x: t.lgamma(x["a"]), {"a": small}),
        "lgamma_large": (lambda t, x: t.lgamma(x["a"]), {"a": large}),
        "digamma_small": (lambda t, x: t.digamma(x["a"]), {"a": small}),
        "digamma_large": (lambda t, x: t.digamma(x["a"]), {"a": large}),
    }


def check_case(fn, point, seed: int = 0) -> float:
    return grad_check(lambda t, x: _weighted(t, fn(t, x), seed), point)


def primitive_gradchecks(seed: int = 7) -> dict[str, float]:
    """Max relative gradient error per primitive and special function."""
    cases = {**primitive_cases(seed), **special_cases(seed + 4)}
    return {name: check_case(fn, point, i) for i, (name, (fn, point)) in enumerate(cases.items())}


def tiny_config(backend: str, **overrides) -> TrainConfig:
    base = dict(
        backend=backend,
        dim=3,
        pos_dim=2,
        role_dim=2,
        type_dim=2,
        negatives=3,
        context_samples=4,
        margin=2.0,
        var_weight=0.5,
        dtype="float64",
        init_range=0.8,
    )
    base.update(overrides)
    return TrainConfig(**base)


def full_loss_setup(backend: str, seed: int = 0, **overrides):
    """Model, graph and one fixed group per supported type for a deterministic loss."""
    cfg = tiny_config(backend, seed=seed, **overrides)
    kg = KnowledgeGraph.from_labeled(random_triples(14, 3, 60, seed))
    model = QueryModel(cfg, kg.num_entities, kg.num_relations)
    types = [t for t in ALL_TYPES if model.backend.supports_negation or not t.has_negation]
    rng = np.random.default_rng(seed)
    groups = []
    for i, t in enumerate(types):
        inst = generate_queries(kg, kg, [t], 1, seed=seed * 100 + i)
        if inst:
            groups.append(make_group(kg, t, inst, cfg.negatives, rng))
    return model, kg, groups


def full_loss_gradcheck(backend: str, seed: int = 0, max_coords=None, **overrides) -> float:
    model, kg, groups = full_loss_setup(backend, seed, **overrides)
    denom = len(groups)

    def loss(tape, P):
        return tape.sum_list([group_loss(model, tape, P, kg, gb, denom)[0] for gb in groups])

    return grad_check(loss, model.params, max_coords=max_coords, seed=seed)


def bench_relation_context(samples: Sequence[int] = (60, 120, 240, 480), calls: int = 1000, dim: int = 400, seed: int = 0) -> dict:
    """Mean seconds per relation-induced embedding call for each sample size."""
    size = max(max(samples), 1)
    kg = KnowledgeGraph.from_labeled([(f"h{i}", "r", f"t{i}") for i in range(2 * size)])
    backend = make_backend("box", dim)
    params = backend.init_params(np.random.default_rng(seed), kg.num_entities, kg.num_relations, 0.1)
    graph = build_query_graph(QueryType.P1, [0], [0])
    out = {}
    for k in samples:
        tape = Tape(np.float32, record=False)
        P = {name: tape.param(name, arr.astype(np.float32)) for name, arr in params.items()}
        relation_induced_embedding(tape, P, backend, kg, graph, 1, k, seed)  # warm the sample cache
        start = time.perf_counter()
        for _ in range(calls):
            relation_induced_embedding(tape, P, backend, kg, graph, 1, k, seed)
        out[int(k)] = (time.perf_counter() - start) / calls
    return out
