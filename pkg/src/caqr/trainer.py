"""Negative-sampling training with an optional variance penalty."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import Tape, backward, ordered_sum
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .context import variance_loss
from .errors import (
    CheckpointError,
    DataError,
    DivergedLoss,
    NoNegativesAvailable,
    ShapeMismatch,
    VarianceOnBoxBackend,
)
from .kg import KnowledgeGraph
from .model import QueryModel
from .queries import ALL_TYPES, QueryInstance, QueryType

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# --- loss pieces ---------------------------------------------------------------------


def sample_negatives(kg: KnowledgeGraph, inst: QueryInstance, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` entities drawn uniformly from the non-answers of ``inst``.

    Draws without replacement unless fewer than ``k`` non-answers exist.
    """
    mask = np.ones(kg.num_entities, dtype=bool)
    answers = np.fromiter(inst.answers, dtype=np.int64, count=len(inst.answers))
    mask[answers] = False
    pool = np.flatnonzero(mask)
    if len(pool) == 0:
        raise NoNegativesAvailable(f"every entity answers this {inst.type} query")
    return rng.choice(pool, size=k, replace=len(pool) < k)


def qe_loss(dist_pos: float, dists_neg: Sequence[float], margin: float) -> float:
    """``-log sigmoid(margin - d+) - mean_j log sigmoid(d-_j - margin)``."""
    dists_neg = np.asarray(dists_neg, dtype=np.float64)
    if dists_neg.size == 0:
        raise ValueError("need at least one negative distance")
    pos = np.logaddexp(0.0, dist_pos - margin)
    neg = np.logaddexp(0.0, margin - dists_neg).mean()
    return float(pos + neg)


def total_loss(qe: float, var: float, var_weight: float, backend: str) -> float:
    if var_weight < 0:
        raise ValueError("var_weight must be >= 0")
    if backend == "box":
        if var != 0:
            raise VarianceOnBoxBackend()
        return qe
    return qe + var_weight * var


def uses_variance(cfg: TrainConfig) -> bool:
    return cfg.backend == "beta" and cfg.use_caqr and cfg.var_weight > 0


# --- optimizer -----------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_update(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected adaptive-moment step; returns ``(params, state)``."""
    t = state.step + 1
    new_params, m_out, v_out = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * (g * g)
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        new_params[name] = (p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)).astype(p.dtype, copy=False)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(t, m_out, v_out)


# --- batching ------------------------------------------------------------------------


@dataclass
class GroupBatch:
    """Same-type slice of a mini-batch with its sampled positives and negatives."""

    type: QueryType
    instances: list
    positives: np.ndarray
    negatives: np.ndarray


def group_by_type(dataset: Sequence[QueryInstance]) -> dict:
    groups: dict = {}
    for inst in dataset:
        if not inst.degenerate:
            groups.setdefault(inst.type, []).append(inst)
    return {t: groups[t] for t in ALL_TYPES if t in groups}


def make_group(kg, t, instances, k, rng) -> GroupBatch:
    pos = np.array([rng.choice(sorted(inst.answers)) for inst in instances], dtype=np.int64)
    neg = np.stack([sample_negatives(kg, inst, k, rng) for inst in instances])
    return GroupBatch(QueryType(t), list(instances), pos, neg)


def sample_batch(kg, by_type: dict, cfg: TrainConfig, step: int) -> list[GroupBatch]:
    """Types drawn uniformly, then instances uniformly within each type."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, step]))
    types = list(by_type)
    drawn = rng.integers(len(types), size=cfg.batch_size)
    picks = {t: [] for t in types}
    for ti in drawn:
        pool = by_type[types[ti]]
        picks[types[ti]].append(pool[rng.integers(len(pool))])
    return [make_group(kg, t, picks[t], cfg.negatives, rng) for t in types if picks[t]]


def group_loss(model: QueryModel, tape: Tape, P: dict, kg, gb: GroupBatch, denom: int):
    """Scaled loss Var for one group plus its summed qe and variance terms."""
    cfg = model.cfg
    q = model.embed(tape, P, kg, gb.type, gb.instances)
    b, k = gb.negatives.shape
    d_pos = model.distances(tape, P, q, gb.positives)
    d_neg = model.distances(tape, P, q, gb.negatives.reshape(-1), np.repeat(np.arange(b), k))
    pos_term = tape.softplus(d_pos - cfg.margin)
    neg_term = tape.sum(tape.reshape(tape.softplus(cfg.margin - d_neg), (b, k)), axis=1) * (1.0 / k)
    qe = tape.sum(pos_term + neg_term)
    loss, var_sum = qe, 0.0
    if uses_variance(cfg):
        base = model.embed(tape, P, kg, gb.type, gb.instances, use_context=False)
        terms = [variance_loss(tape, a, c) for a, c in zip(q, base)]
        var = tape.sum(terms[0] if len(terms) == 1 else tape.mean_list(terms))
        loss = qe + var * cfg.var_weight
        var_sum = float(var.data)
    return loss * (1.0 / denom), float(qe.data), var_sum


def batch_gradients(model: QueryModel, kg, groups: list[GroupBatch], workers: int = 1):
    """Mean loss over the batch and its gradients.

    Each group gets its own tape; per-group gradients are summed in group
    order, so the result does not depend on ``workers``.
    """
    denom = sum(len(g.instances) for g in groups)

    def run(gb):
        tape = Tape(model.cfg.np_dtype)
        P = model.bind(tape)
        loss, qe, var = group_loss(model, tape, P, kg, gb, denom)
        return backward(tape, loss), qe, var

    if workers > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, groups))
    else:
        results = [run(g) for g in groups]
    grads = {name: ordered_sum([r[0][name] for r in results]) for name in model.params}
    qe = math.fsum(r[1] for r in results) / denom
    var = math.fsum(r[2] for r in results) / denom
    return grads, qe, var


# --- checkpoints -----------------------------------------------------------------------


def save_model(path, model: QueryModel, step: int) -> None:
    meta = {
        "backend": model.cfg.backend,
        "dim": model.cfg.dim,
        "num_entities": model.num_entities,
        "num_relations": model.num_relations,
        "seed": model.cfg.seed,
        "step": step,
        "config": model.cfg.to_dict(),
    }
    save_checkpoint(path, model.params, meta)


def load_model(path) -> QueryModel:
    params, meta = load_checkpoint(path)
    try:
        cfg = TrainConfig(**meta["config"])
        return QueryModel(cfg, int(meta["num_entities"]), int(meta["num_relations"]), params)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete manifest ({exc})") from None


# --- loop ------------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: QueryModel
    history: list
    valid_report: Optional[object] = None


def train_loop(
    kg_train: KnowledgeGraph,
    dataset: Sequence[QueryInstance],
    cfg: TrainConfig,
    checkpoint_path=None,
    metrics_path=None,
    valid: Optional[Sequence[QueryInstance]] = None,
    log: Optional[Callable[[str], None]] = None,
    model: Optional[QueryModel] = None,
) -> TrainResult:
    by_type = group_by_type(dataset)
    if not by_type:
        raise DataError("training set has no instance with answers")
    if model is None:
        model = QueryModel(cfg, kg_train.num_entities, kg_train.num_relations)
    model.check_supported(list(by_type) + [inst.type for inst in valid or ()])

    state = AdamState()
    history = []
    metrics_fh = None
    if metrics_path:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(metrics_path, "w", encoding="utf-8")
    try:
        for step in range(1, cfg.max_steps + 1):
            groups = sample_batch(kg_train, by_type, cfg, step)
            grads, qe, var = batch_gradients(model, kg_train, groups, cfg.workers)
            loss = total_loss(qe, var, cfg.var_weight, cfg.backend)
            if not math.isfinite(loss):
                raise DivergedLoss(step, loss)
            model.params, state = optimizer_update(model.params, grads, state, cfg.lr)
            record = {"step": step, "loss": loss, "qe_loss": qe, "var_loss": var, "lr": cfg.lr}
            history.append(record)
            if metrics_fh:
                metrics_fh.write(json.dumps(record) + "\n")
            if checkpoint_path and cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < cfg.max_steps:
                p = Path(checkpoint_path)
                save_model(p.with_name(f"{p.stem}-step{step}{p.suffix}"), model, step)
        if checkpoint_path:
            save_model(checkpoint_path, model, cfg.max_steps)
        report = None
        if valid:
            from .evaluator import evaluate

            report = evaluate(model, kg_train, valid, targets="hard")
            record = {"step": cfg.max_steps, "valid_mrr": {t: m["mrr"] for t, m in report.per_type.items()}}
            if metrics_fh:
                metrics_fh.write(json.dumps(record) + "\n")
            if log:
                log(report.table())
    finally:
        if metrics_fh:
            metrics_fh.close()
    return TrainResult(model, history, report)
