"""Box and Beta query-embedding backends.

Operators work on batches: every embedding holds one row per query. Params
are passed as a dict of tape variables so the same code serves training,
inference and finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Var, special
from .errors import EmptyDisjuncts, FewerThanTwo, NegationUnsupported, UnknownRelation

BETA_MIN = 0.05
BETA_MAX = 1e9


@dataclass
class BoxEmbedding:
    center: Var
    offset: Var


@dataclass
class BetaEmbedding:
    alpha: Var
    beta: Var


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(rng, prefix: str, dims: list[int]) -> dict[str, np.ndarray]:
    out = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]), start=1):
        out[f"{prefix}.w{i}"] = xavier(rng, a, b)
        out[f"{prefix}.b{i}"] = np.zeros(b)
    return out


def mlp(tape: Tape, P: dict, prefix: str, x: Var) -> Var:
    """Two-layer perceptron ``relu(x W1 + b1) W2 + b2``."""
    h = tape.relu(tape.add_bias(x @ P[f"{prefix}.w1"], P[f"{prefix}.b1"]))
    return tape.add_bias(h @ P[f"{prefix}.w2"], P[f"{prefix}.b2"])


def _check_relations(P: dict, rel_idx) -> np.ndarray:
    rel_idx = np.asarray(rel_idx, dtype=np.int64)
    n = P["relation"].shape[0] if "relation" in P else P["relation.center"].shape[0]
    if rel_idx.size and (rel_idx.min() < 0 or rel_idx.max() >= n):
        raise UnknownRelation(f"relation ids outside [0, {n})")
    return rel_idx


# --- box ------------------------------------------------------------------------


def box_project(tape: Tape, P: dict, q: BoxEmbedding, rel_idx) -> BoxEmbedding:
    rel_idx = _check_relations(P, rel_idx)
    center = q.center + tape.gather(P["relation.center"], rel_idx)
    offset = q.offset + tape.softplus(tape.gather(P["relation.offset"], rel_idx))
    return BoxEmbedding(center, offset)


def box_intersect(tape: Tape, P: dict, boxes: list[BoxEmbedding]) -> BoxEmbedding:
    if len(boxes) < 2:
        raise FewerThanTwo("intersection needs at least two boxes")
    scores = [mlp(tape, P, "box.att", b.center) for b in boxes]
    weights = tape.softmax_list(scores)
    center = tape.sum_list([w * b.center for w, b in zip(weights, boxes)])
    pooled = tape.mean_list([tape.relu(tape.add_bias(b.offset @ P["box.off.w1"], P["box.off.b1"])) for b in boxes])
    gate = tape.sigmoid(tape.add_bias(pooled @ P["box.off.w2"], P["box.off.b2"]))
    offset = tape.min_list([b.offset for b in boxes]) * gate
    return BoxEmbedding(center, offset)


def box_distance(tape: Tape, points: Var, q: BoxEmbedding, alpha_in: float = 0.02) -> Var:
    """Per-row ``|max(0, |e-c| - o)|_1 + alpha_in * |min(|e-c|, o)|_1``."""
    delta = tape.abs(points - q.center)
    outside = tape.relu(delta - q.offset)
    inside = tape.min_list([delta, q.offset])
    return tape.sum(outside, axis=-1) + alpha_in * tape.sum(inside, axis=-1)


def box_score_all(center: np.ndarray, offset: np.ndarray, entities: np.ndarray, alpha_in: float = 0.02) -> np.ndarray:
    """Distances from every entity to every query, shape (queries, entities)."""
    delta = np.abs(entities[None, :, :] - center[:, None, :])
    off = offset[:, None, :]
    outside = np.maximum(delta - off, 0.0).sum(-1)
    inside = np.minimum(delta, off).sum(-1)
    return outside + alpha_in * inside


# --- beta -------------------------------------------------------------------------


def beta_positive(tape: Tape, x: Var) -> Var:
    """Map raw values into the valid Beta parameter range."""
    return tape.clamp(tape.softplus(x) + BETA_MIN, BETA_MIN, BETA_MAX)


def _split(tape: Tape, v: Var) -> tuple[Var, Var]:
    d = v.shape[-1] // 2
    return tape.slice(v, 0, d), tape.slice(v, d, 2 * d)


def beta_project(tape: Tape, P: dict, q: BetaEmbedding, rel_idx) -> BetaEmbedding:
    rel_idx = _check_relations(P, rel_idx)
    x = tape.concat([q.alpha, q.beta, tape.gather(P["relation"], rel_idx)], axis=-1)
    out = beta_positive(tape, mlp(tape, P, "beta.proj", x))
    return BetaEmbedding(*_split(tape, out))


def beta_intersect(tape: Tape, P: dict, qs: list[BetaEmbedding]) -> BetaEmbedding:
    if len(qs) < 2:
        raise FewerThanTwo("intersection needs at least two embeddings")
    scores = [mlp(tape, P, "beta.att", tape.concat([q.alpha, q.beta], axis=-1)) for q in qs]
    weights = tape.softmax_list(scores)
    alpha = tape.sum_list([w * q.alpha for w, q in zip(weights, qs)])
    beta = tape.sum_list([w * q.beta for w, q in zip(weights, qs)])
    return BetaEmbedding(alpha, beta)


def beta_negate(tape: Tape, q: BetaEmbedding) -> BetaEmbedding:
    return BetaEmbedding(
        tape.clamp(1.0 / q.alpha, BETA_MIN, BETA_MAX),
        tape.clamp(1.0 / q.beta, BETA_MIN, BETA_MAX),
    )


def beta_kl(tape: Tape, a1: Var, b1: Var, a2: Var, b2: Var) -> Var:
    """Elementwise KL(Beta(a1, b1) || Beta(a2, b2))."""
    lg = tape.lgamma
    dg = tape.digamma
    s1 = a1 + b1
    log_b_q = lg(a2) + lg(b2) - lg(a2 + b2)
    log_b_p = lg(a1) + lg(b1) - lg(s1)
    return (
        log_b_q
        - log_b_p
        + (a1 - a2) * dg(a1)
        + (b1 - b2) * dg(b1)
        + (a2 - a1 + b2 - b1) * dg(s1)
    )


def beta_distance(tape: Tape, e: BetaEmbedding, q: BetaEmbedding) -> Var:
    """Per-row sum over dimensions of KL(entity || query)."""
    return tape.sum(beta_kl(tape, e.alpha, e.beta, q.alpha, q.beta), axis=-1)


def _np_lbeta(a, b):
    return special.lgamma(a) + special.lgamma(b) - special.lgamma(a + b)


def beta_score_all(alpha: np.ndarray, beta: np.ndarray, ent_alpha: np.ndarray, ent_beta: np.ndarray) -> np.ndarray:
    a1, b1 = ent_alpha[None, :, :], ent_beta[None, :, :]
    a2, b2 = alpha[:, None, :], beta[:, None, :]
    s1 = ent_alpha + ent_beta
    ent_terms = (-_np_lbeta(ent_alpha, ent_beta))[None]
    dga, dgb, dgs = (special.digamma(v)[None] for v in (ent_alpha, ent_beta, s1))
    kl = (
        _np_lbeta(alpha, beta)[:, None, :]
        + ent_terms
        + (a1 - a2) * dga
        + (b1 - b2) * dgb
        + (a2 - a1 + b2 - b1) * dgs
    )
    return kl.sum(-1).astype(alpha.dtype, copy=False)


def np_beta_positive(x: np.ndarray) -> np.ndarray:
    return np.clip(np.logaddexp(0.0, x) + BETA_MIN, BETA_MIN, BETA_MAX)


# --- backend objects ---------------------------------------------------------------


class BoxBackend:
    """Centers and nonnegative offsets; no negation."""

    name = "box"
    supports_negation = False

    def __init__(self, dim: int, alpha_in: float = 0.02):
        self.dim = dim
        self.alpha_in = alpha_in

    @property
    def width(self) -> int:
        return 2 * self.dim

    @property
    def entity_width(self) -> int:
        return self.dim

    def init_params(self, rng, num_entities, num_relations, init_range) -> dict[str, np.ndarray]:
        d = self.dim
        params = {
            "entity": rng.uniform(-init_range, init_range, size=(num_entities, d)),
            "relation.center": rng.uniform(-init_range, init_range, size=(num_relations, d)),
            "relation.offset": rng.uniform(0.0, init_range, size=(num_relations, d)),
        }
        params.update(init_mlp(rng, "box.att", [d, d, d]))
        params.update(init_mlp(rng, "box.off", [d, d, d]))
        return params

    def anchor(self, tape, P, ent_idx) -> BoxEmbedding:
        center = tape.gather(P["entity"], ent_idx)
        return BoxEmbedding(center, tape.const(np.zeros(center.shape)))

    def project(self, tape, P, q, rel_idx):
        return box_project(tape, P, q, rel_idx)

    def intersect(self, tape, P, qs):
        return box_intersect(tape, P, qs)

    def negate(self, tape, q):
        raise NegationUnsupported()

    def to_vector(self, tape, q: BoxEmbedding) -> Var:
        return tape.concat([q.center, q.offset], axis=-1)

    def from_vector(self, tape, v: Var) -> BoxEmbedding:
        center, raw = _split(tape, v)
        return BoxEmbedding(center, tape.softplus(raw))

    def context_rows(self, tape, P, ent_idx) -> Var:
        return tape.gather(P["entity"], ent_idx)

    def distance(self, tape, P, ent_idx, q: BoxEmbedding) -> Var:
        return box_distance(tape, tape.gather(P["entity"], ent_idx), q, self.alpha_in)

    def score_all(self, params, q: BoxEmbedding) -> np.ndarray:
        return box_score_all(q.center.data, q.offset.data, params["entity"], self.alpha_in)


class BetaBackend:
    """Per-dimension Beta distributions with reciprocal negation."""

    name = "beta"
    supports_negation = True

    def __init__(self, dim: int):
        self.dim = dim

    @property
    def width(self) -> int:
        return 2 * self.dim

    @property
    def entity_width(self) -> int:
        return 2 * self.dim

    def init_params(self, rng, num_entities, num_relations, init_range) -> dict[str, np.ndarray]:
        d = self.dim
        params = {
            "entity": rng.uniform(-init_range, init_range, size=(num_entities, 2 * d)),
            "relation": rng.uniform(-init_range, init_range, size=(num_relations, 2 * d)),
        }
        params.update(init_mlp(rng, "beta.proj", [4 * d, 2 * d, 2 * d]))
        params.update(init_mlp(rng, "beta.att", [2 * d, 2 * d, d]))
        return params

    def _entity(self, tape, P, ent_idx) -> BetaEmbedding:
        return BetaEmbedding(*_split(tape, self.context_rows(tape, P, ent_idx)))

    def anchor(self, tape, P, ent_idx) -> BetaEmbedding:
        return self._entity(tape, P, ent_idx)

    def project(self, tape, P, q, rel_idx):
        return beta_project(tape, P, q, rel_idx)

    def intersect(self, tape, P, qs):
        return beta_intersect(tape, P, qs)

    def negate(self, tape, q):
        return beta_negate(tape, q)

    def to_vector(self, tape, q: BetaEmbedding) -> Var:
        return tape.concat([q.alpha, q.beta], axis=-1)

    def from_vector(self, tape, v: Var) -> BetaEmbedding:
        return BetaEmbedding(*_split(tape, beta_positive(tape, v)))

    def context_rows(self, tape, P, ent_idx) -> Var:
        return beta_positive(tape, tape.gather(P["entity"], ent_idx))

    def distance(self, tape, P, ent_idx, q: BetaEmbedding) -> Var:
        return beta_distance(tape, self._entity(tape, P, ent_idx), q)

    def score_all(self, params, q: BetaEmbedding) -> np.ndarray:
        ent = np_beta_positive(params["entity"])
        d = self.dim
        return beta_score_all(q.alpha.data, q.beta.data, ent[:, :d], ent[:, d:])


def make_backend(name: str, dim: int, alpha_in: float = 0.02):
    if name == "box":
        return BoxBackend(dim, alpha_in)
    if name == "beta":
        return BetaBackend(dim)
    raise ValueError(f"unknown backend {name!r}")


def query_distance(tape: Tape, backend, P: dict, ent_idx, disjuncts: list) -> Var:
    """Minimum backend distance over the disjuncts of a query."""
    if not disjuncts:
        raise EmptyDisjuncts("no disjuncts to score")
    dists = [backend.distance(tape, P, ent_idx, q) for q in disjuncts]
    return dists[0] if len(dists) == 1 else tape.min_list(dists)
