import json
import math

import numpy as np
import pytest

from caqr.autodiff import Tape, backward
from caqr.checkpoint import load_checkpoint, save_checkpoint
from caqr.config import TrainConfig, preset
from caqr.diagnostics import FULL_LOSS_TOLERANCE, full_loss_gradcheck, full_loss_setup
from caqr.errors import (
    CheckpointError,
    ConfigError,
    DivergedLoss,
    NegationUnsupported,
    NoNegativesAvailable,
    ShapeMismatch,
    VarianceOnBoxBackend,
)
from caqr.kg import KnowledgeGraph
from caqr.model import QueryModel
from caqr.queries import QueryInstance, QueryType
from caqr.synthetic import generate_queries, random_kg_with_queries, random_triples
from caqr.trainer import (
    AdamState,
    batch_gradients,
    group_by_type,
    group_loss,
    load_model,
    make_group,
    optimizer_update,
    qe_loss,
    sample_batch,
    sample_negatives,
    save_model,
    total_loss,
    train_loop,
    uses_variance,
)


def desk(**overrides):
    base = dict(dim=8, pos_dim=4, role_dim=4, type_dim=4, negatives=4, batch_size=8, max_steps=3, lr=0.01, margin=6.0)
    base.update(overrides)
    return TrainConfig(**base)


# --- negatives ----------------------------------------------------------------------


def test_sample_negatives_avoids_answers():
    kg = KnowledgeGraph.from_labeled(random_triples(100, 2, 300, seed=1))
    inst = QueryInstance(QueryType.P1, [0], [0], easy=[1, 2], hard=[3])
    neg = sample_negatives(kg, inst, 5, np.random.default_rng(0))
    assert len(neg) == 5 and len(set(neg.tolist())) == 5
    assert not set(neg.tolist()) & {1, 2, 3}


def test_sample_negatives_duplicates_only_when_pool_small(abc_graph):
    inst = QueryInstance(QueryType.P1, [0], [0], easy=[1])
    neg = sample_negatives(abc_graph, inst, 6, np.random.default_rng(0))
    assert set(neg.tolist()) <= {0, 2}
    assert len(neg) == 6


def test_sample_negatives_all_answers(abc_graph):
    inst = QueryInstance(QueryType.P1, [0], [0], easy=[0, 1, 2])
    with pytest.raises(NoNegativesAvailable):
        sample_negatives(abc_graph, inst, 1, np.random.default_rng(0))


def test_sample_negatives_deterministic(small_graph):
    inst = QueryInstance(QueryType.P1, [0], [0], easy=[4])
    a = sample_negatives(small_graph, inst, 7, np.random.default_rng(11))
    b = sample_negatives(small_graph, inst, 7, np.random.default_rng(11))
    np.testing.assert_array_equal(a, b)


# --- losses ---------------------------------------------------------------------------


def test_qe_loss_examples():
    assert qe_loss(24.0, [24.0], 24.0) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert qe_loss(24.0, [24.0], 24.0) == pytest.approx(1.3863, abs=1e-4)
    # far negatives contribute nothing; -log(sigmoid(1)) = log(1 + e^-1)
    assert qe_loss(0.0, [1e6, 1e6], 1.0) == pytest.approx(0.31326168751822286, abs=1e-12)
    assert qe_loss(0.0, [1e6], 1.0) == pytest.approx(0.3133, abs=1e-4)


def test_qe_loss_monotone_in_positive_distance():
    vals = [qe_loss(d, [3.0, 9.0], 5.0) for d in np.linspace(20, 0, 41)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert min(vals) > 0


def test_qe_loss_needs_negatives():
    with pytest.raises(ValueError):
        qe_loss(1.0, [], 1.0)


def test_total_loss_examples():
    assert total_loss(1.0, 0.5, 0.1, "beta") == pytest.approx(1.05)
    assert total_loss(1.0, 0.5, 0.0, "beta") == 1.0
    assert total_loss(1.0, 0.0, 0.1, "box") == 1.0
    with pytest.raises(VarianceOnBoxBackend):
        total_loss(1.0, 0.5, 0.1, "box")
    with pytest.raises(ValueError):
        total_loss(1.0, 0.5, -0.1, "beta")


def test_group_loss_matches_scalar_formula():
    model, kg, groups = full_loss_setup("box", seed=1)
    gb = groups[0]
    tape = Tape(np.float64)
    P = model.bind(tape)
    loss, qe_sum, _ = group_loss(model, tape, P, kg, gb, 1)
    q = model.embed(tape, P, kg, gb.type, gb.instances)
    pos = model.distances(tape, P, q, gb.positives).data
    expected = 0.0
    for i in range(len(gb.instances)):
        neg = model.distances(tape, P, q, gb.negatives[i], np.full(gb.negatives.shape[1], i)).data
        expected += qe_loss(pos[i], neg, model.cfg.margin)
    assert qe_sum == pytest.approx(expected, rel=1e-12)
    assert float(loss.data) == pytest.approx(expected, rel=1e-12)


def test_uses_variance_only_for_beta_with_context():
    assert uses_variance(desk(backend="beta"))
    assert not uses_variance(desk(backend="box"))
    assert not uses_variance(desk(backend="beta", use_caqr=False))
    assert not uses_variance(desk(backend="beta", var_weight=0.0))


def test_variance_term_reaches_integration_and_base_params():
    model, kg, groups = full_loss_setup("beta", seed=2)
    tape = Tape(np.float64)
    P = model.bind(tape)
    gb = groups[0]
    q = model.embed(tape, P, kg, gb.type, gb.instances)
    base = model.embed(tape, P, kg, gb.type, gb.instances, use_context=False)
    from caqr.context import variance_loss

    var = tape.sum(variance_loss(tape, q[0], base[0]))
    assert float(var.data) > 0
    grads = backward(tape, var)
    assert np.abs(grads["ctx.out"]).max() > 0
    assert np.abs(grads["beta.proj.w1"]).max() > 0


@pytest.mark.parametrize("backend", ["box", "beta"])
def test_full_loss_gradient_sampled(backend):
    assert full_loss_gradcheck(backend, seed=3, max_coords=40) < FULL_LOSS_TOLERANCE


# --- optimizer ------------------------------------------------------------------------


def test_adam_first_step_on_square():
    x = {"x": np.array([1.0])}
    new, state = optimizer_update(x, {"x": 2 * x["x"]}, AdamState(), lr=0.1)
    # m_hat = g and v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps)
    assert new["x"][0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert new["x"][0] == pytest.approx(0.9, abs=1e-8)
    assert state.step == 1


def test_adam_zero_gradient_keeps_params():
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(4)}
    new, _ = optimizer_update(params, {"a": np.zeros((2, 3))}, AdamState(), lr=0.5)
    for k in params:
        np.testing.assert_array_equal(new[k], params[k])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        optimizer_update({"a": np.zeros(3)}, {"a": np.zeros(4)}, AdamState(), lr=0.1)


def test_adam_matches_reference_trace():
    rng = np.random.default_rng(0)
    p = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(4)]
    params, state = {"p": p.copy()}, AdamState()
    for g in grads:
        params, state = optimizer_update(params, {"p": g}, state, lr=0.05)
    ref, m, v = p.copy(), np.zeros(5), np.zeros(5)
    for t, g in enumerate(grads, start=1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(params["p"], ref, rtol=1e-14)


# --- batching ---------------------------------------------------------------------------


def test_group_by_type_drops_empty_and_orders():
    data = [
        QueryInstance(QueryType.I2, [0, 1], [0, 0], easy=[2]),
        QueryInstance(QueryType.P1, [0], [0], easy=[]),
        QueryInstance(QueryType.P1, [0], [0], hard=[1]),
    ]
    groups = group_by_type(data)
    assert list(groups) == [QueryType.P1, QueryType.I2]
    assert len(groups[QueryType.P1]) == 1


def test_sample_batch_deterministic_and_complete(small_graph):
    data = generate_queries(small_graph, small_graph, ["1p", "2p", "2i"], 10, seed=1)
    by_type = group_by_type(data)
    cfg = desk(batch_size=12)
    a = sample_batch(small_graph, by_type, cfg, 5)
    b = sample_batch(small_graph, by_type, cfg, 5)
    assert sum(len(g.instances) for g in a) == 12
    for x, y in zip(a, b):
        assert x.type == y.type
        np.testing.assert_array_equal(x.positives, y.positives)
        np.testing.assert_array_equal(x.negatives, y.negatives)
    for g in a:
        for inst, p, negs in zip(g.instances, g.positives, g.negatives):
            assert p in inst.answers
            assert not set(negs.tolist()) & inst.answers


def test_worker_count_does_not_change_gradients():
    kg, data = random_kg_with_queries(seed=2)
    cfg = desk(backend="beta", batch_size=16)
    model = QueryModel(cfg, kg.num_entities, kg.num_relations)
    groups = sample_batch(kg, group_by_type(data), cfg, 1)
    assert len(groups) > 1
    one = batch_gradients(model, kg, groups, workers=1)
    three = batch_gradients(model, kg, groups, workers=3)
    assert one[1] == three[1] and one[2] == three[2]
    for k in one[0]:
        assert np.array_equal(one[0][k], three[0][k]), k


# --- checkpoints -----------------------------------------------------------------------


def test_checkpoint_file_round_trip(tmp_path):
    params = {"b": np.arange(6, dtype=np.float32).reshape(2, 3), "a": np.array([1.5], dtype=np.float32)}
    save_checkpoint(tmp_path / "m.ckpt", params, {"backend": "box", "step": 3})
    loaded, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta["backend"] == "box" and meta["step"] == 3
    for k in params:
        assert np.array_equal(loaded[k], params[k])


def test_checkpoint_rejects_damage(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"a": np.ones(4, dtype=np.float32)}, {"step": 1})
    raw = path.read_bytes()
    path.write_bytes(raw[:-2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(raw + b"xx")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_one_step_run_round_trip(tmp_path, abc_graph):
    data = [QueryInstance(QueryType.P1, [0], [0], easy=[1, 2])]
    ckpt = tmp_path / "model.ckpt"
    metrics = tmp_path / "metrics.jsonl"
    result = train_loop(abc_graph, data, desk(max_steps=1, batch_size=1), checkpoint_path=ckpt, metrics_path=metrics)
    assert len(result.history) == 1 and math.isfinite(result.history[0]["loss"])
    record = json.loads(metrics.read_text().splitlines()[0])
    assert set(record) == {"step", "loss", "qe_loss", "var_loss", "lr"}
    loaded = load_model(ckpt)
    assert set(loaded.params) == set(result.model.params)
    for k, v in result.model.params.items():
        assert np.array_equal(loaded.params[k], v)


def test_checkpoint_reproduces_distances(tmp_path):
    kg, data = random_kg_with_queries(seed=4)
    for backend in ("box", "beta"):
        result = train_loop(kg, data, desk(backend=backend, max_steps=5), checkpoint_path=tmp_path / f"{backend}.ckpt")
        loaded = load_model(tmp_path / f"{backend}.ckpt")
        batch = [i for i in data if i.type == QueryType.I2][:5]
        a = result.model.score_all(kg, QueryType.I2, batch)
        b = loaded.score_all(kg, QueryType.I2, batch)
        assert a.dtype == np.float32
        assert np.array_equal(a, b)


def test_intermediate_checkpoints(tmp_path):
    kg, data = random_kg_with_queries(seed=5)
    train_loop(kg, data, desk(max_steps=4, checkpoint_every=2), checkpoint_path=tmp_path / "m.ckpt")
    assert (tmp_path / "m-step2.ckpt").exists()
    assert not (tmp_path / "m-step4.ckpt").exists()
    assert load_model(tmp_path / "m.ckpt").cfg.max_steps == 4


def test_box_with_negation_fails_before_training(tmp_path, small_graph):
    data = generate_queries(small_graph, small_graph, ["1p", "2in"], 3, seed=0)
    assert any(i.type == QueryType.IN2 for i in data)
    metrics = tmp_path / "metrics.jsonl"
    with pytest.raises(NegationUnsupported) as info:
        train_loop(small_graph, data, desk(backend="box"), metrics_path=metrics)
    assert isinstance(info.value, ConfigError)
    assert "2in" in str(info.value)
    assert not metrics.exists()


def test_fixed_seed_runs_repeat_exactly():
    kg, data = random_kg_with_queries(seed=6)
    runs = [train_loop(kg, data, desk(max_steps=100, batch_size=4)) for _ in range(2)]
    assert [h["loss"] for h in runs[0].history] == [h["loss"] for h in runs[1].history]
    for k in runs[0].model.params:
        assert np.array_equal(runs[0].model.params[k], runs[1].model.params[k])


def test_loss_moving_average_decreases():
    kg, data = random_kg_with_queries(num_entities=50, seed=7)
    cfg = preset("desk", max_steps=400, seed=7)
    losses = np.array([h["loss"] for h in train_loop(kg, data, cfg).history])
    windows = losses.reshape(4, 100).mean(axis=1)
    assert np.all(np.diff(windows) < 0), windows
    smooth = np.convolve(losses, np.ones(100) / 100, mode="valid")
    assert smooth[-1] < smooth[0]


def test_beta_run_logs_variance(tmp_path):
    kg, data = random_kg_with_queries(types=("1p", "2in"), seed=8)
    result = train_loop(kg, data, desk(backend="beta", max_steps=2))
    assert all(h["var_loss"] > 0 for h in result.history)
    assert all(h["loss"] == pytest.approx(h["qe_loss"] + 0.1 * h["var_loss"]) for h in result.history)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_loss(abc_graph):
    data = [QueryInstance(QueryType.P1, [0], [0], easy=[1])]
    model = QueryModel(desk(), abc_graph.num_entities, abc_graph.num_relations)
    model.params["entity"][:] = np.nan
    with pytest.raises(DivergedLoss) as info:
        train_loop(abc_graph, data, desk(max_steps=2), model=model)
    assert info.value.exit_code != 0
    assert "1" in str(info.value)


def test_validation_report_logged(tmp_path):
    kg, data = random_kg_with_queries(seed=9)
    valid = [QueryInstance(i.type, i.anchors, i.relations, hard=i.answers) for i in data[:10]]
    lines = []
    result = train_loop(kg, data, desk(max_steps=2), metrics_path=tmp_path / "m.jsonl", valid=valid, log=lines.append)
    last = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[-1])
    assert "valid_mrr" in last and set(last["valid_mrr"]) == set(result.valid_report.per_type)
    assert lines and "mrr" in lines[0]


# --- configuration ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "key, value",
    [
        ("context_samples", -1),
        ("margin", 0.0),
        ("negatives", 0),
        ("var_weight", -0.5),
        ("backend", "cone"),
        ("lr", -1.0),
        ("workers", 0),
    ],
)
def test_config_validation(key, value):
    with pytest.raises(ConfigError) as info:
        TrainConfig(**{key: value})
    assert info.value.key == key


def test_config_defaults_and_presets():
    cfg = TrainConfig()
    assert (cfg.margin, cfg.negatives, cfg.context_samples, cfg.lr, cfg.batch_size) == (24.0, 128, 120, 1e-4, 128)
    assert cfg.pos_dim == cfg.role_dim == cfg.type_dim == 108
    assert cfg.var_weight == 0.1
    small = preset("desk")
    assert small.negatives == 16 and small.pos_dim == 16
    assert preset("desk", dim=12).dim == 12
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
