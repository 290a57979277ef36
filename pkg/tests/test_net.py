from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from rxgraph.kernels import KernelKind, gram_matrix
from rxgraph.net import (
    PARAM_FIELDS,
    EmbedNet,
    NetConfig,
    TrainingDivergedError,
    _Adamax,
    binary_cross_entropy,
    contrastive_loss,
    cosine_distance,
    euclidean_distance,
    finite_difference_gradient,
    forward_embed,
    gradient_check,
    init_net,
    joint_loss,
    load_net,
    predict,
    save_net,
    train,
)


def tiny_config(**overrides) -> NetConfig:
    base = dict(
        embed_dim_per_kernel=4,
        fusion_dim=3,
        classifier_dim=3,
        margin_lambda=1.0,
        metric="euclidean",
        learning_rate=0.01,
        batch_size=8,
        max_epochs=30,
        early_stop_patience=5,
        seed=7,
    )
    base.update(overrides)
    return NetConfig(**base)


def random_rows(rng, batch, n_train):
    return tuple(rng.uniform(0.0, 1.0, size=(batch, n_train)) for _ in range(3))


@pytest.fixture(scope="module")
def train_grams(small_graphs):
    graphs = small_graphs
    return (
        gram_matrix(KernelKind.wl_subtree(1), graphs),
        gram_matrix(KernelKind.temporal_topological(0.05), graphs),
        gram_matrix(KernelKind.vertex_histogram(), graphs),
    )


@pytest.fixture(scope="module")
def train_labels(small_cohort):
    return np.array([c.label for c in small_cohort], dtype=float)


# ---------------------------------------------------------------------------
# distances


def test_euclidean_three_four_five():
    assert euclidean_distance([0.0, 0.0], [3.0, 4.0]) == 5.0


def test_euclidean_identical_is_zero():
    assert euclidean_distance([1.5, -2.0, 7.0], [1.5, -2.0, 7.0]) == 0.0


def test_cosine_orthogonal_is_one():
    assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == 1.0


def test_cosine_antipodal_is_two():
    assert cosine_distance([2.0, 0.0], [-5.0, 0.0]) == 2.0


def test_cosine_identical_is_zero():
    assert cosine_distance([0.3, 0.4], [0.3, 0.4]) == 0.0


def test_cosine_zero_norm_rejected():
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_distance([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="zero-norm"):
        cosine_distance([1.0, 2.0], [0.0, 0.0])


@pytest.mark.parametrize("fn", [euclidean_distance, cosine_distance])
def test_distance_shape_mismatch_rejected(fn):
    with pytest.raises(ValueError, match="shapes differ"):
        fn([1.0, 2.0], [1.0, 2.0, 3.0])


def test_distance_symmetry():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.normal(size=(2, 5))
        assert euclidean_distance(a, b) == euclidean_distance(b, a)
        assert cosine_distance(a, b) == cosine_distance(b, a)


def test_cosine_scale_invariant_euclidean_scales():
    a = np.array([1.0, 2.0, -0.5])
    b = np.array([0.25, -1.0, 3.0])
    assert cosine_distance(3.0 * a, 7.0 * b) == pytest.approx(cosine_distance(a, b), rel=1e-12)
    assert euclidean_distance(4.0 * a, 4.0 * b) == pytest.approx(
        4.0 * euclidean_distance(a, b), rel=1e-12
    )


# ---------------------------------------------------------------------------
# losses


def test_contrastive_worked_example():
    # Pairs of [1, 0] at distance 0.5 with margin 1: the two cross pairs each
    # contribute (1 - 0.5)^2 = 0.25, the two self pairs nothing; sum 0.5 over
    # batch size 2 gives exactly 0.25.
    emb = np.array([[0.0], [0.5]])
    labels = np.array([1, 0])
    assert contrastive_loss(emb, labels, margin=1.0, metric="euclidean") == 0.25


def test_contrastive_similar_pairs_use_plain_distance():
    emb = np.array([[0.0], [3.0]])
    labels = np.array([1, 1])
    # Ordered pairs: (0,1) and (1,0) each cost distance 3; batch size 2.
    assert contrastive_loss(emb, labels, margin=1.0, metric="euclidean") == 3.0


def test_contrastive_dissimilar_beyond_margin_is_free():
    emb = np.array([[0.0], [5.0]])
    labels = np.array([1, 0])
    assert contrastive_loss(emb, labels, margin=1.0, metric="euclidean") == 0.0


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_contrastive_matches_ordered_pair_loop(metric):
    # Oracle: iterate every ordered pair (i, j), including i == j, summing
    # Y*D + (1-Y)*hinge^2, divided by the batch size.
    rng = np.random.default_rng(11)
    dist_fn = euclidean_distance if metric == "euclidean" else cosine_distance
    for _ in range(10):
        batch = int(rng.integers(2, 7))
        emb = rng.normal(size=(batch, 4)) + 0.1  # keep norms away from zero
        labels = rng.integers(0, 2, size=batch)
        margin = float(rng.uniform(0.5, 2.0))
        expected = 0.0
        for i in range(batch):
            for j in range(batch):
                d = dist_fn(emb[i], emb[j])
                if labels[i] == labels[j]:
                    expected += d
                else:
                    expected += max(0.0, margin - d) ** 2
        expected /= batch
        got = contrastive_loss(emb, labels, margin=margin, metric=metric)
        assert got == pytest.approx(expected, abs=1e-12)


def test_contrastive_validation():
    emb = np.array([[0.0], [1.0]])
    with pytest.raises(ValueError, match="margin"):
        contrastive_loss(emb, [0, 1], margin=0.0, metric="euclidean")
    with pytest.raises(ValueError, match="metric"):
        contrastive_loss(emb, [0, 1], margin=1.0, metric="manhattan")
    with pytest.raises(ValueError, match="align"):
        contrastive_loss(emb, [0, 1, 1], margin=1.0, metric="euclidean")
    with pytest.raises(ValueError, match="batch, dim"):
        contrastive_loss(np.zeros(3), [0, 1, 1], margin=1.0, metric="euclidean")
    with pytest.raises(ValueError, match="zero-norm"):
        contrastive_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), [0, 1], margin=1.0, metric="cosine")


def test_binary_cross_entropy_half_is_ln2():
    assert binary_cross_entropy([0.5, 0.5], [1.0, 0.0]) == pytest.approx(math.log(2.0), rel=1e-15)


def test_binary_cross_entropy_clips_extremes():
    # Totally wrong predictions at p in {0, 1} clip to the 1e-7 floor instead
    # of producing infinities.
    loss = binary_cross_entropy([0.0, 1.0], [1.0, 0.0])
    # 1 - (1 - 1e-7) is not exactly 1e-7 in floats; replicate the rounding.
    expected = -0.5 * (math.log(1e-7) + math.log(1.0 - (1.0 - 1e-7)))
    assert loss == pytest.approx(expected, rel=1e-15)
    near_zero = binary_cross_entropy([1.0, 0.0], [1.0, 0.0])
    assert near_zero == pytest.approx(-math.log(1.0 - 1e-7), rel=1e-6)


def test_binary_cross_entropy_shape_mismatch():
    with pytest.raises(ValueError, match="same shape"):
        binary_cross_entropy([0.5], [1.0, 0.0])


def test_joint_loss_is_sum_of_parts():
    rng = np.random.default_rng(3)
    config = tiny_config()
    net = init_net(config, n_train=6)
    rows = random_rows(rng, 5, 6)
    labels = rng.integers(0, 2, size=5).astype(float)
    con, ce, joint = joint_loss(net, rows, labels)
    assert joint == con + ce
    emb = forward_embed(net, rows)
    assert con == pytest.approx(
        contrastive_loss(emb, labels, config.margin_lambda, config.metric), abs=1e-12
    )
    prob, _ = predict(net, rows)
    assert ce == pytest.approx(binary_cross_entropy(prob, labels), abs=1e-12)


# ---------------------------------------------------------------------------
# config and init


def test_config_rejects_mismatched_classifier_dim():
    with pytest.raises(ValueError, match="classifier_dim"):
        tiny_config(classifier_dim=4)


@pytest.mark.parametrize(
    "overrides",
    [
        {"embed_dim_per_kernel": 0},
        {"margin_lambda": 0.0},
        {"metric": "dot"},
        {"learning_rate": 0.0},
        {"batch_size": 0},
        {"max_epochs": -1},
        {"early_stop_patience": 0},
    ],
)
def test_config_validation(overrides):
    with pytest.raises(ValueError):
        tiny_config(**overrides)


def test_init_net_bounds_and_shapes():
    config = tiny_config(seed=123)
    n = 9
    net = init_net(config, n_train=n)
    e, f = config.embed_dim_per_kernel, config.fusion_dim
    fan_in = {
        "w_wl": n, "b_wl": n, "w_tp": n, "b_tp": n, "w_vh": n, "b_vh": n,
        "w_fuse": 3 * e, "b_fuse": 3 * e, "w_cls": f, "b_cls": f,
    }
    shapes = {
        "w_wl": (e, n), "b_wl": (e,), "w_tp": (e, n), "b_tp": (e,),
        "w_vh": (e, n), "b_vh": (e,), "w_fuse": (f, 3 * e), "b_fuse": (f,),
        "w_cls": (f,), "b_cls": (),
    }
    for name, arr in net.tensors():
        assert arr.shape == shapes[name]
        bound = 1.0 / math.sqrt(fan_in[name])
        assert np.all(np.abs(arr) <= bound), name


def test_init_net_deterministic_and_seed_sensitive():
    config = tiny_config(seed=5)
    a = init_net(config, n_train=4)
    b = init_net(config, n_train=4)
    for (_, ta), (_, tb) in zip(a.tensors(), b.tensors()):
        assert np.array_equal(ta, tb)
    c = init_net(tiny_config(seed=6), n_train=4)
    assert any(not np.array_equal(ta, tc) for (_, ta), (_, tc) in zip(a.tensors(), c.tensors()))


def test_init_net_rejects_empty_training_set():
    with pytest.raises(ValueError, match="n_train"):
        init_net(tiny_config(), n_train=0)


# ---------------------------------------------------------------------------
# optimizer


def test_adamax_first_step_hand_math():
    # One scalar parameter, gradient 2, lr 0.1: m = 0.2, u = 2, bias
    # correction 0.1, so the update is (0.1/0.1) * 0.2 / (2 + 1e-8).
    config = tiny_config(seed=0)
    net = init_net(config, n_train=2)
    for _, arr in net.tensors():
        arr[...] = 0.0
    opt = _Adamax(net, lr=0.1)
    grads = {name: np.zeros_like(arr) for name, arr in net.tensors()}
    grads["b_cls"] = np.array(2.0)
    opt.step(net, grads)
    assert float(net.b_cls) == pytest.approx(-0.2 / 2.00000001, rel=1e-12)
    # Parameters with zero gradient stay untouched.
    assert np.all(net.w_fuse == 0.0)


def test_adamax_second_moment_is_infinity_norm():
    config = tiny_config(seed=0)
    net = init_net(config, n_train=2)
    for _, arr in net.tensors():
        arr[...] = 0.0
    opt = _Adamax(net, lr=0.1)
    grads = {name: np.zeros_like(arr) for name, arr in net.tensors()}
    grads["b_cls"] = np.array(4.0)
    opt.step(net, grads)
    grads["b_cls"] = np.array(1.0)
    opt.step(net, grads)
    # u stays at max(0.999 * 4, |1|) = 3.996, not a running mean of squares.
    assert float(opt.u["b_cls"]) == pytest.approx(3.996, rel=1e-12)


# ---------------------------------------------------------------------------
# gradients


def test_finite_difference_gradient_exact_on_quadratic():
    rng = np.random.default_rng(2)
    c = rng.normal(size=6)
    b = rng.normal(size=6)
    theta = rng.normal(size=6)

    def fn(t):
        return float(np.sum(c * t ** 2) + np.sum(b * t))

    grad = finite_difference_gradient(fn, theta, epsilon=1e-5)
    assert np.allclose(grad, 2.0 * c * theta + b, atol=1e-8)


def test_finite_difference_gradient_does_not_mutate_input():
    theta = np.array([1.0, 2.0])
    finite_difference_gradient(lambda t: float(t @ t), theta)
    assert np.array_equal(theta, [1.0, 2.0])


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_check_analytic_matches_numeric(metric, seed):
    rng = np.random.default_rng(seed)
    n_train = 5
    config = tiny_config(
        embed_dim_per_kernel=3, fusion_dim=2, classifier_dim=2, metric=metric, seed=seed
    )
    net = init_net(config, n_train=n_train)
    batch = 6
    rows = random_rows(rng, batch, n_train)
    labels = rng.integers(0, 2, size=batch).astype(float)
    if len(np.unique(labels)) < 2:
        labels[0] = 1.0 - labels[0]
    assert gradient_check(net, rows, labels, epsilon=1e-5) <= 1e-4


def test_gradient_check_label_mismatch():
    config = tiny_config()
    net = init_net(config, n_train=3)
    rows = random_rows(np.random.default_rng(0), 4, 3)
    with pytest.raises(ValueError, match="align"):
        gradient_check(net, rows, [0.0, 1.0])


# ---------------------------------------------------------------------------
# training


def test_train_is_deterministic(train_grams, train_labels):
    config = tiny_config(max_epochs=8, batch_size=8)
    net_a, trace_a = train(train_grams, train_labels, config)
    net_b, trace_b = train(train_grams, train_labels, config)
    for (_, ta), (_, tb) in zip(net_a.tensors(), net_b.tensors()):
        assert np.array_equal(ta, tb)
    assert trace_a.joint == trace_b.joint
    assert trace_a.stop_epoch == trace_b.stop_epoch


def test_train_reduces_joint_loss(train_grams, train_labels):
    config = tiny_config(max_epochs=40, batch_size=8, learning_rate=0.01)
    _, trace = train(train_grams, train_labels, config)
    assert min(trace.joint) < trace.joint[0]


def test_train_early_stops_when_stale(train_grams, train_labels):
    config = tiny_config(max_epochs=500, early_stop_patience=3, learning_rate=1e-9)
    _, trace = train(train_grams, train_labels, config)
    assert trace.stop_reason == "converged"
    assert trace.stop_epoch < 500


def test_train_zero_epochs_returns_initial_net(train_grams, train_labels):
    config = tiny_config(max_epochs=0)
    net, trace = train(train_grams, train_labels, config)
    assert trace.joint == []
    assert trace.stop_epoch == 0
    fresh = init_net(config, len(train_labels))
    for (_, ta), (_, tb) in zip(net.tensors(), fresh.tensors()):
        assert np.array_equal(ta, tb)


def test_train_rejects_bad_inputs(train_grams, train_labels):
    config = tiny_config(max_epochs=1)
    with pytest.raises(ValueError, match="triple"):
        train(train_grams[:2], train_labels, config)
    with pytest.raises(ValueError, match="single class"):
        train(train_grams, np.ones_like(train_labels), config)
    with pytest.raises(ValueError, match="binary"):
        train(train_grams, train_labels + 1.0, config)
    with pytest.raises(ValueError, match="shape"):
        train(train_grams, train_labels[:-1], config)


def test_train_raises_on_divergence(train_grams, train_labels):
    config = tiny_config(max_epochs=5, learning_rate=1e200, batch_size=8)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDivergedError, match="non-finite"):
            train(train_grams, train_labels, config)


def test_trace_csv_layout():
    from rxgraph.net import TrainTrace

    trace = TrainTrace(contrastive=[0.5], crossentropy=[0.25], joint=[0.75])
    text = trace.to_csv()
    lines = text.splitlines()
    assert lines[0] == "epoch,contrastive,crossentropy,joint"
    assert lines[1] == "1,0.5,0.25,0.75"
    assert text.endswith("\n")


# ---------------------------------------------------------------------------
# prediction


def test_predict_single_and_batch_agree(train_grams, train_labels):
    config = tiny_config(max_epochs=5)
    net, _ = train(train_grams, train_labels, config)
    rows = tuple(g.values[:4] for g in train_grams)
    probs, preds = predict(net, rows)
    assert probs.shape == (4,) and preds.shape == (4,)
    assert np.all((probs >= 0.0) & (probs <= 1.0))
    assert np.array_equal(preds, (probs >= 0.5).astype(int))
    one_prob, one_pred = predict(net, tuple(g.values[2] for g in train_grams))
    # Vector and batched matmuls take different BLAS paths; allow an ulp.
    assert one_prob == pytest.approx(probs[2], rel=1e-12)
    assert one_pred == preds[2]


def test_forward_embed_shapes(train_grams, train_labels):
    config = tiny_config(max_epochs=2)
    net, _ = train(train_grams, train_labels, config)
    rows = tuple(g.values[:3] for g in train_grams)
    emb = forward_embed(net, rows)
    assert emb.shape == (3, config.fusion_dim)
    single = forward_embed(net, tuple(g.values[0] for g in train_grams))
    assert single.shape == (config.fusion_dim,)
    assert np.allclose(single, emb[0], rtol=1e-12, atol=0.0)


def test_batch_validation_messages():
    net = init_net(tiny_config(), n_train=5)
    with pytest.raises(ValueError, match="triple"):
        forward_embed(net, (np.zeros((2, 5)), np.zeros((2, 5))))
    with pytest.raises(ValueError, match="width 5"):
        forward_embed(net, (np.zeros((2, 4)),) * 3)
    with pytest.raises(ValueError, match="batch size"):
        forward_embed(net, (np.zeros((2, 5)), np.zeros((3, 5)), np.zeros((2, 5))))


# ---------------------------------------------------------------------------
# KNET container


def test_knet_round_trip(tmp_path, train_grams, train_labels):
    config = tiny_config(max_epochs=3, metric="cosine")
    net, _ = train(train_grams, train_labels, config)
    path = tmp_path / "model.knet"
    save_net(path, net)
    loaded = load_net(path)
    assert loaded.config == net.config
    assert loaded.n_train == net.n_train
    for (name, original), (_, restored) in zip(net.tensors(), loaded.tensors()):
        assert restored.dtype == np.float64
        assert np.array_equal(original, restored), name


def test_knet_rejects_bad_magic(tmp_path):
    net = init_net(tiny_config(), n_train=2)
    path = tmp_path / "model.knet"
    save_net(path, net)
    blob = path.read_bytes()
    path.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="bad magic"):
        load_net(path)


def test_knet_rejects_trailing_bytes(tmp_path):
    net = init_net(tiny_config(), n_train=2)
    path = tmp_path / "model.knet"
    save_net(path, net)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        load_net(path)


def test_knet_rejects_truncation(tmp_path):
    path = tmp_path / "model.knet"
    path.write_bytes(b"KNET\x01")
    with pytest.raises(ValueError, match="truncated"):
        load_net(path)


def test_knet_rejects_unknown_version(tmp_path):
    net = init_net(tiny_config(), n_train=2)
    path = tmp_path / "model.knet"
    save_net(path, net)
    blob = bytearray(path.read_bytes())
    blob[4] = 9
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_net(path)


def test_param_fields_cover_all_tensor_attributes():
    tensor_fields = {
        f.name for f in dataclasses.fields(EmbedNet) if f.name not in ("config", "n_train")
    }
    assert set(PARAM_FIELDS) == tensor_fields
