import gzip
import math
import struct

import numpy as np
import pytest

from ecocompress.codec import compress_model, from_bytes, to_bytes
from ecocompress.errors import ContractError, CorruptStreamError, DimensionError, IngestionError
from ecocompress.harness import checkpoint as ck
from ecocompress.harness.adam import AdamState, adam_step
from ecocompress.harness.config import TrainConfig, load_config
from ecocompress.harness.data import Dataset, load_mnist, make_blobs, read_idx_images, read_idx_labels
from ecocompress.harness.metrics import (
    MetricsRow,
    MetricsTrace,
    entropy_bound_violations,
    loss_gap_windows,
    trace_checks,
)
from ecocompress.harness.train import (
    evaluate,
    init_dense,
    load_data,
    pretrain,
    quantize_model,
    to_stochastic,
    train_eco,
)
from ecocompress.layers import DenseLayer
from ecocompress.tensor import Tensor


# -- IDX ingestion -----------------------------------------------------------
def write_idx_images(path, images):
    n, r, c = images.shape
    path.write_bytes(struct.pack(">IIII", 2051, n, r, c) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">II", 2049, len(labels)) + np.asarray(labels, np.uint8).tobytes())


@pytest.fixture
def fake_mnist(tmp_path, rng):
    tr = rng.integers(0, 256, (12, 28, 28))
    te = rng.integers(0, 256, (5, 28, 28))
    write_idx_images(tmp_path / "train-images-idx3-ubyte", tr)
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [5] + [1] * 11)
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", te)
    raw = struct.pack(">II", 2049, 5) + bytes([7, 2, 1, 0, 4])
    (tmp_path / "t10k-labels-idx1-ubyte.gz").write_bytes(gzip.compress(raw))
    return tmp_path, tr, te


def test_load_fake_mnist(fake_mnist):
    root, tr, te = fake_mnist
    train, test = load_mnist(root)
    assert train.inputs.shape == (12, 784) and test.inputs.shape == (5, 784)
    assert train.labels[0] == 5
    np.testing.assert_array_equal(test.labels, [7, 2, 1, 0, 4])
    np.testing.assert_allclose(train.inputs, tr.reshape(12, 784) / 255.0)
    assert train.inputs.min() >= 0 and train.inputs.max() <= 1


def test_truncated_image_file_names_the_file(fake_mnist):
    root, _, _ = fake_mnist
    path = root / "train-images-idx3-ubyte"
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(IngestionError, match="train-images-idx3-ubyte"):
        load_mnist(root)


def test_bad_magic_and_count_mismatch(tmp_path):
    bad = tmp_path / "x"
    bad.write_bytes(struct.pack(">II", 2051, 1) + b"\x00")
    with pytest.raises(IngestionError, match="magic"):
        read_idx_labels(bad)
    write_idx_images(tmp_path / "train-images-idx3-ubyte", np.zeros((3, 28, 28)))
    write_idx_labels(tmp_path / "train-labels-idx1-ubyte", [1, 2])
    write_idx_images(tmp_path / "t10k-images-idx3-ubyte", np.zeros((1, 28, 28)))
    write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", [1])
    with pytest.raises(IngestionError, match="labels"):
        load_mnist(tmp_path)


def test_missing_file_is_ingestion_error(tmp_path):
    with pytest.raises(IngestionError, match="not found"):
        load_mnist(tmp_path)


def test_idx_images_reject_wrong_length(tmp_path):
    p = tmp_path / "img"
    p.write_bytes(struct.pack(">IIII", 2051, 2, 2, 2) + bytes(9))
    with pytest.raises(IngestionError):
        read_idx_images(p)


def test_dataset_validation():
    with pytest.raises(ContractError):
        Dataset(np.zeros((2, 3)), np.array([0, 5]), "train", 3)
    with pytest.raises(ContractError):
        Dataset(np.full((1, 3), 2.0), np.array([0]), "train", 3)


def test_blobs_are_seeded_and_scaled():
    a, _ = make_blobs(50, 10, 4, 3, seed=2)
    b, _ = make_blobs(50, 10, 4, 3, seed=2)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1


# -- ADAM --------------------------------------------------------------------
def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0])]
    out = adam_step(AdamState.for_params(p), p, [np.zeros(2)], 0.1)
    np.testing.assert_array_equal(out[0], p[0])


def test_adam_first_step_is_lr():
    p = [np.array([0.5])]
    out = adam_step(AdamState.for_params(p), p, [np.array([1.0])], 1e-3)
    assert p[0][0] - out[0][0] == pytest.approx(1e-3, rel=1e-6)


def test_adam_trajectory_on_quadratic():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x = np.array([3.0, -1.0])
    state = AdamState.for_params([x])
    ref, m, v = x.copy(), np.zeros(2), np.zeros(2)
    for t in range(1, 4):
        (x,) = adam_step(state, [x], [2 * x], lr)
        g = 2 * ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(x, ref, rtol=0, atol=1e-12)
    assert state.step == 3


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step(AdamState.for_params([np.zeros(2)]), [np.zeros(2)], [np.zeros(3)], 0.1)


# -- config ------------------------------------------------------------------
def test_config_roundtrip_and_overrides(tmp_path):
    cfg = TrainConfig(arch=(8, 4, 2), cardinalities=(3, 5), alpha_max=1e-3, steps=20)
    path = tmp_path / "c.ini"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg
    assert load_config(path, seed=9).seed == 9


def test_config_rejects_bad_values(tmp_path):
    with pytest.raises(ContractError):
        TrainConfig(arch=(4, 2), cardinalities=(3, 3))
    with pytest.raises(ContractError):
        TrainConfig(cardinalities=(3, 0, 3))
    p = tmp_path / "c.ini"
    p.write_text("[eco]\nbogus = 1\n")
    with pytest.raises(ContractError, match="bogus"):
        load_config(p)
    p.write_text("[other]\n")
    with pytest.raises(ContractError):
        load_config(p)
    with pytest.raises(ContractError):
        load_config(tmp_path / "missing.ini")


# -- checkpoints -------------------------------------------------------------
def blob_config(**kw):
    base = dict(arch=(6, 8, 3), cardinalities=(3, 5), dataset="blobs", blob_train=96, blob_test=64,
                pretrain_steps=60, steps=40, log_every=10, eval_train_samples=96, seed=5)
    base.update(kw)
    return TrainConfig(**base)


@pytest.mark.parametrize("kind", ["dense", "stochastic", "quantized"])
def test_checkpoint_roundtrip(kind, tmp_path):
    cfg = blob_config()
    layers = init_dense(cfg.arch, 1)
    if kind != "dense":
        layers = to_stochastic(layers, cfg)
    if kind == "quantized":
        layers = quantize_model(layers)
    data = ck.dumps(layers, seed=3, metric=0.25)
    back = ck.loads(data)
    assert back.kind_name == kind and back.seed == 3 and back.metric == 0.25
    assert ck.dumps(back.layers, seed=3, metric=0.25) == data


def test_checkpoint_corruption():
    data = bytearray(ck.dumps(init_dense((3, 2), 0)))
    data[20] ^= 1
    with pytest.raises(CorruptStreamError):
        ck.loads(bytes(data))


# -- metrics -----------------------------------------------------------------
def row(step, hp, hm, var=1.0, gap=0.5):
    return MetricsRow(step, 0.0, 1.0 + gap, 1.0, [10], [3], [hp], [hm], var, 0.0, 0.1, 0.1)


def test_trace_checks():
    t = MetricsTrace()
    for s in range(10):
        t.append(row(s * 10, 1.0, 0.9, var=1.0 - s * 0.05, gap=0.5 - s * 0.04))
    assert trace_checks(t) == {"entropy_bound": True, "variance_shrinks": True, "loss_gap_narrows": True}
    t.append(row(100, 0.5, 0.5 + 1e-10))
    assert entropy_bound_violations(t) == []
    t.append(row(110, 0.5, 0.6))
    assert entropy_bound_violations(t) == [(110, 0, 0.6, 0.5)]
    with pytest.raises(ValueError):
        t.append(row(110, 0.5, 0.5))


def test_loss_gap_windows_use_tenths():
    t = MetricsTrace()
    for s in range(20):
        t.append(row(s, 1.0, 1.0, gap=float(s)))
    assert loss_gap_windows(t) == (0.5, 18.5)


def test_trace_csv_header():
    t = MetricsTrace()
    t.append(row(0, 1.0, 0.5))
    assert t.to_csv().splitlines()[0] == \
        "step,var_loss,quant_loss,H_P_total,H_mu_total,sigma2_mean,sigma2_std,err_cont,err_quant"
    assert t.layers_to_csv().splitlines()[1] == "0,0,10,3,1.0,0.5"


# -- training ----------------------------------------------------------------
def test_pretrain_zero_steps_returns_init():
    cfg = blob_config(pretrain_steps=0)
    train, test = load_data(cfg)
    layers, _ = pretrain(cfg, train, test)
    for a, b in zip(layers, init_dense(cfg.arch, cfg.seed)):
        np.testing.assert_array_equal(a.weight.data, b.weight.data)


def test_pretrain_is_deterministic():
    cfg = blob_config()
    train, test = load_data(cfg)
    a, err_a = pretrain(cfg, train, test)
    b, err_b = pretrain(cfg, train, test)
    assert ck.dumps(a, metric=err_a) == ck.dumps(b, metric=err_b)


def test_train_eco_trace_and_determinism():
    cfg = blob_config()
    train, test = load_data(cfg)
    dense, _ = pretrain(cfg, train, test)
    m1, t1 = train_eco(cfg, dense, train, test)
    m2, t2 = train_eco(cfg, dense, train, test)
    assert [r.step for r in t1.rows] == [0, 10, 20, 30, 40]
    assert t1.to_csv() == t2.to_csv()
    assert ck.dumps(m1) == ck.dumps(m2)
    for r in t1.rows:
        for n, K, hp, hm in zip(r.layer_n, r.layer_K, r.H_P, r.H_mu):
            assert 0 <= hm <= math.log2(K) + 1e-12 and 0 <= hp <= math.log2(K) + 1e-12
        assert r.H_mu_total <= sum(n * math.log2(K) for n, K in zip(r.layer_n, r.layer_K)) + 1e-9


def test_train_eco_alpha_zero_keeps_entropy_roughly_constant():
    cfg = blob_config(alpha_max=0.0, steps=60, log_every=20)
    train, test = load_data(cfg)
    dense, _ = pretrain(cfg, train, test)
    _, trace = train_eco(cfg, dense, train, test)
    first, last = trace.rows[0], trace.rows[-1]
    for a, b in zip(first.H_P, last.H_P):
        assert abs(a - b) < 0.2


def test_aggressive_alpha_collapses_tiny_net():
    # eight weights (2-2-2); a wide initial kernel and a fast LR let the
    # entropy term move weights across decision boundaries before sigma shrinks
    cfg = TrainConfig(arch=(2, 2, 2), cardinalities=(3, 3), dataset="blobs", blob_train=64, blob_test=64,
                      pretrain_steps=100, steps=500, alpha_max=1.0, alpha_ramp_frac=0.1, lr_start=1e-2,
                      sigma_init_frac=1.0, log_every=100, eval_train_samples=64, seed=1)
    train, test = load_data(cfg)
    dense, _ = pretrain(cfg, train, test)
    _, trace = train_eco(cfg, dense, train, test)
    assert all(h < 0.1 for h in trace.rows[-1].H_mu)


def test_train_eco_rejects_arch_mismatch():
    cfg = blob_config()
    train, test = load_data(cfg)
    with pytest.raises(ContractError):
        train_eco(cfg, init_dense((6, 4, 3), 0), train, test)


def test_evaluate_memorizing_net_is_perfect():
    x = np.eye(4)
    y = np.array([0, 1, 2, 3])
    net = [DenseLayer(Tensor(np.eye(4) * 10), Tensor(np.zeros(4)))]
    assert evaluate(net, Dataset(x, y, "test", 4)) == 0.0


def test_evaluate_random_labels_near_chance(rng):
    data = Dataset(rng.uniform(size=(5000, 6)), rng.integers(0, 10, 5000), "test", 10)
    net = init_dense((6, 10), 3)
    assert evaluate(net, data) == pytest.approx(0.9, abs=0.03)


def test_evaluate_roundtrip_equals_in_memory():
    cfg = blob_config()
    train, test = load_data(cfg)
    dense, _ = pretrain(cfg, train, test)
    model, _ = train_eco(cfg, dense, train, test)
    q = quantize_model(model)
    cm = from_bytes(to_bytes(compress_model(q)))
    assert evaluate(cm, test) == evaluate(q, test)


def test_evaluate_class_mismatch():
    net = init_dense((6, 4), 0)
    with pytest.raises(ContractError):
        evaluate(net, Dataset(np.zeros((2, 6)), np.array([0, 1]), "test", 3))
