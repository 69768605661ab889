import numpy as np
import pytest

from eglab import data, metrics, nn


def make_rng(seed):
    return np.random.default_rng(seed)


def test_pairwise_disagreement_frozen_example():
    params = [np.array([0.0]), np.array([4.0]), np.array([8.0])]
    # 16 + 64 + 16 over the three unordered pairs
    assert metrics.pairwise_disagreement(params) == 96.0


def test_pairwise_disagreement_single_worker_zero():
    assert metrics.pairwise_disagreement([np.ones(5)]) == 0.0


def test_pairwise_disagreement_identical_workers_zero():
    x = make_rng(0).normal(size=7)
    assert metrics.pairwise_disagreement([x, x.copy(), x.copy()]) == 0.0


def test_pairwise_disagreement_matches_loop_oracle():
    rng = make_rng(1)
    params = [rng.normal(size=9) for _ in range(5)]
    want = 0.0
    for i in range(5):
        for k in range(i + 1, 5):
            for c in range(9):
                want += (params[i][c] - params[k][c]) ** 2
    assert abs(metrics.pairwise_disagreement(params) - want) < 1e-9 * max(1.0, want)


def test_aggregate_model_matches_mean_oracle():
    rng = make_rng(2)
    params = [rng.normal(size=6) for _ in range(4)]
    agg = metrics.aggregate_model(params)
    want = np.zeros(6)
    for c in range(6):
        s = 0.0
        for p in params:
            s += p[c]
        want[c] = s / 4
    np.testing.assert_allclose(agg, want, atol=1e-15, rtol=0)


def test_aggregate_model_of_identical_is_identity():
    x = make_rng(3).normal(size=8)
    np.testing.assert_allclose(
        metrics.aggregate_model([x, x.copy()]), x, rtol=1e-15, atol=0
    )


def test_evaluate_perfect_classifier():
    # weights hand-built so class = sign of the single feature
    spec = nn.MlpSpec((1, 2))
    params = np.array([10.0, -10.0, 0.0, 0.0])  # W=[[10,-10]], b=[0,0]
    features = np.array([[1.0], [2.0], [-1.0], [-0.5]])
    labels = np.array([0, 0, 1, 1])
    ds = data.Dataset(features, labels, 2)
    loss, acc = metrics.evaluate(spec, params, ds)
    assert acc == 1.0
    assert 0.0 < loss < 1e-4


def test_evaluate_matches_direct_forward():
    spec = nn.MlpSpec((4, 6, 3))
    rng = make_rng(4)
    params = nn.kaiming_init(spec, rng)
    ds = data.Dataset(rng.normal(size=(30, 4)), rng.integers(0, 3, 30), 3)
    loss, acc = metrics.evaluate(spec, params, ds)
    logits, _ = nn.forward(spec, params, ds.features)
    want_loss, _ = nn.softmax_ce(logits, ds.labels)
    want_acc = (logits.argmax(axis=1) == ds.labels).mean()
    assert abs(loss - want_loss) < 1e-12
    assert acc == want_acc


def test_evaluate_chunked_equals_single_pass():
    spec = nn.MlpSpec((3, 5, 2))
    rng = make_rng(5)
    params = nn.kaiming_init(spec, rng)
    ds = data.Dataset(rng.normal(size=(1000, 3)), rng.integers(0, 2, 1000), 2)
    l1, a1 = metrics.evaluate(spec, params, ds, chunk=64)
    l2, a2 = metrics.evaluate(spec, params, ds, chunk=10**9)
    assert abs(l1 - l2) < 1e-12
    assert a1 == a2


def test_evaluate_empty_dataset_rejected():
    spec = nn.MlpSpec((2, 2))
    with pytest.raises(ValueError, match="empty"):
        metrics.evaluate(
            spec, np.zeros(6), data.Dataset(np.zeros((0, 2)), np.zeros(0, np.int64), 2)
        )


# --- CSV round-trip ----------------------------------------------------------


def sample_records():
    return [
        metrics.MetricsRecord(
            step=100,
            epoch=1.0 / 3.0,
            train_loss_mean=0.6931471805599453,
            rank0_acc=0.5,
            aggregate_acc=0.625,
            pairwise_disagreement=96.0,
            val_loss=(0.1, 0.2 + 1e-16, 1.0 / 7.0),
            val_acc=(1.0, 0.875, 2.0 / 3.0),
        ),
        metrics.MetricsRecord(
            step=200,
            epoch=2.0 / 3.0,
            train_loss_mean=0.3,
            rank0_acc=0.75,
            aggregate_acc=0.875,
            pairwise_disagreement=1e-12,
            val_loss=(0.01, 0.02, 0.03),
            val_acc=(1.0, 1.0, 0.99),
        ),
    ]


def test_write_metrics_header_schema(tmp_path):
    path = tmp_path / "m.csv"
    metrics.write_metrics(path, sample_records())
    header = path.read_text().splitlines()[0]
    assert header == (
        "step,epoch,train_loss_mean,rank0_acc,aggregate_acc,"
        "pairwise_disagreement,val_loss_r0,val_loss_r1,val_loss_r2,"
        "val_acc_r0,val_acc_r1,val_acc_r2"
    )


def test_metrics_roundtrip_exact(tmp_path):
    path = tmp_path / "m.csv"
    recs = sample_records()
    metrics.write_metrics(path, recs)
    back = metrics.read_metrics(path)
    assert back == recs  # 17 significant digits preserve float64 exactly


def test_write_metrics_deterministic_bytes(tmp_path):
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    metrics.write_metrics(p1, sample_records())
    metrics.write_metrics(p2, sample_records())
    assert p1.read_bytes() == p2.read_bytes()


def test_write_metrics_rejects_ragged_worker_counts(tmp_path):
    recs = sample_records()
    recs[1] = metrics.MetricsRecord(
        step=200,
        epoch=0.5,
        train_loss_mean=0.3,
        rank0_acc=0.75,
        aggregate_acc=0.875,
        pairwise_disagreement=0.0,
        val_loss=(0.01,),
        val_acc=(1.0,),
    )
    with pytest.raises(ValueError):
        metrics.write_metrics(tmp_path / "m.csv", recs)


def test_read_metrics_rejects_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("step,epoch,other\n1,0.5,2\n")
    with pytest.raises(ValueError):
        metrics.read_metrics(path)
