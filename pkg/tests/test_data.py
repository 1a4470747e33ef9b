import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flasc.data import (
    BandwidthModel,
    CommLedger,
    Dataset,
    PretrainConfig,
    PretrainError,
    TaskSpec,
    backbone_accuracy,
    comm_time,
    dataset_from_csv,
    dataset_to_csv,
    dirichlet_partition,
    fit_linear_classifier,
    gen_task_pair,
    ledger_record,
    max_label_share,
    partition_from_text,
    partition_to_text,
    pretrain_backbone,
    pretrained_task,
    round_time,
)
from flasc.numeric import RngStream

SMALL = TaskSpec(source_size=3000, train_size=600, test_size=300)


def test_task_pair_is_seeded():
    a, b = gen_task_pair(SMALL), gen_task_pair(SMALL)
    np.testing.assert_array_equal(a.train.x, b.train.x)
    c = gen_task_pair(TaskSpec(source_size=3000, train_size=600, test_size=300, seed=1))
    assert not np.array_equal(a.train.x, c.train.x)


def test_task_transform_is_rotation():
    t = gen_task_pair(SMALL)
    np.testing.assert_allclose(t.transform @ t.transform.T, np.eye(SMALL.dim), atol=1e-12)
    assert np.all(t.train.y < SMALL.n_classes)
    assert t.source.x.shape == (3000, SMALL.dim)


def test_zero_shift_keeps_distribution():
    t = gen_task_pair(TaskSpec(shift=0.0, source_size=2000, train_size=500, test_size=200))
    np.testing.assert_array_equal(t.transform, np.eye(32))
    np.testing.assert_array_equal(t.target_means, t.means)


def test_shift_makes_target_harder_for_source_classifier():
    t = gen_task_pair(SMALL)
    predict = fit_linear_classifier(t.source, SMALL.n_classes)
    src = np.mean(predict(t.source.x) == t.source.y)
    tgt = np.mean(predict(t.test.x) == t.test.y)
    assert src > 0.9
    assert tgt < src - 0.2


def test_pretrained_backbone_transfers_partially():
    task, bb = pretrained_task(SMALL)
    assert backbone_accuracy(bb, task.source) >= PretrainConfig().target_accuracy
    assert backbone_accuracy(bb, task.test) < 0.8
    assert pretrained_task(SMALL)[1] is bb


def test_pretrain_failure_is_reported():
    task = gen_task_pair(SMALL)
    with pytest.raises(PretrainError):
        pretrain_backbone(task.source, 10, RngStream(0), PretrainConfig(max_epochs=1, lr=1e-6, target_accuracy=0.99))


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(n_classes=1)
    with pytest.raises(ValueError):
        TaskSpec(informative=40)


@given(st.integers(1, 30), st.floats(0.01, 100), st.integers(0, 2**16))
def test_partition_is_exact_cover(n_clients, alpha, seed):
    labels = np.random.default_rng(seed).integers(0, 5, 200)
    parts = dirichlet_partition(labels, n_clients, alpha, RngStream(seed, ("partition",)))
    assert len(parts) == n_clients
    assert all(len(p) > 0 for p in parts)
    joined = np.concatenate(parts)
    np.testing.assert_array_equal(np.sort(joined), np.arange(200))


def test_partition_deterministic():
    labels = np.arange(100) % 10
    a = dirichlet_partition(labels, 10, 0.5, RngStream(3))
    b = dirichlet_partition(labels, 10, 0.5, RngStream(3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_partition_heterogeneity_extremes():
    labels = gen_task_pair(SMALL).train.y
    skewed = max_label_share(labels, dirichlet_partition(labels, 50, 0.01, RngStream(0)))
    flat = max_label_share(labels, dirichlet_partition(labels, 50, 100.0, RngStream(0)))
    assert skewed.mean() > 0.9
    assert flat.mean() < 0.3


def test_partition_errors():
    with pytest.raises(ValueError):
        dirichlet_partition(np.zeros(3, int), 4, 1.0, RngStream(0))
    with pytest.raises(ValueError):
        dirichlet_partition(np.zeros(3, int), 2, 0.0, RngStream(0))


def test_dataset_csv_round_trip(rng):
    d = Dataset(rng.standard_normal((7, 3)), rng.integers(0, 4, 7))
    back = dataset_from_csv(dataset_to_csv(d))
    np.testing.assert_array_equal(back.x, d.x)
    np.testing.assert_array_equal(back.y, d.y)


def test_partition_text_round_trip():
    parts = [np.array([0, 3, 5]), np.array([1]), np.array([2, 4])]
    text = partition_to_text(parts)
    assert text.splitlines()[0] == "0: 0 3 5"
    back = partition_from_text(text)
    assert all(np.array_equal(x, y) for x, y in zip(parts, back))


def test_ledger_cumulative():
    led = CommLedger()
    for r in range(5):
        ledger_record(led, 10, 3 + r)
    assert led.down_cum == [10, 20, 30, 40, 50]
    assert led.up_cum == [3, 7, 12, 18, 25]
    assert led.total_up == 25 and len(led) == 5
    with pytest.raises(ValueError):
        led.record(-1, 0)


@given(
    st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 10**6)), min_size=1, max_size=20),
    st.floats(0.1, 100),
    st.sampled_from([1.0, 0.5, 1 / 16]),
)
def test_comm_time_closed_form(rounds, down_bw, ratio):
    led = CommLedger()
    for d, u in rounds:
        led.record(d, u)
    bw = BandwidthModel(down_bw, ratio)
    expected = math.fsum(d / down_bw + u / (down_bw * ratio) for d, u in rounds)
    assert comm_time(led, bw) == pytest.approx(expected, rel=1e-12)
    assert comm_time(led, bw, upto=1) == round_time(*rounds[0], bw)


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        BandwidthModel(0.0)
    with pytest.raises(ValueError):
        BandwidthModel(1.0, -1.0)
