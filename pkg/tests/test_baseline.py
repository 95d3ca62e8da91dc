import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collateral.baseline import (
    FrameDataset,
    LinearModel,
    annotation_to_frames,
    frames_to_annotation,
    loso_folds,
    predict_codes,
    predict_frames,
    train,
    undersample,
)
from collateral.errors import InputError
from collateral.metrics import aggregate, detection_counts
from collateral.timeline import ALL_LABELS, Annotation, DisfluencyLabel as L


def dataset(labels, d=3, seed=0, speakers=None):
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    spk = speakers if speakers is not None else np.array(["a"] * len(labels))
    return FrameDataset(rng.standard_normal((len(labels), d)), labels, spk)


def blobs(seed=0, n=200):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = rng.standard_normal((n, 2)) * 0.5 + np.where(y[:, None] == 1, [3.0, 3.0], [-3.0, -3.0])
    return FrameDataset(x, y, np.array(["a"] * n))


def frame_corpus(seed, n_frames=6000, d=8, sep=1.5):
    """Feature rows with short disfluent runs (about 5% of frames) shifted by ``sep``."""
    rng = np.random.default_rng(seed)
    lab = np.zeros(n_frames, dtype=int)
    t = 0
    while True:
        t += int(rng.integers(150, 450))
        if t >= n_frames:
            break
        run = int(rng.integers(8, 20))
        lab[t:t + run] = 1
        t += run
    mu = np.zeros(d)
    mu[:3] = sep
    return rng.standard_normal((n_frames, d)) + np.outer(lab > 0, mu), lab


class TestUndersample:
    def test_ratio_one(self):
        ds = dataset([0] * 1000 + [1] * 50)
        out = undersample(ds, 1.0, seed=0)
        assert np.sum(out.labels == 0) == 50 and np.sum(out.labels == 1) == 50

    def test_disabled(self):
        ds = dataset([0] * 100 + [1] * 5)
        assert undersample(ds, None) is ds
        assert undersample(ds, float("inf")) is ds

    def test_deterministic(self):
        ds = dataset([0] * 500 + [2] * 20)
        a, b = undersample(ds, 2.0, 7), undersample(ds, 2.0, 7)
        np.testing.assert_array_equal(a.rows, b.rows)
        assert not np.array_equal(undersample(ds, 2.0, 8).rows, a.rows)

    def test_keeps_all_minority(self):
        ds = dataset([0] * 300 + [1] * 10 + [3] * 7)
        out = undersample(ds, 0.5, 1)
        assert np.sum(out.labels != 0) == 17 and np.sum(out.labels == 0) == 8

    def test_no_minority(self):
        with pytest.raises(InputError):
            undersample(dataset([0] * 10), 1.0)

    def test_bad_ratio(self):
        with pytest.raises(InputError):
            undersample(dataset([0, 1]), 0)


class TestTrain:
    def test_separable_accuracy(self):
        ds = blobs()
        m = train(ds)
        assert np.mean(predict_codes(m, ds.rows) == ds.labels) >= 0.95

    def test_loss_non_increasing(self):
        m = train(blobs(1), learning_rate=10.0, epochs=100)
        h = np.array(m.loss_history)
        assert np.all(np.diff(h) <= 1e-6)

    def test_zero_epochs_uniform(self):
        m = train(blobs(), epochs=0)
        np.testing.assert_allclose(m.predict_proba(blobs().rows[:3]), 1 / 6)

    def test_l2_shrinks_weights(self):
        ds = blobs(2)
        a = np.linalg.norm(train(ds, l2=0.01).weights)
        b = np.linalg.norm(train(ds, l2=0.02).weights)
        assert b < a

    def test_single_class(self):
        with pytest.raises(InputError):
            train(dataset([0] * 10))

    def test_serialization(self):
        m = train(blobs())
        back = LinearModel.from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_array_equal(back.decision(blobs().rows), m.decision(blobs().rows))


class TestPredict:
    def test_zero_model_all_fluent(self):
        m = LinearModel(np.zeros((3, 6)), np.zeros(6))
        assert predict_frames(m, np.ones((4, 3))) == [L.FLUENT] * 4

    def test_single_row(self):
        m = train(blobs())
        assert len(predict_frames(m, [[3.0, 3.0]])) == 1
        assert predict_frames(m, [[3.0, 3.0]]) == [L.F]

    def test_dim_mismatch(self):
        with pytest.raises(InputError):
            predict_codes(LinearModel(np.zeros((3, 6)), np.zeros(6)), np.ones((1, 4)))


class TestDecode:
    def test_example(self):
        ann = frames_to_annotation(["Fluent", "F", "F", "Fluent"], 0.01, 0.0)
        [(seg, lab)] = ann.segments
        assert (seg.start, seg.end, lab) == pytest.approx((0.01, 0.03, L.F))

    def test_all_fluent(self):
        assert frames_to_annotation([0] * 10, 0.01).segments == ()

    def test_short_run_dropped(self):
        assert frames_to_annotation([0, 1, 0], 0.01, 0.03).segments == ()
        assert len(frames_to_annotation([0, 1, 1, 1, 0], 0.01, 0.03).segments) == 1

    def test_different_labels_do_not_merge(self):
        ann = frames_to_annotation([1, 1, 1, 2, 2, 2], 0.01, 0.0)
        assert [lab for _, lab in ann.segments] == [L.F, L.R]

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.integers(0, 30), st.integers(3, 30), st.sampled_from(range(1, 6))),
                    max_size=8))
    def test_frame_round_trip(self, plan):
        t, triples = 0, []
        for gap, run, code in plan:
            t += gap
            triples.append((t / 100, (t + run) / 100, ALL_LABELS[code]))
            t += run + 1
        n = t + 5
        ann = Annotation.from_triples(triples, (0, n / 100))
        codes = annotation_to_frames(ann, 0.01, n)
        back = frames_to_annotation(codes, 0.01, 0.03, extent=ann.extent)
        assert len(back.segments) == len(ann.segments)
        for (a, la), (b, lb) in zip(ann.segments, back.segments):
            assert la == lb
            assert a.start == pytest.approx(b.start, abs=1e-9)
            assert a.end == pytest.approx(b.end, abs=1e-9)


class TestLoso:
    def test_five_speakers(self):
        spk = [f"s{k % 5}" for k in range(50)]
        folds = loso_folds(spk)
        assert len(folds) == 5
        for train_ids, test in folds:
            assert test not in train_ids
            assert set(train_ids) | {test} == set(spk)
        assert sorted(t for _, t in folds) == sorted(set(spk))

    def test_one_speaker(self):
        with pytest.raises(InputError):
            loso_folds(["a", "a"])


def test_imbalance_direction_on_frame_corpus():
    x, y = frame_corpus(0)
    assert np.mean(y == 0) >= 0.95
    ds = FrameDataset(x, y, np.array(["a"] * len(y)))
    xt, yt = frame_corpus(1)
    ref = frames_to_annotation(yt, 0.01, 0.0)
    reports = {}
    for name, ratio in (("standard", None), ("under", 1.0)):
        m = train(undersample(ds, ratio, 0))
        hyp = frames_to_annotation(predict_codes(m, xt), 0.01, 0.03)
        reports[name] = aggregate([detection_counts(ref, hyp)])
    assert reports["under"].recall >= reports["standard"].recall + 0.05
    assert reports["under"].precision <= reports["standard"].precision - 0.05
