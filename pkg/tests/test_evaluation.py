import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phama.data import MultiDomainDataset
from phama.evaluation import (
    CorruptionResult,
    EvalReport,
    accuracy,
    emit_report,
    evaluate_corruptions,
    evaluate_domain,
    export_embeddings,
    silhouette,
)
from phama.models import EncoderSpec, PhaMaNet
from tests.oracles import accuracy_count


class LabelReader(PhaMaNet):
    """Reads the label that the fixture wrote into pixel (0, 0, 0)."""

    def forward(self, x):
        lab = torch.round(x[:, 0, 0, 0] * 10).long()
        return torch.nn.functional.one_hot(lab, self.spec.num_classes).to(x.dtype)


class Coin(PhaMaNet):
    def forward(self, x):
        g = torch.Generator().manual_seed(int(x.shape[0]))
        return torch.rand(x.shape[0], self.spec.num_classes, generator=g)


def labelled_dataset(n=1200, classes=4, size=8):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, classes, n)
    images = rng.random((n, 3, size, size)).astype(np.float32)
    images[:, 0, 0, 0] = labels / 10
    return MultiDomainDataset(
        images, labels, np.repeat([0, 1], n // 2), np.zeros(n, dtype=np.int8), ("a", "b"), tuple("wxyz"[:classes])
    )


def spec(classes=4, size=8):
    return EncoderSpec(num_classes=classes, input_size=size, width=4, num_blocks=2, fusion_levels=(1, 2), proj_dim=4)


@settings(max_examples=60)
@given(
    logits=arrays(np.float64, st.tuples(st.integers(1, 40), st.integers(2, 6)), elements=st.floats(-5, 5)),
    seed=st.integers(0, 1000),
)
def test_accuracy_matches_oracle(logits, seed):
    labels = np.random.default_rng(seed).integers(0, logits.shape[1], logits.shape[0])
    # the oracle breaks ties by the first maximum, like argmax
    assert accuracy(logits, labels) == accuracy_count(logits, labels)


def test_accuracy_empty():
    with pytest.raises(ValueError):
        accuracy(np.zeros((0, 3)), np.zeros(0))


def test_perfect_predictor_and_chance():
    ds = labelled_dataset()
    assert evaluate_domain(LabelReader(spec()), ds, "a") == 100.0
    acc = evaluate_domain(Coin(spec()), ds, "b")
    n, p = 600, 0.25
    assert abs(acc / 100 - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_class_count_mismatch():
    with pytest.raises(ValueError, match="classes"):
        evaluate_domain(LabelReader(spec(classes=3)), labelled_dataset(), "a")


def test_identity_corruption_equals_clean():
    ds = labelled_dataset(200)
    net = PhaMaNet(spec()).eval()
    res = evaluate_corruptions(net, ds.images, ds.labels, ["identity"], (1, 2, 3))
    assert all(e == res.clean_error for e in res.errors["identity"].values())


def test_mean_corruption_error_is_cell_mean():
    ds = labelled_dataset(100)
    net = PhaMaNet(spec()).eval()
    res = evaluate_corruptions(net, ds.images, ds.labels, ["gaussian_noise", "contrast"], (1, 3, 5), seed=2)
    cells = [res.errors[k][s] for k in ("gaussian_noise", "contrast") for s in (1, 3, 5)]
    assert res.mean_error == pytest.approx(sum(cells) / 6, abs=1e-9)
    assert set(res.per_kind()) == {"gaussian_noise", "contrast"}


def test_corruption_evaluation_is_seeded():
    ds = labelled_dataset(60)
    net = PhaMaNet(spec()).eval()
    a = evaluate_corruptions(net, ds.images, ds.labels, ["shot_noise"], (5,), seed=4)
    b = evaluate_corruptions(net, ds.images, ds.labels, ["shot_noise"], (5,), seed=4)
    assert a == b


def test_export_embeddings(tmp_path):
    ds = labelled_dataset(40)
    images = np.array(ds.images)
    images[1] = images[0]
    ds = MultiDomainDataset(images, ds.labels, ds.domains, ds.splits, ds.domain_names, ds.class_names)
    net = PhaMaNet(spec()).eval()
    feats, labels, ids = export_embeddings(net, ds, "a", tmp_path)
    assert feats.shape == (20, 4) and len(labels) == 20
    np.testing.assert_array_equal(feats[0], feats[1])
    meta = json.loads((tmp_path / "features.json").read_text())
    raw = np.fromfile(tmp_path / "features.f32", dtype="<f4").reshape(meta["rows"], meta["cols"])
    np.testing.assert_array_equal(raw, feats)


def test_silhouette_orders_separation():
    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1, 2], 50)
    centers = np.eye(3) * 5
    tight = centers[labels] + rng.normal(0, 0.3, (150, 3))
    loose = centers[labels] + rng.normal(0, 3.0, (150, 3))
    assert silhouette(tight, labels) > silhouette(loose, labels)


def test_report_without_corruptions(tmp_path):
    report = EvalReport("abc", {"a": 50.0, "b": 70.0}, {"a": 10, "b": 12})
    emit_report(report, tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["corruption_errors"] is None and data["mean_corruption_error"] is None
    assert data["average_accuracy"] == pytest.approx(60.0, abs=1e-9)
    assert data["config_hash"] == "abc"


def test_report_is_byte_stable(tmp_path):
    report = EvalReport("h", {"a": 12.5}, {"a": 8}, {"noise": {1: 10.0, 2: 20.0}}, 5.0)
    emit_report(report, tmp_path / "1", {"curve": [{"x": 1, "y": 2.0}]})
    emit_report(report, tmp_path / "2", {"curve": [{"x": 1, "y": 2.0}]})
    for name in ("report.csv", "report.json", "curve.csv"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()
    assert report.mean_corruption_error == 15.0


def test_report_rejects_bad_percentage(tmp_path):
    with pytest.raises(ValueError, match="outside"):
        emit_report(EvalReport("h", {"a": 101.0}), tmp_path)


def test_corruption_result_mean():
    assert CorruptionResult(0.0, {"k": {1: 1.0, 2: 2.0}, "j": {1: 3.0, 2: 6.0}}).mean_error == 3.0
