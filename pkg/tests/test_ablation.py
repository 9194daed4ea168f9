import csv

import numpy as np
import pytest

from phama import ablation as A
from phama import config as C
from phama.trainer import TrainingDiverged


class FakeResult:
    target = 0

    def selected_model(self):
        return None


@pytest.fixture
def fake_training(monkeypatch):
    calls = []

    def fake_train(cfg, dataset):
        calls.append(cfg)
        if cfg.method.beta == 5.0:
            raise TrainingDiverged(3, 0, {"total": float("nan")})
        if cfg.model.fusion_levels == (1, 2) and cfg.seed == 1:
            raise RuntimeError("boom")
        return FakeResult()

    monkeypatch.setattr(A, "train", fake_train)
    monkeypatch.setattr(A, "evaluate_domain", lambda model, ds, t: 50.0 + calls[-1].seed)
    return calls


@pytest.fixture
def dataset():
    from phama.data import SynthSpec, synth_domains

    return synth_domains(SynthSpec(domains=("identity", "blur"), num_classes=2, per_class=4), seed=0)


def test_resolve_grids():
    assert A.resolve_grids("all") == ["table5", "table6", "beta", "fusion"]
    assert A.resolve_grids(["beta", "beta"]) == ["beta"]
    with pytest.raises(ValueError):
        A.resolve_grids("table9")


def test_grid_values():
    assert A.GRIDS["beta"][1] == (0.1, 0.5, 1.0, 2.0, 5.0)
    assert set(A.GRIDS["table6"][1]) == {"smooth_l1", "mse", "patchnce"}
    assert A.GRIDS["fusion"][1] == ((1, 2), (2, 3), (3, 4))
    assert len(A.GRIDS["table5"][1]) == 6


def test_every_cell_recorded(fake_training, dataset, tmp_path):
    base = C.ExperimentConfig(target="identity")
    runs, summary = A.run_ablation_grid(base, "all", seeds=(0, 1), targets=["identity", "blur"], out_dir=tmp_path, dataset=dataset)
    assert len(runs) == 17 * 2 * 2
    collapsed = [r for r in runs if r.status == "collapsed"]
    assert {r.value for r in collapsed} == {"5.0"} and len(collapsed) == 4
    failed = [r for r in runs if r.status == "failed"]
    assert {(r.value, r.seed) for r in failed} == {("1-2", 1)}
    with open(tmp_path / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 17 * 3
    beta5 = [r for r in rows if r["grid"] == "beta" and r["value"] == "5.0"]
    assert all(r["mean"] == "" for r in beta5)
    assert {r["target"]: r["collapsed"] for r in beta5} == {"identity": "2", "blur": "2", "mean": "4"}
    assert (tmp_path / "ablation_runs.csv").exists()


def test_summary_mean_row_is_over_seeds(fake_training, dataset):
    base = C.ExperimentConfig()
    _, summary = A.run_ablation_grid(base, "table6", seeds=(0, 1, 2), targets=["identity", "blur"], dataset=dataset)
    row = next(r for r in summary if r["value"] == "mse" and r["target"] == "mean")
    seed_means = [50.0, 51.0, 52.0]
    assert float(row["mean"]) == pytest.approx(np.mean(seed_means))
    assert float(row["std"]) == pytest.approx(np.std(seed_means), abs=1e-4)
    per_target = next(r for r in summary if r["value"] == "mse" and r["target"] == "blur")
    assert per_target["runs"] == 3


def test_cells_apply_their_key(fake_training, dataset):
    A.run_ablation_grid(C.ExperimentConfig(), ["fusion", "table5"], seeds=(0,), dataset=dataset)
    assert [c.model.fusion_levels for c in fake_training[:3]] == [(1, 2), (2, 3), (3, 4)]
    assert [c.method.variant for c in fake_training[3:]] == list(A.GRIDS["table5"][1])


def test_needs_a_seed(dataset):
    with pytest.raises(ValueError):
        A.run_ablation_grid(C.ExperimentConfig(), "beta", seeds=(), dataset=dataset)
