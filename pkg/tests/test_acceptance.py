"""Acceptance checks, one ``criterion`` marker per numbered requirement.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
ends with one PASS/FAIL line per criterion.  Criteria 8 and 10 share a single
desk-scale training sweep (about 20-25 minutes on one CPU core).
"""
import copy
import csv
import math
import os
import time

import numpy as np
import pytest
import torch

from phama import fourier as F
from phama.cli import main
from phama.data.augment import apda_arrays
from phama.data.corruptions import corrupt_batch
from phama.evaluation import evaluate_corruptions, predict
from phama.experiments import desk_config, run_desk_experiment
from phama.models import EncoderSpec, PhaMaNet
from phama.objective import Variant, ema_update, init_momentum, patchnce, phama_loss
from phama.spectral import centroid_frequency, frequency_std
from phama.trainer import build_dataset
from tests.oracles import (
    accuracy_count,
    brute_dft,
    centroid_sum,
    gradcheck_params,
    gradient_correlation,
    natural_images,
    patchnce_loop,
    std_sum,
    unit_rows,
)

D64 = torch.float64
criterion = pytest.mark.criterion


# ---- 1 ----------------------------------------------------------------------


@criterion(1, "FFT round trip and brute-force DFT")
def test_fft_correctness(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst32 = worst64 = 0.0
    for _ in range(200):
        h, w = rng.integers(2, 65, size=2)
        c = int(rng.choice([1, 3]))
        x32 = rng.random((c, h, w)).astype(np.float32)
        x64 = rng.random((c, h, w))
        worst32 = max(worst32, float(np.max(np.abs(F.ifft2(F.fft2(x32)) - x32))))
        worst64 = max(worst64, float(np.max(np.abs(F.ifft2(F.fft2(x64), dtype=np.float64) - x64))))
    worst_dft = 0.0
    for h in range(2, 9):
        for w in range(2, 9):
            x = rng.random((1, h, w))
            worst_dft = max(worst_dft, float(np.max(np.abs(F.fft2(x)[0] - brute_dft(x[0])))))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"f32 {worst32:.1e}, f64 {worst64:.1e}, dft {worst_dft:.1e}, {elapsed:.1f}s")
    assert worst32 < 1e-5
    assert worst64 < 1e-10
    assert worst_dft <= 1e-10
    assert elapsed < 10


# ---- 2 ----------------------------------------------------------------------


@criterion(2, "polar and amplitude-mix algebra")
def test_polar_mix_algebra(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst_polar = 0.0
    for _ in range(100):
        h, w = rng.integers(2, 33, size=2)
        s = F.fft2(rng.random((3, h, w)))
        worst_polar = max(worst_polar, float(np.max(np.abs(F.from_polar(F.to_polar(s)) - s)) / np.max(np.abs(s))))
    a1, a2 = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    np.testing.assert_array_equal(F.mix_amplitude(a1, a2, 0.0), a1)
    np.testing.assert_array_equal(F.mix_amplitude(a1, a2, 1.0), a2)
    images = rng.random((16, 3, 32, 32)).astype(np.float32)
    out, lam, _, _ = apda_arrays(images, 0.0, seed=1, clamp=False)
    worst_apda = float(np.max(np.abs(out - images)))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"polar {worst_polar:.1e}, apda(0) {worst_apda:.1e}, {elapsed:.1f}s")
    assert np.all(lam == 0)
    assert worst_polar < 1e-5
    assert worst_apda < 1e-5
    assert elapsed < 10


# ---- 3 ----------------------------------------------------------------------


@criterion(3, "spectral centroid and spread statistics")
def test_spectral_statistics(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(1000):
        x = rng.random(int(rng.integers(1, 200))) * 10 ** rng.uniform(-2, 2)
        worst = max(
            worst,
            abs(centroid_frequency(x) - centroid_sum(x)) / max(1.0, centroid_sum(x)),
            abs(frequency_std(x) - std_sum(x)) / max(1.0, std_sum(x)),
        )
        k = float(rng.uniform(0.1, 10))
        assert centroid_frequency(k * x) == pytest.approx(k * centroid_frequency(x), rel=1e-9)
        assert frequency_std(k * x) == pytest.approx(k * frequency_std(x), rel=1e-9, abs=1e-12)
    elapsed = time.perf_counter() - t0
    record_property("detail", f"oracle gap {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-9
    assert centroid_frequency([1.0, 2.0]) == pytest.approx(1.8, abs=1e-15)
    assert frequency_std([1.0, 2.0]) == pytest.approx(0.4, abs=1e-15)
    assert elapsed < 5


# ---- 4 ----------------------------------------------------------------------


@criterion(4, "PatchNCE against a double-loop oracle")
def test_patchnce_oracle(record_property):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        p, d = int(rng.integers(2, 9)), int(rng.integers(1, 5))  # one patch has no negatives
        tau = float(rng.uniform(0.05, 1.0))
        a, b = unit_rows(rng, p, d), unit_rows(rng, p, d)
        got = float(patchnce(torch.tensor(a, dtype=D64), torch.tensor(b, dtype=D64), tau))
        worst = max(worst, abs(got - patchnce_loop(a, b, tau)))
    same = torch.tensor(np.tile(unit_rows(rng, 1, 4), (6, 1)), dtype=D64)
    symmetric = float(patchnce(same, same, 0.07))
    eye = torch.eye(4, dtype=D64)
    ortho = float(patchnce(eye, eye, 0.07))
    record_property("detail", f"oracle gap {worst:.1e}, orthonormal {ortho:.1e}")
    assert worst <= 1e-10
    assert symmetric == pytest.approx(6 * math.log(6), abs=1e-9)
    assert ortho < 1e-5


# ---- 5 ----------------------------------------------------------------------


@criterion(5, "end-to-end gradient fidelity")
def test_gradient_fidelity(record_property):
    t0 = time.perf_counter()
    torch.manual_seed(7)
    spec = EncoderSpec(num_classes=3, input_size=4, width=4, num_blocks=2, fusion_levels=(1, 2), proj_dim=8)
    online = PhaMaNet(spec).double()
    momentum = copy.deepcopy(online)
    init_momentum(momentum, online)
    with torch.no_grad():
        for p in momentum.parameters():
            p.add_(0.05 * torch.randn_like(p))
    momentum.eval()
    x_o, x_a = torch.rand(2, 3, 4, 4, dtype=D64), torch.rand(2, 3, 4, 4, dtype=D64)
    y = torch.tensor([0, 2])
    assert online.embed(x_o)[1].shape[1] == 4  # P = 4 patch locations

    def loss(model):
        return phama_loss(model, momentum, x_o, x_a, y, 0.7, Variant.full_phama, "patchnce", 0.5).total

    gradcheck_params(online.train(), loss)

    # even when asked to track gradients the momentum copy must receive none
    for p in momentum.parameters():
        p.requires_grad_(True)
    loss(online).backward()
    leaked = [n for n, p in momentum.named_parameters() if p.grad is not None and torch.any(p.grad != 0)]
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{elapsed:.1f}s")
    assert not leaked
    assert elapsed < 120


# ---- 6 ----------------------------------------------------------------------


def _ema_pair():
    torch.manual_seed(0)
    online = PhaMaNet(EncoderSpec(input_size=8, width=4, num_blocks=2, fusion_levels=(1, 2), proj_dim=4)).double()
    momentum = copy.deepcopy(online)
    init_momentum(momentum, online)
    with torch.no_grad():
        for p in online.parameters():
            p.add_(torch.randn_like(p))
    return online, momentum


@criterion(6, "momentum-update algebra")
def test_ema_algebra(record_property):
    online, momentum = _ema_pair()
    m = 0.9995
    before = {n: p.clone() for n, p in momentum.named_parameters()}
    ema_update(momentum, online, m)
    worst = 0.0
    for n, p in momentum.named_parameters():
        expected = m * before[n] + (1 - m) * dict(online.named_parameters())[n].detach()
        scale = max(1.0, float(expected.abs().max()))
        worst = max(worst, float(torch.max(torch.abs(p - expected))) / scale)

    online, momentum = _ema_pair()
    gap0 = [(pm - pn).clone() for pm, pn in zip(momentum.parameters(), online.parameters())]
    m = 0.99
    for _ in range(1000):
        ema_update(momentum, online, m)
    for g0, pm, pn in zip(gap0, momentum.parameters(), online.parameters()):
        torch.testing.assert_close(pm - pn, g0 * m**1000, rtol=1e-9, atol=1e-12)
    record_property("detail", f"single-step error {worst / torch.finfo(D64).eps:.1f} eps")
    assert worst <= 2 * torch.finfo(D64).eps


# ---- 7 ----------------------------------------------------------------------


@criterion(7, "phase keeps structure, amplitude does not")
def test_structure_preservation(record_property):
    images = natural_images(22, size=64)
    wins = sum(gradient_correlation(x, F.phase_only(x)) > gradient_correlation(x, F.amplitude_only(x)) for x in images)
    record_property("detail", f"{wins}/{len(images)} images")
    assert len(images) >= 20
    assert wins == len(images)


# ---- 8 and 10 ---------------------------------------------------------------


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    if os.environ.get("PHAMA_SKIP_DESK"):
        pytest.skip("PHAMA_SKIP_DESK is set")
    cfg = desk_config()
    t0 = time.perf_counter()
    results = run_desk_experiment(cfg, seeds=(0, 1, 2), progress=print)
    elapsed = time.perf_counter() - t0
    out = tmp_path_factory.mktemp("desk") / "desk_runs.csv"
    results.write(out)
    print(f"desk experiment: {elapsed:.0f}s, runs written to {out}")
    return cfg, results, elapsed


@criterion(8, "desk-scale leave-one-domain-out ordering")
def test_desk_dg_experiment(desk, record_property):
    cfg, results, elapsed = desk
    ds = build_dataset(cfg)
    assert ds.num_domains == 4 and ds.num_classes == 5
    assert ds.images.shape[1:] == (3, 32, 32)
    for d in range(4):
        assert np.all(np.bincount(ds.labels[ds.domains == d], minlength=5) == 200)
    assert cfg.model.arch == "small_convnet" and not cfg.model.pretrained
    assert {r.target for r in results.runs} == set(ds.domain_names)
    assert {r.seed for r in results.runs} == {0, 1, 2}

    base = results.mean_accuracy("baseline_erm")
    apda = results.mean_accuracy("A_apda_only")
    full = results.mean_accuracy("full_phama")
    record_property(
        "detail", f"baseline {base:.2f}, A {apda:.2f}, full {full:.2f} (+{full - base:.2f}), {elapsed / 60:.1f} min"
    )
    assert full - base >= 2.0
    assert apda > base
    assert elapsed <= 30 * 60


@criterion(10, "corruption robustness and error arithmetic")
def test_corruption_arithmetic_matches_oracle(record_property):
    torch.manual_seed(0)
    model = PhaMaNet(EncoderSpec(num_classes=5, input_size=16, width=8, num_blocks=2, fusion_levels=(1, 2), proj_dim=8))
    rng = np.random.default_rng(0)
    images = rng.random((40, 3, 16, 16)).astype(np.float32)
    labels = rng.integers(0, 5, size=40)
    kinds = ("gaussian_noise", "shot_noise", "defocus_blur", "contrast", "brightness")
    res = evaluate_corruptions(model, images, labels, kinds, seed=3)
    cells = []
    for k, kind in enumerate(kinds):
        for s in range(1, 6):
            corrupted = corrupt_batch(images, kind, s, seed=(3, k, s))
            expected = 100.0 - accuracy_count(predict(model, corrupted), labels)
            assert res.errors[kind][s] == expected
            cells.append(expected)
    assert res.clean_error == 100.0 - accuracy_count(predict(model, images), labels)
    assert res.mean_error == sum(cells) / len(cells)


@criterion(10, "corruption robustness and error arithmetic")
def test_desk_corruption_robustness(desk, record_property):
    _, results, _ = desk
    assert tuple(desk[0].eval.corruptions) == ("gaussian_noise", "shot_noise", "defocus_blur", "contrast", "brightness")
    base = results.mean_corruption_error("baseline_erm")
    full = results.mean_corruption_error("full_phama")
    record_property("detail", f"mCE baseline {base:.2f}, full {full:.2f}")
    assert full <= base


# ---- 9 ----------------------------------------------------------------------

TINY = [
    "--set", "data.synth_domains=identity,color_map,texture",
    "--set", "synth_classes=2",
    "--set", "synth_per_class=12",
    "--set", "data.image_size=16",
    "--set", "model.width=8",
    "--set", "model.num_blocks=4",
    "--set", "proj_dim=16",
    "--set", "optim.epochs=1",
    "--set", "optim.batch_size=16",
]

EXPECTED_CELLS = {
    "table5": {"baseline_erm", "A_apda_only", "B_no_momentum", "C_o2a_only", "D_a2o_only", "full_phama"},
    "table6": {"smooth_l1", "mse", "patchnce"},
    "beta": {"0.1", "0.5", "1.0", "2.0", "5.0"},
    "fusion": {"1-2", "2-3", "3-4"},
}


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@criterion(9, "ablation grid completeness")
def test_ablation_grid_complete(tmp_path, capsys, record_property):
    out = tmp_path / "all"
    assert main(["ablate", *TINY, "--grid", "all", "--seeds", "0,1", "--out", str(out)]) == 0
    rows = _rows(out / "ablation.csv")
    assert {"mean", "std"} <= set(rows[0])
    for grid, values in EXPECTED_CELLS.items():
        mine = [r for r in rows if r["grid"] == grid]
        assert {r["value"] for r in mine} == values, grid
        assert {r["target"] for r in mine} == {"identity", "mean"}
    assert all(r["failed"] == "0" and r["runs"] == "2" for r in rows)
    ok = [r for r in rows if r["ok"] == "2"]
    assert all(r["mean"] and r["std"] for r in ok)
    beta5 = [r for r in rows if r["grid"] == "beta" and r["value"] == "5.0"]
    assert all(int(r["ok"]) + int(r["collapsed"]) == 2 for r in beta5)

    # force genuine divergence: every cell must be recorded as collapsed, the grid still completes
    out = tmp_path / "diverge"
    assert main(["ablate", *TINY, "--grid", "beta", "--seeds", "0", "--set", "optim.lr=1e30", "--out", str(out)]) == 0
    div = _rows(out / "ablation.csv")
    assert {r["value"] for r in div} == EXPECTED_CELLS["beta"]
    assert all(r["collapsed"] == "1" and r["failed"] == "0" and r["mean"] == "" for r in div)
    record_property("detail", f"{len(rows)} summary rows, forced divergence recorded as collapsed")
