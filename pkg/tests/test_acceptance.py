"""End-to-end acceptance criteria, one test per criterion.

Each test records a ``criterion N [PASS|FAIL] ...`` line that is printed
inline and repeated in the terminal summary. Criterion 5 trains on the
full 8000-sample dataset (about half an hour on one core) and carries the
``slow`` marker so it can be deselected with ``-m "not slow"``.
"""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from gesturekit import dsp
from gesturekit.cli import main
from gesturekit.dataset import GeneratorConfig, as_arrays, default_chirp_config, generate_dataset, split_dataset
from gesturekit.estimators import CNNGestureClassifier, TemplateGestureClassifier
from gesturekit.evaluation import EvalReport, evaluate
from gesturekit.formats import read_rsa, write_rsa
from gesturekit.models import build_resnet20, build_vgg10
from gesturekit.nn import layers as L
from gesturekit.nn.checkpoint import load_model, save_model
from gesturekit.nn.gradcheck import check_layer
from gesturekit.radar_sim import C, ChirpConfig, ScattererState, synthesize_frame
from gesturekit.selftest import check_shape_contract

CFG = ChirpConfig()


def analytic_bins(r, v, cfg=CFG):
    beat = 2 * cfg.bandwidth / cfg.chirp_duration * r / C
    fd = 2 * v * cfg.f_center / C
    return 32 + fd * cfg.chirp_duration * 64, beat / cfg.sample_rate * 256


@pytest.fixture(scope="module")
def single_target_sweep():
    """100 random single-scatterer frames at 20 dB SNR per raw sample."""
    rng = np.random.default_rng(2024)
    cfg = replace(CFG, noise_std=10 ** (-20 / 20))
    t0 = time.process_time()
    rows = []
    for i in range(100):
        s = ScattererState(rng.uniform(0.1, 1.2), rng.uniform(-1.5, 1.5), math.radians(rng.uniform(-45, 45)))
        rdm = dsp.range_doppler_map(synthesize_frame(cfg, [s], rng_seed=i), cfg)
        det = dsp.cfar_detect(rdm)
        peak = np.unravel_index(np.argmax(rdm.magnitude), rdm.magnitude.shape)
        cfar_peak = np.unravel_index(np.argmax(np.where(det.mask, rdm.power, -1.0)), det.mask.shape)
        theta = dsp.aoa_estimate(rdm.cells[1], rdm.cells[0], cfar_peak, cfg) if det.mask.any() else math.nan
        rows.append((s, peak, theta))
    return rows, time.process_time() - t0


def test_criterion_1_range_velocity(single_target_sweep, criterion):
    rows, cpu = single_target_sweep
    hits = 0
    for s, (d, r), _ in rows:
        ed, er = analytic_bins(s.range, s.velocity)
        hits += abs(d - round(ed)) <= 1 and abs(r - round(er)) <= 1
    ok = hits >= 95 and cpu <= 30
    assert criterion(1, "range/velocity estimation", ok, f"{hits}/100 within +-1 bin, {cpu:.1f}s CPU")


def test_criterion_2_aoa(single_target_sweep, criterion):
    rows, _ = single_target_sweep
    errors = np.array([abs(math.degrees(theta - s.azimuth)) for s, _, theta in rows])
    hits = int(np.sum(errors <= 2.0))
    assert criterion(2, "angle of arrival", hits >= 95,
                     f"{hits}/100 within +-2 deg at the CFAR peak (max error {np.nanmax(errors):.2f} deg)")


def test_criterion_3_cfar_calibration(criterion):
    rng = np.random.default_rng(99)
    t0 = time.process_time()
    detections = cells = 0
    for _ in range(64):
        z = rng.standard_normal((64, 256)) + 1j * rng.standard_normal((64, 256))
        mask = dsp.cfar_detect(np.abs(z) ** 2, pfa=1e-3).mask
        detections += int(mask.sum())
        cells += mask.size
    rate = detections / cells
    cpu = time.process_time() - t0
    ok = cells >= 10**6 and 0.5e-3 <= rate <= 2e-3 and cpu <= 60
    assert criterion(3, "CFAR calibration", ok, f"false-alarm rate {rate:.2e} over {cells} cells, {cpu:.1f}s CPU")


def _gradient_case(kind, rng):
    n = int(rng.integers(2, 4))
    h, w, c = int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 4))
    shape = (n, h, w, c)
    if kind == "conv2d":
        layer = L.Conv2D(c, int(rng.integers(1, 4)), int(rng.choice([1, 3])), int(rng.choice([1, 2])), "same", rng=rng)
    elif kind == "maxpool2d":
        layer = L.MaxPool2D()
    elif kind == "batchnorm":
        layer = L.BatchNorm(c)
    elif kind == "relu":
        layer = L.ReLU()
    elif kind == "flatten":
        layer = L.Flatten()
    elif kind == "global_avg_pool":
        layer = L.GlobalAvgPool()
    elif kind == "dense":
        layer, shape = L.Dense(h * c, w, rng), (n, h * c)
    elif kind == "softmax":
        layer, shape = L.Softmax(), (n, c + 1)
    else:
        layer = L.ResidualBlock(c, int(rng.integers(1, 4)), int(rng.choice([1, 2])), rng)
    x = rng.standard_normal(shape)
    if kind == "maxpool2d":
        x = rng.permutation(np.linspace(-3, 3, x.size)).reshape(shape)
    if kind == "relu":
        x = np.where(np.abs(x) < 1e-3, 0.5, x)
    return layer.astype(np.float64), x


def test_criterion_4_gradients(criterion):
    kinds = ["conv2d", "maxpool2d", "batchnorm", "relu", "flatten", "global_avg_pool", "dense", "softmax",
             "residual_block"]
    rng = np.random.default_rng(4)
    t0 = time.process_time()
    worst = {k: 0.0 for k in kinds}
    for kind in kinds:
        for trial in range(20):
            layer, x = _gradient_case(kind, rng)
            worst[kind] = max(worst[kind], max(check_layer(layer, x, training=True, seed=trial).values()))
    cpu = time.process_time() - t0
    ok = all(v < 1e-5 for v in worst.values()) and cpu <= 60
    top = max(worst, key=worst.get)
    assert criterion(4, "finite-difference gradients", ok,
                     f"{len(kinds)} layer types x 20 shapes, max rel. err {worst[top]:.1e} ({top}), {cpu:.1f}s CPU")


@pytest.mark.slow
def test_criterion_5_classification(criterion):
    t0 = time.perf_counter()
    records = generate_dataset(250, default_chirp_config(20.0), seed=7, gen=GeneratorConfig(crops=8))
    records = split_dataset(records, 0.3, seed=7)
    x_tr, y_tr = as_arrays(records, "train")
    x_va, y_va = as_arrays(records, "val")
    del records
    t_gen = time.perf_counter() - t0

    results, epochs = {}, {}
    for arch, target in (("resnet20", 0.95), ("vgg10", 0.85)):
        est = CNNGestureClassifier(arch, max_epochs=60, target_val_acc=target, random_state=0)
        est.fit(x_tr, y_tr, x_va, y_va)
        results[arch] = float(np.mean(est.predict(x_va) == y_va))
        epochs[arch] = len(est.history_.rows)
        del est
    tpl = TemplateGestureClassifier().fit(x_tr, y_tr)
    results["template"] = float(np.mean(tpl.predict(x_va) == y_va))
    total = time.perf_counter() - t0

    thresholds_met = results["resnet20"] >= 0.95 and results["vgg10"] >= 0.85 and results["template"] >= 0.50
    ordered = results["resnet20"] >= results["vgg10"] >= results["template"]
    detail = (f"n_train={len(y_tr)} n_val={len(y_va)}; resnet20 {results['resnet20']:.4f} "
              f"({epochs['resnet20']} ep), vgg10 {results['vgg10']:.4f} ({epochs['vgg10']} ep), "
              f"template {results['template']:.4f}; ordering {'holds' if ordered else 'violated'}; "
              f"wall {total / 60:.1f} min (data {t_gen / 60:.1f} min, target 30 min)")
    assert criterion(5, "synthetic end-to-end classification", thresholds_met and ordered, detail)


def test_criterion_6_shape_contract(criterion, capsys):
    result = check_shape_contract()
    code = main(["selftest"])
    out = capsys.readouterr().out
    ok = result.passed and code == 0 and "[PASS] shape contract" in out
    assert criterion(6, "shape contract", ok, f"{result.detail}; selftest exit {code}")


def test_criterion_7_determinism(tmp_path, criterion):
    (tmp_path / "sched.json").write_text('{"max_epochs": 2, "batch_size": 8}')
    produced = {}
    for run in ("a", "b"):
        root = tmp_path / run
        data = root / "data"
        steps = [
            ["--seed", "11", "--threads", "1", "gen", "--per-class", "3", "--crops", "2", "--out", str(data)],
            ["--seed", "11", "--threads", "1", "train", "--arch", "resnet20", "--data", str(data),
             "--out", str(root / "r.gnn"), "--config", str(tmp_path / "sched.json")],
            ["--seed", "11", "train", "--arch", "template", "--data", str(data), "--out", str(root / "t.gnn")],
            ["eval", "--model", str(root / "r.gnn"), "--data", str(data), "--report", str(root / "r.csv")],
            ["eval", "--model", str(root / "t.gnn"), "--data", str(data), "--report", str(root / "t.csv")],
        ]
        codes = [main(argv) for argv in steps]
        assert codes == [0] * len(steps)
        produced[run] = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    same_names = produced["a"].keys() == produced["b"].keys()
    differing = [str(k) for k in produced["a"] if produced["a"][k] != produced["b"].get(k)]
    ok = same_names and not differing
    detail = f"{len(produced['a'])} files compared" + (f"; differ: {differing[:5]}" if differing else ", all identical")
    assert criterion(7, "determinism", ok, detail)


def test_criterion_8_round_trips(tmp_path, criterion):
    rng = np.random.default_rng(8)
    img = rng.random((128, 128, 3)).astype(np.float32)
    write_rsa(tmp_path / "s.rsa", img, 2)
    back, label = read_rsa(tmp_path / "s.rsa")
    rsa_ok = back.tobytes() == img.tobytes() and label == 2

    ckpt_ok = True
    x = rng.random((3, 128, 128, 3)).astype(np.float32)
    for model in (build_resnet20(seed=3), build_vgg10(seed=3)):
        model.forward(x, training=True)  # move batch-norm running statistics off their defaults
        save_model(model, tmp_path / "m.gnn")
        loaded = load_model(tmp_path / "m.gnn")
        ckpt_ok &= all(a.tobytes() == b.tobytes() for a, b in zip(model.get_state(), loaded.get_state()))
        ckpt_ok &= np.array_equal(model.predict_proba(x), loaded.predict_proba(x))

    y = np.repeat(np.arange(4), 6)
    pred = np.where(rng.random(24) < 0.3, rng.integers(0, 4, 24), y)
    report = evaluate(lambda X: pred, None, y, model_id="m.gnn")
    csv_ok = EvalReport.from_csv(report.to_csv()) == report

    ok = rsa_ok and ckpt_ok and csv_ok
    assert criterion(8, "round trips", ok, f"RSA file {'exact' if rsa_ok else 'MISMATCH'}, checkpoints "
                     f"{'exact' if ckpt_ok else 'MISMATCH'}, report CSV {'equal' if csv_ok else 'MISMATCH'}")
