"""Fast built-in checks: pipeline shapes, radar physics and layer gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import dsp
from .nn import layers as L
from .nn.gradcheck import check_layer
from .radar_sim import (ChirpConfig, GestureClass, ScattererState, doppler_bin, noise_std_for_snr, range_bin,
                        synthesize_frame, synthesize_recording)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def check_shape_contract() -> CheckResult:
    cfg = ChirpConfig(noise_std=0.5)
    cubes = synthesize_recording(cfg, GestureClass.LEFT, frames=128, rng_seed=0)
    raw = cubes[0].samples[0]
    rdm = dsp.range_doppler_map(cubes[0], cfg)
    det = dsp.cfar_detect(rdm)
    cropped, cmask = dsp.crop_rdm(rdm, det)
    frame = dsp.rsa_frame(cropped, cmask, cfg)
    image = dsp.process_recording(cubes, cfg)
    got = [raw.shape, rdm.cells.shape[1:], det.mask.shape, cropped.cells.shape[1:], frame.shape, image.shape]
    want = [(16, 128), (64, 256), (64, 256), (64, 128), (1, 128, 3), (128, 128, 3)]
    ok = got == want and bool(np.all((image >= 0) & (image <= 1)))
    return CheckResult("shape contract", ok, " -> ".join("x".join(map(str, s)) for s in got))


def check_physics(trials: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    base = ChirpConfig()
    cfg = replace(base, noise_std=noise_std_for_snr(base, 20.0))
    hits = 0
    for i in range(trials):
        s = ScattererState(rng.uniform(0.1, 1.2), rng.uniform(-1.5, 1.5), math.radians(rng.uniform(-45, 45)))
        rdm = dsp.range_doppler_map(synthesize_frame(cfg, [s], rng_seed=i), cfg)
        det = dsp.cfar_detect(rdm)
        d, r = np.unravel_index(np.argmax(np.where(det.mask, rdm.power, -1.0)), det.mask.shape)
        theta = dsp.aoa_estimate(rdm.cells[1], rdm.cells[0], (d, r), cfg)
        hits += (abs(r - round(range_bin(cfg, s.range))) <= 1 and abs(d - round(doppler_bin(cfg, s.velocity))) <= 1
                 and abs(math.degrees(theta - s.azimuth)) <= 2)
    return CheckResult("range/Doppler/AoA recovery", hits == trials, f"{hits}/{trials} within tolerance")


def check_gradients(seed: int = 0, tol: float = 1e-5) -> CheckResult:
    rng = np.random.default_rng(seed)
    cases = [
        ("conv2d", L.Conv2D(3, 4, 3, 1, "same", rng=rng), (2, 5, 5, 3)),
        ("conv2d/s2", L.Conv2D(2, 3, 3, 2, "same", rng=rng), (2, 5, 5, 2)),
        ("maxpool2d", L.MaxPool2D(), (2, 4, 4, 2)),
        ("batchnorm", L.BatchNorm(3), (4, 3, 3, 3)),
        ("dense", L.Dense(6, 4, rng), (3, 6)),
        ("relu", L.ReLU(), (3, 7)),
        ("softmax", L.Softmax(), (3, 4)),
        ("residual_block", L.ResidualBlock(2, 3, 2, rng), (2, 4, 4, 2)),
    ]
    worst, failed = 0.0, []
    for name, layer, shape in cases:
        layer.astype(np.float64)
        err = max(check_layer(layer, rng.standard_normal(shape), training=True, seed=seed).values())
        worst = max(worst, err)
        if not err < tol:
            failed.append(name)
    detail = f"max rel. err {worst:.2e}" + (f"; failed: {', '.join(failed)}" if failed else "")
    return CheckResult("finite-difference gradients", not failed, detail)


def run_selftest() -> list[CheckResult]:
    return [check_shape_contract(), check_physics(), check_gradients()]
