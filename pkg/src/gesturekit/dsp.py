"""Range/speed/azimuth (RSA) processing chain.

Per frame: 2D FFT (16x128 -> 64x256) -> CA-CFAR -> crop to the near 128
range bins -> per-range-bin reduction to a 1x128x3 frame. 128 consecutive
frames stack into a 128x128x3 image.

Channel conventions of an RSA frame, all in [0, 1]:

* 0 range intensity: max over Doppler of the receiver-averaged magnitude,
  ``log1p``-compressed and min-max scaled (per recording, or per frame when
  no recording bounds are given).
* 1 speed: velocity of the strongest detected cell in the range column,
  mapped affinely from [-v_max, v_max] to [0, 1]; 0.5 when nothing is
  detected in that column.
* 2 azimuth: mean angle of arrival over detected cells of the column,
  mapped from [-pi/2, pi/2] to [0, 1]; 0.5 when nothing is detected.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.ndimage

from .radar_sim import C, ChirpConfig, RadarCube

DOPPLER_BINS = 64
RANGE_BINS = 256
CROP_BINS = 128
FRAMES_PER_IMAGE = 128


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def fft_2d(x: np.ndarray, pad_to: tuple[int, int] = (DOPPLER_BINS, RANGE_BINS), window: bool = True) -> np.ndarray:
    """Zero-padded range-Doppler FFT over the last two axes (chirp, sample).

    Leading axes are batch axes. The Doppler axis is shifted so zero
    velocity sits at bin ``pad_to[0] // 2``. No normalization is applied,
    so Parseval reads ``sum |x|^2 = sum |X|^2 / (D * R)`` when ``window`` is
    off.
    """
    x = np.asarray(x)
    nd, nr = pad_to
    P, N = x.shape[-2:]
    if not (_is_pow2(nd) and _is_pow2(nr)):
        raise ValueError(f"padded sizes must be powers of two, got {pad_to}")
    if nd < P or nr < N:
        raise ValueError(f"pad_to {pad_to} smaller than input {(P, N)}")
    if window:
        x = x * (np.hanning(P + 2)[1:-1, None] * np.hanning(N + 2)[None, 1:-1]).astype(x.real.dtype)
    # range FFT on the P real chirps first, then Doppler over the padded rows
    spec = scipy.fft.fft(x, n=nr, axis=-1)
    spec = scipy.fft.fft(spec, n=nd, axis=-2)
    return np.fft.fftshift(spec, axes=-2)


@dataclass
class RangeDopplerMap:
    """Complex spectra for every receiver, shape (..., L, 64, 256) or cropped (..., L, 64, 128)."""

    cells: np.ndarray
    range_resolution: float
    velocity_resolution: float

    @property
    def magnitude(self) -> np.ndarray:
        """Receiver-averaged magnitude."""
        return np.abs(self.cells).mean(axis=-3)

    @property
    def power(self) -> np.ndarray:
        """Receiver-averaged squared magnitude (CFAR input)."""
        c = self.cells
        return (c.real ** 2 + c.imag ** 2).mean(axis=-3)

    def velocity_of_bin(self, k) -> np.ndarray:
        return (np.asarray(k) - self.cells.shape[-2] // 2) * self.velocity_resolution

    def range_of_bin(self, j) -> np.ndarray:
        return np.asarray(j) * self.range_resolution


def axis_resolution(cfg: ChirpConfig, pad_to=(DOPPLER_BINS, RANGE_BINS)) -> tuple[float, float]:
    """Metres per range bin and m/s per Doppler bin for a padded FFT."""
    nd, nr = pad_to
    dr = cfg.sample_rate / nr * C / (2 * cfg.slope)
    dv = cfg.prf / nd * cfg.wavelength / 2
    return dr, dv


def range_doppler_map(cube, cfg: ChirpConfig | None = None, window: bool = True) -> RangeDopplerMap:
    """RDM for every receiver of a cube, or of a stack of cubes ``(F, L, P, N)``."""
    cfg = cfg or ChirpConfig()
    samples = cube.samples if isinstance(cube, RadarCube) else np.asarray(cube)
    if samples.shape[-3:] != cfg.shape:
        raise ValueError(f"cube shape {samples.shape[-3:]} does not match config {cfg.shape}")
    dr, dv = axis_resolution(cfg)
    return RangeDopplerMap(fft_2d(samples, window=window), dr, dv)


# ------------------------------------------------------------------ CFAR

@dataclass
class DetectionMask:
    mask: np.ndarray
    noise: np.ndarray
    threshold: np.ndarray


def _box_sum(a: np.ndarray, hd: int, hr: int) -> np.ndarray:
    """Sum over a (2hd+1)x(2hr+1) window on the last two axes, zero outside."""
    size = (1,) * (a.ndim - 2) + (2 * hd + 1, 2 * hr + 1)
    return scipy.ndimage.uniform_filter(a, size=size, mode="constant", cval=0.0) * float(np.prod(size))


@functools.lru_cache(maxsize=16)
def _training_counts(shape: tuple[int, int], outer: tuple[int, int], inner: tuple[int, int]) -> np.ndarray:
    ones = np.ones(shape)
    m = np.rint(_box_sum(ones, *outer) - _box_sum(ones, *inner))
    m.flags.writeable = False
    return m


def cfar_threshold_scale(pfa: float, m) -> np.ndarray:
    """CA-CFAR multiplier ``M (pfa^(-1/M) - 1)`` for exponential cell statistics."""
    m = np.asarray(m, dtype=np.float64)
    return m * (pfa ** (-1.0 / m) - 1.0)


def cfar_detect(rdm, pfa: float = 1e-3, guard: tuple[int, int] = (1, 2),
                train: tuple[int, int] = (4, 8)) -> DetectionMask:
    """Cell-averaging CFAR on squared magnitude.

    ``rdm`` is a :class:`RangeDopplerMap` (receiver-averaged power is used)
    or a real power array whose last two axes are (Doppler, range). Windows
    are truncated at the map edges, with the multiplier recomputed from the
    number of training cells actually available.
    """
    if not 0 < pfa < 0.5:
        raise ValueError(f"pfa must lie in (0, 0.5), got {pfa}")
    gd, gr = guard
    td, tr = train
    if min(gd, gr, td, tr) < 0 or (td == 0 and tr == 0):
        raise ValueError(f"degenerate CFAR window guard={guard} train={train}")
    power = rdm.power if isinstance(rdm, RangeDopplerMap) else np.asarray(rdm, dtype=np.float64)
    D, R = power.shape[-2:]
    outer_h, inner_h = (gd + td, gr + tr), (gd, gr)
    m = _training_counts((D, R), outer_h, inner_h)
    if np.any(m < 1):
        raise ValueError("CFAR window leaves cells without training cells")
    total = _box_sum(power, *outer_h) - _box_sum(power, *inner_h)
    noise = np.maximum(total, 0.0) / m
    threshold = cfar_threshold_scale(pfa, m) * noise
    return DetectionMask(power > threshold, noise, threshold)


def crop_rdm(rdm: RangeDopplerMap, mask: DetectionMask | np.ndarray | None = None, keep: int = CROP_BINS):
    """Keep the near ``keep`` range bins of the map (and mask)."""
    if rdm.cells.shape[-1] < keep:
        raise ValueError(f"map has only {rdm.cells.shape[-1]} range bins")
    cropped = RangeDopplerMap(rdm.cells[..., :keep], rdm.range_resolution, rdm.velocity_resolution)
    if mask is None:
        return cropped, None
    if isinstance(mask, DetectionMask):
        mask = DetectionMask(mask.mask[..., :keep], mask.noise[..., :keep], mask.threshold[..., :keep])
    else:
        mask = np.asarray(mask)[..., :keep]
    return cropped, mask


# ------------------------------------------------------------------- AoA

def phase_difference(a, b) -> np.ndarray:
    """``arg(a) - arg(b)`` wrapped to (-pi, pi]."""
    d = np.angle(a) - np.angle(b)
    return np.pi - np.mod(np.pi - d, 2 * np.pi)


def aoa_from_phase(dphi, cfg: ChirpConfig) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth from inter-receiver phase, plus a flag where asin was clamped."""
    arg = np.asarray(dphi) * cfg.wavelength / (2 * np.pi * cfg.rx_spacing)
    clamped = np.abs(arg) > 1
    return np.arcsin(np.clip(arg, -1.0, 1.0)), clamped


def aoa_estimate(rdm_rx_a, rdm_rx_b, cell, cfg: ChirpConfig | None = None, return_flag: bool = False):
    """Azimuth at ``cell = (doppler, range)`` from two receivers' maps.

    Receiver ``a`` must be the one further along the array (index l+1 when
    ``b`` is l) for positive azimuths to come out positive.
    """
    cfg = cfg or ChirpConfig()
    i, j = cell
    theta, clamped = aoa_from_phase(phase_difference(np.asarray(rdm_rx_a)[i, j], np.asarray(rdm_rx_b)[i, j]), cfg)
    theta = float(theta)
    return (theta, bool(clamped)) if return_flag else theta


# -------------------------------------------------------------- RSA frames

def _log_intensity(rdm: RangeDopplerMap) -> np.ndarray:
    return np.log1p(rdm.magnitude.max(axis=-2))


def _scale(a: np.ndarray, bounds: tuple[float, float] | None) -> np.ndarray:
    lo, hi = (float(a.min()), float(a.max())) if bounds is None else bounds
    if hi <= lo:
        return np.zeros_like(a)
    return np.clip((a - lo) / (hi - lo), 0.0, 1.0)


def rsa_frame(cropped: RangeDopplerMap, mask, cfg: ChirpConfig | None = None,
              intensity_bounds: tuple[float, float] | None = None) -> np.ndarray:
    """Reduce cropped maps to RSA rows.

    ``cropped.cells`` is (..., L, 64, 128); ``mask`` a boolean (..., 64, 128)
    array or :class:`DetectionMask`. Returns (..., 1, 128, 3) float32.
    AoA uses receivers 1 and 0.
    """
    cfg = cfg or ChirpConfig()
    det = mask.mask if isinstance(mask, DetectionMask) else np.asarray(mask, dtype=bool)
    cells = cropped.cells
    D = cells.shape[-2]

    intensity = _scale(_log_intensity(cropped), intensity_bounds)

    mag = np.where(det, cropped.magnitude, -1.0)
    best = mag.argmax(axis=-2)
    any_det = det.any(axis=-2)
    v = (best - D // 2) * cropped.velocity_resolution
    speed = np.where(any_det, 0.5 + 0.5 * v / cfg.max_velocity, 0.5)

    theta, _ = aoa_from_phase(phase_difference(cells[..., 1, :, :], cells[..., 0, :, :]), cfg)
    count = det.sum(axis=-2)
    mean_theta = np.where(det, theta, 0.0).sum(axis=-2) / np.maximum(count, 1)
    azimuth = np.where(any_det, 0.5 + mean_theta / np.pi, 0.5)

    frame = np.stack([intensity, np.clip(speed, 0, 1), np.clip(azimuth, 0, 1)], axis=-1)
    return frame[..., None, :, :].astype(np.float32)


def merge_rsa(frames) -> np.ndarray:
    """Stack 128 RSA frames (each 1x128x3) along time into a 128x128x3 image."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim == 4:
        frames = frames[:, 0]
    if frames.shape[0] != FRAMES_PER_IMAGE:
        raise ValueError(f"need exactly {FRAMES_PER_IMAGE} frames, got {frames.shape[0]}")
    if frames.shape[1:] != (CROP_BINS, 3):
        raise ValueError(f"frames must be 1x{CROP_BINS}x3, got {frames.shape[1:]}")
    return np.ascontiguousarray(frames)


@dataclass(frozen=True)
class ProcessingConfig:
    pfa: float = 1e-3
    guard: tuple[int, int] = (1, 2)
    train: tuple[int, int] = (4, 8)
    window: bool = True


def process_block(cubes, cfg: ChirpConfig | None = None, proc: ProcessingConfig | None = None,
                  chunk: int = 32) -> np.ndarray:
    """Run the whole chain over a frame sequence; returns (frames, 128, 3).

    Intensity is min-max scaled over the whole sequence.
    """
    cfg = cfg or ChirpConfig()
    proc = proc or ProcessingConfig()
    if isinstance(cubes, np.ndarray):
        stack = cubes
    else:
        stack = np.stack([c.samples if isinstance(c, RadarCube) else np.asarray(c) for c in cubes])
    if stack.ndim != 4:
        raise ValueError(f"expected (frames, L, P, N), got {stack.shape}")
    logs, rows = [], []
    for start in range(0, len(stack), chunk):
        rdm = range_doppler_map(stack[start:start + chunk], cfg, proc.window)
        det = cfar_detect(rdm, proc.pfa, proc.guard, proc.train)
        cropped, det = crop_rdm(rdm, det)
        logs.append(_log_intensity(cropped))
        rows.append(rsa_frame(cropped, det, cfg, intensity_bounds=(0.0, 1.0))[:, 0])
    block = np.concatenate(rows)
    block[..., 0] = _scale(np.concatenate(logs), None)
    return block.astype(np.float32)


def process_recording(cubes, cfg: ChirpConfig | None = None, proc: ProcessingConfig | None = None) -> np.ndarray:
    """128 frames -> one 128x128x3 RSA image."""
    block = process_block(cubes, cfg, proc)
    return merge_rsa(block)


def channel_to_pgm(image: np.ndarray, channel: int) -> bytes:
    """8-bit binary PGM of one RSA channel (rows = time)."""
    data = np.clip(np.round(np.asarray(image)[..., channel] * 255), 0, 255).astype(np.uint8)
    h, w = data.shape
    return f"P5\n{w} {h}\n255\n".encode() + data.tobytes()
