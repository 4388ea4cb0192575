"""FMCW forward model: gesture kinematics and complex baseband frames.

Every frame is a (rx, chirp, sample) cube built from the point-scatterer
signal model

    d(l, n, p) = sum_q a_q exp(j 2 pi [(2 K R_q / c + f_d,q) n / f_s
                                       + f_c l d sin(theta_q) / c
                                       + f_d,q p T_0
                                       + 2 f_c R_q / c])

with K the chirp slope, f_d = 2 v / lambda and T_0 = T_c (back-to-back
chirps). Positive radial velocity means the range is growing.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

C = 299_792_458.0


class GestureClass(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    CLICK = 2
    WRIST = 3

    @classmethod
    def parse(cls, value) -> "GestureClass":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                pass
        elif isinstance(value, (int, np.integer)) and 0 <= int(value) < len(cls):
            return cls(int(value))
        raise ValueError(f"unknown gesture class {value!r}")


CLASS_NAMES = [g.name for g in GestureClass]


@dataclass(frozen=True)
class ChirpConfig:
    f_min: float = 57e9
    f_max: float = 64e9
    chirp_duration: float = 64e-6
    samples_per_chirp: int = 128
    chirps_per_frame: int = 16
    frame_period: float = 0.01
    rx_count: int = 4
    rx_spacing: float | None = None
    amplitude: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        if not self.f_max > self.f_min > 0:
            raise ValueError("need f_max > f_min > 0")
        if self.chirp_duration <= 0 or self.frame_period <= 0:
            raise ValueError("chirp_duration and frame_period must be positive")
        if min(self.samples_per_chirp, self.chirps_per_frame, self.rx_count) < 1:
            raise ValueError("sample, chirp and receiver counts must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.rx_spacing is None:
            object.__setattr__(self, "rx_spacing", self.wavelength / 2)

    @property
    def bandwidth(self) -> float:
        return self.f_max - self.f_min

    @property
    def slope(self) -> float:
        return self.bandwidth / self.chirp_duration

    @property
    def f_center(self) -> float:
        return 0.5 * (self.f_min + self.f_max)

    @property
    def wavelength(self) -> float:
        return C / self.f_center

    @property
    def sample_rate(self) -> float:
        return self.samples_per_chirp / self.chirp_duration

    @property
    def chirp_interval(self) -> float:
        return self.chirp_duration

    @property
    def prf(self) -> float:
        return 1.0 / self.chirp_interval

    @property
    def max_velocity(self) -> float:
        """Doppler Nyquist speed, ``PRF * lambda / 4``."""
        return self.prf * self.wavelength / 4

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.rx_count, self.chirps_per_frame, self.samples_per_chirp)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ScattererState:
    range: float
    velocity: float = 0.0
    azimuth: float = 0.0
    reflectivity: float = 1.0

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError(f"range must be positive, got {self.range}")
        if not abs(self.azimuth) < math.pi / 2:
            raise ValueError(f"|azimuth| must be below pi/2, got {self.azimuth}")
        if not abs(self.velocity) < 1e-3 * C:
            raise ValueError("radial velocity must be far below c")


@dataclass(frozen=True)
class RadarCube:
    samples: np.ndarray
    timestamp: float = 0.0


# ------------------------------------------------------------- kinematics

@dataclass(frozen=True)
class GestureParams:
    """Kinematic parameters for one gesture performance.

    ``offset`` is the hand's lateral azimuth bias (handedness); it is
    mirrored together with the sweep for RIGHT so that RIGHT is the exact
    mirror image of LEFT under the same parameters.
    """

    duration: float = 0.9
    start_range: float = 0.25
    sweep: float = math.radians(30.0)
    offset: float = 0.0
    click_depth: float = 0.10
    push_fraction: float = 0.6
    wrist_amplitude: float = 0.03
    wrist_frequency: float = 4.0

    def __post_init__(self):
        if self.duration <= 0 or self.start_range <= 0:
            raise ValueError("duration and start_range must be positive")
        if not 0 < self.push_fraction < 1:
            raise ValueError("push_fraction must lie in (0, 1)")
        if abs(self.offset) + abs(self.sweep) >= math.pi / 2:
            raise ValueError("sweep plus offset must stay inside (-pi/2, pi/2)")


def _lateral_sweep(p: GestureParams, t: float, sign: float) -> tuple[float, float, float]:
    # hand moves along a line at perpendicular distance start_range; the
    # azimuth eases from +sweep to -sweep (LEFT) with a raised-cosine profile
    w = math.pi / p.duration
    theta = sign * (p.offset + p.sweep * math.cos(w * t))
    dtheta = -sign * p.sweep * w * math.sin(w * t)
    r = p.start_range / math.cos(theta)
    v = r * math.tan(theta) * dtheta
    return r, v, theta


def _click(p: GestureParams, t: float) -> tuple[float, float, float]:
    t_push = p.push_fraction * p.duration
    if t <= t_push:
        phase, w = math.pi * t / t_push, math.pi / t_push
        r = p.start_range - p.click_depth * 0.5 * (1 - math.cos(phase))
        v = -p.click_depth * 0.5 * w * math.sin(phase)
    else:
        t_back = p.duration - t_push
        phase, w = math.pi * (t - t_push) / t_back, math.pi / t_back
        r = p.start_range - p.click_depth * 0.5 * (1 + math.cos(phase))
        v = p.click_depth * 0.5 * w * math.sin(phase)
    return r, v, p.offset


def _wrist(p: GestureParams, t: float) -> tuple[float, float, float]:
    w = 2 * math.pi * p.wrist_frequency
    r = p.start_range - 0.5 * p.wrist_amplitude * (1 - math.cos(w * t))
    v = -0.5 * p.wrist_amplitude * w * math.sin(w * t)
    return r, v, p.offset


def gesture_trajectory(g, params: GestureParams | None, t: float) -> ScattererState:
    """Hand scatterer state at time ``t`` into the gesture.

    ``velocity`` is the analytic time derivative of ``range``.
    """
    g = GestureClass.parse(g)
    p = params or GestureParams()
    if not 0 <= t <= p.duration:
        raise ValueError(f"t={t} outside gesture duration [0, {p.duration}]")
    if g is GestureClass.LEFT:
        r, v, th = _lateral_sweep(p, t, 1.0)
    elif g is GestureClass.RIGHT:
        r, v, th = _lateral_sweep(p, t, -1.0)
    elif g is GestureClass.CLICK:
        r, v, th = _click(p, t)
    else:
        r, v, th = _wrist(p, t)
    return ScattererState(range=r, velocity=v, azimuth=th, reflectivity=1.0)


# -------------------------------------------------------------- synthesis

def signal_phase(cfg: ChirpConfig, s: ScattererState) -> np.ndarray:
    """Phase in cycles of scatterer ``s`` for every (l, p, n) index."""
    f_d = 2.0 * s.velocity / cfg.wavelength
    L, P, N = cfg.shape
    l = np.arange(L)[:, None, None]
    p = np.arange(P)[None, :, None]
    n = np.arange(N)[None, None, :]
    return ((2 * cfg.slope * s.range / C + f_d) * n / cfg.sample_rate
            + cfg.f_center * l * cfg.rx_spacing * math.sin(s.azimuth) / C
            + f_d * p * cfg.chirp_interval
            + 2 * cfg.f_center * s.range / C)


def _noise(rng: np.random.Generator, shape, std: float, dtype=np.float64) -> np.ndarray:
    # circular complex Gaussian with total variance std**2
    scale = dtype(std / math.sqrt(2))
    re = rng.standard_normal(shape, dtype=dtype)
    im = rng.standard_normal(shape, dtype=dtype)
    return (re * scale) + 1j * (im * scale)


def synthesize_frame(cfg: ChirpConfig, scatterers, rng_seed=None, timestamp: float = 0.0) -> RadarCube:
    samples = np.zeros(cfg.shape, dtype=np.complex128)
    for s in scatterers:
        cycles = signal_phase(cfg, s)
        samples += cfg.amplitude * s.reflectivity * np.exp(2j * math.pi * np.mod(cycles, 1.0))
    if cfg.noise_std > 0:
        samples += _noise(np.random.default_rng(rng_seed), cfg.shape, cfg.noise_std)
    return RadarCube(samples, timestamp)


def noise_std_for_snr(cfg: ChirpConfig, snr_db: float, reflectivity: float = 1.0,
                      at_peak_bin: bool = False) -> float:
    """Noise standard deviation giving ``snr_db`` for a scatterer.

    By default the ratio is per raw sample. With ``at_peak_bin`` it refers
    to the unwindowed range-Doppler peak, i.e. after the coherent gain of
    P * N samples.
    """
    amp = cfg.amplitude * reflectivity
    gain = cfg.chirps_per_frame * cfg.samples_per_chirp if at_peak_bin else 1
    return amp * math.sqrt(gain / 10 ** (snr_db / 10))


@dataclass(frozen=True)
class RecordingSpec:
    """Placement of a gesture inside a longer recording.

    Before ``onset`` the hand rests at its start pose; after the gesture
    ends it holds its end pose.
    """

    params: GestureParams = field(default_factory=GestureParams)
    onset: float = 0.0
    body_range: float = 0.5
    body_reflectivity: float = 3.0
    body_azimuth: float = 0.0


def hand_state_at(g, spec: RecordingSpec, t: float) -> ScattererState:
    local = min(max(t - spec.onset, 0.0), spec.params.duration)
    s = gesture_trajectory(g, spec.params, local)
    if local != t - spec.onset:
        s = replace(s, velocity=0.0)
    return s


def recording_scatterers(g, spec: RecordingSpec, frames: int, frame_period: float):
    """Per-frame scatterer lists (hand then body)."""
    body = ScattererState(spec.body_range, 0.0, spec.body_azimuth, spec.body_reflectivity)
    return [[hand_state_at(g, spec, k * frame_period), body] for k in range(frames)]


def synthesize_recording(cfg: ChirpConfig, g, params: GestureParams | RecordingSpec | None = None,
                         frames: int = 128, rng_seed=None) -> list[RadarCube]:
    """Frames ``k = 0 .. frames-1`` sampled at ``t = k * frame_period``.

    ``params`` may be bare :class:`GestureParams` (gesture starts at t=0,
    body at 0.5 m) or a full :class:`RecordingSpec`.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    g = GestureClass.parse(g)
    spec = params if isinstance(params, RecordingSpec) else RecordingSpec(params or GestureParams())
    cube = synthesize_cube_stack(cfg, recording_scatterers(g, spec, frames, cfg.frame_period), rng_seed)
    return [RadarCube(cube[k], k * cfg.frame_period) for k in range(frames)]


def synthesize_cube_stack(cfg: ChirpConfig, frame_scatterers, rng_seed=None) -> np.ndarray:
    """Vectorized synthesis of many frames, shape (frames, L, P, N), complex64."""
    F = len(frame_scatterers)
    L, P, N = cfg.shape
    out = np.zeros((F, L, P, N), dtype=np.complex64)
    Q = max((len(s) for s in frame_scatterers), default=0)
    l = np.arange(L)
    p = np.arange(P)
    n = np.arange(N)
    for q in range(Q):
        rows = [s[q] if len(s) > q else None for s in frame_scatterers]
        R = np.array([s.range if s else 1.0 for s in rows])[:, None]
        f_d = (2.0 * np.array([s.velocity if s else 0.0 for s in rows]) / cfg.wavelength)[:, None]
        sin_th = np.sin(np.array([s.azimuth if s else 0.0 for s in rows]))[:, None]
        amp = cfg.amplitude * np.array([s.reflectivity if s else 0.0 for s in rows])
        # the phase is separable in (l, p, n): build per-axis phasors and
        # take their outer product instead of exponentiating the full cube
        fast = np.exp(2j * math.pi * np.mod((2 * cfg.slope * R / C + f_d) * n / cfg.sample_rate, 1.0))
        rx = np.exp(2j * math.pi * np.mod(cfg.f_center * cfg.rx_spacing * sin_th * l / C, 1.0))
        slow = np.exp(2j * math.pi * np.mod(f_d * p * cfg.chirp_interval, 1.0))
        const = amp * np.exp(2j * math.pi * np.mod(2 * cfg.f_center * R[:, 0] / C, 1.0))
        out += (const[:, None, None, None] * rx[:, :, None, None] * slow[:, None, :, None]
                * fast[:, None, None, :]).astype(np.complex64)
    if cfg.noise_std > 0:
        out += _noise(np.random.default_rng(rng_seed), out.shape, cfg.noise_std, np.float32)
    return out


# ------------------------------------------------------------ bin helpers

def range_bin(cfg: ChirpConfig, r: float, n_fft: int = 256) -> float:
    """Fractional range-FFT bin of a target at range ``r``."""
    return 2 * cfg.slope * r / C / cfg.sample_rate * n_fft


def doppler_bin(cfg: ChirpConfig, v: float, n_fft: int = 64) -> float:
    """Fractional Doppler bin (zero velocity at ``n_fft // 2``)."""
    return n_fft // 2 + 2 * v / cfg.wavelength * cfg.chirp_interval * n_fft
