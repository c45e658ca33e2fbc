"""Analog pulse synthesis, amplifier models and digitization.

Times are in ns and voltages in V. Waveforms carry a leading shot axis:
``values`` has shape ``(n_shots, n_samples)``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import lfilter

from .detector import AvalancheEventList, EventBatch

OVERSAMPLE_RATE = 20e9
SLOW_STAGE_GAIN = 5.5


@dataclass(frozen=True)
class CellPulseParams:
    """Single-cell pulse: squared rise, two-exponential fall.

    ``gain_spread`` is the relative RMS of the cell-to-cell charge, drawn
    independently for every avalanche.
    """

    amplitude: float = 1.0e-3
    tau_rise: float = 0.3
    tau_fall_fast: float = 10.0
    tau_fall_slow: float = 100.0
    fall_mix: float = 0.7
    gain_spread: float = 0.0

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if not 0 < self.tau_rise < self.tau_fall_fast < self.tau_fall_slow:
            raise ValueError("need 0 < tau_rise < tau_fall_fast < tau_fall_slow")
        if not 0.0 <= self.fall_mix <= 1.0:
            raise ValueError("fall_mix must lie in [0, 1]")
        if self.gain_spread < 0:
            raise ValueError("gain_spread must be >= 0")


def _shape(t, p: CellPulseParams):
    t = np.asarray(t, dtype=float)
    tc = np.maximum(t, 0.0)
    rise = -np.expm1(-tc / p.tau_rise)
    fall = p.fall_mix * np.exp(-tc / p.tau_fall_fast) + (1 - p.fall_mix) * np.exp(-tc / p.tau_fall_slow)
    return np.where(t >= 0, rise * rise * fall, 0.0)


@lru_cache(maxsize=64)
def _shape_peak(p: CellPulseParams) -> tuple[float, float]:
    hi = 10 * p.tau_fall_fast
    res = minimize_scalar(lambda t: -_shape(t, p), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x), float(-res.fun)


def cell_pulse(t, p: CellPulseParams):
    """Voltage of one fired cell at time ``t`` after the avalanche; peak = amplitude."""
    return p.amplitude * _shape(t, p) / _shape_peak(p)[1]


def cell_pulse_peak_time(p: CellPulseParams) -> float:
    return _shape_peak(p)[0]


def cell_pulse_integral(p: CellPulseParams, t_stop: float = np.inf) -> float:
    """Closed-form area of :func:`cell_pulse` over ``[0, t_stop]`` (V*ns)."""
    # (1 - e^{-t/r})^2 e^{-t/f} = e^{-t/f} - 2 e^{-t/a} + e^{-t/b}
    total = 0.0
    for w, f in ((p.fall_mix, p.tau_fall_fast), (1 - p.fall_mix, p.tau_fall_slow)):
        for c, rate in ((1.0, 1 / f), (-2.0, 1 / f + 1 / p.tau_rise), (1.0, 1 / f + 2 / p.tau_rise)):
            total += w * c * (-np.expm1(-rate * t_stop)) / rate
    return p.amplitude * total / _shape_peak(p)[1]


@dataclass
class AnalogWaveform:
    """Finely sampled analog signal; ``values[s, i]`` is at ``t0 + i*dt``."""

    t0: float
    dt: float
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[-1])


def synthesize(events, p: CellPulseParams, oversample_rate: float = OVERSAMPLE_RATE,
               t_start: float = -50.0, t_stop: float = 250.0,
               rng: np.random.Generator | None = None) -> AnalogWaveform:
    """Sum of cell pulses placed at every avalanche time (linear superposition)."""
    if isinstance(events, AvalancheEventList):
        events = events.as_batch()
    dt = 1e9 / oversample_rate
    n = int(np.floor((t_stop - t_start) / dt)) + 1
    grid = t_start + dt * np.arange(n)
    out = np.zeros((events.n_shots, n))
    if len(events) == 0:
        return AnalogWaveform(t_start, dt, out)

    amp = np.ones(len(events))
    if p.gain_spread > 0:
        if rng is None:
            raise ValueError("gain_spread > 0 needs a random generator")
        amp = np.clip(rng.normal(1.0, p.gain_spread, size=amp.size), 0.0, None)

    # avalanches sharing t=0 reuse one template
    at0 = events.time == 0.0
    if at0.any():
        w0 = np.bincount(events.shot[at0], weights=amp[at0], minlength=events.n_shots)
        out += w0[:, None] * cell_pulse(grid, p)[None, :]

    rest = np.flatnonzero(~at0)
    for chunk in np.array_split(rest, max(1, rest.size // 2048 + 1)):
        if chunk.size == 0:
            continue
        contrib = amp[chunk, None] * cell_pulse(grid[None, :] - events.time[chunk, None], p)
        shots = events.shot[chunk]
        starts = np.flatnonzero(np.r_[True, shots[1:] != shots[:-1]])
        out[shots[starts]] += np.add.reduceat(contrib, starts, axis=0)
    return AnalogWaveform(t_start, dt, out)


class AmplifierKind(str, enum.Enum):
    FAST_INVERTING = "FastInverting"
    SLOW_SHAPER = "SlowShaper"


class Polarity(str, enum.Enum):
    INVERTING = "Inverting"
    NON_INVERTING = "NonInverting"


@dataclass(frozen=True)
class AmplifierConfig:
    """Fast PSAU-like inverting amplifier or two-stage slow shaper.

    ``saturation`` is ``"hard"`` (clip at the rail) or ``"soft"``
    (``rail * tanh(v / rail)``). ``input_noise_density`` (V*sqrt(ns)) is
    white noise at the amplifier input, so it is shaped like the signal.
    """

    kind: AmplifierKind = AmplifierKind.FAST_INVERTING
    gain_db: float = 12.0
    shaping_tau: float = 41.0
    rail_voltage: float = 0.12
    polarity: Polarity | None = None
    saturation: str = "hard"
    input_noise_density: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AmplifierKind(self.kind))
        if self.input_noise_density < 0:
            raise ValueError("input_noise_density must be >= 0")
        if self.polarity is None:
            pol = Polarity.INVERTING if self.kind is AmplifierKind.FAST_INVERTING else Polarity.NON_INVERTING
        else:
            pol = Polarity(self.polarity)
        object.__setattr__(self, "polarity", pol)
        if self.kind is AmplifierKind.FAST_INVERTING:
            if self.gain_db != int(self.gain_db) or not 1 <= self.gain_db <= 40:
                raise ValueError(f"FastInverting gain_db must be an integer in [1, 40], got {self.gain_db}")
        elif abs(self.gain_db - slow_shaper_gain_db()) > 0.05:
            raise ValueError(f"SlowShaper gain is fixed at {slow_shaper_gain_db():.1f} dB, got {self.gain_db}")
        if self.shaping_tau <= 0:
            raise ValueError("shaping_tau must be > 0")
        if self.rail_voltage <= 0:
            raise ValueError("rail_voltage must be > 0")
        if self.saturation not in ("hard", "soft"):
            raise ValueError(f"saturation must be 'hard' or 'soft', got {self.saturation!r}")

    @property
    def sign(self) -> int:
        return -1 if self.polarity is Polarity.INVERTING else 1

    @classmethod
    def slow(cls, **kw) -> "AmplifierConfig":
        kw.setdefault("rail_voltage", 2.0)
        return cls(kind=AmplifierKind.SLOW_SHAPER, gain_db=slow_shaper_gain_db(), **kw)


def slow_shaper_gain_db() -> float:
    return 40 * np.log10(SLOW_STAGE_GAIN)


def _saturate(v, cfg: AmplifierConfig):
    if cfg.saturation == "soft":
        return cfg.rail_voltage * np.tanh(v / cfg.rail_voltage)
    return np.clip(v, -cfg.rail_voltage, cfg.rail_voltage)


def amplify(w: AnalogWaveform, cfg: AmplifierConfig, rng: np.random.Generator | None = None) -> AnalogWaveform:
    """Gain, shaping and saturation; polarity is applied last."""
    v = w.values
    if cfg.input_noise_density > 0:
        if rng is None:
            raise ValueError("amplifier noise requested without a random generator")
        v = v + rng.normal(0.0, cfg.input_noise_density / np.sqrt(w.dt), size=v.shape)
    if cfg.kind is AmplifierKind.FAST_INVERTING:
        v = _saturate(cfg.sign * 10 ** (cfg.gain_db / 20) * v, cfg)
    else:
        a = np.exp(-w.dt / cfg.shaping_tau)
        stage_gain = 10 ** (cfg.gain_db / 40)
        for _ in range(2):
            v = lfilter([1 - a], [1, -a], v, axis=-1)
            v = _saturate(stage_gain * v, cfg)
        v = cfg.sign * v
    return AnalogWaveform(w.t0, w.dt, v)


@dataclass(frozen=True)
class DigitizerConfig:
    """Sampling ADC. ``full_scale`` is peak-to-peak (V).

    ``noise_rms_lsb`` is white Gaussian noise added before quantization, in
    units of one quantization step. ``trigger_jitter`` is the RMS timing
    offset (ns) between the trigger and the light pulse, drawn per shot.
    """

    sample_rate: float = 5e9
    bits: int = 12
    full_scale: float = 1.0
    record_samples: int = 1024
    pre_trigger_fraction: float = 0.15
    noise_rms_lsb: float = 0.25
    trigger_jitter: float = 0.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        if int(self.bits) != self.bits or not 8 <= self.bits <= 16:
            raise ValueError(f"bits must be an integer in [8, 16], got {self.bits}")
        if self.full_scale <= 0:
            raise ValueError("full_scale must be > 0")
        if int(self.record_samples) != self.record_samples or self.record_samples < 1:
            raise ValueError("record_samples must be a positive integer")
        if not 0.0 <= self.pre_trigger_fraction < 1.0:
            raise ValueError("pre_trigger_fraction must lie in [0, 1)")
        if self.noise_rms_lsb < 0 or self.trigger_jitter < 0:
            raise ValueError("noise_rms_lsb and trigger_jitter must be >= 0")

    @property
    def sample_period(self) -> float:
        return 1e9 / self.sample_rate

    @property
    def lsb(self) -> float:
        return self.full_scale / 2 ** self.bits

    @property
    def trigger_index(self) -> int:
        return int(round(self.pre_trigger_fraction * self.record_samples))

    def sample_times(self) -> np.ndarray:
        return (np.arange(self.record_samples) - self.trigger_index) * self.sample_period

    def analog_span(self, margin: float = 5.0) -> tuple[float, float]:
        t = self.sample_times()
        return t[0] - margin - 4 * self.trigger_jitter, t[-1] + margin + 4 * self.trigger_jitter


@dataclass
class WaveformTrace:
    """Digitized record(s). ``polarity`` is -1 when light pulses are negative."""

    sample_period: float
    samples: np.ndarray
    trigger_index: int
    full_scale: float = 1.0
    bits: int = 12
    polarity: int = 1

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.samples.shape[-1]) - self.trigger_index) * self.sample_period

    def shot(self, i: int) -> "WaveformTrace":
        return replace(self, samples=np.atleast_2d(self.samples)[i])


def quantize(v, full_scale: float, bits: int):
    """Clamp to the input range and round to the nearest level, halves away from zero."""
    half = full_scale / 2
    step = full_scale / 2 ** bits
    v = np.clip(v, -half, half)
    q = np.sign(v) * np.floor(np.abs(v) / step + 0.5) * step
    return np.clip(q, -half, half)


def digitize(w: AnalogWaveform, cfg: DigitizerConfig, rng: np.random.Generator | None = None,
             polarity: int = 1) -> WaveformTrace:
    """Nearest-neighbour resampling, additive noise, clamping and quantization."""
    values = np.atleast_2d(w.values)
    n_shots = values.shape[0]
    t = cfg.sample_times()
    needs_rng = cfg.trigger_jitter > 0 or cfg.noise_rms_lsb > 0
    if needs_rng and rng is None:
        raise ValueError("noise or jitter requested without a random generator")
    shift = rng.normal(0.0, cfg.trigger_jitter, size=n_shots) if cfg.trigger_jitter > 0 else np.zeros(n_shots)
    idx = np.rint((t[None, :] - shift[:, None] - w.t0) / w.dt).astype(np.int64)
    if idx.min() < 0 or idx.max() >= values.shape[1]:
        raise ValueError("analog waveform does not cover the digitizer record")
    s = np.take_along_axis(values, idx, axis=1)
    if cfg.noise_rms_lsb > 0:
        s = s + rng.normal(0.0, cfg.noise_rms_lsb * cfg.lsb, size=s.shape)
    s = quantize(s, cfg.full_scale, cfg.bits)
    return WaveformTrace(cfg.sample_period, s, cfg.trigger_index, cfg.full_scale, cfg.bits, polarity)


def render(events: EventBatch, pulse: CellPulseParams, amp: AmplifierConfig, dig: DigitizerConfig,
           rng: np.random.Generator, oversample_rate: float = OVERSAMPLE_RATE) -> WaveformTrace:
    """Events to digitized traces through the whole analog chain."""
    if oversample_rate < 4 * dig.sample_rate:
        raise ValueError("oversample_rate must be at least 4x the digitizer rate")
    lo, hi = dig.analog_span()
    analog = synthesize(events, pulse, oversample_rate, lo, hi, rng=rng)
    return digitize(amplify(analog, amp, rng), dig, rng, polarity=amp.sign)


_HEADER = struct.Struct("<QId")


def write_waveform_records(fh, trace: WaveformTrace, first_shot: int = 0) -> None:
    """Append one binary record per shot: u64 shot, u32 n, f64 period, then f32 samples."""
    samples = np.atleast_2d(trace.samples).astype("<f4")
    for i, row in enumerate(samples):
        fh.write(_HEADER.pack(first_shot + i, row.size, trace.sample_period))
        fh.write(row.tobytes())


def read_waveform_records(fh):
    """Yield ``(shot, sample_period, samples)`` from a waveform dump."""
    while True:
        head = fh.read(_HEADER.size)
        if not head:
            return
        if len(head) != _HEADER.size:
            raise ValueError("truncated waveform record header")
        shot, n, period = _HEADER.unpack(head)
        body = fh.read(4 * n)
        if len(body) != 4 * n:
            raise ValueError("truncated waveform record body")
        yield shot, period, np.frombuffer(body, dtype="<f4").copy()
