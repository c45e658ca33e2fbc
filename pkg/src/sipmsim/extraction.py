"""Per-shot scalar outputs from digitized traces.

All extractors accept a single trace (1-D samples, returns a float) or a
batch (2-D samples, returns one value per shot). Outputs are folded by the
chain polarity so light pulses always give positive values.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .waveform import WaveformTrace

DEFAULT_BASELINE_WINDOW = (-24.0, -4.0)


class Method(str, enum.Enum):
    GATED_INTEGRAL = "GatedIntegral"
    PEAK_VALUE = "PeakValue"
    PRE_PEAK_INTEGRAL = "PrePeakIntegral"


@dataclass(frozen=True)
class ExtractionConfig:
    """``width`` is the gate tau, the peak search window, or the pre-peak width (ns).

    ``search_window`` bounds the peak search for ``PrePeakIntegral``.
    """

    method: Method = Method.GATED_INTEGRAL
    width: float = 70.0
    search_window: float = 150.0
    baseline_window: tuple[float, float] = DEFAULT_BASELINE_WINDOW

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "baseline_window", tuple(float(x) for x in self.baseline_window))
        if self.width <= 0 or self.search_window <= 0:
            raise ValueError("width and search_window must be > 0")
        lo, hi = self.baseline_window
        if not lo < hi <= 0:
            raise ValueError(f"baseline window must precede the trigger, got {self.baseline_window}")

    @property
    def label(self) -> str:
        if self.method is Method.PEAK_VALUE:
            return "peak"
        if self.method is Method.PRE_PEAK_INTEGRAL:
            return f"prepeak{self.width:g}ns"
        return f"gate{self.width:g}ns"


def _index_range(trace: WaveformTrace, start: float, stop: float) -> slice:
    t = trace.times
    sel = np.flatnonzero((t >= start - 1e-9) & (t <= stop + 1e-9))
    if sel.size == 0:
        raise ValueError(f"window [{start}, {stop}] ns lies outside the trace")
    return slice(sel[0], sel[-1] + 1)


def _n_samples(width: float, period: float) -> float:
    q = width / period
    r = round(q)
    return float(r) if abs(q - r) < 1e-9 * max(1.0, q) else q


def baseline(trace: WaveformTrace, window=DEFAULT_BASELINE_WINDOW):
    """Mean of the samples inside a pre-trigger window."""
    start, stop = window
    t = trace.times
    if stop > 0 or start < t[0] - 1e-9:
        raise ValueError(f"baseline window {window} is not inside the pre-trigger region")
    sl = _index_range(trace, start, stop)
    if sl.stop - sl.start < 4:
        raise ValueError(f"baseline window {window} holds fewer than 4 samples")
    return trace.samples[..., sl].mean(axis=-1)


def _folded(trace: WaveformTrace, window):
    b = baseline(trace, window)
    return trace.polarity * (trace.samples - np.expand_dims(b, -1))


def gated_integral(trace: WaveformTrace, tau: float, baseline_window=DEFAULT_BASELINE_WINDOW):
    """Riemann sum of the folded signal over ``[trigger, trigger + tau]`` (V*ns).

    The last sample is weighted by the fractional part of ``tau/period``, so
    a constant signal integrates to exactly ``value * tau``.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    q = _n_samples(tau, trace.sample_period)
    full = int(np.floor(q))
    frac = q - full
    need = trace.trigger_index + full + (1 if frac > 0 else 0)
    if need > trace.samples.shape[-1]:
        raise ValueError(f"gate of {tau} ns exceeds the record")
    y = _folded(trace, baseline_window)
    i0 = trace.trigger_index
    total = y[..., i0:i0 + full].sum(axis=-1)
    if frac > 0:
        total = total + frac * y[..., i0 + full]
    return total * trace.sample_period


def _peak_index(y, trace: WaveformTrace, search_window: float):
    if search_window <= 0:
        raise ValueError(f"search window must be > 0, got {search_window}")
    sl = _index_range(trace, 0.0, search_window)
    if trace.times[-1] < search_window - trace.sample_period:
        raise ValueError(f"search window of {search_window} ns exceeds the record")
    return sl.start + np.argmax(y[..., sl], axis=-1)


def peak_value(trace: WaveformTrace, search_window: float = 150.0, baseline_window=DEFAULT_BASELINE_WINDOW):
    """Largest folded sample within ``[trigger, trigger + search_window]`` (V)."""
    y = _folded(trace, baseline_window)
    i = _peak_index(y, trace, search_window)
    return np.take_along_axis(y, np.expand_dims(i, -1), axis=-1)[..., 0]


def pre_peak_integral(trace: WaveformTrace, width: float, search_window: float = 150.0,
                      baseline_window=DEFAULT_BASELINE_WINDOW):
    """Integral of the ``round(width/period)`` samples ending at the peak sample (V*ns)."""
    if width <= 0:
        raise ValueError(f"width must be > 0, got {width}")
    n = max(1, int(round(width / trace.sample_period)))
    if trace.trigger_index - n + 1 < 0:
        raise ValueError(f"pre-peak width of {width} ns reaches before the record")
    y = _folded(trace, baseline_window)
    i = _peak_index(y, trace, search_window)
    c = np.cumsum(y, axis=-1)
    c = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c], axis=-1)
    hi = np.take_along_axis(c, np.expand_dims(i + 1, -1), axis=-1)[..., 0]
    lo = np.take_along_axis(c, np.expand_dims(i + 1 - n, -1), axis=-1)[..., 0]
    return (hi - lo) * trace.sample_period


def extract(trace: WaveformTrace, cfg: ExtractionConfig):
    if cfg.method is Method.GATED_INTEGRAL:
        return gated_integral(trace, cfg.width, cfg.baseline_window)
    if cfg.method is Method.PEAK_VALUE:
        return peak_value(trace, cfg.width, cfg.baseline_window)
    return pre_peak_integral(trace, cfg.width, cfg.search_window, cfg.baseline_window)


@dataclass
class ShotRecords:
    """Extracted outputs per shot; ``k1``/``k2`` are filled after calibration."""

    x_out1: np.ndarray
    x_out2: np.ndarray | None = None
    k1: np.ndarray | None = None
    k2: np.ndarray | None = None

    def __len__(self):
        return len(self.x_out1)

    def to_jsonl(self, fh) -> None:
        for i in range(len(self)):
            rec = {"shot": i, "x_out1": float(self.x_out1[i])}
            for name in ("x_out2", "k1", "k2"):
                arr = getattr(self, name)
                if arr is not None:
                    rec[name] = float(arr[i])
            fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, fh) -> "ShotRecords":
        rows = [json.loads(line) for line in fh if line.strip()]
        rows.sort(key=lambda r: r["shot"])

        def col(name):
            if rows and name in rows[0]:
                return np.array([r[name] for r in rows], dtype=float)
            return None

        return cls(col("x_out1"), col("x_out2"), col("k1"), col("k2"))
