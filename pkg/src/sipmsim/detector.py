"""Avalanche-level SiPM response: efficiency, dark counts, cross-talk, afterpulses.

Events are kept in a flat, shot-tagged batch so that blocks of shots are
simulated with a handful of vectorized draws.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Origin(enum.IntEnum):
    PHOTON = 0
    DARK = 1
    PROMPT_CT = 2
    DELAYED_CT = 3
    AFTERPULSE = 4


@dataclass(frozen=True)
class DetectorConfig:
    """SiPM parameters. Rates in Hz, times in ns."""

    eta: float = 0.38
    n_cells: int = 667
    dark_rate: float = 9.0e4
    eps_prompt: float = 0.02
    eps_delayed: float = 0.01
    ct_delay_tau: float = 20.0
    afterpulse_prob: float = 0.0
    afterpulse_tau: float = 50.0
    record_window: float = 200.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise ValueError(f"n_cells must be a positive integer, got {self.n_cells}")
        if self.dark_rate < 0:
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")
        for name in ("eps_prompt", "eps_delayed", "afterpulse_prob"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        for name in ("ct_delay_tau", "afterpulse_tau", "record_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @property
    def mean_dark_in_window(self) -> float:
        return self.dark_rate * self.record_window * 1e-9


@dataclass
class EventBatch:
    """Avalanches of ``n_shots`` shots, sorted by (shot, time)."""

    n_shots: int
    shot: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    time: np.ndarray = field(default_factory=lambda: np.zeros(0))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))

    def __len__(self):
        return self.time.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.shot, minlength=self.n_shots)

    def for_shot(self, i: int) -> "AvalancheEventList":
        sel = self.shot == i
        return AvalancheEventList(self.time[sel], self.origin[sel])


@dataclass
class AvalancheEventList:
    """Avalanches of a single shot; times in ns relative to the light pulse."""

    time: np.ndarray
    origin: np.ndarray

    def __len__(self):
        return self.time.size

    def as_batch(self) -> EventBatch:
        return EventBatch(
            1,
            np.zeros(self.time.size, dtype=np.int64),
            np.asarray(self.time, dtype=float),
            np.asarray(self.origin, dtype=np.int8),
        )


def _spawn(rng, shot, time, prob, tau, origin):
    """Bernoulli(prob) secondary per parent, delayed by Exp(tau) (tau=None: prompt)."""
    if prob == 0 or shot.size == 0:
        return shot[:0], time[:0], np.zeros(0, dtype=np.int8)
    hit = rng.random(shot.size) < prob
    t = time[hit]
    if tau is not None:
        t = t + rng.exponential(tau, size=t.size)
    return shot[hit], t, np.full(t.size, origin, dtype=np.int8)


def detect_batch(n, cfg: DetectorConfig, rng: np.random.Generator) -> EventBatch:
    """Turn per-shot photon numbers ``n`` into timed avalanches.

    Primaries are detected photons (Binomial(n, eta), at t=0) and dark
    counts (Poisson, uniform in the record window). Every primary may add
    one prompt and one delayed cross-talk avalanche; primaries and
    cross-talk avalanches may add one afterpulse. There is no cascade.
    Events past the record window are lost, and each shot keeps at most
    ``n_cells`` avalanches, the latest being dropped first.
    """
    n = np.atleast_1d(np.asarray(n))
    if np.any(n < 0):
        raise ValueError("photon numbers must be nonnegative")
    n_shots = n.size
    shots = np.arange(n_shots)

    n_det = rng.binomial(n, cfg.eta)
    ph_shot = np.repeat(shots, n_det)
    ph_time = np.zeros(ph_shot.size)

    n_dark = rng.poisson(cfg.mean_dark_in_window, size=n_shots)
    dk_shot = np.repeat(shots, n_dark)
    dk_time = rng.uniform(0.0, cfg.record_window, size=dk_shot.size)

    p_shot = np.concatenate([ph_shot, dk_shot])
    p_time = np.concatenate([ph_time, dk_time])
    p_orig = np.concatenate(
        [np.full(ph_shot.size, Origin.PHOTON, np.int8), np.full(dk_shot.size, Origin.DARK, np.int8)]
    )

    pc = _spawn(rng, p_shot, p_time, cfg.eps_prompt, None, Origin.PROMPT_CT)
    dc = _spawn(rng, p_shot, p_time, cfg.eps_delayed, cfg.ct_delay_tau, Origin.DELAYED_CT)
    a_shot = np.concatenate([p_shot, pc[0], dc[0]])
    a_time = np.concatenate([p_time, pc[1], dc[1]])
    ap = _spawn(rng, a_shot, a_time, cfg.afterpulse_prob, cfg.afterpulse_tau, Origin.AFTERPULSE)

    shot = np.concatenate([a_shot, ap[0]])
    time = np.concatenate([a_time, ap[1]])
    origin = np.concatenate([p_orig, pc[2], dc[2], ap[2]])

    keep = time <= cfg.record_window
    shot, time, origin = shot[keep], time[keep], origin[keep]
    order = np.lexsort((time, shot))
    shot, time, origin = shot[order], time[order], origin[order]

    # rank within shot; sorted by time so the latest events exceed capacity first
    starts = np.searchsorted(shot, shots)
    rank = np.arange(shot.size) - starts[shot] if shot.size else np.zeros(0, dtype=np.int64)
    keep = rank < cfg.n_cells
    return EventBatch(n_shots, shot[keep], time[keep], origin[keep])


def detect(n: int, cfg: DetectorConfig, rng: np.random.Generator) -> AvalancheEventList:
    """Single-shot version of :func:`detect_batch`."""
    if n < 0:
        raise ValueError("photon number must be nonnegative")
    return detect_batch([n], cfg, rng).for_shot(0)


def effective_crosstalk(cfg: DetectorConfig, gate: float, extraction: str = "integral") -> float:
    """Cross-talk probability seen by an extraction of width ``gate``.

    Delayed cross-talk contributes with the probability that its
    exponential delay falls inside the gate. Peak extraction sees only the
    prompt component.
    """
    if extraction == "peak":
        return cfg.eps_prompt
    if extraction != "integral":
        raise ValueError(f"unknown extraction mode {extraction!r}")
    return cfg.eps_prompt + cfg.eps_delayed * -np.expm1(-gate / cfg.ct_delay_tau)


def mean_dark(cfg: DetectorConfig, gate: float) -> float:
    """Mean dark counts per gate, ``dark_rate * gate``."""
    return cfg.dark_rate * gate * 1e-9


def mean_k(mean_n: float, cfg: DetectorConfig, gate: float, extraction: str = "integral") -> float:
    """Mean detector output ``(eta*<n> + <m_dc>)(1 + eps)``."""
    if gate <= 0:
        raise ValueError(f"gate must be > 0, got {gate}")
    if mean_n < 0:
        raise ValueError(f"mean_n must be >= 0, got {mean_n}")
    eps = effective_crosstalk(cfg, gate, extraction)
    return (cfg.eta * mean_n + mean_dark(cfg, gate)) * (1.0 + eps)


def mean_n_for_k(target_k: float, cfg: DetectorConfig, gate: float, extraction: str = "integral") -> float:
    """Inverse of :func:`mean_k`: source mean that yields ``target_k`` detections."""
    if cfg.eta == 0:
        raise ValueError("eta = 0: detections do not depend on the source")
    eps = effective_crosstalk(cfg, gate, extraction)
    n = (target_k / (1.0 + eps) - mean_dark(cfg, gate)) / cfg.eta
    if n < 0:
        raise ValueError(f"target <k>={target_k} is below the dark-count floor")
    return n


def count_prompt(events, window: float):
    """Avalanches seen by peak extraction.

    Photons, dark counts and their prompt cross-talk falling in the
    coincidence ``window``; delayed secondaries arrive after the peak.
    """
    if window <= 0:
        raise ValueError(f"window must be > 0, got {window}")
    o = events.origin
    kind = (o == Origin.PHOTON) | (o == Origin.PROMPT_CT) | (o == Origin.DARK)
    sel = kind & (events.time >= 0) & (events.time <= window)
    if isinstance(events, EventBatch):
        return np.bincount(events.shot[sel], minlength=events.n_shots)
    return int(np.count_nonzero(sel))


def count_in_gate(events, gate: float):
    """Number of avalanches with ``0 <= t <= gate``.

    Works on a single :class:`AvalancheEventList` (returns an int) or an
    :class:`EventBatch` (returns per-shot counts).
    """
    if gate <= 0:
        raise ValueError(f"gate must be > 0, got {gate}")
    inside = (events.time >= 0) & (events.time <= gate)
    if isinstance(events, EventBatch):
        return np.bincount(events.shot[inside], minlength=events.n_shots)
    return int(np.count_nonzero(inside))
