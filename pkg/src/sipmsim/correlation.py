"""Noise reduction factor: estimator, analytic model, and model fitting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .errors import FitFailed, InvalidParameters, UndefinedR


def noise_reduction(k1, k2, rng: np.random.Generator | None = None, n_bootstrap: int = 500,
                    ddof: int = 1) -> tuple[float, float]:
    """``R = Var(k1 - k2) / (<k1> + <k2>)`` and its bootstrap standard error.

    ``ddof=1`` is the unbiased variance; ``ddof=0`` the population one. For
    integer data the bootstrap resamples the table of distinct (k1, k2)
    pairs with a multinomial draw, which is equivalent to resampling shots.
    """
    k1 = np.asarray(k1, dtype=float).ravel()
    k2 = np.asarray(k2, dtype=float).ravel()
    if k1.shape != k2.shape:
        raise ValueError("k1 and k2 must have the same length")
    n = k1.size
    if n < 2:
        raise ValueError("need at least 2 shots")
    denom = k1.mean() + k2.mean()
    if denom == 0:
        raise UndefinedR("<k1> + <k2> = 0")
    d = k1 - k2
    r = float(d.var(ddof=ddof) / denom)
    if n_bootstrap < 2:
        return r, float("nan")
    if rng is None:
        rng = np.random.default_rng(0)

    if np.all(k1 == np.round(k1)) and np.all(k2 == np.round(k2)):
        pairs, counts = np.unique(np.stack([k1, k2]), axis=1, return_counts=True)
        w = rng.multinomial(n, counts / n, size=n_bootstrap).astype(float)
        pd, ps = pairs[0] - pairs[1], pairs[0] + pairs[1]
        m = w @ pd / n
        var = (w @ pd ** 2 - n * m ** 2) / (n - ddof)
        den = w @ ps / n
    else:
        idx = rng.integers(0, n, size=(n_bootstrap, n))
        var = d[idx].var(axis=1, ddof=ddof)
        den = k1[idx].mean(axis=1) + k2[idx].mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        boot = var / den
    boot = boot[np.isfinite(boot)]
    return r, float(np.std(boot, ddof=1))


@dataclass(frozen=True)
class NRFModelParams:
    """Parameters of the analytic R model. ``m*dc`` are dark counts per shot."""

    mu: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    eps1: float = 0.0
    eps2: float = 0.0
    m1dc: float = 0.0
    m2dc: float = 0.0
    t: float = 1.0
    quantum: bool = False

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        for name in ("eta1", "eta2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("eps1", "eps2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.m1dc < 0 or self.m2dc < 0:
            raise ValueError("dark counts must be >= 0")
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"t must lie in (0, 1], got {self.t}")

    @classmethod
    def symmetric(cls, *, eta=1.0, eps=0.0, mdc=0.0, **kw) -> "NRFModelParams":
        return cls(eta1=eta, eta2=eta, eps1=eps, eps2=eps, m1dc=mdc, m2dc=mdc, **kw)


def _dark_diff(p: NRFModelParams) -> float:
    return (1 + p.eps1) * p.m1dc - (1 + p.eps2) * p.m2dc


def _sqrt_checked(x):
    if isinstance(x, float):
        if x < 0:
            raise InvalidParameters("<k> is below the dark-count floor (negative square-root argument)")
        return math.sqrt(x)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidParameters("<k> is below the dark-count floor (negative square-root argument)")
    return np.sqrt(x)


def _positive_k(x):
    # plain floats skip numpy, which dominates the cost of scalar evaluations
    if isinstance(x, (float, int)) and not isinstance(x, bool):
        if not x > 0:
            raise ValueError("mean detections must be > 0")
        return float(x)
    k = np.asarray(x, dtype=float)
    if np.any(k <= 0):
        raise ValueError("mean detections must be > 0")
    return k


def model_R_general(p: NRFModelParams, mean_k1, mean_k2):
    """Expected R for arbitrary arm means, including cross-talk, dark counts and modes.

    The final (quantum correlation) term is dropped for classical light.
    """
    k1 = _positive_k(mean_k1)
    k2 = _positive_k(mean_k2)
    s = k1 + k2
    dk = k1 - k2
    dd = _dark_diff(p)
    r = (1.0
         + dk ** 2 / (p.mu * s)
         + 2 * p.eps1 / (1 + p.eps1) * k1 / s
         + 2 * p.eps2 / (1 + p.eps2) * k2 / s
         - 2 / p.mu * dd * dk / s
         + dd ** 2 / (p.mu * s))
    if p.quantum:
        a1 = _sqrt_checked((1 + p.eps1) * (k1 - (1 + p.eps1) * p.m1dc) / s)
        a2 = _sqrt_checked((1 + p.eps2) * (k2 - (1 + p.eps2) * p.m2dc) / s)
        r = r - 2 * (p.eta1 * p.eta2) ** 0.5 * a1 * a2
    return r[()] if isinstance(r, np.ndarray) else r


def model_R_balanced(p: NRFModelParams, mean_k):
    """Expected R with ``<k2> = t <k1>``, written in terms of ``<k> = <k1>`` and ``t``."""
    k = _positive_k(mean_k)
    r = _balanced(k, p.mu, p.eta1, p.eta2, p.eps1, p.eps2, p.m1dc, p.m2dc, p.t, p.quantum)
    return r[()] if isinstance(r, np.ndarray) else r


def _balanced(k, mu, eta1, eta2, eps1, eps2, m1dc, m2dc, t, quantum):
    dd = (1 + eps1) * m1dc - (1 + eps2) * m2dc
    r = (1.0
         + (1 - t) ** 2 / (1 + t) * k / mu
         + 2 / (1 + t) * (eps1 / (1 + eps1) + eps2 / (1 + eps2) * t)
         - 2 / mu * (1 - t) / (1 + t) * dd
         + dd ** 2 / (mu * (1 + t) * k))
    if quantum:
        a1 = _sqrt_checked((1 + eps1) * (1 - (1 + eps1) * m1dc / k))
        a2 = _sqrt_checked((1 + eps2) * (t - (1 + eps2) * m2dc / k))
        r = r - 2 * (eta1 * eta2) ** 0.5 / (1 + t) * a1 * a2
    return r


@dataclass
class NRFCurve:
    mean_k: np.ndarray
    R: np.ndarray
    sigma_R: np.ndarray
    mean_k1: np.ndarray
    mean_k2: np.ndarray

    FIELDS = ("mean_k", "mean_k1", "mean_k2", "R", "sigma_R")

    def __post_init__(self):
        for name in self.FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.mean_k.size
        if any(getattr(self, f).size != n for f in self.FIELDS):
            raise ValueError("all NRF curve columns must have the same length")

    def __len__(self):
        return self.mean_k.size

    @classmethod
    def from_points(cls, points) -> "NRFCurve":
        cols = list(zip(*points)) if points else [[]] * 5
        return cls(mean_k=cols[0], R=cols[1], sigma_R=cols[2], mean_k1=cols[3], mean_k2=cols[4])

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.FIELDS)
        for row in zip(*(getattr(self, f) for f in self.FIELDS)):
            w.writerow([f"{v:.10g}" for v in row])

    @classmethod
    def from_csv(cls, fh) -> "NRFCurve":
        rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError("empty NRF curve file")
        missing = {"mean_k", "R", "sigma_R"} - set(rows[0])
        if missing:
            raise ValueError(f"NRF curve CSV lacks columns {sorted(missing)}")

        def col(name, fallback=None):
            if name in rows[0]:
                return [float(r[name]) for r in rows]
            return fallback

        mk = col("mean_k")
        return cls(mean_k=mk, R=col("R"), sigma_R=col("sigma_R"),
                   mean_k1=col("mean_k1", mk), mean_k2=col("mean_k2", [float("nan")] * len(mk)))


# tied names set both arms at once
TIED = {"eta": ("eta1", "eta2"), "eps": ("eps1", "eps2"), "mdc": ("m1dc", "m2dc")}
PARAM_NAMES = ("mu", "eta1", "eta2", "eps1", "eps2", "m1dc", "m2dc", "t")
DEFAULT_BOUNDS = {
    "mu": (1.0, 1e5), "eta": (0.0, 1.0), "eta1": (0.0, 1.0), "eta2": (0.0, 1.0),
    "eps": (0.0, 0.5), "eps1": (0.0, 0.5), "eps2": (0.0, 0.5),
    "mdc": (0.0, 5.0), "m1dc": (0.0, 5.0), "m2dc": (0.0, 5.0), "t": (0.5, 1.0),
}


def imbalance_bounds(curve: NRFCurve, rel: float = 0.01) -> tuple[float, float]:
    """Bounds for ``t`` bracketing the measured ``<k2>/<k1>`` by ``rel``, capped at 1."""
    ratio = curve.mean_k2 / curve.mean_k1
    ratio = ratio[np.isfinite(ratio)]
    if ratio.size == 0:
        return DEFAULT_BOUNDS["t"]
    t = float(np.mean(ratio))
    # arm 2 brighter than arm 1 still leaves a usable interval below 1
    return min(max(t * (1 - rel), 1e-6), 1.0 - rel), min(t * (1 + rel), 1.0)


def _apply(base: NRFModelParams, names, values) -> NRFModelParams:
    upd = {}
    for name, v in zip(names, values):
        for target in TIED.get(name, (name,)):
            upd[target] = float(v)
    return replace(base, **upd)


@dataclass
class FitResult:
    params: NRFModelParams
    reduced_chi2: float
    chi2: float
    free: list[str]
    bounds: dict
    n_points: int
    restarts: int
    converged: int
    history: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        fitted = asdict(self.params)
        return {
            "params": fitted,
            "free": list(self.free),
            "fixed": {k: v for k, v in fitted.items() if k not in self._expanded_free()},
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "reduced_chi2": self.reduced_chi2,
            "chi2": self.chi2,
            "n_points": self.n_points,
            "restarts": {"total": self.restarts, "converged": self.converged,
                         "best_chi2_per_restart": self.history},
        }

    def _expanded_free(self):
        out = set()
        for name in self.free:
            out.update(TIED.get(name, (name,)))
        return out


def chi2(curve: NRFCurve, p: NRFModelParams) -> float:
    model = model_R_balanced(p, curve.mean_k)
    return float(np.sum(((curve.R - model) / curve.sigma_R) ** 2))


def fit_model(curve: NRFCurve, free, bounds: dict | None = None, fixed: NRFModelParams | None = None,
              restarts: int = 20, rng: np.random.Generator | None = None) -> FitResult:
    """Weighted least-squares fit of the balanced R model.

    Bounded Nelder-Mead runs from the ``fixed`` values and from ``restarts``
    uniform random points inside the bounds; the lowest chi-square wins.
    Raises :class:`FitFailed` when the curve cannot constrain the free
    parameters or when no run converges.
    """
    free = list(free)
    fixed = fixed if fixed is not None else NRFModelParams()
    unknown = [name for name in free if name not in DEFAULT_BOUNDS]
    if unknown:
        raise ValueError(f"unknown parameter(s) {unknown}")
    bnds = {name: tuple(map(float, (bounds or {}).get(name, DEFAULT_BOUNDS[name]))) for name in free}
    for name in free:
        lo, hi = bnds[name]
        if not lo < hi:
            raise ValueError(f"empty bounds for {name}: {bnds[name]}")
    n_pts = len(curve)
    dof = n_pts - len(free)
    if dof < 1:
        raise FitFailed(f"{n_pts} point(s) cannot constrain {len(free)} free parameter(s)")
    if np.any(curve.sigma_R <= 0):
        raise ValueError("sigma_R must be > 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    lo = np.array([bnds[n][0] for n in free])
    span = np.array([bnds[n][1] for n in free]) - lo

    # the objective works on plain floats; NRFModelParams validation is
    # replaced by the bounds, and square-root failures by a large penalty
    base_kw = {name: float(getattr(fixed, name)) for name in PARAM_NAMES}
    targets = [TIED.get(name, (name,)) for name in free]
    k, R, w = curve.mean_k, curve.R, 1.0 / curve.sigma_R
    if np.any(k <= 0):
        raise ValueError("mean detections must be > 0")

    inv_k = 1.0 / k
    quantum = fixed.quantum

    def objective(u):
        kw = dict(base_kw)
        for names, v in zip(targets, lo + span * u):
            for name in names:
                kw[name] = v
        mu, t, e1, e2, m1, m2 = kw["mu"], kw["t"], kw["eps1"], kw["eps2"], kw["m1dc"], kw["m2dc"]
        if mu <= 0 or not 0 < t <= 1:
            return 1e30
        # classical part is A + B k + C / k
        dd = (1 + e1) * m1 - (1 + e2) * m2
        a = 1.0 + 2 / (1 + t) * (e1 / (1 + e1) + e2 / (1 + e2) * t) - 2 / mu * (1 - t) / (1 + t) * dd
        model = a + (1 - t) ** 2 / ((1 + t) * mu) * k + dd * dd / (mu * (1 + t)) * inv_k
        if quantum:
            x1 = (1 + e1) * (1 - (1 + e1) * m1 * inv_k)
            x2 = (1 + e2) * (t - (1 + e2) * m2 * inv_k)
            if x1.min() < 0 or x2.min() < 0:
                return 1e30
            model = model - 2 * np.sqrt(kw["eta1"] * kw["eta2"] * x1 * x2) / (1 + t)
        d = (R - model) * w
        return float(d @ d)

    base = []
    for name in free:
        v = getattr(fixed, TIED[name][0] if name in TIED else name)
        base.append(np.clip((v - lo[len(base)]) / span[len(base)], 0.0, 1.0))
    starts = [np.array(base)] + [rng.uniform(0, 1, size=len(free)) for _ in range(restarts)]

    best, best_val, converged, history = None, np.inf, 0, []
    for u0 in starts:
        res = minimize(objective, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * len(free),
                       options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 2000 * len(free),
                                "adaptive": len(free) > 2})
        history.append(float(res.fun))
        if res.success and res.fun < 1e30:
            converged += 1
        if res.fun < best_val:
            best, best_val = res.x, float(res.fun)

    params = _apply(fixed, free, lo + span * best)
    result = FitResult(params, best_val / dof, best_val, free, bnds, n_pts, len(starts), converged, history)
    if converged == 0 or not np.isfinite(best_val) or best_val >= 1e30:
        raise FitFailed("no restart converged", best=result)
    return result


def fit_report(result: FitResult, fh) -> None:
    json.dump(result.to_json(), fh, indent=2)
