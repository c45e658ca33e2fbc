"""Experiment configuration: a flat, dotted key-value tree over the component configs.

A config file is a JSON or YAML mapping such as::

    {"preset": "psau_drs4", "seed": 7, "shots": 100000,
     "state.kind": "Coherent", "state.mean_photons": 3.0,
     "extraction.width": 48}

Keys under ``detector.`` apply to both arms; ``detector1.``/``detector2.``
override one arm. Nested mappings are flattened, so ``{"state": {"kind":
...}}`` is accepted as well. Every error names the offending key.
"""
from __future__ import annotations

import enum
import json
import re
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .correlation import PARAM_NAMES, TIED
from .detector import DetectorConfig
from .errors import ConfigError
from .extraction import ExtractionConfig, Method
from .simulate import ChainConfig
from .sources import BeamSplitterSpec, LightKind, LightStateSpec
from .waveform import (OVERSAMPLE_RATE, AmplifierConfig, AmplifierKind, CellPulseParams, DigitizerConfig,
                       Polarity, slow_shaper_gain_db)

U64_MAX = 2 ** 64 - 1

SECTIONS = {
    "state": LightStateSpec,
    "splitter": BeamSplitterSpec,
    "detector1": DetectorConfig,
    "detector2": DetectorConfig,
    "pulse": CellPulseParams,
    "amplifier": AmplifierConfig,
    "digitizer": DigitizerConfig,
    "extraction": ExtractionConfig,
}


@dataclass(frozen=True)
class FitConfig:
    """Which model parameters ``run_nrf``/``fit`` leave free; others come from the config or ``fixed``."""

    free: tuple[str, ...] = ()
    restarts: int = 20
    fixed: tuple[tuple[str, float], ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs. ``sweep`` lists target mean detections in arm 1."""

    seed: int = 0
    state: LightStateSpec = field(default_factory=lambda: LightStateSpec(LightKind.COHERENT, 3.0))
    splitter: BeamSplitterSpec = field(default_factory=BeamSplitterSpec)
    detector1: DetectorConfig = field(default_factory=DetectorConfig)
    detector2: DetectorConfig = field(default_factory=DetectorConfig)
    pulse: CellPulseParams = field(default_factory=CellPulseParams)
    amplifier: AmplifierConfig = field(default_factory=AmplifierConfig)
    digitizer: DigitizerConfig = field(default_factory=DigitizerConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    shots: int = 100_000
    sweep: tuple[float, ...] | None = None
    gate_sweep: tuple[float, ...] = ()
    fit: FitConfig = field(default_factory=FitConfig)
    oversample_rate: float = OVERSAMPLE_RATE
    coincidence_window: float = 2.0
    rounding: bool = True
    n_bootstrap: int = 200
    threads: int = 1
    outputs: str = "out"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed <= U64_MAX:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.shots < 1:
            raise ConfigError("shots", f"must be >= 1, got {self.shots}")
        if self.sweep is not None:
            s = list(self.sweep)
            if not s or any(v <= 0 for v in s):
                raise ConfigError("sweep", "values must be positive")
            if any(b <= a for a, b in zip(s, s[1:])):
                raise ConfigError("sweep", "values must be strictly increasing")
        if any(w <= 0 for w in self.gate_sweep):
            raise ConfigError("gate_sweep", "widths must be positive")
        if self.threads < 1:
            raise ConfigError("threads", f"must be >= 1, got {self.threads}")
        if self.n_bootstrap < 0:
            raise ConfigError("n_bootstrap", "must be >= 0")
        if self.coincidence_window <= 0:
            raise ConfigError("coincidence_window", "must be > 0")
        if self.oversample_rate < 4 * self.digitizer.sample_rate:
            raise ConfigError("oversample_rate", "must be at least 4x digitizer.sample_rate")
        for name in self.fit.free:
            if name not in PARAM_NAMES and name not in TIED:
                raise ConfigError("fit.free", f"unknown model parameter {name!r}")
        if self.fit.restarts < 1:
            raise ConfigError("fit.restarts", "must be >= 1")

    @property
    def twin_beam(self) -> bool:
        return self.state.kind is LightKind.TWIN_BEAM

    @property
    def chain(self):
        return ChainConfig(self.pulse, self.amplifier, self.digitizer, self.oversample_rate)

    def to_flat(self) -> dict:
        """Flat dotted-key mapping; ``from_flat(to_flat())`` returns an equal config."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in SECTIONS:
                for g in fields(v):
                    out[f"{f.name}.{g.name}"] = _plain(getattr(v, g.name))
            elif f.name == "fit":
                out["fit.free"] = list(v.free)
                out["fit.restarts"] = v.restarts
                for name, val in v.fixed:
                    out[f"fit.fixed.{name}"] = val
            else:
                out[f.name] = _plain(v)
        return out


def _plain(v):
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


# ----------------------------------------------------------------------------- presets

def _fast_chain(**digitizer) -> dict:
    return {
        "pulse.gain_spread": 0.05,
        "amplifier.kind": "FastInverting",
        "amplifier.gain_db": 12,
        "amplifier.rail_voltage": 0.12,
        "digitizer.trigger_jitter": 0.03,
        "detector.dark_rate": 1.0e6,
        "extraction.method": "GatedIntegral",
        "extraction.width": 70.0,
        **{f"digitizer.{k}": v for k, v in digitizer.items()},
    }


PRESETS: dict[str, dict] = {
    # fast inverting amplifier into a 250 MS/s, 2 Vpp, 12-bit digitizer
    "psau_dt5720": {
        **_fast_chain(sample_rate=250e6, full_scale=2.0, record_samples=64, noise_rms_lsb=1.0),
        "oversample_rate": 5e9,
        # only ten pre-trigger samples at 4 ns: use all of them
        "extraction.baseline_window": [-40.0, -4.0],
    },
    # fast inverting amplifier into a 5 GS/s, 1 Vpp switched-capacitor digitizer
    "psau_drs4": _fast_chain(sample_rate=5e9, full_scale=1.0, record_samples=1024, noise_rms_lsb=6.0),
    # same chain driven into its output rail
    "psau_drs4_clip": {
        **_fast_chain(sample_rate=5e9, full_scale=1.0, record_samples=1024, noise_rms_lsb=6.0),
        "amplifier.gain_db": 24,
    },
    # two-stage shaping amplifier, read by peak value
    "slow_drs4": {
        "pulse.gain_spread": 0.05,
        "amplifier.kind": "SlowShaper",
        "amplifier.gain_db": slow_shaper_gain_db(),
        "amplifier.rail_voltage": 2.0,
        "amplifier.input_noise_density": 2e-4,
        "digitizer.sample_rate": 5e9,
        "digitizer.full_scale": 1.0,
        "digitizer.record_samples": 1024,
        "digitizer.noise_rms_lsb": 0.25,
        "digitizer.trigger_jitter": 0.03,
        "detector.dark_rate": 3.0e6,
        "detector.eps_delayed": 0.03,
        "extraction.method": "PeakValue",
        "extraction.width": 150.0,
    },
    # twin beam with the fitted parameters of the sub-shot-noise measurement,
    # on the count-level path with a 110 ns gate
    "twin_beam_fig10": {
        "state.kind": "TwinBeam",
        "state.modes": 9256,
        "state.mean_photons": 10.0,
        "detector.eps_prompt": 0.019,
        "detector.eps_delayed": 0.0,
        "detector1.eta": 0.182,
        "detector2.eta": 0.182 * 0.913,
        "detector1.dark_rate": 0.349 / 110e-9,
        "detector2.dark_rate": 0.913 * 0.349 / 110e-9,
        "extraction.method": "GatedIntegral",
        "extraction.width": 110.0,
        "sweep": [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0],
    },
}


# ----------------------------------------------------------------------------- parsing

def _section_types(cls) -> dict[str, typing.Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def _coerce(key: str, value, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, value, inner[0])
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(value)
        except ValueError:
            allowed = ", ".join(m.value for m in tp)
            raise ConfigError(key, f"{value!r} is not one of: {allowed}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(f"{key}[{i}]", v, args[0]) for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(key, f"expected {len(args)} values, got {len(value)}")
        return tuple(_coerce(f"{key}[{i}]", v, a) for i, (v, a) in enumerate(zip(value, args)))
    raise ConfigError(key, f"unsupported field type {tp!r}")


def flatten(tree: dict, prefix: str = "") -> dict:
    """Flatten nested mappings into dotted keys; dotted keys pass through."""
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _top_types() -> dict:
    hints = typing.get_type_hints(ExperimentConfig)
    return {f.name: hints[f.name] for f in fields(ExperimentConfig) if f.name not in SECTIONS and f.name != "fit"}


def from_flat(flat: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from dotted keys, starting at ``preset`` (if given) or ``base``."""
    flat = dict(flatten(flat))
    preset = flat.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError("preset", f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        flat = {**PRESETS[preset], **flat}
    cfg = base or ExperimentConfig()

    # detector.* expands to both arms, arm-specific keys win
    expanded = {}
    for k, v in flat.items():
        if k.startswith("detector."):
            for arm in ("detector1", "detector2"):
                expanded.setdefault(arm + k[len("detector"):], v)
    for k, v in flat.items():
        if not k.startswith("detector."):
            expanded[k] = v

    section_kw: dict[str, dict] = {s: {} for s in SECTIONS}
    top_kw: dict = {}
    fit_kw: dict = {"fixed": dict(cfg.fit.fixed)}
    top_types = _top_types()
    for key, value in expanded.items():
        head, _, rest = key.partition(".")
        if head in SECTIONS and rest:
            types = _section_types(SECTIONS[head])
            if rest not in types:
                raise ConfigError(key, f"unknown key; {head} has: {', '.join(types)}")
            section_kw[head][rest] = _coerce(key, value, types[rest])
        elif head == "fit" and rest:
            if rest == "free":
                fit_kw["free"] = _coerce(key, value, tuple[str, ...])
            elif rest == "restarts":
                fit_kw["restarts"] = _coerce(key, value, int)
            elif rest.startswith("fixed."):
                fit_kw["fixed"][rest[len("fixed."):]] = _coerce(key, value, float)
            else:
                raise ConfigError(key, "unknown key; fit has: free, restarts, fixed.<param>")
        elif key in top_types:
            top_kw[key] = _coerce(key, value, top_types[key])
        else:
            raise ConfigError(key, "unknown key")

    for name, kw in section_kw.items():
        if not kw:
            continue
        current = getattr(cfg, name)
        if name == "amplifier" and "kind" in kw and kw["kind"] is not current.kind:
            # switching amplifier kind resets kind-dependent defaults
            current = AmplifierConfig.slow() if kw["kind"] is AmplifierKind.SLOW_SHAPER else AmplifierConfig()
            if "polarity" not in kw:
                kw["polarity"] = None
        try:
            top_kw[name] = replace(current, **kw)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(_blame(name, kw, str(exc)), str(exc)) from None
    fit_kw["fixed"] = tuple(sorted(fit_kw["fixed"].items()))
    top_kw["fit"] = replace(cfg.fit, **fit_kw)
    try:
        return replace(cfg, **top_kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError("config", str(exc)) from None


def _blame(section: str, kw: dict, message: str) -> str:
    """Dotted key a component validation message refers to, else the section."""
    words = set(re.findall(r"[A-Za-z_]+", message))
    hits = [k for k in kw if k in words]
    if not hits:
        hits = [f.name for f in fields(SECTIONS[section]) if f.name in words]
    return f"{section}.{hits[0]}" if hits else section


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON (``.json``) or YAML (``.yaml``/``.yml``) config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    try:
        if path.suffix in (".yaml", ".yml"):
            import yaml
            tree = yaml.safe_load(text) or {}
        else:
            tree = json.loads(text)
    except Exception as exc:  # parser errors differ between formats
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None
    if not isinstance(tree, dict):
        raise ConfigError("config", "top level must be a mapping")
    return from_flat({**tree, **(overrides or {})})


def preset(name: str, **overrides) -> ExperimentConfig:
    """A shipped preset, with dotted-key overrides passed as ``{"a.b": v}`` or ``a__b=v``."""
    return from_flat({"preset": name, **{k.replace("__", "."): v for k, v in overrides.items()}})


# ----------------------------------------------------------------------------- schema

def _schema_of(tp) -> dict:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        return {"anyOf": [_schema_of(a) for a in args]}
    if tp is type(None):
        return {"type": "null"}
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        return {"enum": [m.value for m in tp]}
    if tp is bool:
        return {"type": "boolean"}
    if tp is int:
        return {"type": "integer"}
    if tp is float:
        return {"type": "number"}
    if tp is str:
        return {"type": "string"}
    if origin is tuple:
        if len(args) == 2 and args[1] is Ellipsis:
            return {"type": "array", "items": _schema_of(args[0])}
        return {"type": "array", "prefixItems": [_schema_of(a) for a in args],
                "minItems": len(args), "maxItems": len(args)}
    return {}


def config_schema() -> dict:
    """JSON schema (draft 2020-12) of the flat config file format."""
    props = {"preset": {"enum": sorted(PRESETS)}}
    for name, tp in _top_types().items():
        props[name] = _schema_of(tp)
    props["seed"] = {"type": "integer", "minimum": 0, "maximum": U64_MAX}
    props["shots"] = {"type": "integer", "minimum": 1}
    props["sweep"] = {"anyOf": [{"type": "null"}, {"type": "array", "items": {"type": "number",
                                                                                 "exclusiveMinimum": 0}}]}
    for section, cls in SECTIONS.items():
        for f, tp in _section_types(cls).items():
            props[f"{section}.{f}"] = _schema_of(tp)
            if section == "detector1":
                props[f"detector.{f}"] = _schema_of(tp)
    props["fit.free"] = {"type": "array", "items": {"type": "string"}}
    props["fit.restarts"] = {"type": "integer", "minimum": 1}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "sipmsim experiment config",
        "type": "object",
        "properties": props,
        "patternProperties": {r"^fit\.fixed\.[a-z0-9_]+$": {"type": "number"}},
        "additionalProperties": False,
    }


__all__ = ["ExperimentConfig", "FitConfig", "PRESETS", "from_flat", "load_config", "preset", "config_schema",
           "flatten", "Method", "Polarity"]
