"""Array configuration documents (YAML) with schema and invariant checks.

The file uses millimeters for lengths and deflections and milligrams for
masses; loading converts tube lengths to meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema
import yaml

from .calibration import CalibrationError, LinearCalibration
from .dsp import DspConfig, FrequencyBand
from .estimator import DEFAULT_GUARD_HZ, ConfigurationError, TaxelSpec, assign_bands
from .io import atomic_write_text
from .model import (AcousticConstants, CapDesign, ForceDeflectionFit, LengthFreqFit,
                    ModelDomainError, TransitionModel, TubeGeometry, LENGTH_FITS, cap_force_fit)

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "tubetac array configuration",
    "type": "object",
    "required": ["taxels"],
    "additionalProperties": False,
    "properties": {
        "audio": {"type": "object", "additionalProperties": False,
                  "properties": {"sample_rate": {"type": "integer", "minimum": 8000}}},
        "dsp": {"type": "object", "additionalProperties": False,
                "properties": {"bin_hz": _POS, "out_rate_hz": _POS, "window_ms": _POS,
                               "jump_penalty": _NONNEG}},
        "constants": {"type": "object", "additionalProperties": False,
                      "properties": {"c": _POS, "Q": _NONNEG}},
        "guard_hz": _NONNEG,
        "taxels": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "L_mm", "cap"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1, "pattern": "^[^,\\s]+$"},
                    "L_mm": _POS,
                    "cap": {"type": "object", "required": ["t_mm"], "additionalProperties": False,
                            "properties": {"t_mm": _POS, "h_mm": _NONNEG, "m_mg": _NONNEG}},
                    "fits": {"type": "object", "additionalProperties": False, "properties": {
                        "length": {"type": "object", "required": ["b1", "b2", "b3"],
                                   "additionalProperties": False,
                                   "properties": {"b1": _NUM, "b2": _NUM, "b3": _NUM,
                                                  "L_unit": {"type": "string"}}},
                        "force": {"type": "object", "required": ["beta1", "beta2"],
                                  "additionalProperties": False,
                                  "properties": {"beta1": _NUM, "beta2": _NUM, "beta3": _NUM,
                                                 "F_max": _NUM, "delta_unit": {"type": "string"}}},
                    }},
                    "linear": {"type": "object",
                               "required": ["f0", "S", "F_min", "F_max", "threshold"],
                               "additionalProperties": False,
                               "properties": {"f0": _NUM, "S": _NUM, "F_min": _NUM,
                                              "F_max": _NUM, "threshold": _NUM}},
                    "band": {"type": "object", "required": ["lo_hz", "hi_hz"],
                             "additionalProperties": False,
                             "properties": {"lo_hz": _NUM, "hi_hz": _NUM}},
                    "transition": {"type": "object", "additionalProperties": False, "properties": {
                        "enabled": {"type": "boolean"}, "Ft": _POS, "At": _NONNEG,
                        "dip_depth": _NONNEG, "dip_center_mm": _NUM, "dip_width_mm": _POS,
                        "m_crit_mg": _POS}},
                },
            },
        },
    },
}

_TRANSITION_KEYS = {
    "enabled": "enabled", "Ft": "transition_force_Ft", "At": "deviation_amplitude_At",
    "dip_depth": "amplitude_dip_depth", "dip_center_mm": "dip_center_delta",
    "dip_width_mm": "dip_width", "m_crit_mg": "mass_critical_m_crit",
}


@dataclass(frozen=True)
class Violation:
    invariant: str
    path: str
    message: str

    def __str__(self):
        return f"[{self.invariant}] {self.path}: {self.message}"


class ConfigError(ConfigurationError):
    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass
class ArrayConfig:
    taxels: list[TaxelSpec]
    sample_rate: int = 44100
    dsp: DspConfig = field(default_factory=DspConfig)
    constants: AcousticConstants = field(default_factory=AcousticConstants)
    guard_hz: float = DEFAULT_GUARD_HZ

    def taxel(self, key: str) -> TaxelSpec:
        for tx in self.taxels:
            if tx.id == key:
                return tx
        raise KeyError(key)


def _mm(x_m: float) -> float:
    return round(x_m * 1e3, 12)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _schema_violations(doc) -> list[Violation]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(Violation("schema", path, err.message))
    return out


def _taxel_violations(k, item) -> tuple[TaxelSpec | None, list[Violation]]:
    base = f"taxels/{k}"
    out = []
    fits = item.get("fits", {})
    lf = fits.get("length")
    if lf is not None and lf.get("L_unit", "m") != "m":
        out.append(Violation("unit-tag", f"{base}/fits/length/L_unit",
                             f"length fits must be in meters, got {lf['L_unit']!r}"))
    ff = fits.get("force")
    if ff is not None and ff.get("delta_unit", "mm") != "mm":
        out.append(Violation("unit-tag", f"{base}/fits/force/delta_unit",
                             f"force fits must be in millimeters, got {ff['delta_unit']!r}"))
    lin = item.get("linear")
    if lin is not None:
        if not lin["S"] > 0:
            out.append(Violation("calibration-range", f"{base}/linear/S", "sensitivity must be positive"))
        if not lin["F_min"] < lin["F_max"]:
            out.append(Violation("calibration-range", f"{base}/linear/F_min", "F_min must be below F_max"))
        if not 0 <= lin["threshold"] <= 1:
            out.append(Violation("calibration-range", f"{base}/linear/threshold",
                                 f"threshold {lin['threshold']} outside [0, 1]"))
    if out:
        return None, out
    try:
        cap_d = item["cap"]
        cap = CapDesign(cap_d["t_mm"], cap_d.get("h_mm", 0.0), cap_d.get("m_mg", 0.0))
        tube = TubeGeometry(item["L_mm"] * 1e-3)
        length_fit = LengthFreqFit(lf["b1"], lf["b2"], lf["b3"]) if lf else LENGTH_FITS["5N"]
        force_fit = (ForceDeflectionFit(ff["beta1"], ff["beta2"], ff.get("beta3", 0.0),
                                        ff.get("F_max", math.inf))
                     if ff else cap_force_fit(cap, length_fit))
        linear = (LinearCalibration(lin["f0"], lin["S"], lin["F_min"], lin["F_max"], lin["threshold"])
                  if lin else None)
        overrides = {_TRANSITION_KEYS[key]: v for key, v in item.get("transition", {}).items()}
        transition = TransitionModel.for_cap(cap, **overrides)
    except (ModelDomainError, CalibrationError, ValueError) as exc:
        return None, [Violation("model-domain", base, str(exc))]
    band = item.get("band")
    spec = TaxelSpec(item["id"], tube, cap, length_fit, force_fit, linear, None, transition)
    if band is not None:
        try:
            fb = FrequencyBand(band["lo_hz"], band["hi_hz"])
            spec = replace(spec, band=fb)
        except ConfigurationError as exc:
            return None, [Violation("band-coverage", f"{base}/band", str(exc))]
        except ValueError as exc:
            return None, [Violation("band-range", f"{base}/band", str(exc))]
    return spec, []


def _array_violations(specs, guard) -> tuple[list[TaxelSpec], list[Violation]]:
    out = []
    ids = [tx.id for tx in specs]
    for key in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(Violation("unique-id", "taxels", f"duplicate taxel id {key!r}"))
    try:
        auto = assign_bands(specs, guard)
    except ConfigurationError as exc:
        out.append(Violation("band-overlap", "taxels", str(exc)))
        return specs, out
    specs = [tx if tx.band is not None else replace(tx, band=b) for tx, b in zip(specs, auto)]
    for i in range(len(specs)):
        for j in range(i + 1, len(specs)):
            if specs[i].band.overlaps(specs[j].band):
                out.append(Violation("band-overlap", "taxels",
                                     f"bands of taxels {specs[i].id} and {specs[j].id} overlap"))
    return specs, out


def validate_document(doc) -> tuple[ArrayConfig | None, list[Violation]]:
    """Check a parsed document; returns the config (if buildable) and all violations."""
    violations = _schema_violations(doc)
    if violations:
        return None, violations
    specs = []
    for k, item in enumerate(doc["taxels"]):
        spec, v = _taxel_violations(k, item)
        violations += v
        if spec is not None:
            specs.append(spec)
    if violations:
        return None, violations
    guard = doc.get("guard_hz", DEFAULT_GUARD_HZ)
    specs, v = _array_violations(specs, guard)
    violations += v
    if violations:
        return None, violations
    constants = AcousticConstants(**{("speed_of_sound_c" if k == "c" else "flow_rate_Q"): v
                                     for k, v in doc.get("constants", {}).items()})
    specs = [replace(tx, constants=constants) for tx in specs]
    cfg = ArrayConfig(specs, doc.get("audio", {}).get("sample_rate", 44100),
                      DspConfig(**doc.get("dsp", {})), constants, guard)
    return cfg, []


def parse_config(text: str, source: str = "<string>") -> ArrayConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([Violation("syntax", source, str(exc))]) from None
    cfg, violations = validate_document(doc)
    if violations:
        raise ConfigError(violations)
    return cfg


def load_config(path) -> ArrayConfig:
    return parse_config(Path(path).read_text(), str(path))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def taxel_document(tx: TaxelSpec) -> dict:
    d = {
        "id": tx.id,
        "L_mm": _mm(tx.tube.length_L),
        "cap": {"t_mm": tx.cap.wall_thickness_t, "h_mm": tx.cap.hole_diameter_h,
                "m_mg": tx.cap.added_mass_m},
        "fits": {
            "length": {"b1": tx.length_freq.b1, "b2": tx.length_freq.b2, "b3": tx.length_freq.b3,
                       "L_unit": "m"},
            "force": {"beta1": tx.force_defl.beta1, "beta2": tx.force_defl.beta2,
                      "beta3": tx.force_defl.beta3, "F_max": tx.force_defl.F_max, "delta_unit": "mm"},
        },
    }
    if tx.linear is not None:
        lin = tx.linear
        d["linear"] = {"f0": lin.f0, "S": lin.sensitivity_S, "F_min": lin.F_min,
                       "F_max": lin.F_max, "threshold": lin.amplitude_threshold}
    if tx.band is not None:
        d["band"] = {"lo_hz": tx.band.lo, "hi_hz": tx.band.hi}
    tr = tx.transition
    d["transition"] = {key: getattr(tr, attr) for key, attr in _TRANSITION_KEYS.items()}
    return d


def config_document(cfg: ArrayConfig) -> dict:
    return {
        "audio": {"sample_rate": cfg.sample_rate},
        "dsp": {"bin_hz": cfg.dsp.bin_hz, "out_rate_hz": cfg.dsp.out_rate_hz,
                "window_ms": cfg.dsp.window_ms, "jump_penalty": cfg.dsp.jump_penalty},
        "constants": {"c": cfg.constants.speed_of_sound_c, "Q": cfg.constants.flow_rate_Q},
        "guard_hz": cfg.guard_hz,
        "taxels": [taxel_document(tx) for tx in cfg.taxels],
    }


def dump_config(cfg: ArrayConfig) -> str:
    return yaml.safe_dump(config_document(cfg), sort_keys=False)


def save_config(cfg: ArrayConfig, path) -> None:
    atomic_write_text(path, dump_config(cfg))
