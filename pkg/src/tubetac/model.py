"""Forward physics of a single pneumatic-resonance taxel.

Units follow the calibration tables: tube lengths in meters, cap deflection
in millimeters, cap dimensions in millimeters and added mass in milligrams.
All functions accept scalars or numpy arrays; scalars in, floats out.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .estimator import TaxelSpec


class ModelDomainError(ValueError):
    """Raised when a model is evaluated outside its physical domain."""


class ModelRangeError(ValueError):
    """Raised when an inverse is requested for a value the model cannot produce."""


# Amplitude anchors (arbitrary units, same scale as the amplitude thresholds).
LOUD_AMPLITUDE = 0.30
_UNLOADED_HOLE_MM = (0.0, 1.0, 3.0, 5.0)
_UNLOADED_AMPLITUDE = (0.30, 0.17, 0.12, 0.05)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TubeGeometry:
    length_L: float
    inner_diameter_D: float = 0.006
    cap_inner_diameter_d: float = 0.007

    def __post_init__(self):
        if not self.length_L > 0 or not self.inner_diameter_D > 0:
            raise ModelDomainError("tube length and diameter must be positive")
        if self.length_L <= self.inner_diameter_D:
            raise ModelDomainError(
                f"thin-tube model needs L > D (L={self.length_L}, D={self.inner_diameter_D})")

    @property
    def length_mm(self) -> float:
        return self.length_L * 1e3


@dataclass(frozen=True)
class CapDesign:
    wall_thickness_t: float
    hole_diameter_h: float = 0.0
    added_mass_m: float = 0.0
    inner_diameter_mm: float = 7.0

    def __post_init__(self):
        if not 0 < self.wall_thickness_t <= 10:
            raise ModelDomainError(f"cap wall thickness {self.wall_thickness_t} mm not in (0, 10]")
        if self.hole_diameter_h < 0 or self.added_mass_m < 0:
            raise ModelDomainError("hole diameter and added mass must be nonnegative")
        if self.hole_diameter_h >= self.outer_diameter_mm:
            raise ModelDomainError(
                f"hole {self.hole_diameter_h} mm does not fit a {self.outer_diameter_mm} mm cap")

    @property
    def outer_diameter_mm(self) -> float:
        return self.inner_diameter_mm + 2.0 * self.wall_thickness_t

    @property
    def has_hole(self) -> bool:
        return self.hole_diameter_h > 0


@dataclass(frozen=True)
class AcousticConstants:
    speed_of_sound_c: float = 340.0
    # flow rate is recorded only; the fundamental-mode model ignores it
    flow_rate_Q: float = 4.5

    def __post_init__(self):
        if not self.speed_of_sound_c > 0:
            raise ModelDomainError("speed of sound must be positive")


@dataclass(frozen=True)
class LengthFreqFit:
    """``f = b1 / (b2 * L) + b3`` with L in meters."""

    b1: float
    b2: float
    b3: float

    def __post_init__(self):
        if self.b2 == 0 or not self.b1 / self.b2 > 0:
            raise ModelDomainError("length fit needs b2 != 0 and b1/b2 > 0")

    @property
    def slope(self) -> float:
        """The identifiable combination ``b1 / b2`` in Hz*m."""
        return self.b1 / self.b2

    def __call__(self, L):
        return fitted_freq(L, self)


@dataclass(frozen=True)
class ForceDeflectionFit:
    """``F = beta1 * delta**beta2 + beta3``, saturating at ``F_max``."""

    beta1: float
    beta2: float
    beta3: float = 0.0
    F_max: float = np.inf
    delta_unit: str = "mm"

    def __post_init__(self):
        if not self.beta1 > 0 or not self.beta2 > 0:
            raise ModelDomainError("force fit needs beta1 > 0 and beta2 > 0")
        if self.delta_unit != "mm":
            raise ModelDomainError(f"unsupported deflection unit {self.delta_unit!r}")
        if not self.F_max > self.beta3:
            raise ModelDomainError("F_max must exceed beta3")

    @property
    def delta_max(self) -> float:
        if np.isinf(self.F_max):
            return np.inf
        return deflection_from_force(self.F_max, self)


@dataclass(frozen=True)
class TransitionModel:
    """Light-contact boundary-condition transition of a compliant cap.

    For caps without a hole the frequency deviation spans ``[0, Ft]`` and the
    amplitude carries a Gaussian dip in deflection (``dip_width`` is the full
    width at half depth).  For holed caps ``Ft`` is the force at which the
    hole is sealed: the amplitude dips below its unloaded level over the first
    half of ``[0, Ft]`` and climbs to the loud level over the second half.
    """

    enabled: bool = True
    transition_force_Ft: float = 3.0
    deviation_amplitude_At: float = 20.0
    amplitude_dip_depth: float = 0.4
    dip_center_delta: float = 1.0
    dip_width: float = 1.0
    mass_critical_m_crit: float = 200.0

    def __post_init__(self):
        if not self.transition_force_Ft > 0:
            raise ModelDomainError("transition force must be positive")
        if self.deviation_amplitude_At < 0:
            raise ModelDomainError("deviation amplitude must be nonnegative")
        if not 0 <= self.amplitude_dip_depth < 1:
            raise ModelDomainError("amplitude dip depth must lie in [0, 1)")
        if not self.mass_critical_m_crit > 0:
            raise ModelDomainError("critical mass must be positive")

    def effective_deviation(self, added_mass_mg: float) -> float:
        if not self.enabled:
            return 0.0
        scale = max(0.0, 1.0 - added_mass_mg / self.mass_critical_m_crit)
        return self.deviation_amplitude_At * scale

    @classmethod
    def for_cap(cls, cap: CapDesign, **overrides) -> TransitionModel:
        """Default transition parameters for a cap design."""
        t = cap.wall_thickness_t
        if t < 1.5:
            at = 40.0
        elif t < 3.5:
            at = 20.0
        else:
            at = 10.0
        params = dict(
            transition_force_Ft=seal_force(cap) if cap.has_hole else 3.0,
            deviation_amplitude_At=at,
            mass_critical_m_crit=critical_mass(t),
        )
        params.update(overrides)
        return cls(**params)


# ---------------------------------------------------------------------------
# calibration tables
# ---------------------------------------------------------------------------

LENGTH_FITS = {
    "f_oc": LengthFreqFit(340.0, 4.0, 0.0),
    "5N": LengthFreqFit(290.0, 4.6, 260.0),
    "10N": LengthFreqFit(280.0, 4.8, 290.0),
}

# wall thickness [mm] -> fit of the no-hole cap
FORCE_FITS = {
    1: ForceDeflectionFit(0.94, 1.36, 0.0, 2.0),
    2: ForceDeflectionFit(1.56, 1.77, 0.0, 6.0),
    3: ForceDeflectionFit(2.66, 1.64, 0.0, 11.0),
    4: ForceDeflectionFit(2.65, 1.68, 0.0, 15.0),
    5: ForceDeflectionFit(3.52, 1.50, 0.0, 15.0),
}

# 3 mm hole, by wall thickness: threshold, F_min, F_max, sensitivity [Hz/N] at L = 59 mm
HOLE3_TABLE = {
    1: (0.17, 0.5, 2.6, 19.0),
    2: (0.15, 0.6, 6.1, 8.8),
    3: (0.12, 0.5, 10.0, 5.1),
    4: (0.13, 1.3, 15.0, 3.6),
    5: (0.15, 1.5, 15.0, 3.2),
}

# 3 mm wall, by hole diameter: threshold, F_min, sensitivity [Hz/N] at L = 59 mm
T3_HOLE_TABLE = {
    0: (0.22, 1.6, 5.1),
    1: (0.19, 1.1, 4.9),
    3: (0.14, 0.9, 5.3),
    5: (0.06, 0.2, 7.9),
}

REFERENCE_LENGTH = 0.059


def _interp_table(x, table, col):
    keys = sorted(table)
    return float(np.interp(x, keys, [table[k][col] for k in keys]))


def critical_mass(wall_thickness: float) -> float:
    """Added mass [mg] that fully suppresses the transition deviation."""
    return float(np.interp(wall_thickness, [1.0, 3.0, 5.0], [200.0, 200.0, 50.0]))


def unloaded_amplitude(hole_diameter: float) -> float:
    return float(np.interp(hole_diameter, _UNLOADED_HOLE_MM, _UNLOADED_AMPLITUDE))


def seal_force(cap: CapDesign) -> float:
    """Force [N] at which a holed cap is fully sealed against the contact."""
    h = max(cap.hole_diameter_h, 1.0)
    holes = {k: v for k, v in T3_HOLE_TABLE.items() if k > 0}
    base = _interp_table(h, holes, 1)
    ratio = _interp_table(cap.wall_thickness_t, HOLE3_TABLE, 1) / HOLE3_TABLE[3][1]
    return base * ratio


def table_sensitivity(cap: CapDesign) -> float:
    """Tabulated linear sensitivity [Hz/N] of a holed cap at the 59 mm reference."""
    s_t = _interp_table(cap.wall_thickness_t, HOLE3_TABLE, 3)
    s_h = _interp_table(max(cap.hole_diameter_h, 1.0), T3_HOLE_TABLE, 2)
    return s_t * s_h / T3_HOLE_TABLE[3][2]


def table_threshold(cap: CapDesign) -> float:
    if cap.wall_thickness_t == 3:
        return _interp_table(cap.hole_diameter_h, T3_HOLE_TABLE, 0)
    return _interp_table(cap.wall_thickness_t, HOLE3_TABLE, 0)


def cap_force_fit(cap: CapDesign, length_fit: LengthFreqFit | None = None,
                  L_ref: float = REFERENCE_LENGTH) -> ForceDeflectionFit:
    """Force-deflection law used by the forward model for ``cap``.

    No-hole caps use the tabulated power-law fits (interpolated in thickness).
    Holed caps get a linear compliance chosen so that the small-deflection
    frequency slope at ``L_ref`` equals the tabulated linear sensitivity.
    """
    t = cap.wall_thickness_t
    if not cap.has_hole:
        keys = sorted(FORCE_FITS)
        b1 = np.interp(t, keys, [FORCE_FITS[k].beta1 for k in keys])
        b2 = np.interp(t, keys, [FORCE_FITS[k].beta2 for k in keys])
        fmax = np.interp(t, keys, [FORCE_FITS[k].F_max for k in keys])
        return ForceDeflectionFit(float(b1), float(b2), 0.0, float(fmax))
    fit = length_fit or LENGTH_FITS["5N"]
    hz_per_mm = fit.slope / L_ref**2 / 1e3
    beta1 = hz_per_mm / table_sensitivity(cap)
    fmax = _interp_table(t, HOLE3_TABLE, 2)
    return ForceDeflectionFit(beta1, 1.0, 0.0, fmax)


# ---------------------------------------------------------------------------
# length / frequency laws
# ---------------------------------------------------------------------------

def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def ideal_open_closed_freq(L, c: float = 340.0):
    L = np.asarray(L, dtype=float)
    if np.any(L <= 0) or c <= 0:
        raise ModelDomainError("L and c must be positive")
    return _out(c / (4.0 * L))


def ideal_open_open_freq(L, c: float = 340.0):
    L = np.asarray(L, dtype=float)
    if np.any(L <= 0) or c <= 0:
        raise ModelDomainError("L and c must be positive")
    return _out(c / (2.0 * L))


def fitted_freq(L, fit: LengthFreqFit):
    L = np.asarray(L, dtype=float)
    if np.any(L <= 0):
        raise ModelDomainError("L must be positive")
    return _out(fit.b1 / (fit.b2 * L) + fit.b3)


def linearized_freq_shift(L: float, delta, c: float = 340.0):
    """Small-compression frequency increase ``(c/4) * delta / L**2``.

    ``delta`` is the compression depth in meters (nonnegative).
    """
    delta = np.asarray(delta, dtype=float)
    if L <= 0 or c <= 0:
        raise ModelDomainError("L and c must be positive")
    if np.any(delta < 0):
        raise ModelDomainError("compression depth must be nonnegative")
    if np.any(delta >= L):
        raise ModelDomainError("compression depth must be shorter than the tube")
    return _out(c / 4.0 * delta / L**2)


def exact_freq_shift(L: float, delta, c: float = 340.0):
    delta = np.asarray(delta, dtype=float)
    return _out(c / (4.0 * (L - delta)) - c / (4.0 * L))


# ---------------------------------------------------------------------------
# force / deflection
# ---------------------------------------------------------------------------

def force_from_deflection(delta, fit: ForceDeflectionFit):
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ModelDomainError("deflection must be nonnegative")
    force = fit.beta1 * delta**fit.beta2 + fit.beta3
    return _out(np.minimum(force, fit.F_max))


def deflection_from_force(F, fit: ForceDeflectionFit):
    F = np.asarray(F, dtype=float)
    if np.any(F < fit.beta3) or np.any(F > fit.F_max):
        raise ModelRangeError(f"force outside [{fit.beta3}, {fit.F_max}] N")
    return _out(((F - fit.beta3) / fit.beta1) ** (1.0 / fit.beta2))


def model_sensitivity(L: float, force_fit: ForceDeflectionFit, F_lo: float, F_hi: float,
                      c: float = 340.0) -> float:
    """Secant slope [Hz/N] of the linearized shift over ``[F_lo, F_hi]``.

    Chains the small-compression frequency law with the force-deflection fit.
    """
    d_lo = deflection_from_force(F_lo, force_fit) * 1e-3
    d_hi = deflection_from_force(F_hi, force_fit) * 1e-3
    shift = linearized_freq_shift(L, d_hi, c) - linearized_freq_shift(L, d_lo, c)
    return shift / (F_hi - F_lo)


# ---------------------------------------------------------------------------
# forward response
# ---------------------------------------------------------------------------

def transition_deviation(F, transition: TransitionModel, added_mass_mg: float = 0.0):
    """Frequency deviation [Hz] of the light-contact boundary transition."""
    F = np.asarray(F, dtype=float)
    at = transition.effective_deviation(added_mass_mg)
    ft = transition.transition_force_Ft
    inside = (F >= 0) & (F <= ft)
    return _out(np.where(inside, at * np.sin(2.0 * np.pi * F / ft), 0.0))


def cap_amplitude(F, delta_mm, cap: CapDesign, transition: TransitionModel):
    """Emitted amplitude for force ``F`` and deflection ``delta_mm``."""
    F = np.asarray(F, dtype=float)
    delta_mm = np.asarray(delta_mm, dtype=float)
    a_u = unloaded_amplitude(cap.hole_diameter_h)
    depth = transition.amplitude_dip_depth if transition.enabled else 0.0
    if not cap.has_hole:
        sigma = transition.dip_width / (2.0 * np.sqrt(2.0 * np.log(2.0)))
        dip = depth * np.exp(-0.5 * ((delta_mm - transition.dip_center_delta) / sigma) ** 2)
        amp = np.where(F > 0, LOUD_AMPLITUDE * (1.0 - dip), a_u)
        return _out(amp)
    fs = transition.transition_force_Ft
    half = 0.5 * fs
    dipped = a_u * (1.0 - depth * np.sin(np.pi * np.clip(F, 0, half) / half))
    u = np.clip((F - half) / half, 0.0, 1.0)
    ramp = a_u + (LOUD_AMPLITUDE - a_u) * u**3
    amp = np.where(F < half, dipped, ramp)
    return _out(amp)


def forward_response(taxel: TaxelSpec, F):
    """Resonant frequency [Hz] and amplitude emitted by ``taxel`` under ``F``.

    Forces above the compliance's ``F_max`` saturate both outputs.
    """
    F = np.asarray(F, dtype=float)
    if np.any(F < 0) or np.any(~np.isfinite(F)):
        raise ModelDomainError("force must be finite and nonnegative")
    fit = taxel.force_defl
    Fc = np.minimum(F, fit.F_max)
    delta_mm = deflection_from_force(np.maximum(Fc, fit.beta3), fit)
    L = taxel.tube.length_L
    freq = fitted_freq(L - np.asarray(delta_mm) * 1e-3, taxel.length_freq)
    freq = freq + transition_deviation(Fc, taxel.transition, taxel.cap.added_mass_m)
    amp = cap_amplitude(Fc, delta_mm, taxel.cap, taxel.transition)
    return _out(freq), _out(amp)


def with_mass(cap: CapDesign, mass_mg: float) -> CapDesign:
    return replace(cap, added_mass_m=mass_mg)


__all__ = [
    "AcousticConstants", "CapDesign", "ForceDeflectionFit", "LengthFreqFit",
    "ModelDomainError", "ModelRangeError", "TransitionModel", "TubeGeometry",
    "FORCE_FITS", "HOLE3_TABLE", "LENGTH_FITS", "LOUD_AMPLITUDE", "REFERENCE_LENGTH",
    "T3_HOLE_TABLE", "cap_amplitude", "cap_force_fit", "critical_mass",
    "deflection_from_force", "exact_freq_shift", "fitted_freq", "force_from_deflection",
    "forward_response", "ideal_open_closed_freq", "ideal_open_open_freq",
    "linearized_freq_shift", "model_sensitivity", "seal_force", "table_sensitivity",
    "table_threshold", "transition_deviation", "unloaded_amplitude", "with_mass",
]
