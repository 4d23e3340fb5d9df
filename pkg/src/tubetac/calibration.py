"""Fitting the empirical taxel constants and deriving linear calibrations."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import kernels
from .model import ForceDeflectionFit, LengthFreqFit

DEFAULT_MONOTONICITY_TOL = 2.5


class FitError(RuntimeError):
    """A fit could not be carried out; ``history`` holds residual norms per iteration."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


class SelectionError(RuntimeError):
    """No amplitude threshold yields a monotone force-frequency curve."""


class CalibrationError(RuntimeError):
    pass


@dataclass
class PalpationRecord:
    """Time-aligned samples from a loading experiment."""

    time: np.ndarray
    force: np.ndarray
    deflection: np.ndarray
    frequency: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        for name in ("time", "force", "deflection", "frequency", "amplitude"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.time.shape[0]
        if any(getattr(self, k).shape != (n,) for k in ("force", "deflection", "frequency", "amplitude")):
            raise ValueError("palpation columns must be 1-D and equally long")
        if n > 1 and np.any(np.diff(self.time) <= 0):
            raise ValueError("palpation time must be strictly increasing")
        if np.any(self.force < 0):
            raise ValueError("palpation force must be nonnegative")
        if np.any(self.frequency <= 0):
            raise ValueError("palpation frequency must be positive")

    def __len__(self):
        return self.time.shape[0]

    def subset(self, mask) -> PalpationRecord:
        return PalpationRecord(self.time[mask], self.force[mask], self.deflection[mask],
                               self.frequency[mask], self.amplitude[mask])

    COLUMNS = ("time_s", "force_n", "deflection_mm", "freq_hz", "amplitude")

    @classmethod
    def from_csv(cls, path) -> PalpationRecord:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in cls.COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{path}: missing columns {', '.join(missing)}")
            rows = [[float(r[c]) for c in cls.COLUMNS] for r in reader]
        data = np.array(rows, dtype=float).reshape(-1, len(cls.COLUMNS))
        return cls(*data.T)

    def to_csv(self, path) -> None:
        from .io import atomic_write_text
        lines = [",".join(self.COLUMNS)]
        for row in zip(self.time, self.force, self.deflection, self.frequency, self.amplitude):
            lines.append(",".join(f"{v:.6g}" for v in row))
        atomic_write_text(Path(path), "\n".join(lines) + "\n")


@dataclass(frozen=True)
class LinearCalibration:
    f0: float
    sensitivity_S: float
    F_min: float
    F_max: float
    amplitude_threshold: float

    def __post_init__(self):
        if not self.sensitivity_S > 0:
            raise CalibrationError("sensitivity must be positive")
        if not self.F_min < self.F_max:
            raise CalibrationError("F_min must be below F_max")
        if not 0 <= self.amplitude_threshold <= 1:
            raise CalibrationError("amplitude threshold must lie in [0, 1]")


@dataclass
class LengthFitResult:
    fit: LengthFreqFit
    rms: float


@dataclass
class ForceFitResult:
    fit: ForceDeflectionFit
    rms: float
    iterations: int
    history: list[float] = field(default_factory=list)


@dataclass
class ThresholdResult:
    threshold: float
    record: PalpationRecord


# ---------------------------------------------------------------------------
# length-frequency
# ---------------------------------------------------------------------------

def fit_length_frequency(points) -> LengthFitResult:
    """Least-squares fit of ``f = a / L + b3``; reported as ``b1 = 4a, b2 = 4``.

    ``points`` is an iterable of ``(L [m], f [Hz])``.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise FitError("need at least three (L, f) points")
    L, f = pts[:, 0], pts[:, 1]
    if np.any(L <= 0):
        raise FitError("tube lengths must be positive")
    if np.unique(L).size < 3:
        raise FitError("need at least three distinct tube lengths")
    x = 1.0 / L
    design = np.column_stack([x, np.ones_like(x)])
    if np.linalg.cond(design) > 1e12:
        raise FitError("degenerate length set")
    (a, b3), *_ = np.linalg.lstsq(design, f, rcond=None)
    if not a > 0:
        raise FitError(f"fitted slope {a:.4g} is not positive")
    rms = float(np.sqrt(np.mean((design @ np.array([a, b3]) - f) ** 2)))
    return LengthFitResult(LengthFreqFit(4.0 * a, 4.0, float(b3)), rms)


# ---------------------------------------------------------------------------
# force-deflection
# ---------------------------------------------------------------------------

def _power_jacobian(delta, beta1, beta2):
    p = np.where(delta > 0, delta ** beta2, 0.0)
    logd = np.where(delta > 0, np.log(np.where(delta > 0, delta, 1.0)), 0.0)
    return np.column_stack([p, beta1 * p * logd]), beta1 * p


def fit_force_deflection(points, *, init=(1.0, 1.5), max_iter: int = 200,
                         xtol: float = 1e-10, F_max: float | None = None) -> ForceFitResult:
    """Fit ``F = beta1 * delta**beta2`` by damped Gauss-Newton (Levenberg-Marquardt).

    ``points`` is an iterable of ``(delta [mm], F [N])``.  ``beta3`` is fixed at 0.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise FitError("need at least four (delta, F) points")
    delta, force = pts[:, 0], pts[:, 1]
    if np.any(delta < 0):
        raise FitError("deflections must be nonnegative")
    if np.unique(delta).size < 3:
        raise FitError("need at least three distinct deflections")

    params = np.array(init, dtype=float)
    jac, model = _power_jacobian(delta, *params)
    resid = model - force
    cost = float(resid @ resid)
    lam = 1e-3
    history = [np.sqrt(cost / delta.size)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        grad = jac.T @ resid
        while True:
            step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12), -grad)
            trial = params + step
            if trial[0] > 0 and trial[1] > 0:
                t_jac, t_model = _power_jacobian(delta, *trial)
                t_resid = t_model - force
                t_cost = float(t_resid @ t_resid)
                if t_cost <= cost:
                    break
            lam *= 10.0
            if lam > 1e12:
                raise FitError("force fit stalled", history)
        params, jac, resid, cost = trial, t_jac, t_resid, t_cost
        lam = max(lam / 10.0, 1e-12)
        history.append(np.sqrt(cost / delta.size))
        if np.max(np.abs(step) / np.maximum(np.abs(params), 1e-12)) < xtol:
            converged = True
            break
    if not converged:
        raise FitError(f"force fit did not converge in {max_iter} iterations", history)
    fmax = float(np.max(force)) if F_max is None else F_max
    fit = ForceDeflectionFit(float(params[0]), float(params[1]), 0.0, max(fmax, 1e-12))
    return ForceFitResult(fit, float(history[-1]), it, history)


# ---------------------------------------------------------------------------
# amplitude threshold
# ---------------------------------------------------------------------------

def _max_drop(force, freq):
    order = np.lexsort((freq, force))
    return kernels.max_drop(np.ascontiguousarray(freq[order]))


def is_monotone(force, freq, tol: float = DEFAULT_MONOTONICITY_TOL) -> bool:
    """Frequency ordered by force never falls more than ``tol`` below its running max."""
    force = np.asarray(force, dtype=float)
    freq = np.asarray(freq, dtype=float)
    if force.size == 0:
        return True
    return _max_drop(force, freq) <= tol


def select_amplitude_threshold(record: PalpationRecord,
                               monotonicity_tol: float = DEFAULT_MONOTONICITY_TOL) -> ThresholdResult:
    """Smallest observed amplitude whose gate leaves a monotone force-frequency curve.

    Raising the gate only removes samples, and removing samples never breaks
    monotonicity, so the admissible thresholds form an upper set of the
    observed amplitudes and a bisection finds the minimum.
    """
    if len(record) == 0:
        raise SelectionError("empty palpation record")
    candidates = np.unique(record.amplitude)

    def ok(k):
        keep = record.amplitude >= candidates[k]
        return is_monotone(record.force[keep], record.frequency[keep], monotonicity_tol)

    lo, hi = 0, candidates.size - 1
    if not ok(hi):
        raise SelectionError("no amplitude threshold gives a monotone force-frequency curve")
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    threshold = float(candidates[lo])
    return ThresholdResult(threshold, record.subset(record.amplitude >= threshold))


# ---------------------------------------------------------------------------
# linear calibration
# ---------------------------------------------------------------------------

def _slope(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = x - x.mean()
    denom = xm @ xm
    if denom == 0:
        return np.nan, np.nan
    s = float(xm @ (y - y.mean()) / denom)
    return s, float(y.mean() - s * x.mean())


def saturation_onset(force, freq, *, ratio: float = 0.25, window_frac: float = 0.1) -> float:
    """Force where the local slope first drops below ``ratio`` of the mid-range slope.

    Local slopes are least-squares fits over force windows spanning
    ``window_frac`` of the force range.  Returns the largest force when no
    saturation is found.
    """
    order = np.argsort(force, kind="stable")
    F = np.asarray(force, dtype=float)[order]
    f = np.asarray(freq, dtype=float)[order]
    lo, hi = F[0], F[-1]
    span = hi - lo
    if span <= 0:
        return float(hi)
    mid = (F >= lo + span / 3) & (F <= lo + 2 * span / 3)
    mid_slope, mid_icpt = _slope(F[mid], f[mid]) if mid.sum() >= 3 else _slope(F, f)
    if not mid_slope > 0:
        return float(hi)
    width = window_frac * span
    starts = np.linspace(lo + span / 2, hi - width, 200)
    for a in starts:
        sel = (F >= a) & (F <= a + width)
        if sel.sum() < 3:
            continue
        s, _ = _slope(F[sel], f[sel])
        if s < ratio * mid_slope:
            # knee: where the mid-range line reaches the saturated level
            level = float(np.median(f[F >= a + width / 2]))
            knee = (level - mid_icpt) / mid_slope
            return float(np.clip(knee, a, hi))
    return float(hi)


def extract_linear_calibration(record: PalpationRecord, threshold: float,
                               *, min_samples: int = 5) -> LinearCalibration:
    """Linear force-frequency map from the samples retained by ``threshold``."""
    kept = record.subset(record.amplitude >= threshold)
    if len(kept) < min_samples:
        raise CalibrationError(f"only {len(kept)} samples above threshold {threshold:.4g}")
    F_min = float(kept.force.min())
    F_max = saturation_onset(kept.force, kept.frequency)
    if not F_max > F_min:
        raise CalibrationError("no force range above the threshold")
    sel = (kept.force >= F_min) & (kept.force <= F_max)
    if sel.sum() < min_samples:
        raise CalibrationError("too few samples inside the linear range")
    S, f0 = _slope(kept.force[sel], kept.frequency[sel])
    if not S > 0:
        raise CalibrationError(f"non-positive sensitivity {S:.4g} Hz/N")
    return LinearCalibration(f0, S, F_min, F_max, float(threshold))


def scale_sensitivity(S_ref: float, L_ref: float, L: float) -> float:
    """Sensitivity of a taxel of length ``L`` from one measured at ``L_ref``."""
    if not (S_ref > 0 and L_ref > 0 and L > 0):
        raise ValueError("sensitivity and lengths must be positive")
    return S_ref * (L_ref / L) ** 2
