"""Error metrics, phase-step measurement and background algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GridMismatchError, InvalidParameterError, NumericalError


def nrmse(observed, expected, mask=None) -> float:
    """Root-mean-square of ``observed - expected`` divided by the mean of ``expected``."""
    o = np.asarray(observed, dtype=float)
    e = np.asarray(expected, dtype=float)
    if o.shape != e.shape:
        raise GridMismatchError("observed and expected differ in shape")
    m = np.ones(o.shape, bool) if mask is None else np.asarray(mask, bool)
    m = m & np.isfinite(o) & np.isfinite(e)
    if not m.any():
        raise InvalidParameterError("mask selects no finite samples")
    mean_e = e[m].mean()
    # relative test: a mean that is pure rounding residue counts as zero
    if abs(mean_e) <= 1e-12 * np.abs(e[m]).max():
        raise NumericalError("expected values have zero mean; NRMSE undefined")
    return float(np.sqrt(np.mean((o[m] - e[m]) ** 2)) / mean_e)


def rmse(observed, expected, mask=None) -> float:
    o = np.asarray(observed, dtype=float)
    e = np.asarray(expected, dtype=float)
    m = np.ones(o.shape, bool) if mask is None else np.asarray(mask, bool)
    m = m & np.isfinite(o) & np.isfinite(e)
    return float(np.sqrt(np.mean((o[m] - e[m]) ** 2)))


def match_mean(observed, expected, mask=None):
    """Shift ``observed`` so its mean over ``mask`` equals that of ``expected``."""
    o = np.asarray(observed, dtype=float)
    e = np.asarray(expected, dtype=float)
    m = np.ones(o.shape, bool) if mask is None else np.asarray(mask, bool)
    m = m & np.isfinite(o) & np.isfinite(e)
    return o - o[m].mean() + e[m].mean()


@dataclass(frozen=True)
class SbrInputs:
    """Run totals for the coincidence background estimate.

    ``P`` pairs generated and ``B`` background photons per arm over an
    acquisition of ``T`` seconds, gate ``tau`` seconds and per-arm efficiency
    ``eta``. ``eta_ff`` and ``B_ff`` override the FF arm when the arms differ.
    """

    P: float
    B: float
    T: float
    tau: float
    eta: float
    eta_ff: float | None = None
    B_ff: float | None = None

    def __post_init__(self):
        if min(self.P, self.B, self.eta) < 0:
            raise InvalidParameterError("P, B and eta must be >= 0")
        if not (self.T > 0 and self.tau > 0):
            raise InvalidParameterError("T and tau must be positive")

    @property
    def arms(self):
        eta_i = self.eta if self.eta_ff is None else self.eta_ff
        b_i = self.B if self.B_ff is None else self.B_ff
        return self.eta, eta_i, self.B, b_i


def accidental_count(inputs: SbrInputs) -> float:
    """Expected accidental coincidences ``tau * eta_s * eta_i * (P + B_s)(P + B_i) / T``."""
    eta_s, eta_i, b_s, b_i = inputs.arms
    return inputs.tau * eta_s * eta_i * (inputs.P + b_s) * (inputs.P + b_i) / inputs.T


def sbr_singles(P: float, B: float) -> float:
    if B == 0:
        raise NumericalError("singles SBR undefined without background")
    return P / B


def sbr_coincidence(inputs: SbrInputs) -> float:
    eta_s, eta_i, _, _ = inputs.arms
    cb = accidental_count(inputs)
    if cb == 0:
        raise NumericalError("coincidence SBR undefined without accidentals")
    return eta_s * eta_i * inputs.P / cb


def sbr_from_counts(signal_coincidences: float, background_coincidences: float) -> float:
    """Coincidence SBR from measured true-signal and accidental counts."""
    if background_coincidences == 0:
        raise NumericalError("coincidence SBR undefined without accidentals")
    return signal_coincidences / background_coincidences


def suppression_threshold(B: float, T: float, tau: float) -> float:
    """Pair number above which coincidence detection has a lower SBR than singles."""
    if not (T > 0 and tau > 0) or B < 0:
        raise InvalidParameterError("need B >= 0, T > 0, tau > 0")
    return math.sqrt(B * T / tau) - B


def infer_pairs_and_background(eta2_p: float, c_b: float, eta: float, T: float, tau: float):
    """Recover ``(P, B)`` from detected true coincidences and accidentals.

    Inverts ``eta^2 P`` and ``C_B = tau eta^2 (P + B)^2 / T`` for equal arms.
    """
    if not (eta > 0 and T > 0 and tau > 0):
        raise InvalidParameterError("eta, T and tau must be positive")
    P = eta2_p / eta**2
    B = math.sqrt(c_b * T / (tau * eta**2)) - P
    return P, B


def phase_step_measure(phase, high_mask, low_mask):
    """Mean phase over ``high_mask`` minus mean over ``low_mask``, with its standard error.

    The error is ``sqrt(var_hi / n_hi + var_lo / n_lo)`` from the per-mask
    sample variances. NaN pixels are ignored.
    """
    ph = np.asarray(getattr(phase, "phase", phase), dtype=float)
    hi = np.asarray(high_mask, bool) & np.isfinite(ph)
    lo = np.asarray(low_mask, bool) & np.isfinite(ph)
    if np.any(np.asarray(high_mask, bool) & np.asarray(low_mask, bool)):
        raise InvalidParameterError("high and low masks overlap")
    if not hi.any() or not lo.any():
        raise InvalidParameterError("phase-step masks must be non-empty")
    a, b = ph[hi], ph[lo]
    var_a = a.var(ddof=1) if a.size > 1 else 0.0
    var_b = b.var(ddof=1) if b.size > 1 else 0.0
    step = float(a.mean() - b.mean())
    return step, float(math.sqrt(var_a / a.size + var_b / b.size))


def modulation_contrast(phase, pitch: float, high_x, low_x, y, step: float) -> float:
    """Mean phase at ``high_x`` minus mean at ``low_x``, over rows ``y``, divided by ``step``.

    Coordinates are in metres about the grid centre; values between pixel
    centres are interpolated linearly.
    """
    ph = np.asarray(getattr(phase, "phase", phase), dtype=float)
    if not step:
        raise InvalidParameterError("step must be non-zero")
    if len(high_x) == 0 or len(low_x) == 0 or len(y) == 0:
        raise InvalidParameterError("need sample positions for both levels")
    ny, nx = ph.shape

    def mean_at(xs):
        X, Y = np.meshgrid(np.asarray(xs, float), np.asarray(y, float))
        rows = Y / pitch + (ny - 1) / 2.0
        cols = X / pitch + (nx - 1) / 2.0
        vals = ndimage.map_coordinates(ph, [rows.ravel(), cols.ravel()], order=1, mode="nearest")
        return vals.mean()

    return float((mean_at(high_x) - mean_at(low_x)) / step)


def step_masks(truth, step: float, erosion: int = 1, region=None):
    """High/low masks from a ground-truth two-level phase, eroded by ``erosion`` pixels."""
    truth = np.asarray(truth, dtype=float)
    hi = truth > 0.5 * step
    lo = ~hi
    if erosion > 0:
        hi = ndimage.binary_erosion(hi, iterations=erosion, border_value=1)
        lo = ndimage.binary_erosion(lo, iterations=erosion, border_value=1)
    if region is not None:
        hi = hi & region
        lo = lo & region
    return hi, lo
