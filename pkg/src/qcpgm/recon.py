"""Phase and amplitude reconstruction from coincidence pairs.

Centroids are kept in FF wavenumber units (rad/m) so that the phase gradient
is the plain centroid difference from the reference run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .coincidence import PairSet
from .errors import GridMismatchError, InvalidParameterError, NumericalError
from .optics import OpticalGeometry


def _records(pairs):
    return pairs.pairs if isinstance(pairs, PairSet) else np.asarray(pairs)


@dataclass(frozen=True, eq=False)
class CentroidMap:
    """Per-NF-pixel sums of FF wavenumbers and pair counts, grids indexed ``[y, x]``."""

    sum_u: np.ndarray
    sum_v: np.ndarray
    count: np.ndarray
    pitch: float

    @property
    def valid(self) -> np.ndarray:
        return self.count > 0

    def _mean(self, s):
        out = np.full(s.shape, np.nan)
        ok = self.valid
        out[ok] = s[ok] / self.count[ok]
        return out

    @property
    def U(self) -> np.ndarray:
        return self._mean(self.sum_u)

    @property
    def V(self) -> np.ndarray:
        return self._mean(self.sum_v)


@dataclass(frozen=True, eq=False)
class GradientField:
    p: np.ndarray
    q: np.ndarray
    valid: np.ndarray
    pitch: float


@dataclass(frozen=True, eq=False)
class PhaseMap:
    """Integrated phase, zero-mean over ``valid``; invalid pixels hold NaN."""

    phase: np.ndarray
    valid: np.ndarray
    pitch: float


def pixel_counts(pairs, n_pixels: int) -> np.ndarray:
    rec = _records(pairs)
    flat = rec["nf_y"].astype(np.int64) * n_pixels + rec["nf_x"]
    return np.bincount(flat, minlength=n_pixels * n_pixels).reshape(n_pixels, n_pixels).astype(float)


def centroid_map(pairs, geometry: OpticalGeometry) -> CentroidMap:
    """Accumulate the FF wavenumbers of the idlers paired with each NF pixel."""
    rec = _records(pairs)
    n = geometry.nf_pixels
    nf_x = rec["nf_x"].astype(np.int64)
    nf_y = rec["nf_y"].astype(np.int64)
    if rec.size and (nf_x.max() >= n or nf_y.max() >= n):
        raise InvalidParameterError("pair references an NF pixel outside the geometry")
    if rec.size and max(rec["ff_x"].max(), rec["ff_y"].max()) >= geometry.ff_pixels:
        raise InvalidParameterError("pair references an FF pixel outside the geometry")
    k = geometry.ff_wavenumbers()
    flat = nf_y * n + nf_x
    size = n * n
    su = np.bincount(flat, weights=k[rec["ff_x"]], minlength=size).reshape(n, n)
    sv = np.bincount(flat, weights=k[rec["ff_y"]], minlength=size).reshape(n, n)
    cnt = np.bincount(flat, minlength=size).reshape(n, n).astype(float)
    return CentroidMap(su, sv, cnt, geometry.nf_pitch)


def background_corrected_centroids(true_pairs, bg_pairs, geometry: OpticalGeometry) -> CentroidMap:
    """Subtract accidental-window sums and counts before taking the centroid.

    Pixels where the true-window count does not exceed the background count
    come out invalid.
    """
    t = centroid_map(true_pairs, geometry)
    b = centroid_map(bg_pairs, geometry)
    return CentroidMap(t.sum_u - b.sum_u, t.sum_v - b.sum_v, t.count - b.count, t.pitch)


def gradient_from_centroids(measured: CentroidMap, reference: CentroidMap) -> GradientField:
    if measured.count.shape != reference.count.shape:
        raise GridMismatchError("measured and reference centroid maps differ in shape")
    valid = measured.valid & reference.valid
    p = np.where(valid, measured.U - reference.U, np.nan)
    q = np.where(valid, measured.V - reference.V, np.nan)
    return GradientField(p, q, valid, measured.pitch)


def _fill_invalid(a, valid):
    if valid.all():
        return a
    if not valid.any():
        raise NumericalError("no valid gradient samples to integrate")
    idx = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
    return a[tuple(idx)]


def angular_frequencies(n: int, pitch: float) -> np.ndarray:
    """Angular frequencies ``2*pi*m/(n*pitch)`` in the signed order used by the FFT."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=pitch)


def frankot_chellappa(grad: GradientField, mirror: bool = True) -> PhaseMap:
    """Least-squares integration of ``(p, q)`` in the Fourier domain.

    With ``mirror`` the phase is extended evenly to ``2H x 2W`` (which makes the
    along-axis gradient odd and the cross-axis gradient even) before the
    transform; the zero-frequency term is dropped and the result cropped.
    """
    p = np.asarray(grad.p, dtype=float)
    q = np.asarray(grad.q, dtype=float)
    if p.ndim != 2 or p.shape != q.shape:
        raise GridMismatchError("p and q must be 2-D grids of equal shape")
    if min(p.shape) < 2:
        raise InvalidParameterError("grid is degenerate; use the 1-D integrator")
    valid = np.asarray(grad.valid, dtype=bool)
    p = _fill_invalid(p, valid)
    q = _fill_invalid(q, valid)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise NumericalError("gradient field contains non-finite values")
    ny, nx = p.shape
    if mirror:
        p = np.block([[p, -p[:, ::-1]], [p[::-1, :], -p[::-1, ::-1]]])
        q = np.block([[q, q[:, ::-1]], [-q[::-1, :], -q[::-1, ::-1]]])
    u = angular_frequencies(p.shape[1], grad.pitch)[None, :]
    v = angular_frequencies(p.shape[0], grad.pitch)[:, None]
    denom = u**2 + v**2
    denom[0, 0] = 1.0
    spec = (u * np.fft.fft2(p) + v * np.fft.fft2(q)) / (1j * denom)
    spec[0, 0] = 0.0
    phase = np.real(np.fft.ifft2(spec))[:ny, :nx]
    phase = phase - phase[valid].mean()
    phase[~valid] = np.nan
    return PhaseMap(phase, valid, grad.pitch)


def amplitude_image(counts, ref_counts, mode: str = "coincidence", scale: float = 1.0) -> np.ndarray:
    """Transmission amplitude from count ratios against a target-free run.

    Coincidence counts scale with the fourth power of a locally uniform
    amplitude, singles with the square. ``scale`` multiplies ``counts`` (use it
    to equalise exposures). Pixels with no reference counts are NaN.
    """
    exponents = {"coincidence": 0.25, "singles": 0.5}
    if mode not in exponents:
        raise InvalidParameterError(f"mode must be one of {sorted(exponents)}")
    counts = np.asarray(counts, dtype=float) * scale
    ref = np.asarray(ref_counts, dtype=float)
    if counts.shape != ref.shape:
        raise GridMismatchError("counts and reference differ in shape")
    out = np.full(counts.shape, np.nan)
    ok = ref > 0
    ratio = np.clip(counts[ok] / ref[ok], 0.0, None)
    out[ok] = np.clip(ratio ** exponents[mode], 0.0, 1.0)
    return out
