"""Biphoton state, transmission targets and the coincidence forward model.

Lengths are in metres and transverse wavenumbers in rad/m throughout. Grids
are indexed ``[y, x]``. The far-field (FF) camera samples wavenumber space on
a centred uniform grid, so an FF pixel index maps to ``k = (2*pi/lambda) *
offset * pitch / f``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .errors import EmptyDistributionError, InvalidParameterError, NumericalError

ENVELOPE_MODES = ("constant", "full")
TARGET_KINDS = ("star", "usaf_bars", "gaussian_bump", "flat", "linear_ramp", "cell_like")

# window half-width in units of the correlation width
WINDOW_HALF_WIDTH = 4.0


def _require_positive(**values):
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise InvalidParameterError(f"{name} must be positive and finite, got {value!r}")


def thread_hint(default: int = 1) -> int:
    """Worker count requested through ``QCPGM_THREADS`` (a hint, never required)."""
    try:
        return max(1, int(os.environ.get("QCPGM_THREADS", default)))
    except ValueError:
        return default


@dataclass(frozen=True)
class BiphotonParams:
    """Source quantities of the double-Gaussian biphoton state and its derived widths."""

    pump_wavelength: float
    pump_width: float
    crystal_length: float
    alpha: float
    photon_wavelength: float
    delta_r: float
    delta_k: float

    def __post_init__(self):
        _require_positive(
            pump_wavelength=self.pump_wavelength,
            pump_width=self.pump_width,
            crystal_length=self.crystal_length,
            alpha=self.alpha,
            photon_wavelength=self.photon_wavelength,
        )
        if self.alpha > 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1], got {self.alpha}")
        dr = correlation_width(self.pump_wavelength, self.crystal_length, self.alpha)
        dk = 1.0 / (2.0 * self.pump_width)
        if abs(self.delta_r - dr) > 1e-12 * dr or abs(self.delta_k - dk) > 1e-12 * dk:
            raise InvalidParameterError("delta_r/delta_k inconsistent with source quantities")
        if not self.delta_r < 1.0 / (2.0 * self.delta_k):
            raise InvalidParameterError(
                "correlation width must be smaller than the pump width "
                f"(delta_r={self.delta_r:.3g} m, 1/(2 delta_k)={1 / (2 * self.delta_k):.3g} m)"
            )


def correlation_width(pump_wavelength: float, crystal_length: float, alpha: float) -> float:
    return math.sqrt(2.0 * alpha * crystal_length * pump_wavelength / math.pi)


def make_biphoton_params(
    pump_wavelength: float,
    pump_width: float,
    crystal_length: float,
    alpha: float = 0.455,
) -> BiphotonParams:
    """Build :class:`BiphotonParams` for degenerate SPDC.

    ``pump_width`` is the 1/e^2 intensity radius of the pump. The photon
    wavelength is twice the pump wavelength.
    """
    _require_positive(
        pump_wavelength=pump_wavelength,
        pump_width=pump_width,
        crystal_length=crystal_length,
        alpha=alpha,
    )
    return BiphotonParams(
        pump_wavelength=pump_wavelength,
        pump_width=pump_width,
        crystal_length=crystal_length,
        alpha=alpha,
        photon_wavelength=2.0 * pump_wavelength,
        delta_r=correlation_width(pump_wavelength, crystal_length, alpha),
        delta_k=1.0 / (2.0 * pump_width),
    )


def biphoton_amplitude(r_s, r_i, params: BiphotonParams):
    """Unnormalised biphoton amplitude (peak value 1 at the origin).

    ``r_s`` and ``r_i`` are ``(..., 2)`` arrays of positions in metres and
    broadcast against each other.
    """
    r_s = np.asarray(r_s, dtype=float)
    r_i = np.asarray(r_i, dtype=float)
    diff2 = np.sum((r_s - r_i) ** 2, axis=-1)
    summ2 = np.sum((r_s + r_i) ** 2, axis=-1)
    out = np.exp(-diff2 / (2.0 * params.delta_r**2)) * np.exp(-2.0 * params.delta_k**2 * summ2)
    return float(out) if out.ndim == 0 else out


def target_phase_from_height(height: float, index: float, wavelength: float) -> float:
    """Phase delay of a transparent feature of the given height relative to air."""
    if height < 0 or index <= 1 or wavelength <= 0:
        raise InvalidParameterError("need height >= 0, index > 1 and wavelength > 0")
    return 2.0 * math.pi * (index - 1.0) * height / wavelength


@dataclass(frozen=True, eq=False)
class ComplexTarget:
    """Sampled complex transmission ``A(r) exp(i phi(r))`` centred on the optical axis."""

    amplitude: np.ndarray
    phase: np.ndarray
    pitch: float

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=float)
        phase = np.array(self.phase, dtype=float)
        if amp.ndim != 2 or amp.shape != phase.shape:
            raise InvalidParameterError("amplitude and phase must be 2-D grids of equal shape")
        _require_positive(pitch=self.pitch)
        if not np.all(np.isfinite(phase)):
            raise InvalidParameterError("phase values must be finite")
        if np.any(~np.isfinite(amp)) or amp.min() < 0 or amp.max() > 1:
            raise InvalidParameterError("amplitude values must lie in [0, 1]")
        amp.setflags(write=False)
        phase.setflags(write=False)
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", phase)

    @property
    def height(self) -> int:
        return self.amplitude.shape[0]

    @property
    def width(self) -> int:
        return self.amplitude.shape[1]

    @property
    def transmission(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def coords(self):
        """Sample coordinates ``(x, y)`` in metres, origin at the grid centre."""
        x = (np.arange(self.width) - (self.width - 1) / 2.0) * self.pitch
        y = (np.arange(self.height) - (self.height - 1) / 2.0) * self.pitch
        return x, y


def _smooth_indicator(signed_distance, edge_width):
    """1 inside, 0 outside; an error-function edge of the given width when > 0."""
    if edge_width > 0:
        return ndtr(signed_distance / edge_width)
    return (signed_distance > 0).astype(float)


def _star_phase(X, Y, step, n_spokes, radius, edge_width):
    r = np.hypot(X, Y)
    theta = np.arctan2(Y, X)
    sector = math.pi / n_spokes
    # angular offset from the centre of the nearest spoke, in [-sector, sector)
    rel = np.mod(theta + sector, 2 * sector) - sector
    # signed perpendicular distance to the nearest spoke boundary
    ang = sector / 2 - np.abs(rel)
    dist = r * np.sin(np.clip(ang, -math.pi / 2, math.pi / 2))
    inside = _smooth_indicator(dist, edge_width)
    if radius is not None:
        inside = inside * _smooth_indicator(radius - r, edge_width)
    return step * inside


def bar_centers(period: float, n_bars: int):
    """x positions (m) of the bar centres and of the gaps between bars, for ``usaf_bars`` targets."""
    half = period / 2.0
    x0 = -(n_bars * period - half) / 2.0
    bars = x0 + half / 2.0 + period * np.arange(n_bars)
    return bars, bars[:-1] + half


def _bars_phase(X, Y, step, period, n_bars, bar_length, edge_width):
    half = period / 2.0
    total = n_bars * period - half
    x0 = -total / 2.0
    out = np.zeros_like(X)
    for b in range(n_bars):
        left = x0 + b * period
        across = np.minimum(X - left, left + half - X)
        out = np.maximum(out, _smooth_indicator(across, edge_width))
    if bar_length is not None:
        out = out * _smooth_indicator(bar_length / 2.0 - np.abs(Y), edge_width)
    return step * out


def _cell_like(X, Y, rng, step, n_cells, cell_radius, absorption):
    phase = np.zeros_like(X)
    amp = np.ones_like(X)
    extent = min(np.ptp(X), np.ptp(Y)) / 2.0 - cell_radius
    for _ in range(n_cells):
        cx, cy = rng.uniform(-extent, extent, size=2)
        a, b = cell_radius * rng.uniform(0.7, 1.3, size=2)
        rot = rng.uniform(0, math.pi)
        xr = (X - cx) * math.cos(rot) + (Y - cy) * math.sin(rot)
        yr = -(X - cx) * math.sin(rot) + (Y - cy) * math.cos(rot)
        rho2 = (xr / a) ** 2 + (yr / b) ** 2
        body = np.clip(1.0 - rho2, 0.0, None) ** 0.5
        nucleus = np.exp(-((xr / (0.25 * a)) ** 2 + (yr / (0.25 * b)) ** 2))
        phase = phase + step * (body + 0.5 * nucleus)
        amp = amp * (1.0 - absorption * nucleus)
    return amp, phase


def gen_target(
    kind: str,
    shape: tuple[int, int],
    pitch: float,
    *,
    step_phase: float = 1.0,
    n_spokes: int = 4,
    radius: float | None = None,
    edge_width: float = 0.0,
    bar_period: float = 2.76e-6,
    n_bars: int = 3,
    bar_length: float | None = None,
    bump_width: float = 20e-6,
    bump_height: float = 1.0,
    gradient: tuple[float, float] = (0.0, 0.0),
    n_cells: int = 3,
    cell_radius: float = 40e-6,
    absorption: float = 0.2,
    seed: int = 0,
) -> ComplexTarget:
    """Synthesise a test target.

    ``star``: ``n_spokes`` raised spokes of phase ``step_phase`` alternating with
    zero-phase gaps, optionally limited to ``radius``. ``usaf_bars``: ``n_bars``
    vertical bars with line-pair period ``bar_period``. ``gaussian_bump``:
    ``bump_height * exp(-r^2 / (2 bump_width^2))``. ``linear_ramp``: phase
    ``gx*x + gy*y``. ``cell_like``: a few smooth elliptical phase objects with
    weakly absorbing nuclei. ``edge_width`` > 0 softens star and bar edges with
    an error-function profile.
    """
    if kind not in TARGET_KINDS:
        raise InvalidParameterError(f"unknown target kind {kind!r}")
    _require_positive(pitch=pitch)
    ny, nx = shape
    if ny < 2 or nx < 2:
        raise InvalidParameterError("target grid must be at least 2x2")
    if edge_width < 0:
        raise InvalidParameterError("edge_width must be >= 0")
    x = (np.arange(nx) - (nx - 1) / 2.0) * pitch
    y = (np.arange(ny) - (ny - 1) / 2.0) * pitch
    X, Y = np.meshgrid(x, y)
    amp = np.ones(shape)
    if kind == "flat":
        phase = np.zeros(shape)
    elif kind == "star":
        if n_spokes < 1:
            raise InvalidParameterError("n_spokes must be >= 1")
        if radius is not None:
            _require_positive(radius=radius)
        phase = _star_phase(X, Y, step_phase, n_spokes, radius, edge_width)
    elif kind == "usaf_bars":
        _require_positive(bar_period=bar_period)
        if n_bars < 1:
            raise InvalidParameterError("n_bars must be >= 1")
        phase = _bars_phase(X, Y, step_phase, bar_period, n_bars, bar_length, edge_width)
    elif kind == "gaussian_bump":
        _require_positive(bump_width=bump_width)
        phase = bump_height * np.exp(-(X**2 + Y**2) / (2.0 * bump_width**2))
    elif kind == "linear_ramp":
        gx, gy = gradient
        phase = gx * X + gy * Y
    else:
        _require_positive(cell_radius=cell_radius)
        if not 0 <= absorption < 1:
            raise InvalidParameterError("absorption must lie in [0, 1)")
        amp, phase = _cell_like(X, Y, np.random.default_rng(seed), step_phase, n_cells, cell_radius, absorption)
    return ComplexTarget(amplitude=amp, phase=phase, pitch=pitch)


@dataclass(frozen=True)
class OpticalGeometry:
    """Camera and far-field optics.

    The near-field (NF) pixel pitch at the sample is ``camera_pixel_pitch /
    nf_magnification``. FF pixel ``j`` sits at wavenumber ``(j - (n-1)/2) *
    ff_dk``, so the FF grid spans ``[-ff_half_aperture, ff_half_aperture]``.
    """

    ff_focal_length: float
    camera_pixel_pitch: float
    nf_magnification: float
    nf_pixels: int
    ff_pixels: int
    photon_wavelength: float

    def __post_init__(self):
        _require_positive(
            ff_focal_length=self.ff_focal_length,
            camera_pixel_pitch=self.camera_pixel_pitch,
            nf_magnification=self.nf_magnification,
            photon_wavelength=self.photon_wavelength,
        )
        if self.nf_pixels < 2 or self.ff_pixels < 2:
            raise InvalidParameterError("pixel counts must be >= 2")

    @classmethod
    def with_aperture(
        cls,
        ff_half_aperture: float,
        *,
        camera_pixel_pitch: float,
        nf_magnification: float,
        nf_pixels: int,
        ff_pixels: int,
        photon_wavelength: float,
    ) -> "OpticalGeometry":
        """Choose the effective focal length that makes the FF grid span the aperture."""
        _require_positive(ff_half_aperture=ff_half_aperture)
        dk = 2.0 * ff_half_aperture / (ff_pixels - 1)
        f = 2.0 * math.pi / photon_wavelength * camera_pixel_pitch / dk
        return cls(f, camera_pixel_pitch, nf_magnification, nf_pixels, ff_pixels, photon_wavelength)

    @property
    def nf_pitch(self) -> float:
        return self.camera_pixel_pitch / self.nf_magnification

    @property
    def ff_dk(self) -> float:
        return 2.0 * math.pi / self.photon_wavelength * self.camera_pixel_pitch / self.ff_focal_length

    @property
    def ff_half_aperture(self) -> float:
        return self.ff_dk * (self.ff_pixels - 1) / 2.0

    def ff_wavenumbers(self) -> np.ndarray:
        return (np.arange(self.ff_pixels) - (self.ff_pixels - 1) / 2.0) * self.ff_dk

    def nf_coords(self) -> np.ndarray:
        return (np.arange(self.nf_pixels) - (self.nf_pixels - 1) / 2.0) * self.nf_pitch


@dataclass(frozen=True, eq=False)
class FarFieldModel:
    """Per-NF-pixel conditional FF distributions and their in-aperture mass.

    ``probs[n]`` is the ``(ff, ff)`` distribution for flat NF index ``n = iy *
    nf_pixels + ix`` (rows are ``v``); ``mass[n]`` is the coincidence weight
    ``|T(r_s)|^2 * integral over the aperture``.
    """

    probs: np.ndarray
    mass: np.ndarray
    geometry: OpticalGeometry
    envelope_mode: str

    def marginal(self) -> np.ndarray:
        total = self.mass.sum()
        if not total > 0:
            raise NumericalError("no coincidence probability reaches the far field")
        n = self.geometry.nf_pixels
        return (self.mass / total).reshape(n, n)

    def distribution(self, ix: int, iy: int) -> np.ndarray:
        n = self.geometry.nf_pixels
        if self.mass[iy * n + ix] <= 0:
            raise EmptyDistributionError(f"no far-field mass for NF pixel ({ix}, {iy})")
        return self.probs[iy * n + ix]


def _check_sampling(target: ComplexTarget, params: BiphotonParams, geometry: OpticalGeometry):
    if target.pitch > params.delta_r / 2.0:
        raise InvalidParameterError(
            f"target pitch {target.pitch:.3g} m does not resolve delta_r={params.delta_r:.3g} m"
        )
    if geometry.ff_half_aperture >= math.pi / target.pitch:
        raise InvalidParameterError("target sampling aliases within the FF aperture")


def _axis_windows(nf_coord, pitch, size, h):
    """Nearest target-sample index for each NF coordinate and the local sample offsets."""
    frac = nf_coord / pitch + (size - 1) / 2.0
    centre = np.rint(frac).astype(int)
    # positions of window samples relative to r_s, one row per NF coordinate
    offsets = (centre[:, None] + np.arange(-h, h + 1)[None, :] - frac[:, None]) * pitch
    return centre, offsets


def compute_far_field(
    target: ComplexTarget,
    params: BiphotonParams,
    geometry: OpticalGeometry,
    envelope_mode: str = "constant",
    pixels=None,
    chunk: int = 128,
) -> FarFieldModel:
    """Evaluate the conditional FF distribution for every (or selected) NF pixel.

    For each NF position the product of the target transmission and the
    biphoton amplitude is transformed over a window of half-width
    ``4*delta_r`` and evaluated exactly at the FF pixel wavenumbers (a
    matrix DFT, equivalent to an arbitrarily zero-padded FFT). Probability
    outside the FF grid is lost.
    """
    if envelope_mode not in ENVELOPE_MODES:
        raise InvalidParameterError(f"envelope_mode must be one of {ENVELOPE_MODES}")
    _check_sampling(target, params, geometry)
    pitch = target.pitch
    h = int(math.ceil(WINDOW_HALF_WIDTH * params.delta_r / pitch))
    tpad = np.pad(target.transmission, h, mode="edge")
    apad = np.pad(target.amplitude, h, mode="edge")

    nf = geometry.nf_coords()
    cx, offx = _axis_windows(nf, pitch, target.width, h)
    cy, offy = _axis_windows(nf, pitch, target.height, h)
    if cx.min() < 0 or cx.max() > target.width - 1 or cy.min() < 0 or cy.max() > target.height - 1:
        raise InvalidParameterError("NF field of view extends beyond the target grid")

    def weights(coord, offsets):
        w = np.exp(-(offsets**2) / (2.0 * params.delta_r**2))
        if envelope_mode == "full":
            ri = coord[:, None] + offsets
            w = w * np.exp(-2.0 * params.delta_k**2 * (coord[:, None] + ri) ** 2)
        return w

    wx = weights(nf, offx)
    wy = weights(nf, offy)

    k = geometry.ff_wavenumbers()
    local = (np.arange(-h, h + 1)) * pitch
    E = np.exp(-1j * np.outer(k, local))
    Et = E.T.copy()
    scale = pitch**4 * geometry.ff_dk**2 / (4.0 * math.pi**2)

    n = geometry.nf_pixels
    if pixels is None:
        pixels = np.arange(n * n)
    pixels = np.asarray(pixels, dtype=int)
    iy_all, ix_all = np.divmod(pixels, n)
    windows_view = sliding_window_view(tpad, (2 * h + 1, 2 * h + 1))

    nff = geometry.ff_pixels
    probs = np.zeros((len(pixels), nff, nff))
    mass = np.zeros(len(pixels))

    def work(start):
        sl = slice(start, min(start + chunk, len(pixels)))
        ix, iy = ix_all[sl], iy_all[sl]
        g = windows_view[cy[iy], cx[ix]] * wy[iy][:, :, None] * wx[ix][:, None, :]
        G = E @ g @ Et
        p = G.real**2 + G.imag**2
        tot = p.sum(axis=(1, 2))
        # |T(r_s)|^2 at the nearest sample
        ts2 = apad[cy[iy] + h, cx[ix] + h] ** 2
        mass[sl] = ts2 * tot * scale
        good = tot > 0
        p[good] /= tot[good][:, None, None]
        p[~good] = 0.0
        probs[sl] = p

    starts = range(0, len(pixels), chunk)
    workers = thread_hint()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return FarFieldModel(probs=probs, mass=mass, geometry=geometry, envelope_mode=envelope_mode)


def conditional_ff_distribution(
    target: ComplexTarget,
    params: BiphotonParams,
    geometry: OpticalGeometry,
    r_s: tuple[int, int],
    envelope_mode: str = "constant",
) -> np.ndarray:
    """Normalised FF distribution ``[v, u]`` of idlers paired with NF pixel ``r_s = (ix, iy)``."""
    ix, iy = r_s
    n = geometry.nf_pixels
    if not (0 <= ix < n and 0 <= iy < n):
        raise InvalidParameterError(f"NF pixel {r_s} outside the {n}x{n} grid")
    model = compute_far_field(target, params, geometry, envelope_mode, pixels=[iy * n + ix])
    if model.mass[0] <= 0 or not model.probs[0].any():
        raise EmptyDistributionError(f"no far-field mass for NF pixel {r_s}")
    return model.probs[0]


def nf_marginal(
    target: ComplexTarget,
    params: BiphotonParams,
    geometry: OpticalGeometry,
    envelope_mode: str = "constant",
) -> np.ndarray:
    """Coincidence weight of every NF pixel, normalised to sum to one."""
    return compute_far_field(target, params, geometry, envelope_mode).marginal()
