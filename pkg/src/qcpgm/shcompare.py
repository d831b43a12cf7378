"""One-dimensional Monte-Carlo comparison of QCPGM with a Shack-Hartmann sensor.

Both sensors sample the same 1-D phase profile with ``n_nf`` near-field
pixels. For the Shack-Hartmann sensor each NF pixel is a lenslet of width
``a`` and its FF spot is the diffraction pattern of a rectangular window; for
QCPGM the window is the Gaussian biphoton correlation. Photons are drawn from
pixel-integrated FF distributions, centroids are turned into gradients, the
gradients are integrated and the result is scored against a finely sampled
ground truth.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NumericalError
from .metrics import match_mean, nrmse, rmse

METHODS = ("qcpgm", "sh")
_METHOD_KEY = {"qcpgm": 0, "sh": 1}

DEFAULT_FF_PIXEL_COUNTS = tuple(range(5, 42, 2)) + (11, 50, 60, 80, 100)


@dataclass(frozen=True, eq=False)
class Profile1D:
    """Complex 1-D transmission sampled on a uniform grid ``x`` (m)."""

    x: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise InvalidParameterError("profile grid must be 1-D and increasing")
        if np.asarray(self.phase).shape != x.shape:
            raise InvalidParameterError("phase must match the grid")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def field(self) -> np.ndarray:
        amp = 1.0 if self.amplitude is None else np.asarray(self.amplitude, dtype=float)
        return amp * np.exp(1j * np.asarray(self.phase, dtype=float))

    def phase_at(self, x) -> np.ndarray:
        return np.interp(x, self.x, self.phase)

    @classmethod
    def from_function(cls, phase_fn, lo: float, hi: float, dx: float = 0.1e-6) -> "Profile1D":
        x = np.arange(lo, hi + 0.5 * dx, dx)
        return cls(x, np.asarray(phase_fn(x), dtype=float))


def two_bump(x, centers=(70e-6, 140e-6), widths=(22e-6, 18e-6), heights=(1.0, 0.75)):
    """Smooth test phase: a sum of Gaussian bumps, peak close to 1 rad."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c, w, h in zip(centers, widths, heights):
        out += h * np.exp(-((x - c) ** 2) / (2.0 * w**2))
    return out


TARGETS = {
    "two_bump": two_bump,
    "flat": lambda x: np.zeros_like(np.asarray(x, dtype=float)),
}


@dataclass(frozen=True)
class ComparisonConfig:
    """Parameters of the 1-D sensor comparison (lengths in m).

    The FF half-ranges are ``qcpgm_k_factor / delta_r`` for QCPGM and
    ``sh_lobes * 2 pi / a`` for the Shack-Hartmann sensor, i.e. a whole number
    of sinc lobes so the truncated spectrum ends on a zero.
    """

    n_nf: int = 10
    field_width: float = 200e-6
    nf_correlation_width: float = 20e-6
    microlens_width: float = 20e-6
    photons: int = 100_000
    repeats: int = 200
    ff_pixel_counts: tuple = DEFAULT_FF_PIXEL_COUNTS
    ground_truth_resolution: int = 200
    target: str = "two_bump"
    qcpgm_k_factor: float = 20.0
    sh_lobes: int = 9
    fine_k_points: int = 16384
    profile_dx: float = 0.1e-6

    def __post_init__(self):
        for name in ("n_nf", "photons", "repeats", "ground_truth_resolution", "sh_lobes", "fine_k_points"):
            if int(getattr(self, name)) < 1:
                raise InvalidParameterError(f"{name} must be a positive integer")
        for name in ("field_width", "nf_correlation_width", "microlens_width", "qcpgm_k_factor", "profile_dx"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be positive")
        if self.n_nf < 2:
            raise InvalidParameterError("need at least two NF pixels to integrate")
        pitch = self.nf_pitch
        if self.microlens_width > pitch * (1 + 1e-9) or self.nf_correlation_width > pitch * (1 + 1e-9):
            raise InvalidParameterError("microlens width and 2*delta_r must not exceed the NF pixel pitch")
        if self.ground_truth_resolution % self.n_nf:
            raise InvalidParameterError("ground_truth_resolution must be a multiple of n_nf")
        if not self.ff_pixel_counts or min(self.ff_pixel_counts) < 2:
            raise InvalidParameterError("ff_pixel_counts must list counts >= 2")
        if self.target not in TARGETS:
            raise InvalidParameterError(f"unknown target {self.target!r}; choose from {sorted(TARGETS)}")

    @property
    def nf_pitch(self) -> float:
        return self.field_width / self.n_nf

    @property
    def delta_r(self) -> float:
        return self.nf_correlation_width / 2.0

    def k_range(self, method: str) -> float:
        if method == "qcpgm":
            return self.qcpgm_k_factor / self.delta_r
        if method == "sh":
            return self.sh_lobes * 2.0 * np.pi / self.microlens_width
        raise InvalidParameterError(f"method must be one of {METHODS}")

    def nf_centers(self) -> np.ndarray:
        return (np.arange(self.n_nf) + 0.5) * self.nf_pitch

    def profile(self) -> Profile1D:
        # the Gaussian windows of the edge pixels reach 4 delta_r past the field
        margin = 4.0 * self.delta_r + self.microlens_width
        return Profile1D.from_function(TARGETS[self.target], -margin, self.field_width + margin, self.profile_dx)

    def ground_truth(self) -> np.ndarray:
        n = self.ground_truth_resolution
        x = (np.arange(n) + 0.5) * self.field_width / n
        return TARGETS[self.target](x)


def _window_spectrum(target: Profile1D, window: np.ndarray, k_grid: np.ndarray) -> np.ndarray:
    """``|sum_x T(x) w(x) exp(-i k x) dx|^2`` over the support of the window."""
    keep = window > 0
    if not keep.any():
        raise InvalidParameterError("window does not overlap the profile grid")
    x = target.x[keep]
    g = target.field[keep] * window[keep]
    amp = np.exp(-1j * np.outer(np.asarray(k_grid, dtype=float), x)) @ g * target.dx
    return np.abs(amp) ** 2


def _normalise(p):
    total = p.sum()
    if not total > 0:
        raise NumericalError("FF distribution carries no probability")
    return p / total


def _rect_window(target: Profile1D, center: float, a: float) -> np.ndarray:
    return (np.abs(target.x - center) <= a / 2.0 + 1e-12 * a).astype(float)


def _gauss_window(target: Profile1D, center: float, delta_r: float) -> np.ndarray:
    d = target.x - center
    w = np.exp(-(d**2) / (2.0 * delta_r**2))
    w[np.abs(d) > 4.0 * delta_r] = 0.0
    return w


def sh_ff_distribution(target: Profile1D, lens_center: float, a: float, k_grid) -> np.ndarray:
    """FF probability behind one lenslet: normalised ``|FT{T(r) rect((r - r_l)/a)}|^2``."""
    if not a > 0:
        raise InvalidParameterError("lenslet width must be positive")
    return _normalise(_window_spectrum(target, _rect_window(target, lens_center, a), k_grid))


def qcpgm_ff_distribution_1d(target: Profile1D, r_s: float, delta_r: float, k_grid) -> np.ndarray:
    """Conditional FF probability for NF position ``r_s`` with a Gaussian correlation window."""
    if not delta_r > 0:
        raise InvalidParameterError("delta_r must be positive")
    return _normalise(_window_spectrum(target, _gauss_window(target, r_s, delta_r), k_grid))


def integrate_1d(p, pitch: float, mirror: bool = True) -> np.ndarray:
    """Integrate gradient samples by Fourier division ``p_hat / (i u)``.

    With ``mirror`` the samples are extended oddly (the phase evenly) to twice
    the length first, which suits samples at pixel centres with free ends.
    The zero frequency and, for even lengths, the Nyquist term are dropped, so
    the result has zero mean over the extended grid.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise InvalidParameterError("need at least two gradient samples")
    if not pitch > 0:
        raise InvalidParameterError("pitch must be positive")
    if not np.all(np.isfinite(p)):
        raise NumericalError("gradient contains non-finite values")
    q = np.concatenate([p, -p[::-1]]) if mirror else p
    n = q.size
    u = 2.0 * np.pi * np.fft.fftfreq(n, d=pitch)
    u[0] = 1.0
    spec = np.fft.fft(q) / (1j * u)
    spec[0] = 0.0
    if n % 2 == 0:
        spec[n // 2] = 0.0
    return np.real(np.fft.ifft(spec))[: p.size]


@dataclass(frozen=True, eq=False)
class PixelModel:
    """Pixel-integrated FF probabilities for every NF pixel of one method."""

    method: str
    k_range: float
    fine_k: np.ndarray
    cdf: np.ndarray  # (n_nf, fine points) cumulative probability on fine_k
    ref_cdf: np.ndarray  # same for a flat target
    weights: np.ndarray  # relative NF-pixel detection rates

    def pixel_probs(self, n_pixels: int, cdf=None):
        edges = np.linspace(-self.k_range, self.k_range, n_pixels + 1)
        c = self.cdf if cdf is None else cdf
        probs = np.diff(np.stack([np.interp(edges, self.fine_k, row) for row in np.atleast_2d(c)]), axis=1)
        probs = np.clip(probs, 0.0, None)
        return probs / probs.sum(axis=1, keepdims=True), 0.5 * (edges[1:] + edges[:-1])


def _cumulative(p):
    c = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]))])
    return c / c[-1]


def build_pixel_model(config: ComparisonConfig, method: str, target: Profile1D | None = None) -> PixelModel:
    """Fine-grid FF spectra for each NF pixel, ready to be binned to any pixel count."""
    if method not in METHODS:
        raise InvalidParameterError(f"method must be one of {METHODS}")
    target = config.profile() if target is None else target
    flat = Profile1D(target.x, np.zeros_like(target.phase))
    K = config.k_range(method)
    fine = np.linspace(-K, K, config.fine_k_points + 1)
    cdfs, weights = [], []
    for c in config.nf_centers():
        if method == "sh":
            w = _rect_window(target, c, config.microlens_width)
        else:
            w = _gauss_window(target, c, config.delta_r)
        spec = _window_spectrum(target, w, fine)
        cdfs.append(_cumulative(spec))
        weight = np.sum(np.abs(target.field) ** 2 * w**2)
        if method == "qcpgm":
            # coincidences carry the signal photon's transmission as well
            weight *= float(np.interp(c, target.x, np.abs(target.field))) ** 2
        weights.append(weight)
    c0 = config.nf_centers()[0]
    w0 = _rect_window(flat, c0, config.microlens_width) if method == "sh" else _gauss_window(flat, c0, config.delta_r)
    ref = _cumulative(_window_spectrum(flat, w0, fine))
    weights = np.asarray(weights)
    return PixelModel(method, K, fine, np.array(cdfs), ref, weights / weights.sum())


@dataclass(frozen=True)
class SweepRow:
    method: str
    ff_pixels: int
    mean_nrmse: float
    mean_uncertainty: float
    repeats: int
    metric: str = "nrmse"
    raw_nrmse: float = float("nan")
    centroid_std: float = float("nan")
    beam_width: float = float("nan")


@dataclass
class ComparisonResult:
    rows: list
    truth: np.ndarray
    mean_phase: dict = field(default_factory=dict)

    def row(self, method: str, ff_pixels: int) -> SweepRow:
        for r in self.rows:
            if r.method == method and r.ff_pixels == ff_pixels:
                return r
        raise KeyError((method, ff_pixels))

    def curve(self, method: str):
        rows = sorted((r for r in self.rows if r.method == method), key=lambda r: r.ff_pixels)
        return np.array([r.ff_pixels for r in rows]), np.array([r.mean_nrmse for r in rows])


def _score(matched, truth):
    """Accuracy of the expected phase from mean-matched repeats.

    The squared error of the across-repeat mean contains the shot-noise term
    ``var / repeats``; that term is subtracted so the score measures the
    systematic error only. Returns ``(score, raw score, metric)`` where
    ``metric`` is ``"rmse"`` when the truth has zero mean and NRMSE is undefined.
    """
    r = matched.shape[0]
    mean_phase = matched.mean(axis=0)
    err2 = float(np.mean((mean_phase - truth) ** 2))
    noise2 = float(np.mean(matched.var(axis=0, ddof=1))) / r if r > 1 else 0.0
    sys_rms = math.sqrt(max(err2 - noise2, 0.0))
    try:
        raw = nrmse(mean_phase, truth)
    except NumericalError:
        return sys_rms, rmse(mean_phase, truth), "rmse"
    return sys_rms / float(np.mean(truth)), raw, "nrmse"


def simulate_sensor(config: ComparisonConfig, model: PixelModel, n_pixels: int, seed: int):
    """Run every repeat for one method and FF pixel count.

    Returns ``(phases, centroids, beam_width)`` with one row per repeat.
    Pixels that receive no photons report the reference centroid.
    """
    probs, kc = model.pixel_probs(n_pixels)
    ref_p, _ = model.pixel_probs(n_pixels, model.ref_cdf)
    ref_c = float(ref_p[0] @ kc)
    mean_k = probs @ kc
    beam = float(np.mean(np.sqrt(np.clip(probs @ kc**2 - mean_k**2, 0.0, None))))
    phases = np.empty((config.repeats, config.n_nf))
    cents = np.empty((config.repeats, config.n_nf))
    for r in range(config.repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _METHOD_KEY[model.method], n_pixels, r]))
        n_j = rng.multinomial(config.photons, model.weights)
        counts = rng.multinomial(n_j, probs)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(n_j > 0, counts @ kc / np.maximum(n_j, 1), ref_c)
        cents[r] = c
        phases[r] = integrate_1d(c - ref_c, config.nf_pitch)
    return phases, cents, beam


def run_comparison(config: ComparisonConfig = ComparisonConfig(), seed: int = 0) -> ComparisonResult:
    """Sweep the FF pixel count for both sensors.

    ``mean_nrmse`` scores the expected phase (across-repeat mean, shot-noise
    term removed) against the ground truth block-averaged to the NF pixels;
    ``raw_nrmse`` keeps the plain score of the mean. ``mean_uncertainty`` is
    the across-repeat phase standard deviation averaged over pixels.
    """
    truth_fine = config.ground_truth()
    truth = truth_fine.reshape(config.n_nf, -1).mean(axis=1)
    target = config.profile()
    rows, means = [], {}
    for method in METHODS:
        model = build_pixel_model(config, method, target)
        for n_pix in sorted(set(int(n) for n in config.ff_pixel_counts)):
            phases, cents, beam = simulate_sensor(config, model, n_pix, seed)
            matched = np.array([match_mean(p, truth) for p in phases])
            mean_phase = matched.mean(axis=0)
            score, raw, metric = _score(matched, truth)
            ddof = 1 if config.repeats > 1 else 0
            rows.append(
                SweepRow(
                    method=method,
                    ff_pixels=n_pix,
                    mean_nrmse=score,
                    mean_uncertainty=float(matched.std(axis=0, ddof=ddof).mean()),
                    repeats=config.repeats,
                    metric=metric,
                    raw_nrmse=raw,
                    centroid_std=float(cents.std(axis=0, ddof=ddof).mean()),
                    beam_width=beam,
                )
            )
            means[(method, n_pix)] = mean_phase
    return ComparisonResult(rows, truth, means)


def find_knee(counts, values, lo: int = 10, hi: int = 30) -> int:
    """FF pixel count with the largest second difference of ``values`` within ``[lo, hi]``.

    Uses the three-point second derivative for unequal spacing; only points
    with neighbours on both sides are candidates.
    """
    n = np.asarray(counts, dtype=float)
    v = np.asarray(values, dtype=float)
    order = np.argsort(n)
    n, v = n[order], v[order]
    sel = np.flatnonzero((n >= lo) & (n <= hi))
    if sel.size < 3:
        raise InvalidParameterError("need at least three sweep points in the knee range")
    n, v = n[sel], v[sel]
    h1 = n[1:-1] - n[:-2]
    h2 = n[2:] - n[1:-1]
    d2 = 2.0 * (v[2:] / (h2 * (h1 + h2)) - v[1:-1] / (h1 * h2) + v[:-2] / (h1 * (h1 + h2)))
    return int(n[1:-1][int(np.argmax(d2))])


SWEEP_COLUMNS = ("method", "ff_pixels", "mean_nrmse", "mean_uncertainty", "repeats", "metric")


def sweep_csv(result: ComparisonResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in result.rows:
        w.writerow([r.method, r.ff_pixels, f"{r.mean_nrmse:.10g}", f"{r.mean_uncertainty:.10g}", r.repeats, r.metric])
    return buf.getvalue()


def uncertainty_ratio(result: ComparisonResult, sh_pixels: int = 11, qcpgm_pixels: int = 100) -> float:
    q = result.row("qcpgm", qcpgm_pixels).mean_uncertainty
    if q <= 0 or not math.isfinite(q):
        raise NumericalError("QCPGM uncertainty is not positive")
    return result.row("sh", sh_pixels).mean_uncertainty / q
