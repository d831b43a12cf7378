"""Monte-Carlo generation of time-tagged NF/FF detection events.

Every random draw comes from a :class:`numpy.random.SeedSequence` keyed by
``(seed, purpose[, pixel])`` so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .events import EVENT_DTYPE, FF, NF, PAIR_DTYPE, check_sorted, make_events
from .optics import BiphotonParams, ComplexTarget, FarFieldModel, OpticalGeometry, compute_far_field

# substream purposes
_PAIRS, _FF_PIXEL, _JITTER, _BG_NF, _BG_FF, _BG_SPOTS, _CLASSICAL, _CLASSICAL_FF = range(8)


def _rng(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise InvalidParameterError("seed must be a non-negative integer")
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


@dataclass(frozen=True)
class DetectorModel:
    """Per-arm detection efficiency and timing of the time-tagging camera.

    Times are in ns except ``acquisition_time`` (s). ``rate_cap`` is the
    documented per-arm event rate above which results are flagged.
    """

    efficiency_nf: float = 0.07
    efficiency_ff: float = 0.07
    time_quantum: float = 8.0
    jitter_sigma: float = 2.0
    acquisition_time: float = 1.0
    rate_cap: float = 1e7

    def __post_init__(self):
        for name in ("efficiency_nf", "efficiency_ff"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1]")
        if not self.time_quantum > 0 or not self.acquisition_time > 0:
            raise InvalidParameterError("time_quantum and acquisition_time must be positive")
        if self.jitter_sigma < 0 or not self.rate_cap > 0:
            raise InvalidParameterError("jitter_sigma must be >= 0 and rate_cap > 0")

    @property
    def duration_ns(self) -> float:
        return self.acquisition_time * 1e9

    def timestamps(self, t_ns: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Add Gaussian jitter, floor-quantise and clip to the acquisition interval."""
        t = np.asarray(t_ns, dtype=float)
        if self.jitter_sigma > 0:
            t = t + rng.normal(0.0, self.jitter_sigma, size=t.shape)
        t = np.floor(t / self.time_quantum) * self.time_quantum
        return np.clip(t, 0.0, self.duration_ns).astype(np.uint64)


@dataclass(frozen=True)
class BackgroundModel:
    """Uncorrelated light: Gaussian spots in both arms that jump every epoch.

    ``rate_fraction`` is the background flux per arm relative to the SPDC pair
    flux. Spot centres and widths are in pixel units of the respective camera
    region; when no centres are given they are drawn from the seed, uniformly
    over the central ``center_spread`` fraction of each region. The default
    FF spread of zero models a beam that is translated, not tilted, between
    epochs: its NF spot wanders while its FF spot stays on axis.
    """

    rate_fraction: float = 0.67
    reposition_period: float = 100.0
    spot_sigma_nf: float = 16.0
    spot_sigma_ff: float = 10.0
    center_spread_nf: float = 0.6
    center_spread_ff: float = 0.0
    nf_centers: tuple = ()
    ff_centers: tuple = ()

    def __post_init__(self):
        if self.rate_fraction < 0:
            raise InvalidParameterError("rate_fraction must be >= 0")
        if not self.reposition_period > 0:
            raise InvalidParameterError("reposition_period must be positive")
        if not (self.spot_sigma_nf > 0 and self.spot_sigma_ff > 0):
            raise InvalidParameterError("spot sigmas must be positive")
        if not (0 <= self.center_spread_nf <= 1 and 0 <= self.center_spread_ff <= 1):
            raise InvalidParameterError("center spreads must lie in [0, 1]")

    def epochs(self, acquisition_time: float) -> int:
        return max(1, math.ceil(acquisition_time / self.reposition_period - 1e-12))

    def spot_centers(self, n_epochs: int, geometry: OpticalGeometry, seed: int):
        """Per-epoch ``(x, y)`` spot centres for the NF and FF regions."""
        rng = _rng(seed, _BG_SPOTS)
        out = []
        arms = (
            (self.nf_centers, geometry.nf_pixels, self.center_spread_nf),
            (self.ff_centers, geometry.ff_pixels, self.center_spread_ff),
        )
        for given, n, spread in arms:
            half = spread * (n - 1) / 2.0
            drawn = rng.uniform(-half, half, size=(n_epochs, 2)) + (n - 1) / 2.0
            if given:
                arr = np.asarray(given, dtype=float).reshape(-1, 2)
                drawn = arr[np.arange(n_epochs) % len(arr)]
            out.append(drawn)
        return out[0], out[1]


@dataclass
class SimulationResult:
    nf: np.ndarray
    ff: np.ndarray
    metadata: dict = field(default_factory=dict)


def _rate_flag(detector: DetectorModel, singles_rate: float) -> bool:
    return singles_rate > detector.rate_cap


def _sample_ff_pixels(model: FarFieldModel, nf_idx: np.ndarray, seed: int, purpose: int = _FF_PIXEL) -> np.ndarray:
    """Draw one FF pixel (flat index) per entry of ``nf_idx`` from that pixel's own substream."""
    out = np.empty(nf_idx.size, dtype=np.int64)
    order = np.argsort(nf_idx, kind="stable")
    sorted_idx = nf_idx[order]
    pixels, starts, counts = np.unique(sorted_idx, return_index=True, return_counts=True)
    n_states = model.probs.shape[1] * model.probs.shape[2]
    for pix, start, count in zip(pixels, starts, counts):
        p = model.probs[pix].ravel()
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        u = _rng(seed, purpose, int(pix)).random(count)
        draws = np.minimum(np.searchsorted(cdf, u, side="right"), n_states - 1)
        out[order[start : start + count]] = draws
    return out


def simulate_pairs(
    target: ComplexTarget,
    params: BiphotonParams,
    geometry: OpticalGeometry,
    detector: DetectorModel,
    pair_rate: float,
    seed: int,
    envelope_mode: str = "constant",
    model: FarFieldModel | None = None,
) -> SimulationResult:
    """Generate SPDC pairs and return the detected NF and FF event streams.

    Pair births form a Poisson process of rate ``pair_rate`` (pairs/s). Each
    pair picks its NF pixel from the coincidence marginal and its FF pixel
    from that pixel's conditional distribution; each photon survives with its
    arm efficiency. A precomputed ``model`` may be passed to skip the
    forward-model evaluation.
    """
    if pair_rate < 0:
        raise InvalidParameterError("pair_rate must be >= 0")
    if model is None:
        model = compute_far_field(target, params, geometry, envelope_mode)
    rng = _rng(seed, _PAIRS)
    eta_s, eta_i = detector.efficiency_nf, detector.efficiency_ff
    # Poisson thinning: pairs with no surviving photon are counted, never materialised
    p_any = 1.0 - (1.0 - eta_s) * (1.0 - eta_i)
    mean_pairs = pair_rate * detector.acquisition_time
    n_lost = int(rng.poisson(mean_pairs * (1.0 - p_any)))
    n_seen = int(rng.poisson(mean_pairs * p_any))
    n_pairs = n_lost + n_seen
    births = np.sort(rng.uniform(0.0, detector.duration_ns, n_seen))
    marg = model.marginal().ravel()
    cdf = np.cumsum(marg)
    cdf /= cdf[-1]
    nf_idx = np.minimum(np.searchsorted(cdf, rng.random(n_seen), side="right"), marg.size - 1)
    # outcome given at least one detection: both / NF only / FF only
    probs = np.array([eta_s * eta_i, eta_s * (1.0 - eta_i), (1.0 - eta_s) * eta_i])
    outcome = rng.choice(3, size=n_seen, p=probs / probs.sum()) if n_seen else np.zeros(0, int)
    det_s = outcome != 2
    det_i = outcome != 1

    nff = geometry.ff_pixels
    nnf = geometry.nf_pixels
    ff_flat = _sample_ff_pixels(model, nf_idx[det_i], seed)

    jrng = _rng(seed, _JITTER)
    t_nf = detector.timestamps(births[det_s], jrng)
    t_ff = detector.timestamps(births[det_i], jrng)
    nf_y, nf_x = np.divmod(nf_idx[det_s], nnf)
    ff_y, ff_x = np.divmod(ff_flat, nff)
    nf = make_events(NF, nf_x, nf_y, t_nf)
    ff = make_events(FF, ff_x, ff_y, t_ff)
    nf = nf[np.argsort(nf["t"], kind="stable")]
    ff = ff[np.argsort(ff["t"], kind="stable")]

    singles = pair_rate * max(detector.efficiency_nf, detector.efficiency_ff)
    meta = {
        "generated_pairs": n_pairs,
        "detected_nf": int(det_s.sum()),
        "detected_ff": int(det_i.sum()),
        "detected_pairs": int((det_s & det_i).sum()),
        "rate_cap_exceeded": _rate_flag(detector, singles),
    }
    return SimulationResult(nf=nf, ff=ff, metadata=meta)


def _spot_positions(rng, centers, epoch, sigma, n_pixels):
    """Gaussian spot positions, redrawn until they land on the sensor."""
    n = epoch.size
    xy = np.empty((n, 2))
    todo = np.arange(n)
    while todo.size:
        draw = centers[epoch[todo]] + rng.normal(0.0, sigma, size=(todo.size, 2))
        pix = np.rint(draw)
        ok = np.all((pix >= 0) & (pix <= n_pixels - 1), axis=1)
        xy[todo[ok]] = pix[ok]
        todo = todo[~ok]
    return xy.astype(np.uint16)


def simulate_background(
    bg: BackgroundModel,
    detector: DetectorModel,
    geometry: OpticalGeometry,
    pair_rate: float,
    seed: int,
) -> SimulationResult:
    """Independent Poisson background in each arm at ``rate_fraction * pair_rate * efficiency``."""
    n_epochs = bg.epochs(detector.acquisition_time)
    nf_c, ff_c = bg.spot_centers(n_epochs, geometry, seed)
    streams = []
    arms = (
        (NF, _BG_NF, detector.efficiency_nf, nf_c, bg.spot_sigma_nf, geometry.nf_pixels),
        (FF, _BG_FF, detector.efficiency_ff, ff_c, bg.spot_sigma_ff, geometry.ff_pixels),
    )
    counts = {}
    for region, key, eff, centers, sigma, npix in arms:
        rng = _rng(seed, key)
        rate = bg.rate_fraction * pair_rate * eff
        n = int(rng.poisson(rate * detector.acquisition_time))
        t_true = np.sort(rng.uniform(0.0, detector.duration_ns, n))
        epoch = np.minimum((t_true / (bg.reposition_period * 1e9)).astype(np.int64), n_epochs - 1)
        xy = _spot_positions(rng, centers, epoch, sigma, npix)
        t = detector.timestamps(t_true, rng)
        ev = make_events(region, xy[:, 0], xy[:, 1], t)
        streams.append(ev[np.argsort(ev["t"], kind="stable")])
        counts[region] = n
    meta = {
        "background_nf": counts[NF],
        "background_ff": counts[FF],
        "epochs": n_epochs,
        "nf_centers": nf_c.tolist(),
        "ff_centers": ff_c.tolist(),
    }
    return SimulationResult(nf=streams[0], ff=streams[1], metadata=meta)


def merge_streams(*streams: np.ndarray) -> np.ndarray:
    """Stable merge of individually time-sorted streams."""
    for i, s in enumerate(streams):
        if s.dtype != EVENT_DTYPE:
            raise InvalidParameterError("streams must use EVENT_DTYPE")
        check_sorted(s, f"stream {i}")
    if not streams:
        return np.zeros(0, dtype=EVENT_DTYPE)
    merged = np.concatenate(streams)
    # a stable sort of sorted runs is a stable k-way merge
    return merged[np.argsort(merged["t"], kind="stable")]


def simulate_classical_pgm(
    model: FarFieldModel,
    detector: DetectorModel,
    pair_rate: float,
    seed: int,
    bg: BackgroundModel | None = None,
) -> np.ndarray:
    """Emulate a classical phase-gradient microscope at the same resolution.

    Every detected photon is recorded with both its NF pixel and FF pixel, as a
    lenslet-based sensor would, so no coincidence processing is possible and
    background photons enter the centroids directly. Returns records in
    ``PAIR_DTYPE`` with ``dt_ns = 0``.
    """
    geometry = model.geometry
    rng = _rng(seed, _CLASSICAL)
    eff = detector.efficiency_nf
    n_sig = int(rng.poisson(pair_rate * eff * detector.acquisition_time))
    marg = model.marginal().ravel()
    cdf = np.cumsum(marg)
    cdf /= cdf[-1]
    nf_idx = np.minimum(np.searchsorted(cdf, rng.random(n_sig), side="right"), marg.size - 1)
    ff_flat = _sample_ff_pixels(model, nf_idx, seed, _CLASSICAL_FF)
    t_sig = np.sort(rng.uniform(0.0, detector.duration_ns, n_sig))
    nf_y, nf_x = np.divmod(nf_idx, geometry.nf_pixels)
    ff_y, ff_x = np.divmod(ff_flat, geometry.ff_pixels)
    parts = [(nf_x, nf_y, ff_x, ff_y, t_sig)]
    if bg is not None and bg.rate_fraction > 0:
        n_epochs = bg.epochs(detector.acquisition_time)
        nf_c, ff_c = bg.spot_centers(n_epochs, geometry, seed)
        n_bg = int(rng.poisson(bg.rate_fraction * pair_rate * eff * detector.acquisition_time))
        t_bg = np.sort(rng.uniform(0.0, detector.duration_ns, n_bg))
        epoch = np.minimum((t_bg / (bg.reposition_period * 1e9)).astype(np.int64), n_epochs - 1)
        nxy = _spot_positions(rng, nf_c, epoch, bg.spot_sigma_nf, geometry.nf_pixels)
        fxy = _spot_positions(rng, ff_c, epoch, bg.spot_sigma_ff, geometry.ff_pixels)
        parts.append((nxy[:, 0], nxy[:, 1], fxy[:, 0], fxy[:, 1], t_bg))
    n_total = sum(len(p[0]) for p in parts)
    out = np.zeros(n_total, dtype=PAIR_DTYPE)
    pos = 0
    for nx, ny, fx, fy, t in parts:
        sl = slice(pos, pos + len(nx))
        out["nf_x"][sl], out["nf_y"][sl] = nx, ny
        out["ff_x"][sl], out["ff_y"][sl] = fx, fy
        ts = np.floor(t / detector.time_quantum) * detector.time_quantum
        out["nf_t"][sl] = ts.astype(np.uint64)
        out["ff_t"][sl] = ts.astype(np.uint64)
        pos += len(nx)
    return out[np.argsort(out["nf_t"], kind="stable")]
