"""Time-tag processing: arrival-time-difference histograms and windowed pairing.

Arrival-time differences are ``dt = t_FF - t_NF`` in ns. Pairing uses
all-pairs-within-window semantics: one event may belong to several pairs, so
accidental statistics are not suppressed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidParameterError
from .events import PAIR_DTYPE, check_sorted

TRUE_TAG = "true"
BACKGROUND_TAG = "background"


@dataclass(frozen=True)
class CoincidenceWindow:
    """Accepted ``dt`` interval ``[offset - width/2, offset + width/2]`` (ns, closed)."""

    offset: float = 0.0
    width: float = 20.0

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidParameterError("coincidence window width must be positive")

    @property
    def low(self) -> float:
        return self.offset - self.width / 2.0

    @property
    def high(self) -> float:
        return self.offset + self.width / 2.0

    def shifted(self, shift: float) -> "CoincidenceWindow":
        return CoincidenceWindow(self.offset + shift, self.width)


@dataclass(frozen=True, eq=False)
class DtHistogram:
    """Counts of ``dt`` in bins of ``bin_width`` centred on multiples of the bin width."""

    bin_width: float
    half_range: float
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        m = (self.counts.size - 1) // 2
        return (np.arange(self.counts.size) - m) * self.bin_width

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.centers - self.bin_width / 2.0, self.centers[-1] + self.bin_width / 2.0)


@dataclass(frozen=True, eq=False)
class PairSet:
    """Coincidence pairs (``PAIR_DTYPE`` records) with their provenance tag."""

    pairs: np.ndarray
    tag: str = TRUE_TAG
    window: CoincidenceWindow | None = None

    def __len__(self) -> int:
        return self.pairs.size


@numba.njit(cache=True)
def _window_bounds(nf_t, ff_t, low, high):
    n = nf_t.size
    m = ff_t.size
    lo = np.empty(n, np.int64)
    hi = np.empty(n, np.int64)
    a = 0
    b = 0
    for i in range(n):
        t = nf_t[i]
        while a < m and ff_t[a] - t < low:
            a += 1
        if b < a:
            b = a
        while b < m and ff_t[b] - t <= high:
            b += 1
        lo[i] = a
        hi[i] = b
    return lo, hi


@numba.njit(cache=True)
def _dt_counts(nf_t, ff_t, half_range, bin_width, nbins):
    counts = np.zeros(nbins, np.int64)
    m = ff_t.size
    a = 0
    for i in range(nf_t.size):
        t = nf_t[i]
        while a < m and ff_t[a] - t < -half_range:
            a += 1
        j = a
        while j < m:
            dt = ff_t[j] - t
            if dt >= half_range:
                break
            k = int(math.floor((dt + half_range) / bin_width))
            if 0 <= k < nbins:
                counts[k] += 1
            j += 1
    return counts


def _times(stream, name):
    check_sorted(stream, name)
    return stream["t"].astype(np.int64)


def dt_histogram(nf_stream, ff_stream, bin_width: float = 8.0, range_ns: float = 200.0) -> DtHistogram:
    """Histogram every (NF, FF) arrival-time difference within ``+/-range_ns``.

    Bins are centred on integer multiples of ``bin_width``; the covered half
    range is rounded to ``(M + 1/2) * bin_width`` with ``M = floor(range_ns /
    bin_width)``. Bins are half-open, ``[lo, hi)``.
    """
    if not (bin_width > 0 and range_ns > 0):
        raise InvalidParameterError("bin_width and range must be positive")
    m = int(math.floor(range_ns / bin_width))
    nbins = 2 * m + 1
    half = (m + 0.5) * bin_width
    counts = _dt_counts(_times(nf_stream, "NF stream"), _times(ff_stream, "FF stream"), half, float(bin_width), nbins)
    return DtHistogram(bin_width=float(bin_width), half_range=half, counts=counts)


def _pairs_in_window(nf_stream, ff_stream, window: CoincidenceWindow) -> np.ndarray:
    nf_t = _times(nf_stream, "NF stream")
    ff_t = _times(ff_stream, "FF stream")
    lo, hi = _window_bounds(nf_t, ff_t, float(window.low), float(window.high))
    cnt = hi - lo
    total = int(cnt.sum())
    nf_i = np.repeat(np.arange(nf_t.size), cnt)
    first = np.repeat(np.cumsum(cnt) - cnt, cnt)
    ff_i = np.repeat(lo, cnt) + (np.arange(total) - first)
    out = np.empty(total, dtype=PAIR_DTYPE)
    out["nf_x"] = nf_stream["x"][nf_i]
    out["nf_y"] = nf_stream["y"][nf_i]
    out["nf_t"] = nf_stream["t"][nf_i]
    out["ff_x"] = ff_stream["x"][ff_i]
    out["ff_y"] = ff_stream["y"][ff_i]
    out["ff_t"] = ff_stream["t"][ff_i]
    out["dt_ns"] = ff_t[ff_i] - nf_t[nf_i]
    return out


def find_coincidences(nf_stream, ff_stream, window: CoincidenceWindow = CoincidenceWindow()) -> PairSet:
    """Every (NF, FF) pair whose ``dt`` lies in ``window``, ordered by NF then FF time."""
    return PairSet(_pairs_in_window(nf_stream, ff_stream, window), TRUE_TAG, window)


def accidental_coincidences(
    nf_stream,
    ff_stream,
    window: CoincidenceWindow = CoincidenceWindow(),
    shift: float = -50.0,
    peak_width: float | None = None,
) -> PairSet:
    """Pairs in the window displaced by ``shift`` ns; a sample of accidentals only.

    ``peak_width`` is the half-extent of the true coincidence peak (defaults to
    half the window width). A shift below three peak widths warns that the
    estimate may contain true pairs.
    """
    if peak_width is None:
        peak_width = window.width / 2.0
    if abs(shift) < 3.0 * peak_width:
        warnings.warn(
            f"window shift {shift} ns is under 3x the peak width ({peak_width} ns); "
            "the background estimate may include true pairs",
            stacklevel=2,
        )
    shifted = window.shifted(shift)
    return PairSet(_pairs_in_window(nf_stream, ff_stream, shifted), BACKGROUND_TAG, shifted)


def effective_gate(window: CoincidenceWindow, time_quantum: float | None = None) -> float:
    """Width of the window as seen by quantised timestamps.

    With both arms floor-quantised to ``time_quantum``, ``dt`` only takes
    multiples of the quantum, so the gate is the number of those multiples
    inside the window times the quantum.
    """
    if not time_quantum:
        return window.width
    lo = math.ceil(window.low / time_quantum - 1e-9)
    hi = math.floor(window.high / time_quantum + 1e-9)
    return max(0, hi - lo + 1) * time_quantum


def expected_accidentals(rate_nf: float, rate_ff: float, gate_ns: float, duration_s: float) -> float:
    """Mean accidental count ``r1 * r2 * gate * T`` for independent stationary streams."""
    return rate_nf * rate_ff * gate_ns * 1e-9 * duration_s
