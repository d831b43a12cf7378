"""Record layouts for photon events and coincidence pairs."""

import numpy as np

from .errors import UnsortedStreamError

NF = 0
FF = 1

# packed little-endian, 13 bytes per record, identical to the on-disk layout
EVENT_DTYPE = np.dtype([("region", "u1"), ("x", "<u2"), ("y", "<u2"), ("t", "<u8")])

PAIR_DTYPE = np.dtype(
    [
        ("nf_x", "<u2"),
        ("nf_y", "<u2"),
        ("nf_t", "<u8"),
        ("ff_x", "<u2"),
        ("ff_y", "<u2"),
        ("ff_t", "<u8"),
        ("dt_ns", "<i8"),
    ]
)


def empty_events() -> np.ndarray:
    return np.zeros(0, dtype=EVENT_DTYPE)


def make_events(region, x, y, t) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty(x.shape[0], dtype=EVENT_DTYPE)
    out["region"] = region
    out["x"] = x
    out["y"] = y
    out["t"] = t
    return out


def check_sorted(stream: np.ndarray, name: str = "stream") -> None:
    t = stream["t"]
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise UnsortedStreamError(f"{name} is not sorted by time")


def sort_events(stream: np.ndarray) -> np.ndarray:
    return stream[np.argsort(stream["t"], kind="stable")]
