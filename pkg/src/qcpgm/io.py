"""File formats: event streams, pair lists, grids, graymaps, reports and run manifests.

Every writer produces byte-identical output for identical input, so a rerun
with the same configuration and seed can be checked with a checksum.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import struct
import sys
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .events import EVENT_DTYPE, FF, NF, PAIR_DTYPE

EVENT_MAGIC = b"QCPG"
EVENT_VERSION = 1
# magic, version (u16), record count (u64), reserved (u16)
_HEADER = struct.Struct("<4sHQH")
REGION_NAMES = {NF: "NF", FF: "FF"}
REGION_CODES = {v: k for k, v in REGION_NAMES.items()}

PAIR_COLUMNS = ("nf_x", "nf_y", "nf_t", "ff_x", "ff_y", "ff_t", "dt_ns", "tag")


def _fmt(v) -> str:
    """Shortest round-trip text for a number; ``nan`` for missing values."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _is_csv(path) -> bool:
    return Path(path).suffix.lower() == ".csv"


# --- event streams ---------------------------------------------------------


def write_events(path, stream: np.ndarray) -> None:
    """Write an event stream; ``.csv`` gives text, anything else the binary layout."""
    stream = np.asarray(stream)
    if stream.dtype != EVENT_DTYPE:
        raise FileFormatError("event stream must use EVENT_DTYPE")
    path = Path(path)
    if _is_csv(path):
        lines = ["region,x,y,t_ns"]
        for r, x, y, t in zip(stream["region"], stream["x"], stream["y"], stream["t"]):
            lines.append(f"{REGION_NAMES[int(r)]},{int(x)},{int(y)},{int(t)}")
        path.write_text("\n".join(lines) + "\n")
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EVENT_MAGIC, EVENT_VERSION, stream.size, 0))
        fh.write(stream.tobytes())


def read_events(path) -> np.ndarray:
    path = Path(path)
    if _is_csv(path):
        return _read_events_csv(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, count, _ = _HEADER.unpack_from(data)
    if magic != EVENT_MAGIC:
        raise FileFormatError(f"{path}: not an event file")
    if version != EVENT_VERSION:
        raise FileFormatError(f"{path}: unsupported event file version {version}")
    body = data[_HEADER.size :]
    if len(body) != count * EVENT_DTYPE.itemsize:
        raise FileFormatError(f"{path}: expected {count} records, found {len(body)} bytes")
    return np.frombuffer(body, dtype=EVENT_DTYPE).copy()


def _read_events_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["region", "x", "y", "t_ns"]:
            raise FileFormatError(f"{path}: unexpected event CSV header {header}")
        rows = list(reader)
    out = np.zeros(len(rows), dtype=EVENT_DTYPE)
    try:
        for i, (r, x, y, t) in enumerate(rows):
            out[i] = (REGION_CODES[r], int(x), int(y), int(t))
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: bad event row {i + 2}: {exc}") from exc
    return out


# --- coincidence pairs -------------------------------------------------------


def write_pairs(path, pairs: np.ndarray, tag: str) -> None:
    pairs = np.asarray(pairs)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PAIR_COLUMNS)
    cols = [pairs[name].tolist() for name in PAIR_DTYPE.names]
    for row in zip(*cols):
        w.writerow([*row, tag])
    Path(path).write_text(buf.getvalue())


def read_pairs(path):
    """Return ``(records, tag)`` from a pair CSV."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PAIR_COLUMNS:
            raise FileFormatError(f"{path}: unexpected pair CSV header {header}")
        rows = list(reader)
    out = np.zeros(len(rows), dtype=PAIR_DTYPE)
    tags = set()
    try:
        for i, row in enumerate(rows):
            out[i] = tuple(int(v) for v in row[:7])
            tags.add(row[7])
    except (ValueError, IndexError) as exc:
        raise FileFormatError(f"{path}: bad pair row: {exc}") from exc
    if len(tags) > 1:
        raise FileFormatError(f"{path}: mixed pair tags {sorted(tags)}")
    return out, (tags.pop() if tags else "")


def write_histogram(path, hist) -> None:
    lines = ["dt_ns,count"]
    lines += [f"{_fmt(float(c))},{int(n)}" for c, n in zip(hist.centers, hist.counts)]
    Path(path).write_text("\n".join(lines) + "\n")


# --- grids -------------------------------------------------------------------


def write_grid(path, array, pitch: float) -> None:
    """Grid as CSV with a ``# pitch_m=`` comment line; NaN written as ``nan``."""
    a = np.asarray(array, dtype=float)
    if a.ndim != 2:
        raise FileFormatError("grids must be 2-D")
    lines = [f"# pitch_m={_fmt(float(pitch))}"]
    lines += [",".join(_fmt(v) for v in row) for row in a]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path):
    """Return ``(array, pitch)`` from a grid CSV."""
    path = Path(path)
    text = path.read_text().splitlines()
    if not text or not text[0].startswith("# pitch_m="):
        raise FileFormatError(f"{path}: missing pitch header")
    try:
        pitch = float(text[0].split("=", 1)[1])
        rows = [[float(v) for v in line.split(",")] for line in text[1:] if line.strip()]
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
    if arr.ndim != 2:
        raise FileFormatError(f"{path}: ragged grid")
    return arr, pitch


def write_pgm(path, array) -> None:
    """16-bit binary graymap; NaN maps to 0 and finite values to 1..65535.

    A JSON sidecar (``<path>.json``) records the value range.
    """
    a = np.asarray(array, dtype=float)
    finite = np.isfinite(a)
    lo = float(a[finite].min()) if finite.any() else 0.0
    hi = float(a[finite].max()) if finite.any() else 0.0
    scale = (hi - lo) if hi > lo else 1.0
    img = np.zeros(a.shape, dtype=">u2")
    img[finite] = np.rint(1 + (a[finite] - lo) / scale * 65534).astype(np.uint16)
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + img.tobytes())
    side = {"min": lo, "max": hi, "nan_value": 0, "levels": [1, 65535]}
    Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True, indent=2) + "\n")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary graymap")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.uint16)


# --- reports and manifests ---------------------------------------------------


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_report(stem, values: dict) -> tuple[Path, Path]:
    """Flat key/value report as ``<stem>.txt`` (``key = value``) and ``<stem>.json``."""
    stem = Path(stem)
    flat = _plain(values)
    txt = stem.with_suffix(".txt")
    js = stem.with_suffix(".json")
    txt.write_text("".join(f"{k} = {flat[k]}\n" for k in sorted(flat)))
    js.write_text(dumps_json(flat))
    return txt, js


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def package_versions() -> dict:
    from importlib import metadata

    out = {"python": sys.version.split()[0]}
    for name in ("artifact", "numpy", "scipy", "numba", "pyyaml"):
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = None
    return out


def write_manifest(out_dir, command: str, seed, inputs, outputs, config=None) -> Path:
    """Record checksums of inputs and outputs, the seed and package versions.

    Paths are stored relative to ``out_dir`` when possible; no timestamps are
    written so identical runs produce identical manifests.
    """
    out_dir = Path(out_dir)

    def rel(p):
        p = Path(p)
        try:
            return str(p.resolve().relative_to(out_dir.resolve()))
        except ValueError:
            return str(p)

    doc = {
        "command": command,
        "seed": seed,
        "inputs": {rel(p): sha256_file(p) for p in sorted(map(str, inputs))},
        "outputs": {rel(p): sha256_file(p) for p in sorted(map(str, outputs))},
        "versions": package_versions(),
    }
    if config is not None:
        doc["config"] = config
    path = out_dir / f"manifest_{command}.json"
    path.write_text(dumps_json(doc))
    return path
