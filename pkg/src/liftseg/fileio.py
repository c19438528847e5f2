"""File formats for fixtures, predictions, and reports.

Tensors use a tiny self-describing binary layout: 4 magic bytes "HTNS",
one version byte (1), one dtype code byte (1=float32, 2=uint8, 3=int32),
one rank byte, ``rank`` little-endian uint64 dims, then the row-major
little-endian payload.  Point clouds travel as binary little-endian PLY
with float32 x/y/z and optional uint8 red/green/blue.  Camera views are
JSON documents that reference their depth tensor by relative path.

Every writer goes through write-temp-then-rename, so an interrupted run
never leaves a truncated file behind.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import FixtureIOError

MAGIC = b"HTNS"
VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<i4")}


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write ``data`` to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.parent / f".{path.name}.{os.getpid()}.tmp"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise FixtureIOError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


def write_json(path: str | Path, obj) -> None:
    payload = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, payload.encode("utf-8"))


def read_json(path: str | Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise FixtureIOError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FixtureIOError(f"malformed JSON in {path}: {exc}") from exc


def _dtype_code(arr: np.ndarray) -> int:
    kind = arr.dtype.kind
    if kind == "f":
        return 1
    if kind == "b" or arr.dtype == np.uint8:
        return 2
    if kind in "iu":
        return 3
    raise FixtureIOError(f"unsupported tensor dtype: {arr.dtype}")


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    """Serialize an array; floats are stored as float32, ints as int32."""
    arr = np.asarray(arr)
    code = _dtype_code(arr)
    payload = np.ascontiguousarray(arr.astype(_DTYPE_CODES[code], copy=False))
    header = MAGIC + bytes([VERSION, code, arr.ndim])
    dims = np.asarray(arr.shape, dtype="<u8").tobytes()
    atomic_write_bytes(path, header + dims + payload.tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise FixtureIOError(f"missing tensor file: {path}") from exc
    if len(raw) < 7 or raw[:4] != MAGIC:
        raise FixtureIOError(f"bad magic in tensor file: {path}")
    if raw[4] != VERSION:
        raise FixtureIOError(f"unsupported tensor version {raw[4]} in {path}")
    code, rank = raw[5], raw[6]
    if code not in _DTYPE_CODES:
        raise FixtureIOError(f"unknown dtype code {code} in {path}")
    head = 7 + 8 * rank
    if len(raw) < head:
        raise FixtureIOError(f"truncated tensor header: {path}")
    shape = tuple(int(d) for d in np.frombuffer(raw[7:head], dtype="<u8"))
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if len(raw) - head != count * dtype.itemsize:
        raise FixtureIOError(f"tensor payload size mismatch: {path}")
    return np.frombuffer(raw[head:], dtype=dtype).reshape(shape).copy()


# -- PLY point clouds ----------------------------------------------------

_PLY_XYZ = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
_PLY_XYZRGB = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
     ("red", "u1"), ("green", "u1"), ("blue", "u1")]
)


def save_ply(path: str | Path, positions: np.ndarray,
             colors: np.ndarray | None = None) -> None:
    """Write a binary little-endian PLY; ``colors`` are floats in [0, 1]."""
    positions = np.asarray(positions, dtype=np.float64)
    n = positions.shape[0]
    lines = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
        rec = np.empty(n, dtype=_PLY_XYZRGB)
        rgb = np.clip(np.round(np.asarray(colors) * 255.0), 0, 255).astype(np.uint8)
        rec["red"], rec["green"], rec["blue"] = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    else:
        rec = np.empty(n, dtype=_PLY_XYZ)
    rec["x"], rec["y"], rec["z"] = (positions[:, i].astype("<f4") for i in range(3))
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    atomic_write_bytes(path, header + rec.tobytes())


def load_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read positions (float64) and optional colors (float64 in [0, 1])."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise FixtureIOError(f"missing PLY file: {path}") from exc
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise FixtureIOError(f"not a PLY file: {path}")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FixtureIOError(f"unsupported PLY format in {path}")
    n = None
    props = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("element "):
            raise FixtureIOError(f"unsupported PLY element in {path}: {line}")
        elif line.startswith("property"):
            props.append(tuple(line.split()[1:]))
    if n is None:
        raise FixtureIOError(f"PLY missing vertex element: {path}")
    if props == [("float", "x"), ("float", "y"), ("float", "z")]:
        dtype = _PLY_XYZ
    elif props == [("float", "x"), ("float", "y"), ("float", "z"),
                   ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")]:
        dtype = _PLY_XYZRGB
    else:
        raise FixtureIOError(f"unsupported PLY property layout: {path}")
    body = raw[end + len(b"end_header\n"):]
    if len(body) != n * dtype.itemsize:
        raise FixtureIOError(f"PLY payload size mismatch: {path}")
    rec = np.frombuffer(body, dtype=dtype)
    positions = np.stack(
        [rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    colors = None
    if dtype is _PLY_XYZRGB:
        colors = np.stack(
            [rec["red"], rec["green"], rec["blue"]], axis=1).astype(np.float64) / 255.0
    return positions, colors


# -- camera views ---------------------------------------------------------

def save_view_json(path: str | Path, intrinsics: np.ndarray, extrinsics: np.ndarray,
                   width: int, height: int, depth_filename: str) -> None:
    write_json(path, {
        "intrinsics": np.asarray(intrinsics, dtype=float).tolist(),
        "extrinsics": np.asarray(extrinsics, dtype=float).tolist(),
        "width": int(width),
        "height": int(height),
        "depth": depth_filename,
    })


def load_view(path: str | Path):
    """Load a camera view JSON plus its depth tensor (path relative to the JSON)."""
    from .geometry import CameraView

    doc = read_json(path)
    try:
        depth_path = Path(path).parent / doc["depth"]
        depth = load_tensor(depth_path)
        return CameraView(
            intrinsics=np.asarray(doc["intrinsics"], dtype=np.float64),
            extrinsics=np.asarray(doc["extrinsics"], dtype=np.float64),
            depth=depth.astype(np.float64),
            width=int(doc["width"]),
            height=int(doc["height"]),
        )
    except KeyError as exc:
        raise FixtureIOError(f"view JSON {path} missing field {exc}") from exc


# -- superpoint partitions ------------------------------------------------

def save_partition(json_path: str | Path, assignment: np.ndarray,
                   n_superpoints: int) -> None:
    json_path = Path(json_path)
    tensor_name = json_path.stem + ".htns"
    save_tensor(json_path.parent / tensor_name, np.asarray(assignment, dtype=np.int32))
    write_json(json_path, {"n_superpoints": int(n_superpoints), "assignments": tensor_name})


def load_partition(json_path: str | Path):
    from .superpoint import SuperpointPartition

    doc = read_json(json_path)
    try:
        assignment = load_tensor(Path(json_path).parent / doc["assignments"])
        return SuperpointPartition(
            assignment=assignment.astype(np.int64),
            n_superpoints=int(doc["n_superpoints"]),
        )
    except KeyError as exc:
        raise FixtureIOError(f"partition JSON {json_path} missing field {exc}") from exc
