"""On-disk formats.

Tensors use the RDLC container: ``b"RDLC"``, u16 version, u8 dtype code,
u8 rank, rank x u64 dims, then the little-endian row-major payload.  Grid
parameters and timestamps go in a JSON sidecar next to the tensor file.
Model checkpoints use the RDCK container: ``b"RDCK"``, u16 version, u32
header length, a JSON header (config + tensor table), then raw payloads.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .core import AdcFrame, OccupancyGrid, PointCloud, PolarGrid, RadarCube

TENSOR_MAGIC = b"RDLC"
CHECKPOINT_MAGIC = b"RDCK"
VERSION = 1

_DTYPES = ["|u1", "|i1", "<u2", "<i2", "<u4", "<i4", "<u8", "<i8",
           "<f4", "<f8", "<c8", "<c16", "|b1"]
_CODE = {np.dtype(d): i + 1 for i, d in enumerate(_DTYPES)}


class FormatError(ValueError):
    """Unknown magic, unsupported version or malformed payload."""


def _check_header(buf: bytes, magic: bytes, path) -> None:
    if len(buf) < 6 or buf[:4] != magic:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack("<H", buf[4:6])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    try:
        code = _CODE[np.dtype(le)]
    except KeyError:
        raise FormatError(f"dtype {arr.dtype} not supported") from None
    head = TENSOR_MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=le).tobytes()


def decode_tensor(buf: bytes, path="<bytes>") -> np.ndarray:
    _check_header(buf, TENSOR_MAGIC, path)
    code, rank = struct.unpack("<BB", buf[6:8])
    if not 1 <= code <= len(_DTYPES):
        raise FormatError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", buf[8:8 + 8 * rank])
    dtype = np.dtype(_DTYPES[code - 1])
    start = 8 + 8 * rank
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - start != need:
        raise FormatError(f"{path}: payload is {len(buf) - start} bytes, expected {need}")
    return np.frombuffer(buf, dtype=dtype, offset=start).reshape(dims).copy()


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def write_tensor(path, arr: np.ndarray, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_tensor(arr))
    if meta is not None:
        _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    return decode_tensor(path.read_bytes(), path)


def read_meta(path) -> dict:
    side = _sidecar(Path(path))
    if not side.exists():
        raise FormatError(f"{path}: missing JSON sidecar")
    return json.loads(side.read_text())


# -- typed wrappers -------------------------------------------------------
def save_adc(path, frame: AdcFrame) -> Path:
    return write_tensor(path, frame.data, {"kind": "adc", "timestamp": frame.timestamp,
                                           "tx_of_chirp": np.asarray(frame.tx_of_chirp).tolist()})


def load_adc(path) -> AdcFrame:
    meta = _expect(path, "adc")
    return AdcFrame(read_tensor(path), meta["timestamp"], np.asarray(meta["tx_of_chirp"]))


def save_cube(path, cube: RadarCube) -> Path:
    """Power tensor at ``path``; elevation argmax at ``path`` + ``.elev``."""
    path = Path(path)
    elev = path.with_name(path.name + ".elev")
    write_tensor(elev, cube.elev_argmax)
    return write_tensor(path, cube.power, {"kind": "cube", "timestamp": cube.timestamp,
                                           "grid": cube.grid.to_dict(), "elev_file": elev.name})


def load_cube(path) -> RadarCube:
    path = Path(path)
    meta = _expect(path, "cube")
    elev = read_tensor(path.with_name(meta["elev_file"]))
    return RadarCube(read_tensor(path), elev, PolarGrid.from_dict(meta["grid"]), meta["timestamp"])


def save_occupancy(path, occ: OccupancyGrid, timestamp: Optional[float] = None) -> Path:
    return write_tensor(path, occ.occ, {"kind": "occupancy", "grid": occ.grid.to_dict(),
                                        "timestamp": timestamp})


def load_occupancy(path) -> OccupancyGrid:
    meta = _expect(path, "occupancy")
    return OccupancyGrid(read_tensor(path), PolarGrid.from_dict(meta["grid"]))


def _expect(path, kind: str) -> dict:
    meta = read_meta(path)
    if meta.get("kind") != kind:
        raise FormatError(f"{path}: holds {meta.get('kind')!r}, expected {kind!r}")
    return meta


# -- point clouds ---------------------------------------------------------
_COLS = ("x", "y", "z", "doppler", "power_db")


def write_ply(path, pc: PointCloud) -> Path:
    p = np.asarray(pc.points, np.float64)
    cols = _COLS[:p.shape[1]]
    lines = ["ply", "format ascii 1.0", f"element vertex {len(p)}"]
    lines += [f"property double {c}" for c in cols]
    lines.append("end_header")
    lines += [" ".join(f"{v:.17g}" for v in row) for row in p]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_ply(path) -> PointCloud:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise FormatError(f"{path}: not a PLY file")
    n, ncol, i = 0, 0, 1
    while text[i].strip() != "end_header":
        parts = text[i].split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            ncol += 1
        elif parts[:2] == ["format", "ascii"] or not parts:
            pass
        i += 1
    rows = [list(map(float, ln.split())) for ln in text[i + 1:i + 1 + n]]
    return PointCloud(np.asarray(rows, np.float64).reshape(n, max(ncol, 3)))


def write_csv(path, pc: PointCloud) -> Path:
    p = np.asarray(pc.points, np.float64)
    lines = [",".join(_COLS[:p.shape[1]])]
    lines += [",".join(f"{v:.17g}" for v in row) for row in p]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> PointCloud:
    lines = Path(path).read_text().splitlines()
    ncol = len(lines[0].split(","))
    rows = [list(map(float, ln.split(","))) for ln in lines[1:] if ln]
    return PointCloud(np.asarray(rows, np.float64).reshape(len(rows), ncol))


def write_bev_pgm(path, occ: OccupancyGrid) -> Path:
    """Range x azimuth image of occupancy max-projected over elevation.

    Far range is the top row; occupied cells are white.
    """
    img = occ.occ.max(axis=2)[::-1].astype(np.uint8) * 255
    h, w = img.shape
    path = Path(path)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())
    return path


# -- checkpoints ----------------------------------------------------------
def save_checkpoint(path, config: dict, tensors: Dict[str, np.ndarray], extra: Optional[dict] = None) -> Path:
    table, blobs, offset = [], [], 0
    for name in sorted(tensors):
        a = np.asarray(tensors[name])
        raw = encode_tensor(a)
        table.append({"name": name, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": config, "tensors": table, "extra": extra or {}},
                        sort_keys=True).encode()
    path = Path(path)
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(blobs))
    return path


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    _check_header(buf, CHECKPOINT_MAGIC, path)
    (hlen,) = struct.unpack("<I", buf[6:10])
    header = json.loads(buf[10:10 + hlen])
    base = 10 + hlen
    tensors = {}
    for t in header["tensors"]:
        s = base + t["offset"]
        tensors[t["name"]] = decode_tensor(buf[s:s + t["nbytes"]], f"{path}:{t['name']}")
    return header["config"], tensors, header.get("extra", {})


# -- manifest -------------------------------------------------------------
MANIFEST_VERSION = 1


def write_manifest(path, frames: list, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"version": MANIFEST_VERSION, "meta": meta or {}, "frames": frames},
                               indent=2, sort_keys=True))
    return path


def read_manifest(path) -> dict:
    m = json.loads(Path(path).read_text())
    if m.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {m.get('version')}")
    return m
