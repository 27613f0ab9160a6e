"""Binary array containers.

Single-array layout (``.mpro``)::

    magic   4 bytes  b"MPRO"
    version uint32 LE (currently 1)
    dtype   uint8    0=float32, 1=float64, 2=uint8, 3=int32
    ndim    uint8    0..8
    pad     2 bytes  zeros
    dims    ndim x uint64 LE
    data    raw little-endian row-major

Bundle layout (same extension, magic b"MPRB") stores named arrays::

    magic b"MPRB" | version uint32 LE | count uint32 LE
    per entry: name_len uint16 LE | name utf-8 | payload_len uint64 LE | payload (MPRO bytes)

Round trips are bit-exact. Readers validate the header before touching the
payload and never allocate from untrusted dims: the declared size is checked
against the actual byte count first.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError, ValidationError

MAGIC = b"MPRO"
BUNDLE_MAGIC = b"MPRB"
FORMAT_VERSION = 1
MAX_NDIM = 8

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int32"): 3,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def array_to_bytes(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    dtype = array.dtype.newbyteorder("=")
    if np.dtype(dtype) not in _DTYPE_CODES:
        raise ValidationError(
            f"unsupported dtype {array.dtype}; use float32, float64, uint8 or int32")
    if array.ndim > MAX_NDIM:
        raise ValidationError(f"arrays may have at most {MAX_NDIM} dims, got {array.ndim}")
    code = _DTYPE_CODES[np.dtype(dtype)]
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<BB2x", code, array.ndim))
    for dim in array.shape:
        out.write(struct.pack("<Q", dim))
    out.write(np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes())
    return out.getvalue()


def array_from_bytes(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 12:
        raise FormatError(f"{source}: short header, need 12 bytes, got {len(data)}", offset=0)
    if data[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {data[:4]!r}", offset=0)
    version = struct.unpack_from("<I", data, 4)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}", offset=4)
    code, ndim = struct.unpack_from("<BB", data, 8)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{source}: unknown dtype code {code}", offset=8)
    if ndim > MAX_NDIM:
        raise FormatError(f"{source}: ndim {ndim} exceeds limit {MAX_NDIM}", offset=9)
    offset = 12
    if len(data) < offset + 8 * ndim:
        raise FormatError(f"{source}: truncated dims", offset=len(data))
    dims = struct.unpack_from(f"<{ndim}Q", data, offset) if ndim else ()
    offset += 8 * ndim
    dtype = _CODE_DTYPES[code]
    count = 1
    for dim in dims:
        count *= int(dim)  # python ints: no overflow before the size check
    expected = count * dtype.itemsize
    actual = len(data) - offset
    if actual != expected:
        raise FormatError(
            f"{source}: payload size mismatch, dims {tuple(dims)} need {expected} bytes, "
            f"found {actual}", offset=offset)
    arr = np.frombuffer(data, dtype=dtype.newbyteorder("<"), count=count, offset=offset)
    return arr.reshape(dims).astype(dtype, copy=True)


def write_array(path, array: np.ndarray) -> None:
    Path(path).write_bytes(array_to_bytes(array))


def read_array(path) -> np.ndarray:
    path = Path(path)
    return array_from_bytes(path.read_bytes(), source=str(path))


def read_header(path) -> tuple[np.dtype, tuple[int, ...]]:
    """Parse and validate only the header; returns (dtype, dims)."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(12 + 8 * MAX_NDIM)
    if len(head) < 12:
        raise FormatError(f"{path}: short header, need 12 bytes, got {len(head)}", offset=0)
    if head[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {head[:4]!r}", offset=0)
    version = struct.unpack_from("<I", head, 4)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    code, ndim = struct.unpack_from("<BB", head, 8)
    if code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}", offset=8)
    if ndim > MAX_NDIM:
        raise FormatError(f"{path}: ndim {ndim} exceeds limit {MAX_NDIM}", offset=9)
    if len(head) < 12 + 8 * ndim:
        raise FormatError(f"{path}: truncated dims", offset=len(head))
    dims = struct.unpack_from(f"<{ndim}Q", head, 12) if ndim else ()
    dtype = _CODE_DTYPES[code]
    count = 1
    for dim in dims:
        count *= int(dim)
    expected = 12 + 8 * ndim + count * dtype.itemsize
    if size != expected:
        raise FormatError(
            f"{path}: payload size mismatch, dims {tuple(dims)} need {expected} bytes total, "
            f"file has {size}", offset=12 + 8 * ndim)
    return dtype, tuple(int(d) for d in dims)


def write_bundle(path, arrays: dict[str, np.ndarray]) -> None:
    out = io.BytesIO()
    out.write(BUNDLE_MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"bundle entry name too long: {name!r}")
        payload = array_to_bytes(arr)
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<Q", len(payload)))
        out.write(payload)
    Path(path).write_bytes(out.getvalue())


def read_bundle(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: short bundle header", offset=0)
    if data[:4] != BUNDLE_MAGIC:
        raise FormatError(f"{path}: bad bundle magic {data[:4]!r}", offset=0)
    version = struct.unpack_from("<I", data, 4)[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported bundle version {version}", offset=4)
    count = struct.unpack_from("<I", data, 8)[0]
    offset = 12
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(data) < offset + 2:
            raise FormatError(f"{path}: truncated bundle entry", offset=offset)
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if len(data) < offset + name_len + 8:
            raise FormatError(f"{path}: truncated bundle entry", offset=offset)
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (payload_len,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        if len(data) < offset + payload_len:
            raise FormatError(
                f"{path}: entry {name!r} declares {payload_len} bytes, "
                f"only {len(data) - offset} remain", offset=offset)
        arrays[name] = array_from_bytes(data[offset:offset + payload_len],
                                        source=f"{path}:{name}")
        offset += payload_len
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes", offset=offset)
    return arrays


BODY_MODEL_KEYS = ("template", "jreg", "weights", "parent", "shapedirs")


def save_body_model(path, model) -> None:
    """Persist a body definition as a bundle with the fixed five keys."""
    write_bundle(path, {
        "template": model.template_vertices.astype(np.float64),
        "jreg": model.joint_regressor.astype(np.float64),
        "weights": model.skinning_weights.astype(np.float64),
        "parent": model.parent.astype(np.int32),
        "shapedirs": model.shape_basis.astype(np.float64),
    })


def load_body_model(path):
    from ..body_model import BodyModelDef

    arrays = read_bundle(path)
    missing = [k for k in BODY_MODEL_KEYS if k not in arrays]
    if missing:
        raise FormatError(f"{path}: body model bundle missing keys {missing}")
    return BodyModelDef(
        template_vertices=arrays["template"],
        joint_regressor=arrays["jreg"],
        skinning_weights=arrays["weights"],
        parent=arrays["parent"],
        shape_basis=arrays["shapedirs"],
    )
