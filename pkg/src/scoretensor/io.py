"""Readers and writers for the COO text and dense binary tensor formats.

COO text::

    # dims I1 I2 ... ID [time]
    i1 ... iD value [t]

Dense binary: ``STDT`` magic, u32 order, u64 dims, f64 values (row-major,
little-endian throughout).
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor import DenseTensor, SparseTensor

MAGIC = b"STDT"


def _parse_header(line):
    tokens = line.lstrip("#").split()
    if not tokens or tokens[0] != "dims":
        raise FormatError(f"expected '# dims ...' header, got {line.strip()!r}")
    tokens = tokens[1:]
    has_time = bool(tokens) and tokens[-1] == "time"
    if has_time:
        tokens = tokens[:-1]
    try:
        dims = tuple(int(t) for t in tokens)
    except ValueError as exc:
        raise FormatError(f"bad dims in header {line.strip()!r}") from exc
    if not dims:
        raise FormatError("header declares no dims")
    return dims, has_time


def read_coo(path, replicates=False):
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        dims, has_time = _parse_header(header)
        D = len(dims)
        width = D + 1 + int(has_time)
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} fields, got {len(tokens)}")
            rows.append(tokens)
    if rows:
        arr = np.array(rows)
        try:
            indices = arr[:, :D].astype(np.int64)
            values = arr[:, D].astype(np.float64)
            ts = arr[:, D + 1].astype(np.float64) if has_time else None
        except ValueError as exc:
            raise FormatError(f"{path}: malformed numeric field") from exc
    else:
        indices = np.zeros((0, D), dtype=np.int64)
        values = np.zeros(0)
        ts = np.zeros(0) if has_time else None
    return SparseTensor(dims, indices, values, ts, replicates=replicates)


def write_coo(path, tensor):
    path = Path(path)
    header = "# dims " + " ".join(str(n) for n in tensor.dims)
    if tensor.has_time:
        header += " time"
    lines = [header]
    ts = tensor.timestamps
    for k, (idx, v) in enumerate(zip(tensor.indices, tensor.values)):
        fields = [str(int(c)) for c in idx] + [repr(float(v))]
        if ts is not None:
            fields.append(repr(float(ts[k])))
        lines.append(" ".join(fields))
    path.write_text("\n".join(lines) + "\n")


def write_dense(path, tensor):
    values = np.ascontiguousarray(tensor.values, dtype="<f8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensor.dims)))
        fh.write(struct.pack(f"<{len(tensor.dims)}Q", *tensor.dims))
        fh.write(values.tobytes(order="C"))


def read_dense(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: missing STDT magic")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (D,) = struct.unpack_from("<I", data, 4)
    off = 8 + 8 * D
    if len(data) < off:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{D}Q", data, 8)
    n = int(np.prod(dims)) if D else 0
    if len(data) != off + 8 * n:
        raise FormatError(f"{path}: expected {n} values, file holds {(len(data) - off) / 8:g}")
    values = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    return DenseTensor(dims, values)


def read_tensor(path, replicates=False):
    """Dispatch on content: dense binary if the magic matches, else COO text."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return read_dense(path)
    return read_coo(path, replicates=replicates)


def write_index_list(path, indices):
    """Split manifest: one whitespace-separated index (or row number) per line."""
    indices = np.asarray(indices)
    if indices.ndim == 1:
        indices = indices[:, None]
    Path(path).write_text("".join(" ".join(str(int(c)) for c in row) + "\n" for row in indices))


def read_index_list(path):
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, 1), dtype=np.int64)
    return np.array(rows, dtype=np.int64)
