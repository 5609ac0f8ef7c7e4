"""Reader and writer for the subset of NRRD used by the toolkit.

Supported: attached headers, ``dimension: 3``, scalar types uint8, int16,
float32 and float64, ``raw`` and ``gzip`` encodings, axis-aligned
geometry from ``space directions`` (positive diagonal) or ``spacings``.
Header fields the toolkit does not interpret are kept verbatim in
``VolumeMeta.extra_fields`` and written back out.
"""

from __future__ import annotations

import gzip
import re
import zlib
from pathlib import Path

import numpy as np

from .volume import Grid, LabelMap, Volume, VolumeMeta

MAGIC = re.compile(r"^NRRD000[1-5]$")

_TYPES = {
    "uchar": "uint8", "unsigned char": "uint8", "uint8": "uint8", "uint8_t": "uint8",
    "short": "int16", "short int": "int16", "signed short": "int16",
    "signed short int": "int16", "int16": "int16", "int16_t": "int16",
    "float": "float32",
    "double": "float64",
}
_TYPE_NAMES = {"uint8": "uint8", "int16": "int16", "float32": "float", "float64": "double"}
_ENCODINGS = {"raw": "raw", "gzip": "gzip", "gz": "gzip"}

# interpreted on read, regenerated on write
_KNOWN = {
    "type", "dimension", "sizes", "encoding", "endian", "spacings",
    "space directions", "space origin", "space dimension",
}


class NrrdError(ValueError):
    """Base class for NRRD read failures; ``line`` is the offending header line."""

    def __init__(self, message: str, line: str | None = None):
        self.line = line
        super().__init__(message if line is None else f"{message} (header line: {line!r})")


class NrrdHeaderError(NrrdError):
    """The header is not well formed."""


class NrrdUnsupportedError(NrrdError):
    """Well formed, but outside the supported subset."""


class NrrdPayloadError(NrrdError):
    """The payload does not match what the header declares."""


def _parse_vector(text: str, line: str) -> tuple[float, ...]:
    m = re.fullmatch(r"\s*\(([^()]*)\)\s*", text)
    if not m:
        raise NrrdHeaderError("malformed vector", line)
    try:
        return tuple(float(v) for v in m.group(1).split(","))
    except ValueError:
        raise NrrdHeaderError("malformed vector component", line) from None


def _split_header(raw: bytes):
    lines = []
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise NrrdHeaderError("header is not terminated by a blank line")
        line = raw[pos:end].rstrip(b"\r").decode("latin-1")
        pos = end + 1
        if line == "":
            return lines, raw[pos:]
        lines.append(line)


def read_nrrd(path) -> Grid:
    """Load a 3D NRRD file.

    uint8 data whose values are all 0 or 1 comes back as a :class:`LabelMap`;
    everything else as a :class:`Volume` with the on-disk dtype.
    """
    raw = Path(path).read_bytes()
    lines, payload = _split_header(raw)
    if not lines or not MAGIC.match(lines[0]):
        raise NrrdHeaderError("missing NRRD magic", lines[0] if lines else None)

    fields: dict[str, tuple[str, str]] = {}
    extra: list[tuple[str, str]] = []
    for line in lines[1:]:
        if line.startswith("#"):
            continue
        if ":=" in line:
            key, value = line.split(":=", 1)
            extra.append((key + ":=", value))
            continue
        if ": " not in line:
            raise NrrdHeaderError("expected 'field: value'", line)
        raw_key, value = line.split(": ", 1)
        key = raw_key.strip().lower()
        if key in _KNOWN:
            if key in fields:
                raise NrrdHeaderError(f"duplicate field '{key}'", line)
            fields[key] = (value.strip(), line)
        elif key in ("data file", "datafile", "line skip", "lineskip", "byte skip", "byteskip"):
            raise NrrdUnsupportedError(f"field '{key}' is not supported", line)
        else:
            extra.append((raw_key, value))

    for required in ("type", "dimension", "sizes", "encoding"):
        if required not in fields:
            raise NrrdHeaderError(f"missing required field '{required}'")

    value, line = fields["dimension"]
    if value != "3":
        raise NrrdUnsupportedError("only dimension 3 is supported", line)

    value, line = fields["type"]
    dtype_name = _TYPES.get(value.lower())
    if dtype_name is None:
        raise NrrdUnsupportedError(f"unsupported type '{value}'", line)

    value, line = fields["encoding"]
    encoding = _ENCODINGS.get(value.lower())
    if encoding is None:
        raise NrrdUnsupportedError(f"unsupported encoding '{value}'", line)

    value, line = fields["sizes"]
    try:
        dims = tuple(int(v) for v in value.split())
    except ValueError:
        raise NrrdHeaderError("sizes must be integers", line) from None
    if len(dims) != 3 or min(dims) < 1:
        raise NrrdHeaderError("sizes must list 3 positive integers", line)

    endian = "<"
    if "endian" in fields:
        value, line = fields["endian"]
        if value not in ("little", "big"):
            raise NrrdHeaderError(f"unknown endian '{value}'", line)
        endian = "<" if value == "little" else ">"

    spacing = (1.0, 1.0, 1.0)
    spacing_defaulted = True
    if "space directions" in fields:
        value, line = fields["space directions"]
        vectors = re.findall(r"\([^()]*\)|none", value)
        if len(vectors) != 3 or "none" in vectors:
            raise NrrdHeaderError("space directions must list 3 vectors", line)
        mat = [_parse_vector(v, line) for v in vectors]
        if any(len(v) != 3 for v in mat):
            raise NrrdHeaderError("space direction vectors must have 3 components", line)
        for a in range(3):
            for b in range(3):
                if a != b and mat[a][b] != 0.0:
                    raise NrrdUnsupportedError("oblique space directions are not supported", line)
            if not mat[a][a] > 0:
                raise NrrdUnsupportedError("space directions must have a positive diagonal", line)
        spacing = tuple(mat[a][a] for a in range(3))
        spacing_defaulted = False
    elif "spacings" in fields:
        value, line = fields["spacings"]
        try:
            spacing = tuple(float(v) for v in value.split())
        except ValueError:
            raise NrrdHeaderError("spacings must be numbers", line) from None
        if len(spacing) != 3:
            raise NrrdHeaderError("spacings must list 3 values", line)
        spacing_defaulted = False

    origin = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        value, line = fields["space origin"]
        origin = _parse_vector(value, line)
        if len(origin) != 3:
            raise NrrdHeaderError("space origin must have 3 components", line)

    if encoding == "gzip":
        try:
            payload = gzip.decompress(payload)
        except (OSError, EOFError, zlib.error) as exc:
            raise NrrdPayloadError(f"corrupt gzip payload: {exc}", fields["encoding"][1]) from None

    dtype = np.dtype(dtype_name).newbyteorder(endian)
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != expected:
        raise NrrdPayloadError(
            f"payload is {len(payload)} bytes, expected {expected}", fields["sizes"][1]
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(dims, order="F")
    data = data.astype(dtype.newbyteorder("="))

    meta = VolumeMeta(
        dims=dims,
        spacing=spacing,
        origin=origin,
        extra_fields=tuple(extra),
        spacing_defaulted=spacing_defaulted,
    )
    if dtype_name == "uint8" and np.all(data <= 1):
        return LabelMap(meta, data)
    return Volume(meta, data)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_nrrd(grid: Grid, path, encoding: str = "gzip") -> None:
    """Write ``grid`` as an attached-header little-endian NRRD file.

    Output is byte-for-byte deterministic (the gzip member carries mtime 0).
    """
    encoding = _ENCODINGS.get(encoding)
    if encoding is None:
        raise ValueError(f"unsupported encoding {encoding!r}")
    data = grid.data
    if isinstance(grid, LabelMap):
        data = data.astype(np.uint8)
    type_name = _TYPE_NAMES.get(data.dtype.name)
    if type_name is None:
        raise ValueError(f"cannot write dtype {data.dtype} to NRRD")
    meta = grid.meta

    header = [
        "NRRD0004",
        f"type: {type_name}",
        "dimension: 3",
        f"sizes: {meta.dims[0]} {meta.dims[1]} {meta.dims[2]}",
        "endian: little",
        f"encoding: {encoding}",
    ]
    if not meta.spacing_defaulted or any(meta.origin):
        if not any(k == "space" for k, _ in meta.extra_fields):
            header.append("space dimension: 3")
        if not meta.spacing_defaulted:
            sx, sy, sz = (_fmt(s) for s in meta.spacing)
            header.append(f"space directions: ({sx},0,0) (0,{sy},0) (0,0,{sz})")
        header.append("space origin: (" + ",".join(_fmt(o) for o in meta.origin) + ")")
    for key, value in meta.extra_fields:
        header.append(f"{key}{value}" if key.endswith(":=") else f"{key}: {value}")

    body = data.astype(data.dtype.newbyteorder("<")).tobytes(order="F")
    if encoding == "gzip":
        body = gzip.compress(body, compresslevel=6, mtime=0)
    Path(path).write_bytes(("\n".join(header) + "\n\n").encode("latin-1") + body)
