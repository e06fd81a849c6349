"""Uniform grids and the binary grid file format.

A grid file is laid out as::

    b"LCGRID01"                      8-byte magic
    uint64 little-endian             length of the JSON header in bytes
    JSON header (UTF-8)              kind, d, shape, spacing, origin, meta
    float64 little-endian payload    row-major values

The same format stores cell noise, kernels and field realizations; ``kind``
and ``meta`` distinguish them.
"""
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridMismatchError

MAGIC = b"LCGRID01"


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred uniform grid: sample ``i`` along axis ``k`` sits at ``origin[k] + i*spacing[k]``."""

    shape: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        d = len(shape)
        spacing = np.broadcast_to(np.asarray(self.spacing, dtype=float), (d,))
        origin = np.broadcast_to(np.asarray(self.origin, dtype=float), (d,))
        if any(n < 1 for n in shape):
            raise ConfigError(f"grid shape must be positive, got {shape}")
        if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
            raise ConfigError(f"grid spacing must be positive and finite, got {tuple(spacing)}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", tuple(float(h) for h in spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))

    @classmethod
    def centered(cls, shape, spacing):
        """Grid whose sample ``n // 2`` along each axis sits at 0."""
        shape = tuple(int(n) for n in np.atleast_1d(shape))
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (len(shape),))
        origin = tuple(-(n // 2) * h for n, h in zip(shape, spacing))
        return cls(shape, tuple(spacing), origin)

    @property
    def d(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def extent(self):
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    def axes(self):
        """Sample positions per axis; grids containing 0 use integer offsets so they mirror exactly."""
        zi = self.zero_index()
        if zi is not None:
            return [h * (np.arange(n) - j) for n, h, j in zip(self.shape, self.spacing, zi)]
        return [o + h * np.arange(n) for n, h, o in zip(self.shape, self.spacing, self.origin)]

    def coords(self):
        """Array of shape ``shape + (d,)`` with the sample positions."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def radii(self):
        """Distances to 0; squares are summed in sorted order so axis permutations give identical bits."""
        sq = np.stack(np.meshgrid(*[ax ** 2 for ax in self.axes()], indexing="ij"), axis=-1)
        return np.sqrt(np.sort(sq, axis=-1).sum(axis=-1))

    def zero_index(self):
        """Index of the sample at the origin, or ``None`` if 0 is not a sample."""
        idx = []
        for n, h, o in zip(self.shape, self.spacing, self.origin):
            i = -o / h
            j = int(round(i))
            if abs(i - j) > 1e-9 or not 0 <= j < n:
                return None
            idx.append(j)
        return tuple(idx)

    def freqs(self):
        """Angular frequencies per axis in FFT order."""
        return [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.shape, self.spacing)]

    def require_same(self, other, what="grids"):
        if (self.shape != other.shape
                or not np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
                or not np.allclose(self.origin, other.origin, rtol=1e-12, atol=1e-12)):
            raise GridMismatchError(f"{what} do not match: {self} vs {other}")

    def to_dict(self):
        return {"d": self.d, "shape": list(self.shape), "spacing": list(self.spacing),
                "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(tuple(data["shape"]), tuple(data["spacing"]), tuple(data["origin"]))
        except KeyError as exc:
            raise ConfigError(f"grid header is missing field {exc}") from None


def write_grid(path, kind, spec, values, meta=None):
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.shape != spec.shape:
        raise GridMismatchError(f"values shape {values.shape} does not match grid shape {spec.shape}")
    header = {"kind": kind, **spec.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(values.tobytes(order="C"))


def read_grid(path):
    """Return ``(kind, spec, values, meta)`` from a grid file."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ConfigError(f"{path}: not a grid file (bad magic {magic!r})")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    spec = GridSpec.from_dict(header)
    values = np.frombuffer(payload, dtype="<f8")
    if values.size != spec.size:
        raise ConfigError(f"{path}: payload holds {values.size} values, header expects {spec.size}")
    return header.get("kind"), spec, values.reshape(spec.shape).astype(float), header.get("meta", {})
