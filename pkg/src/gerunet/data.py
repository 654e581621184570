"""Seeded synthetic segmentation data and the GTEN / PGM file formats.

GTEN layout (little endian)::

    b"GTEN" | u32 version=1 | u8 dtype (0=f32, 1=f64, 2=u8) | u8 ndim | ndim x u32 dims | payload

A dataset directory holds ``manifest.json``, ``img_%05d.gten`` (1 x H x W, f32)
and ``msk_%05d.gten`` (H x W, u8).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

GTEN_MAGIC = b"GTEN"
GTEN_VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("u1"): 2}
_DTYPES = {v: k for k, v in _CODES.items()}


def write_tensor(path, t) -> None:
    arr = np.asarray(getattr(t, "data", t))
    dt = arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype
    if dt not in _CODES:
        raise FormatError(f"unsupported dtype {arr.dtype} (f32, f64, u8 only)")
    if arr.ndim == 0 or arr.ndim > 255:
        raise FormatError("tensor must have between 1 and 255 dims")
    head = GTEN_MAGIC + struct.pack("<IBB", GTEN_VERSION, _CODES[dt], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != GTEN_MAGIC:
        raise FormatError(f"{path}: not a GTEN file")
    version, code, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != GTEN_VERSION:
        raise FormatError(f"{path}: unsupported GTEN version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    off = 10 + 4 * ndim
    if ndim == 0 or len(raw) < off:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 10)
    dt = _DTYPES[code]
    n = int(np.prod(dims)) * dt.itemsize
    if len(raw) != off + n:
        raise FormatError(f"{path}: payload is {len(raw) - off} bytes, expected {n}")
    return np.frombuffer(raw, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def _to_bytes(plane: np.ndarray) -> np.ndarray:
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise InvalidArgument(f"PGM needs a 2-d plane, got shape {plane.shape}")
    if plane.dtype == np.bool_ or (plane.size and set(np.unique(plane).tolist()) <= {0, 1}):
        return (plane.astype(np.uint8) * 255).astype(np.uint8)
    if plane.dtype == np.uint8:
        return plane
    return np.clip(np.rint(plane.astype(np.float64) * 255), 0, 255).astype(np.uint8)


def write_pgm(path, plane) -> None:
    """Binary PGM (P5, maxval 255).  Masks map {0,1} -> {0,255}; floats in [0,1] are scaled."""
    px = _to_bytes(plane)
    H, W = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    W, H, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    data = raw[len(raw) - W * H:]
    if len(data) != W * H:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(H, W).copy()


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthSpec:
    seed: int = 0
    count: int = 100
    size: int = 64
    blobs_min: int = 1
    blobs_max: int = 3
    kinds: tuple[str, ...] = ("ellipse", "rectangle")
    axis_range: tuple[float, float] = (3.0, 11.0)
    fg_range: tuple[float, float] = (0.45, 0.80)
    bg_range: tuple[float, float] = (0.20, 0.50)
    noise_sigma: float = 0.08
    shading: float = 0.10

    def validate(self):
        if self.size % 8 or self.size < 8:
            raise InvalidArgument(f"size must be a positive multiple of 8, got {self.size}")
        if self.count < 0:
            raise InvalidArgument("count must be >= 0")
        if not 1 <= self.blobs_min <= self.blobs_max:
            raise InvalidArgument("need 1 <= blobs_min <= blobs_max")
        for lo, hi in (self.fg_range, self.bg_range):
            if not 0.0 <= lo <= hi <= 1.0:
                raise InvalidArgument("intensity ranges must lie in [0, 1]")
        if not 1.0 <= self.axis_range[0] <= self.axis_range[1]:
            raise InvalidArgument("axis_range must satisfy 1 <= lo <= hi")
        if 2 * np.hypot(*[self.axis_range[1]] * 2) + 2 >= self.size:
            raise InvalidArgument("blobs too large for the frame")
        bad = set(self.kinds) - {"ellipse", "rectangle"}
        if bad or not self.kinds:
            raise InvalidArgument(f"unknown blob kinds {sorted(bad)}")
        if self.noise_sigma < 0 or self.shading < 0:
            raise InvalidArgument("noise_sigma and shading must be >= 0")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidArgument(f"unknown SynthSpec keys {sorted(unknown)}")
        d = dict(d)
        for k in ("kinds", "axis_range", "fg_range", "bg_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Sample:
    image: np.ndarray  # 1 x H x W, float32 in [0, 1]
    mask: np.ndarray   # H x W, uint8 in {0, 1}


@dataclass
class Dataset:
    images: np.ndarray
    masks: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> Sample:
        return Sample(self.images[i], self.masks[i])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.masks[idx], dict(self.manifest, subset=idx.tolist()))

    def split(self, val_fraction: float = 0.2, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Seeded random train/val split (4:1 by default)."""
        perm = np.random.default_rng(seed).permutation(len(self))
        n_val = int(round(len(self) * val_fraction))
        return self.subset(np.sort(perm[n_val:])), self.subset(np.sort(perm[:n_val]))


def _blob_mask(kind, rows, cols, cy, cx, a, b, theta):
    dy, dx = rows - cy, cols - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    if kind == "ellipse":
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return (np.abs(u) <= a) & (np.abs(v) <= b)


def generate(spec: SynthSpec) -> Dataset:
    """Images of 1-3 bright ellipses/rectangles on a shaded noisy background.

    Deterministic in ``spec`` (numpy PCG64 stream seeded with ``spec.seed``).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    S = spec.size
    rows, cols = np.mgrid[0:S, 0:S].astype(np.float64)
    images = np.zeros((spec.count, 1, S, S), np.float32)
    masks = np.zeros((spec.count, S, S), np.uint8)
    for n in range(spec.count):
        bg = rng.uniform(*spec.bg_range)
        ang = rng.uniform(0, 2 * np.pi)
        ramp = ((rows - (S - 1) / 2) * np.sin(ang) + (cols - (S - 1) / 2) * np.cos(ang)) / S
        img = bg + spec.shading * ramp
        mask = np.zeros((S, S), bool)
        for _ in range(rng.integers(spec.blobs_min, spec.blobs_max + 1)):
            kind = spec.kinds[rng.integers(len(spec.kinds))]
            a, b = rng.uniform(*spec.axis_range, size=2)
            theta = rng.uniform(0, np.pi)
            reach = np.hypot(a, b) + 1
            cy, cx = rng.uniform(reach, S - 1 - reach, size=2)
            m = _blob_mask(kind, rows, cols, cy, cx, a, b, theta)
            if not m.any():  # sub-pixel blob: keep the nearest pixel
                m[int(round(cy)), int(round(cx))] = True
            img = np.where(m, rng.uniform(*spec.fg_range), img)
            mask |= m
        if spec.noise_sigma:
            img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
        images[n, 0] = np.clip(img, 0.0, 1.0)
        masks[n] = mask
    manifest = {
        "generator": "gerunet.data.generate",
        "rng": "numpy.random.default_rng (PCG64)",
        "numpy_version": np.__version__,
        "spec": asdict(spec),
        "count": spec.count,
        "size": S,
    }
    return Dataset(images, masks, manifest)


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i in range(len(ds)):
        write_tensor(root / f"img_{i:05d}.gten", ds.images[i].astype(np.float32))
        write_tensor(root / f"msk_{i:05d}.gten", ds.masks[i].astype(np.uint8))
    manifest = dict(ds.manifest, count=len(ds))
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{root}: unreadable manifest ({e})") from e
    n = int(manifest.get("count", 0))
    imgs = [read_tensor(root / f"img_{i:05d}.gten") for i in range(n)]
    msks = [read_tensor(root / f"msk_{i:05d}.gten") for i in range(n)]
    if n == 0:
        S = int(manifest.get("size", 8))
        return Dataset(np.zeros((0, 1, S, S), np.float32), np.zeros((0, S, S), np.uint8), manifest)
    return Dataset(np.stack(imgs).astype(np.float32), np.stack(msks).astype(np.uint8), manifest)
