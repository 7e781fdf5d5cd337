"""Synthetic hyperspectral scenes: polygon rasterization, cube assembly,
relative Gaussian noise and the HCUB1 cube file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionError, ParseError, TruncatedFileError
from .spectra import GROUND, SpectralLibrary

_EDGE_TOL = 1e-12


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _segments_intersect(p1, p2, q1, q2):
    d1 = _cross(q2[0] - q1[0], q2[1] - q1[1], p1[0] - q1[0], p1[1] - q1[1])
    d2 = _cross(q2[0] - q1[0], q2[1] - q1[1], p2[0] - q1[0], p2[1] - q1[1])
    d3 = _cross(p2[0] - p1[0], p2[1] - p1[1], q1[0] - p1[0], q1[1] - p1[1])
    d4 = _cross(p2[0] - p1[0], p2[1] - p1[1], q2[0] - p1[0], q2[1] - p1[1])
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and 0 not in (d1, d2, d3, d4):
        return True

    def on_seg(a, b, c, d):
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) \
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2)
            or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4))


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def check_polygon(polygon) -> np.ndarray:
    """Validate a simple polygon and return it as an ``(n, 2)`` float array."""
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise ValueError("a polygon needs at least three (x, y) vertices")
    if not np.all(np.isfinite(poly)):
        raise ValueError("polygon vertices must be finite")
    if abs(_signed_area(poly)) <= _EDGE_TOL:
        raise ValueError("polygon is degenerate (zero area)")
    n = len(poly)
    edges = [(tuple(poly[i]), tuple(poly[(i + 1) % n])) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(*edges[i], *edges[j]):
                raise ValueError(f"polygon edges {i} and {j} intersect")
    return poly


def polygon_mask(polygon, x, y):
    """Vectorized even-odd membership of points ``(x, y)``; boundary points are inside."""
    poly = np.asarray(polygon, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        cr = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        scale = max(abs(x2 - x1), abs(y2 - y1), 1.0)
        on_edge |= (np.abs(cr) <= 1e-9 * scale) \
            & (np.minimum(x1, x2) - 1e-12 <= x) & (x <= np.maximum(x1, x2) + 1e-12) \
            & (np.minimum(y1, y2) - 1e-12 <= y) & (y <= np.maximum(y1, y2) + 1e-12)
        straddles = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (x < x_cross)
    return inside | on_edge


def point_in_polygon(p, polygon) -> bool:
    poly = check_polygon(polygon)
    return bool(polygon_mask(poly, p[0], p[1]))


@dataclass(frozen=True)
class RegionSpec:
    class_name: str
    polygon: tuple
    priority: int = 0

    def __post_init__(self):
        poly = check_polygon(self.polygon)
        object.__setattr__(self, "polygon", tuple(map(tuple, poly.tolist())))


@dataclass(frozen=True)
class SceneSpec:
    width: int = 100
    height: int = 100
    regions: tuple = ()
    background_class: str = GROUND
    background_reflectance: float = 0.05
    noise_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("scene width and height must be >= 1")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level must lie in [0, 1]")
        if not 0.0 <= self.background_reflectance <= 1.0:
            raise ValueError("background_reflectance must lie in [0, 1]")

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "background_class": self.background_class,
            "background_reflectance": self.background_reflectance,
            "noise_level": self.noise_level,
            "seed": self.seed,
            "regions": [{"class_name": r.class_name, "priority": r.priority,
                         "polygon": [list(v) for v in r.polygon]} for r in self.regions],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            regions = [RegionSpec(r["class_name"], r["polygon"], int(r.get("priority", 0)))
                       for r in d.get("regions", [])]
            return cls(width=int(d["width"]), height=int(d["height"]), regions=regions,
                       background_class=d.get("background_class", GROUND),
                       background_reflectance=float(d.get("background_reflectance", 0.05)),
                       noise_level=float(d.get("noise_level", 0.0)),
                       seed=int(d.get("seed", 0)))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid scene specification: {exc!r}") from None

    def with_noise(self, level, seed=None):
        d = self.to_dict()
        d["noise_level"] = level
        if seed is not None:
            d["seed"] = seed
        return SceneSpec.from_dict(d)


def load_scene_spec(path) -> SceneSpec:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"scene file is not valid JSON: {exc}") from None
    return SceneSpec.from_dict(d)


def save_scene_spec(spec: SceneSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def copper_scene_spec(minerals=("Cuprite", "Malachite", "Chalcopyrite"), noise_level=0.0,
                      seed=0) -> SceneSpec:
    """A 100x100 layout with three mineral polygons on a ground background."""
    polys = [
        [(8, 10), (44, 6), (50, 38), (28, 50), (10, 42)],
        [(56, 12), (92, 8), (94, 46), (70, 52), (58, 40)],
        [(18, 62), (52, 56), (86, 60), (90, 92), (46, 94), (14, 86)],
    ]
    regions = [RegionSpec(m, p, 1) for m, p in zip(minerals, polys)]
    return SceneSpec(100, 100, regions, GROUND, 0.05, noise_level, seed)


@dataclass(frozen=True, eq=False)
class HyperCube:
    data: np.ndarray                 # (H, W, B) reflectance
    truth: np.ndarray | None = None  # (H, W) class indices

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DimensionError("cube data must have shape (H, W, B)")
        if not np.all(np.isfinite(data)):
            raise DataError("cube contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise DataError("cube values must lie in [0, 1]")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if self.truth is not None:
            truth = np.array(self.truth, dtype=np.int64)
            if truth.shape != data.shape[:2]:
                raise DimensionError("truth grid must match the cube's spatial shape")
            if truth.min() < 0:
                raise DataError("truth indices must be non-negative")
            truth.flags.writeable = False
            object.__setattr__(self, "truth", truth)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]


def _pixel_centers(height, width):
    ys, xs = np.mgrid[0:height, 0:width]
    return xs + 0.5, ys + 0.5


def rasterize_regions(spec: SceneSpec, codec) -> np.ndarray:
    """Class-index grid for ``spec``; higher priority wins, ties go to the earlier region."""
    truth = np.full((spec.height, spec.width), codec.encode(spec.background_class), dtype=np.int64)
    cx, cy = _pixel_centers(spec.height, spec.width)
    order = sorted(range(len(spec.regions)), key=lambda i: (spec.regions[i].priority, -i))
    for i in order:
        region = spec.regions[i]
        truth[polygon_mask(region.polygon, cx, cy)] = codec.encode(region.class_name)
    return truth


def build_scene(spec: SceneSpec, library: SpectralLibrary) -> HyperCube:
    """Noise-free cube: every region pixel carries its class's first library
    spectrum, every other pixel the constant background reflectance."""
    codec = library.codec
    truth = rasterize_regions(spec, codec)
    n_bands = library.spectra[0].n_bands if library.spectra else 224
    data = np.full((spec.height, spec.width, n_bands), spec.background_reflectance)
    for name in dict.fromkeys(r.class_name for r in spec.regions):
        if name == spec.background_class:
            continue
        signature = np.clip(library.base_signature(name), 0.0, 1.0)
        data[truth == codec.encode(name)] = signature
    return HyperCube(data, truth)


# ---------------------------------------------------------------------------
# counter-based noise
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _mix64(z):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def standard_normal_grid(seed, n_pixels, n_bands):
    """Standard normal draws indexed by (pixel, band).

    Each value is a pure function of ``(seed, pixel, band)`` so any subset of
    the grid can be regenerated independently of evaluation order.
    """
    with np.errstate(over="ignore"):
        s = _mix64(np.array([seed & _MASK64], dtype=np.uint64))
        p = _mix64(s ^ np.arange(n_pixels, dtype=np.uint64))[:, None]
        key = _mix64(p ^ np.arange(n_bands, dtype=np.uint64)[None, :])
        a = _mix64(key + np.uint64(1))
        b = _mix64(key + np.uint64(2))
    scale = 2.0 ** -53
    u1 = ((a >> np.uint64(11)).astype(np.float64) + 0.5) * scale
    u2 = ((b >> np.uint64(11)).astype(np.float64) + 0.5) * scale
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def inject_noise(cube: HyperCube, level, seed=0) -> HyperCube:
    """Add zero-mean Gaussian noise with standard deviation ``level * r`` to
    every band value ``r`` and clip to [0, 1]."""
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return HyperCube(cube.data.copy(), cube.truth)
    h, w, b = cube.data.shape
    z = standard_normal_grid(seed, h * w, b).reshape(h, w, b)
    noisy = np.clip(cube.data + level * cube.data * z, 0.0, 1.0)
    return HyperCube(noisy, cube.truth)


def generate_scene(spec: SceneSpec, library: SpectralLibrary) -> HyperCube:
    """``build_scene`` followed by ``inject_noise`` at the spec's level and seed."""
    return inject_noise(build_scene(spec, library), spec.noise_level, spec.seed)


def flatten_pixels(cube: HyperCube):
    """Row-major ``(pixel_index, spectrum, truth_or_None)`` entries."""
    h, w, b = cube.data.shape
    flat = cube.data.reshape(h * w, b)
    truth = None if cube.truth is None else cube.truth.reshape(-1)
    return [(i, flat[i], None if truth is None else int(truth[i])) for i in range(h * w)]


def reassemble_pixels(entries: Sequence, height, width) -> HyperCube:
    entries = sorted(entries, key=lambda e: e[0])
    if len(entries) != height * width:
        raise DimensionError(f"{len(entries)} pixels for a {height}x{width} cube")
    data = np.stack([e[1] for e in entries]).reshape(height, width, -1)
    truth = None
    if entries and entries[0][2] is not None:
        truth = np.array([e[2] for e in entries]).reshape(height, width)
    return HyperCube(data, truth)


# ---------------------------------------------------------------------------
# HCUB1 files
# ---------------------------------------------------------------------------

def write_cube(cube: HyperCube, path):
    h, w, b = cube.data.shape
    has_truth = cube.truth is not None
    if has_truth and cube.truth.max() > 0xFFFF:
        raise ValueError("truth indices exceed the 16-bit range")
    with open(path, "wb") as fh:
        fh.write(f"HCUB1 {h} {w} {b} {int(has_truth)}\n".encode("ascii"))
        fh.write(cube.data.astype("<f4").tobytes())
        if has_truth:
            fh.write(cube.truth.astype("<u2").tobytes())


def read_cube(path) -> HyperCube:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError("missing HCUB1 header line", 1)
    fields = raw[:nl].decode("ascii", errors="replace").split()
    if len(fields) != 5 or fields[0] != "HCUB1":
        raise ParseError(f"bad cube header {raw[:nl]!r}", 1)
    try:
        h, w, b, has_truth = (int(f) for f in fields[1:])
    except ValueError:
        raise ParseError("non-integer cube dimensions", 1) from None
    if min(h, w, b) < 1 or has_truth not in (0, 1):
        raise ParseError("invalid cube dimensions", 1)
    n_data = h * w * b * 4
    n_truth = h * w * 2 if has_truth else 0
    body = raw[nl + 1:]
    if len(body) < n_data + n_truth:
        raise TruncatedFileError(f"cube body has {len(body)} bytes, expected {n_data + n_truth}")
    if len(body) > n_data + n_truth:
        raise DataError("trailing bytes after cube body")
    data = np.frombuffer(body, dtype="<f4", count=h * w * b).reshape(h, w, b).astype(np.float64)
    truth = None
    if has_truth:
        truth = np.frombuffer(body, dtype="<u2", count=h * w, offset=n_data).reshape(h, w)
    return HyperCube(data, truth)
