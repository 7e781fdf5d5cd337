"""Reflectance spectra, the class-label codec and spectral-library I/O."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, DuplicateRecordError, LabelLookupError, ParseError

log = logging.getLogger(__name__)

N_BANDS = 224
GROUND = "ground"
SENTINEL = -1.23e34
SENTINEL_THRESHOLD = 1e32
WARN_ABOVE = 1.0
REJECT_ABOVE = 1.5


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    mineral_name: str
    class_index: int
    reflectance: np.ndarray
    band_valid: np.ndarray
    spectrum_id: str = ""
    wavelengths_um: np.ndarray | None = None

    def __post_init__(self):
        r = _frozen(self.reflectance, np.float64)
        v = _frozen(self.band_valid, bool)
        if r.ndim != 1 or v.shape != r.shape:
            raise DimensionError("reflectance and band_valid must be 1-D of equal length")
        object.__setattr__(self, "reflectance", r)
        object.__setattr__(self, "band_valid", v)
        if self.wavelengths_um is not None:
            w = _frozen(self.wavelengths_um, np.float64)
            if w.shape != r.shape:
                raise DimensionError("wavelengths must match the band count")
            if np.any(np.diff(w) <= 0):
                raise ValueError("wavelengths must be strictly increasing")
            object.__setattr__(self, "wavelengths_um", w)

    @property
    def n_bands(self):
        return self.reflectance.size

    def filled(self):
        """Reflectance with masked bands replaced by linear interpolation."""
        return impute_masked(self.reflectance, self.band_valid)


def impute_masked(reflectance, band_valid):
    """Fill invalid bands by linear interpolation between the nearest valid
    neighbours; bands beyond the first/last valid one take its value."""
    r = np.asarray(reflectance, dtype=np.float64)
    valid = np.asarray(band_valid, dtype=bool)
    if valid.all():
        return r.copy()
    if not valid.any():
        raise ValueError("spectrum has no valid bands")
    idx = np.arange(r.size)
    out = r.copy()
    out[~valid] = np.interp(idx[~valid], idx[valid], r[valid])
    return out


@dataclass(frozen=True)
class LabelCodec:
    """Bijection between class names and indices; ``ground`` is always last."""

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if not names or names[-1] != GROUND:
            raise ValueError(f"the last class must be {GROUND!r}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @classmethod
    def from_minerals(cls, minerals: Sequence[str]):
        seen = dict.fromkeys(m for m in minerals if m != GROUND)
        return cls(tuple(seen) + (GROUND,))

    @property
    def name_to_index(self):
        return dict(self._index)

    @property
    def ground_index(self):
        return len(self.names) - 1

    def __len__(self):
        return len(self.names)

    def encode(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise LabelLookupError(f"unknown class name {name!r}") from None

    def decode(self, index):
        if isinstance(index, (bool, np.bool_)) or not 0 <= int(index) < len(self.names) \
                or int(index) != index:
            raise LabelLookupError(f"class index {index!r} outside [0, {len(self.names)})")
        return self.names[int(index)]


def encode_label(codec: LabelCodec, name: str) -> int:
    return codec.encode(name)


def decode_label(codec: LabelCodec, index: int) -> str:
    return codec.decode(index)


@dataclass(frozen=True)
class SpectralLibrary:
    spectra: tuple
    codec: LabelCodec
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "spectra", tuple(self.spectra))
        for s in self.spectra:
            if self.codec.decode(s.class_index) != s.mineral_name:
                raise ValueError(f"spectrum {s.spectrum_id!r} label does not match the codec")

    def __len__(self):
        return len(self.spectra)

    def by_class(self, name):
        return [s for s in self.spectra if s.mineral_name == name]

    def base_signature(self, name):
        """Imputed reflectance of the first spectrum of class ``name``."""
        for s in self.spectra:
            if s.mineral_name == name:
                return s.filled()
        raise LabelLookupError(f"library has no spectrum of class {name!r}")

    def arrays(self):
        """``(X, y)``: imputed reflectance matrix and class indices."""
        if not self.spectra:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        x = np.stack([s.filled() for s in self.spectra])
        y = np.array([s.class_index for s in self.spectra], dtype=np.int64)
        return x, y


@dataclass(frozen=True)
class ValidationReport:
    n_sentinel_masked: int
    n_out_of_range: int
    n_nonfinite: int
    n_above_one: int = 0

    @property
    def ok(self):
        return self.n_nonfinite == 0


def validate_spectrum(s: Spectrum) -> ValidationReport:
    r, valid = s.reflectance, s.band_valid
    rv = r[valid]
    finite = np.isfinite(rv)
    fv = rv[finite]
    return ValidationReport(
        n_sentinel_masked=int((~valid).sum()),
        n_out_of_range=int(((fv < 0.0) | (fv > REJECT_ABOVE)).sum()),
        n_nonfinite=int((~finite).sum()),
        n_above_one=int(((fv > WARN_ABOVE) & (fv <= REJECT_ABOVE)).sum()),
    )


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def _parse_values(tokens, line):
    try:
        values = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"non-numeric reflectance ({exc})", line) from None
    valid = np.isfinite(values) & (np.abs(values) <= SENTINEL_THRESHOLD)
    if values.size != N_BANDS:
        raise DimensionError(f"line {line}: spectrum has {values.size} bands, expected {N_BANDS}")
    good = values[valid]
    if np.any(good < 0.0) or np.any(good > REJECT_ABOVE):
        raise ParseError(f"reflectance outside [0, {REJECT_ABOVE}]", line)
    n_high = int((good > WARN_ABOVE).sum())
    if n_high:
        log.warning("line %d: %d bands above %.1f accepted", line, n_high, WARN_ABOVE)
    return values, valid


def _read_csv(path: Path):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        expected = ["mineral_name", "spectrum_id"] + [f"b{i:03d}" for i in range(N_BANDS)]
        if [h.strip() for h in header[:2]] != expected[:2]:
            raise ParseError("header must start with mineral_name,spectrum_id", 1)
        if len(header) != len(expected):
            raise DimensionError(f"line 1: header has {len(header) - 2} bands, expected {N_BANDS}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError("row too short", line)
            name, sid = row[0].strip(), row[1].strip()
            if not name:
                raise ParseError("empty mineral name", line)
            values, valid = _parse_values(row[2:], line)
            records.append((name, sid, values, valid, line))
    return records


def _read_usgs_ascii(manifest: Path):
    records = []
    base = manifest.parent
    with open(manifest, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            parts = next(csv.reader([text]))
            if len(parts) != 2:
                raise ParseError("manifest lines must be 'path,mineral_name'", line_no)
            rel, name = parts[0].strip(), parts[1].strip()
            spath = base / rel
            try:
                lines = spath.read_text(encoding="utf-8").splitlines()
            except OSError as exc:
                raise ParseError(f"cannot read {rel}: {exc}", line_no) from None
            if not lines:
                raise ParseError(f"{rel} is empty", line_no)
            if name.lower() not in lines[0].lower():
                log.warning("%s: title %r does not mention %r", rel, lines[0], name)
            tokens = [t for t in (ln.strip() for ln in lines[1:]) if t]
            try:
                values, valid = _parse_values(tokens, line_no)
            except ParseError as exc:
                raise ParseError(f"{rel}: {exc}", line_no) from None
            records.append((name, Path(rel).stem, values, valid, line_no))
    return records


def load_spectral_library(path, format="csv") -> SpectralLibrary:
    """Read a library file.

    ``format`` is ``"csv"`` (one row per spectrum, header
    ``mineral_name,spectrum_id,b000..b223``) or ``"usgs_ascii"`` (``path`` is a
    manifest of ``relative_path,mineral_name`` lines, each spectrum file holding
    a title line followed by one reflectance per line).  Values whose magnitude
    exceeds 1e32, or that are not finite, are masked.
    """
    path = Path(path)
    if format == "csv":
        records = _read_csv(path)
    elif format == "usgs_ascii":
        records = _read_usgs_ascii(path)
    else:
        raise ValueError(f"unknown library format {format!r}")

    seen = {}
    for name, sid, *_, line in records:
        key = (name, sid)
        if key in seen:
            raise DuplicateRecordError(
                f"line {line}: duplicate record {key} (first at line {seen[key]})")
        seen[key] = line

    codec = LabelCodec.from_minerals([r[0] for r in records])
    spectra = [Spectrum(name, codec.encode(name), values, valid, sid)
               for name, sid, values, valid, _ in records]
    return SpectralLibrary(spectra, codec, source=f"{format}:{path}")


def write_library(library: SpectralLibrary, path):
    """Write ``library`` in the CSV format; masked bands become the sentinel."""
    n = library.spectra[0].n_bands if library.spectra else N_BANDS
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mineral_name", "spectrum_id"] + [f"b{i:03d}" for i in range(n)])
    for s in library.spectra:
        vals = np.where(s.band_valid, s.reflectance, SENTINEL)
        writer.writerow([s.mineral_name, s.spectrum_id] + [repr(float(v)) for v in vals])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic library
# ---------------------------------------------------------------------------

def default_wavelengths(n_bands=N_BANDS):
    """Evenly spaced grid over 0.4-2.5 um (the span of a VNIR/SWIR imager)."""
    return np.linspace(0.4, 2.5, n_bands)


def _class_signature(rng, t):
    # smooth continuum: a random cubic in normalized wavelength
    level = rng.uniform(0.25, 0.75)
    coeffs = rng.uniform(-0.25, 0.25, size=3)
    u = 2.0 * t - 1.0
    base = level + coeffs[0] * u + coeffs[1] * (u ** 2 - 1.0 / 3.0) + coeffs[2] * (u ** 3 - 0.6 * u)
    # multiplicative Gaussian absorption bands
    n_features = rng.integers(2, 6)
    centers = rng.uniform(0.05, 0.95, size=n_features)
    widths = rng.uniform(0.01, 0.06, size=n_features)
    depths = rng.uniform(0.15, 0.6, size=n_features)
    absorb = np.ones_like(t)
    for c, w, d in zip(centers, widths, depths):
        absorb *= 1.0 - d * np.exp(-0.5 * ((t - c) / w) ** 2)
    return np.clip(base, 0.05, 0.95) * absorb


def generate_synthetic_library(n_classes, n_spectra_per_class, n_bands=N_BANDS, seed=0,
                               names: Sequence[str] | None = None,
                               measurement_noise=0.05) -> SpectralLibrary:
    """Deterministic stand-in for a laboratory spectral library.

    Each class gets a smooth continuum carrying a handful of Gaussian
    absorption bands; copies within a class differ by a small brightness,
    tilt and feature-depth jitter plus relative per-band measurement noise.
    The first copy of each class is the clean signature; the noise level of
    copy ``k`` rises linearly to ``measurement_noise`` for the last copy, so
    every class carries both clean and noisy examples.  ``names`` optionally overrides the first
    class names (the rest are ``mineral_NNN``).
    """
    if n_classes < 2 or n_spectra_per_class < 1 or n_bands < 16:
        raise ValueError("need n_classes >= 2, n_spectra_per_class >= 1 and n_bands >= 16")
    labels = list(names or [])[:n_classes]
    labels += [f"mineral_{i:03d}" for i in range(len(labels), n_classes)]
    if GROUND in labels or len(set(labels)) != n_classes:
        raise ValueError("class names must be unique and must not include 'ground'")

    codec = LabelCodec(tuple(labels) + (GROUND,))
    wl = default_wavelengths(n_bands)
    t = np.linspace(0.0, 1.0, n_bands)
    root = np.random.SeedSequence(seed)
    spectra = []
    for ci, (name, child) in enumerate(zip(labels, root.spawn(n_classes))):
        rng = np.random.default_rng(child)
        clean = _class_signature(rng, t)
        continuum = np.clip(clean, 1e-9, None)
        for k in range(n_spectra_per_class):
            if k == 0:
                r = clean
            else:
                gain = 1.0 + rng.uniform(-0.03, 0.03)
                tilt = 1.0 + rng.uniform(-0.02, 0.02) * (2.0 * t - 1.0)
                deepen = rng.uniform(0.9, 1.1)
                # scale absorption depth relative to a smoothed continuum
                smooth = np.convolve(np.pad(continuum, 15, mode="edge"), np.ones(31) / 31, "valid")
                r = smooth * (continuum / smooth) ** deepen * gain * tilt
                # per-band measurement noise, as carried by laboratory spectra
                level = measurement_noise * k / (n_spectra_per_class - 1)
                r = r * (1.0 + level * rng.standard_normal(n_bands))
            r = np.clip(r, 0.0, 1.0)
            spectra.append(Spectrum(name, ci, r, np.ones(n_bands, bool), f"{name}_{k}", wl))
    return SpectralLibrary(spectra, codec, source=f"synthetic:seed={seed}")
