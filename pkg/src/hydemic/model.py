"""The HyDeMiC 1D CNN: configuration, forward passes, pixel-wise maps and
the HDM1 model file format."""

from __future__ import annotations

import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ChecksumError, DimensionError, ModelFileError, TruncatedFileError, VersionError

MAGIC = b"HDM1"
_MAGIC_PREFIX = b"HDM"


@dataclass(frozen=True)
class ModelConfig:
    n_bands: int = 224
    n_classes: int = 116
    conv_filters: tuple = (64, 128)
    kernel: int = 7
    pool: int = 3
    dense_units: tuple = (128, 64)
    # after pool1, pool2, dense1, dense2
    dropout_rates: tuple = (0.3, 0.3, 0.4, 0.4)
    leaky_alpha: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9

    def __post_init__(self):
        for name in ("conv_filters", "dense_units", "dropout_rates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.conv_filters) != 2 or len(self.dense_units) != 2 or len(self.dropout_rates) != 4:
            raise ValueError("expected two conv stages, two hidden dense layers and four dropout rates")
        sizes = (self.n_bands, self.n_classes, self.kernel, self.pool,
                 *self.conv_filters, *self.dense_units)
        if any(int(s) < 1 for s in sizes):
            raise ValueError("model sizes must be positive")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise ValueError("dropout rates must lie in [0, 1)")
        if not 0.0 < self.leaky_alpha < 1.0:
            raise ValueError("leaky_alpha must lie in (0, 1)")
        if self.flatten_width < 1:
            raise ValueError(
                f"{self.n_bands} bands leave no features after two conv(k={self.kernel})"
                f"/pool({self.pool}) stages")

    def stage_lengths(self):
        """Sequence lengths after conv1, pool1, conv2, pool2 (may go non-positive)."""
        c1 = self.n_bands - self.kernel + 1
        p1 = c1 // self.pool if c1 > 0 else 0
        c2 = p1 - self.kernel + 1
        p2 = c2 // self.pool if c2 > 0 else 0
        return c1, p1, c2, p2

    @property
    def flatten_width(self):
        return max(self.stage_lengths()[3], 0) * self.conv_filters[1]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    net: nn.Sequential
    class_names: tuple
    training_meta: dict = field(default_factory=dict)

    def arrays(self):
        """All persistent arrays (parameters and batchnorm buffers) in file order."""
        out = []
        for i, layer in enumerate(self.net.layers):
            for name, arr in layer.params.items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
            for name, arr in layer.buffers.items():
                out.append((f"{i}.{layer.kind}.{name}", arr))
        return out

    def _set_array(self, key, value):
        i, _, name = key.split(".")
        layer = self.net.layers[int(i)]
        if name in layer.params:
            layer.params[name] = value
        else:
            layer.buffers[name] = value


def _default_names(n):
    return tuple([f"class_{i:03d}" for i in range(n - 1)] + ["ground"])


def build_model(config: ModelConfig | None = None, init_seed=0, class_names=None) -> Model:
    """Assemble the layer stack for ``config`` with seeded He-uniform weights."""
    config = config or ModelConfig()
    c = config
    f1, f2 = c.conv_filters
    d1, d2 = c.dense_units
    r1, r2, r3, r4 = c.dropout_rates
    layers = [
        nn.Conv1D(1, f1, c.kernel),
        nn.BatchNorm1D(f1, c.bn_eps, c.bn_momentum),
        nn.LeakyReLU(c.leaky_alpha),
        nn.MaxPool1D(c.pool),
        nn.Dropout(r1),
        nn.Conv1D(f1, f2, c.kernel),
        nn.BatchNorm1D(f2, c.bn_eps, c.bn_momentum),
        nn.LeakyReLU(c.leaky_alpha),
        nn.MaxPool1D(c.pool),
        nn.Dropout(r2),
        nn.Flatten(),
        nn.Dense(c.flatten_width, d1),
        nn.LeakyReLU(c.leaky_alpha),
        nn.Dropout(r3),
        nn.Dense(d1, d2),
        nn.LeakyReLU(c.leaky_alpha),
        nn.Dropout(r4),
        nn.Dense(d2, c.n_classes),
    ]
    rng = np.random.default_rng(init_seed)
    for layer in layers:
        if hasattr(layer, "init"):
            layer.init(rng)
    if class_names is None:
        class_names = _default_names(c.n_classes)
    class_names = tuple(class_names)
    if len(class_names) != c.n_classes:
        raise ValueError(f"{len(class_names)} class names for {c.n_classes} classes")
    return Model(c, nn.Sequential(layers), class_names, {"init_seed": int(init_seed)})


def _as_batch(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.n_bands:
        raise DimensionError(f"expected input width {model.config.n_bands}, got shape {x.shape}")
    return x[:, None, :]


def forward(model: Model, batch, mode="infer", rng=None):
    """Returns ``(probabilities, logits)`` for a ``(batch, n_bands)`` array."""
    logits, _ = model.net.forward(_as_batch(model, batch), mode, rng)
    return nn.softmax(logits), logits


def loss_and_grads(model: Model, batch, targets, rng=None):
    """Train-mode forward and backward pass; returns ``(loss, grads)``."""
    logits, tape = model.net.forward(_as_batch(model, batch), nn.TRAIN, rng)
    loss, g = nn.softmax_cross_entropy(logits, targets)
    _, grads = model.net.backward(g, tape)
    return loss, grads


@dataclass(frozen=True)
class MineralMap:
    classes: np.ndarray      # (H, W) int
    confidence: np.ndarray   # (H, W) percent

    @property
    def height(self):
        return self.classes.shape[0]

    @property
    def width(self):
        return self.classes.shape[1]


def _worker_count():
    env = os.environ.get("HYDEMIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def predict_proba(model: Model, spectra, chunk=2048, workers=None):
    """Infer-mode class probabilities for an ``(n, n_bands)`` array.

    Rows are processed in fixed-size chunks so the result does not depend on
    the number of workers.
    """
    x = np.asarray(spectra, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.n_bands:
        raise DimensionError(f"expected spectra of width {model.config.n_bands}, got shape {x.shape}")
    starts = range(0, x.shape[0], chunk)

    def run(s):
        return forward(model, x[s:s + chunk])[0]

    workers = workers or _worker_count()
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    if not parts:
        return np.zeros((0, model.config.n_classes))
    return np.concatenate(parts, axis=0)


def predict_pixelwise(model: Model, cube, chunk=2048, workers=None) -> MineralMap:
    """Classify every pixel of ``cube`` independently."""
    h, w, b = cube.data.shape
    if b != model.config.n_bands:
        raise DimensionError(f"cube has {b} bands, model expects {model.config.n_bands}")
    probs = predict_proba(model, cube.data.reshape(h * w, b), chunk, workers)
    classes = probs.argmax(axis=1).reshape(h, w)
    confidence = (100.0 * probs.max(axis=1)).reshape(h, w)
    return MineralMap(classes, confidence)


def decode_map(model: Model, mineral_map: MineralMap):
    """Class-name grid for a mineral map."""
    names = np.asarray(model.class_names, dtype=object)
    return names[mineral_map.classes]


# ---------------------------------------------------------------------------
# HDM1 serialization
# ---------------------------------------------------------------------------
# layout: b"HDM1" | u32 header length | JSON header | float64 LE arrays | u32 CRC-32
# The CRC covers every byte before it.

def model_to_bytes(model: Model) -> bytes:
    arrays = model.arrays()
    header = {
        "config": model.config.to_dict(),
        "class_names": list(model.class_names),
        "training_meta": model.training_meta,
        "arrays": [[key, list(arr.shape)] for key, arr in arrays],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    payload = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + body
    return payload + struct.pack("<I", zlib.crc32(payload))


def model_from_bytes(data: bytes) -> Model:
    if len(data) < 8:
        raise TruncatedFileError("model file is truncated")
    magic = data[:4]
    if magic != MAGIC:
        if magic[:3] == _MAGIC_PREFIX:
            raise VersionError(f"unsupported model file version {magic!r}, reader handles {MAGIC!r}")
        raise ModelFileError("not a HDM model file")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen + 4:
        raise TruncatedFileError("model file is truncated")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
        expected = 8 + hlen + 8 * sum(int(np.prod(s)) for _, s in header["arrays"]) + 4
    except (ValueError, KeyError, TypeError) as exc:
        (crc,) = struct.unpack("<I", data[-4:])
        if zlib.crc32(data[:-4]) != crc:
            raise ChecksumError("model file checksum mismatch") from exc
        raise ModelFileError(f"corrupt model header: {exc}") from exc
    if len(data) < expected:
        raise TruncatedFileError(f"model file has {len(data)} bytes, header implies {expected}")
    if len(data) > expected:
        raise ModelFileError("trailing bytes after model checksum")
    (crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != crc:
        raise ChecksumError("model file checksum mismatch")

    config = ModelConfig.from_dict(header["config"])
    model = build_model(config, class_names=header["class_names"])
    model.training_meta = header["training_meta"]
    own = dict(model.arrays())
    offset = 8 + hlen
    for key, shape in header["arrays"]:
        if key not in own or list(own[key].shape) != list(shape):
            raise ModelFileError(f"array {key} with shape {shape} does not fit the configuration")
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        model._set_array(key, arr.reshape(shape))
        offset += 8 * count
    if len(header["arrays"]) != len(own):
        raise ModelFileError("model file is missing arrays")
    return model


def save_model(model: Model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
