"""AdamW, cosine annealing, stratified splitting and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergedError
from .model import Model, _default_names, loss_and_grads, predict_proba, save_model
from .scene import standard_normal_grid
from .spectra import SpectralLibrary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 16
    lr_max: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    val_fraction: float = 0.2
    early_report_interval: int = 100
    ground_augment_count: int = 50
    ground_reflectance: float = 0.05
    ground_noise: float = 0.02
    # stop as soon as both losses are at or below these values (None = never)
    stop_train_loss: float | None = None
    stop_val_loss: float | None = None
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if not 0.0 <= self.lr_min <= self.lr_max:
            raise ValueError("need 0 <= lr_min <= lr_max")
        if self.ground_augment_count < 0:
            raise ValueError("ground_augment_count must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def cosine_lr(t, config: TrainConfig) -> float:
    """Learning rate at epoch ``t``: half a cosine from ``lr_max`` down to ``lr_min``."""
    if not 0 <= t <= config.epochs:
        raise ValueError(f"epoch {t} outside [0, {config.epochs}]")
    if config.epochs == 0:
        return config.lr_max
    return config.lr_min + 0.5 * (config.lr_max - config.lr_min) * (
        1.0 + math.cos(math.pi * t / config.epochs))


@dataclass
class OptimizerState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    weight_decay: float = 1e-4

    @classmethod
    def zeros_like(cls, params, **hyper):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, **hyper)


def adamw_step(params, grads, state: OptimizerState, lr):
    """One in-place AdamW update with decoupled weight decay.

    ``theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)``
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = (m / c1) / (np.sqrt(v / c2) + state.eps_adam) + state.weight_decay * p
        p -= lr * step
    return params, state


def split_dataset(x, y, val_fraction=0.2, seed=0):
    """Stratified split into ``((x_train, y_train), (x_val, y_val))``.

    Each class with n >= 2 samples sends ``round(val_fraction * n)`` of them
    (at most n - 1) to validation; single-sample classes stay in training.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must lie in [0, 1)")
    rng = np.random.default_rng([seed, 7919])
    train_idx, val_idx = [], []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        members = members[rng.permutation(members.size)]
        n_val = 0
        if members.size >= 2:
            n_val = min(int(math.floor(val_fraction * members.size + 0.5)), members.size - 1)
        val_idx.extend(members[:n_val])
        train_idx.extend(members[n_val:])
    tr = np.sort(np.array(train_idx, dtype=np.int64))
    va = np.sort(np.array(val_idx, dtype=np.int64))
    return (x[tr], y[tr]), (x[va], y[va])


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch_train: int | None = None
    best_epoch_val: int | None = None
    checkpoints: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)

    def rows(self):
        return [(i, self.train_loss[i], self.val_loss[i], self.lr[i]) for i in range(len(self))]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e, tl, vl, lr in self.rows():
                w.writerow([e, repr(tl), repr(vl), repr(lr)])


def evaluate_epoch(model: Model, x, y) -> float:
    """Infer-mode mean cross-entropy over ``(x, y)``."""
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("cannot evaluate on an empty set")
    probs = predict_proba(model, x, workers=1)
    p = np.clip(probs[np.arange(y.size), y], 1e-300, None)
    return float(-np.log(p).mean())


def ground_spectra(count, n_bands, reflectance=0.05, noise=0.02, seed=0):
    """``count`` constant-reflectance spectra with relative Gaussian noise."""
    z = standard_normal_grid(seed, count, n_bands)
    return np.clip(reflectance * (1.0 + noise * z), 0.0, 1.0)


def training_arrays(model: Model, library: SpectralLibrary, config: TrainConfig):
    """Imputed library spectra plus ground augmentation, labelled in the model's index space."""
    codec = library.codec
    names = tuple(model.class_names)
    if names == _default_names(model.config.n_classes) and len(codec) == len(names):
        model.class_names = tuple(codec.names)
        names = model.class_names
    missing = set(codec.names) - set(names)
    if missing:
        raise ValueError(f"library classes not known to the model: {sorted(missing)[:5]}")
    index = {n: i for i, n in enumerate(names)}
    x, y = library.arrays()
    if x.size and x.shape[1] != model.config.n_bands:
        raise ValueError(f"library has {x.shape[1]} bands, model expects {model.config.n_bands}")
    y = np.array([index[codec.names[c]] for c in y], dtype=np.int64)
    if config.ground_augment_count and "ground" in index:
        g = ground_spectra(config.ground_augment_count, model.config.n_bands,
                           config.ground_reflectance, config.ground_noise,
                           seed=(config.seed * 1_000_003 + 17) & ((1 << 63) - 1))
        x = np.concatenate([x.reshape(-1, model.config.n_bands), g])
        y = np.concatenate([y, np.full(len(g), index["ground"], dtype=np.int64)])
    return x, y


def _snapshot(model):
    return [(k, a.copy()) for k, a in model.arrays()]


def _restore(model, snap):
    for k, a in snap:
        model._set_array(k, a.copy())


def train(model: Model, library: SpectralLibrary, config: TrainConfig | None = None):
    """Fit ``model`` on ``library`` and return ``(model, history)``.

    The model is updated in place; on return it holds the parameters of the
    epoch with the lowest validation loss (training loss when there is no
    validation set).
    """
    config = config or TrainConfig()
    history = TrainHistory()
    if config.epochs == 0:
        return model, history

    x, y = training_arrays(model, library, config)
    (xt, yt), (xv, yv) = split_dataset(x, y, config.val_fraction, config.seed)
    if xv.shape[0] == 0:
        xv, yv = xt, yt
    pairs = model.net.parameters()
    params = [arr for _, _, arr in pairs]
    state = OptimizerState.zeros_like(params, beta1=config.beta1, beta2=config.beta2,
                                      eps_adam=config.eps_adam, weight_decay=config.weight_decay)
    ckpt_path = None
    if config.checkpoint_dir:
        Path(config.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        ckpt_path = str(Path(config.checkpoint_dir) / "best.hdm1")

    best_val, best_train, best_snap = math.inf, math.inf, None
    n = xt.shape[0]
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config)
        order = np.random.default_rng([config.seed, epoch, 0]).permutation(n)
        drop_rng = np.random.default_rng([config.seed, epoch, 1])
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, xt[idx], yt[idx], drop_rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss", epoch)
            try:
                adamw_step(params, [grads[i][name] for i, name, _ in pairs], state, lr)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch) from None
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss = evaluate_epoch(model, xv, yv)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError("non-finite validation loss", epoch)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.lr.append(lr)

        if train_loss < best_train:
            best_train, history.best_epoch_train = train_loss, epoch
        if val_loss < best_val:
            best_val, history.best_epoch_val = val_loss, epoch
            best_snap = _snapshot(model)
            if ckpt_path:
                save_model(model, ckpt_path)
                if ckpt_path not in history.checkpoints:
                    history.checkpoints.append(ckpt_path)
        if config.early_report_interval and (epoch + 1) % config.early_report_interval == 0:
            log.info("epoch %d: train %.4g val %.4g lr %.3g", epoch + 1, train_loss, val_loss, lr)
        if (config.stop_train_loss is not None and config.stop_val_loss is not None
                and train_loss <= config.stop_train_loss and val_loss <= config.stop_val_loss):
            log.info("stopping at epoch %d: both losses below target", epoch + 1)
            break

    if best_snap is not None:
        _restore(model, best_snap)
    model.training_meta = {
        "init_seed": model.training_meta.get("init_seed"),
        "train_seed": int(config.seed),
        "epochs_trained": len(history),
        "best_epoch_val": history.best_epoch_val,
        "final_train_loss": history.train_loss[-1],
        "final_val_loss": history.val_loss[-1],
        "best_val_loss": best_val,
    }
    return model, history
