"""Training and inference loops for EyeNet-lite and RefineNet-lite."""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gazerefine.errors import EmptyBatchError, FormatError, TrainingDivergenceError
from gazerefine.evaluation.metrics import evaluate_estimates
from gazerefine.geometry import ScreenGeometry, angular_error, angles_to_vector, apply_offset_augmentation, sample_kappa
from gazerefine.heatmap import refinenet_loss
from gazerefine.models.config import EyeNetConfig, RefineNetConfig
from gazerefine.models.eyenet import EyeNet, eyenet_loss, eyes_to_initial_pog
from gazerefine.models.refinenet import RefineNet, target_maps
from gazerefine.numerics.checkpoint import load_checkpoint, save_checkpoint
from gazerefine.numerics.optim import Adam, lr_schedule
from gazerefine.numerics.rng import Rng

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "split", "angular_deg", "cm", "px", "loss")


@dataclass
class HistoryRow:
    epoch: int
    split: str
    angular_deg: float
    cm: float
    px: float
    loss: float

    def csv(self):
        return f"{self.epoch},{self.split},{self.angular_deg:.6f},{self.cm:.6f},{self.px:.6f},{self.loss:.6f}"


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    best_epoch: int = 0             # epoch whose weights the model holds (0: last)


def history_csv(rows):
    return ",".join(HISTORY_HEADER) + "\n" + "".join(r.csv() + "\n" for r in rows)


def _batches(order, batch_size):
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _optimizer(model, cfg):
    return Adam(model.named_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                clip_norm=cfg.clip_norm or None)


def _step(model, opt, loss, lr, epoch, step):
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"non-finite loss {value} at epoch {epoch}, step {step}")
    model.zero_grad()
    loss.backward()
    opt.step(lr=lr)
    return value


# ---------------------------------------------------------------- EyeNet

def _fold_eyes(split, index):
    """(B, T, 2, ...) per-eye arrays -> (2B, T, ...) with eyes folded into the batch."""
    def fold(a):
        a = a[index]
        return np.moveaxis(a, 2, 1).reshape((-1,) + a.shape[1:2] + a.shape[3:])

    pupil = np.repeat(split.pupil[index][:, None], 2, axis=1).reshape(-1, split.pupil.shape[1])
    valid = np.repeat(split.validity[index][:, None], 2, axis=1).reshape(-1, split.validity.shape[1])
    return fold(split.eyes), fold(split.gaze_true), pupil, valid


def predict_eyenet(model, split, batch_size=16):
    """Per-eye gaze (S, T, 2, 2) and pupil (S, T, 2) predictions for a split."""
    angles, pupil = [], []
    for idx in _batches(np.arange(len(split)), batch_size):
        images, _, _, _ = _fold_eyes(split, idx)
        out = model(images)
        b = len(idx)
        angles.append(np.moveaxis(out.angles.value.reshape(b, 2, -1, 2), 1, 2))
        pupil.append(np.moveaxis(out.pupil.value.reshape(b, 2, -1), 1, 2))
    return np.concatenate(angles).astype(np.float64), np.concatenate(pupil).astype(np.float64)


def eyenet_metrics(model, split, screen=None, batch_size=16):
    """Mean per-eye angular error (deg) plus PoG cm/px errors of the averaged eyes."""
    screen = screen or ScreenGeometry()
    angles, pupil = predict_eyenet(model, split, batch_size)
    valid = split.validity
    true = np.nan_to_num(split.gaze_true)
    err = angular_error(angles_to_vector(angles), angles_to_vector(true))
    deg = float(err[valid].mean())
    pog = eyes_to_initial_pog(angles[..., 0, :], angles[..., 1, :], split.origins[:, None], screen, strict=False)
    pupil_err = float(np.abs(pupil - np.nan_to_num(split.pupil)[..., None])[valid].mean())
    try:
        report = evaluate_estimates(pog, split, screen, group_by=())
    except EmptyBatchError:
        # every ray misses the screen: angular error is still defined, PoG errors are not
        return deg, float("nan"), float("nan"), pupil_err
    return deg, report.overall.cm, report.overall.px, pupil_err


def train_eyenet(train, cfg: EyeNetConfig, rng, val=None, screen=None, dtype=np.float32):
    """Supervised EyeNet-lite training on visual-axis labels with validity masking."""
    if train.eyes is None:
        raise ValueError("training split has no eye images")
    model = EyeNet(cfg, rng.derive("init"), dtype=dtype)
    opt = _optimizer(model, cfg)
    result = TrainResult(model)
    n = len(train)
    n_batches = -(-n // cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.derive("shuffle", epoch).permutation(n)
        total = 0.0
        for b, idx in enumerate(_batches(order, cfg.batch_size)):
            images, labels, pupil, valid = _fold_eyes(train, idx)
            if not valid.any():
                continue
            lr = lr_schedule(cfg.lr, cfg.decay_factor, cfg.decay_interval, epoch + b / n_batches)
            if cfg.warmup_epochs > 0:
                lr *= min(1.0, (epoch + (b + 1) / n_batches) / cfg.warmup_epochs)
            out = model(images)
            loss = eyenet_loss(out, labels, pupil, valid, cfg.gamma_gaze, cfg.gamma_pupil)
            value = _step(model, opt, loss, lr, epoch, b)
            result.step_losses.append(value)
            total += value
        mean_loss = total / n_batches
        if val is not None:
            deg, cm, px, _ = eyenet_metrics(model, val, screen)
            result.history.append(HistoryRow(epoch + 1, "val", deg, cm, px, mean_loss))
            log.info("eyenet epoch %d loss %.4f val %.3f deg", epoch + 1, mean_loss, deg)
    return result


# ------------------------------------------------------------- RefineNet

def initial_gaze(split, source="corrupted", eyenet=None):
    """Initial per-eye gaze (S, T, 2, 2): optical-axis simulator estimates or EyeNet output."""
    if source == "corrupted":
        return np.asarray(split.gaze_apparent, dtype=np.float64)
    if eyenet is None:
        raise ValueError("initial source 'eyenet' needs a trained EyeNet model")
    return predict_eyenet(eyenet, split)[0]


def initial_pog(gaze, origins, screen):
    """Average the two eyes' screen intersections; (S, T, 2, 2) gaze -> (S, T, 2) cm."""
    return eyes_to_initial_pog(gaze[..., 0, :], gaze[..., 1, :], origins[:, None], screen, strict=False)


def predict_refinenet(model, split, init_cm, batch_size=8):
    """Refined PoG (S, T, 2) cm for a split given initial estimates."""
    out = []
    for idx in _batches(np.arange(len(split)), batch_size):
        out.append(model(split.screen[idx], init_cm[idx]).pog_cm.value)
    return np.concatenate(out).astype(np.float64)


def refinenet_eval(model, split, init_cm, screen=None, cfg=None, batch_size=8):
    """(angular deg, cm, px, loss) of a RefineNet on a split."""
    screen = screen or model.screen
    cfg = cfg or model.cfg
    preds, losses, weights = [], [], []
    for idx in _batches(np.arange(len(split)), batch_size):
        out = model(split.screen[idx], init_cm[idx])
        valid = split.validity[idx]
        preds.append(out.pog_cm.value)
        if valid.any():
            true = split.pog_cm[idx]
            loss = refinenet_loss((out.logits, out.pog_cm), (target_maps(true, screen, cfg), true),
                                  cfg.gamma_pog, cfg.gamma_xe, validity=valid)
            losses.append(float(loss.value))
            weights.append(int(valid.sum()))
    pred = np.concatenate(preds).astype(np.float64)
    report = evaluate_estimates(pred, split, screen, group_by=())
    loss = float(np.average(losses, weights=weights))
    return report.overall.angular_deg, report.overall.cm, report.overall.px, loss


def augment_sequences(gaze, rng, sigma_rad):
    """Apply one sampled kappa per sequence to both eyes of ``gaze`` (B, T, 2, 2)."""
    out = np.empty_like(gaze)
    for i in range(gaze.shape[0]):
        kappa = sample_kappa(rng, sigma_rad)
        out[i] = apply_offset_augmentation(gaze[i], kappa)
    return out


def train_refinenet(train, cfg: RefineNetConfig, rng, val=None, screen=None, init_gaze=None, val_init_gaze=None,
                    dtype=np.float32):
    """Train RefineNet-lite with offset augmentation of the initial gaze.

    ``init_gaze``/``val_init_gaze`` are per-eye initial gaze arrays
    (S, T, 2, 2); by default the simulator-corrupted estimates are used.
    With a validation split and ``cfg.keep_best_val`` the returned model
    holds the weights of the epoch with the lowest validation error.
    """
    screen = screen or ScreenGeometry()
    model = RefineNet(cfg, rng.derive("init"), screen, dtype=dtype)
    opt = _optimizer(model, cfg)
    result = TrainResult(model)
    g_train = initial_gaze(train) if init_gaze is None else init_gaze
    sigma = np.radians(cfg.kappa_sigma_deg)
    val_cm = None
    if val is not None:
        g_val = initial_gaze(val) if val_init_gaze is None else val_init_gaze
        val_cm = initial_pog(g_val, val.origins, screen)
    targets_all = target_maps(train.pog_cm, screen, cfg, model.dtype)
    n = len(train)
    n_batches = -(-n // cfg.batch_size)
    best = None
    for epoch in range(cfg.epochs):
        order = rng.derive("shuffle", epoch).permutation(n)
        arng = rng.derive("augment", epoch)
        total = 0.0
        for b, idx in enumerate(_batches(order, cfg.batch_size)):
            valid = train.validity[idx]
            g = augment_sequences(g_train[idx], arng, sigma)
            if not valid.any():
                continue
            init_cm = initial_pog(g, train.origins[idx], screen)
            lr = lr_schedule(cfg.lr, cfg.decay_factor, cfg.decay_interval, epoch + b / n_batches)
            out = model(train.screen[idx], init_cm)
            true = train.pog_cm[idx]
            loss = refinenet_loss((out.logits, out.pog_cm), (targets_all[idx], true), cfg.gamma_pog, cfg.gamma_xe,
                                  validity=valid)
            value = _step(model, opt, loss, lr, epoch, b)
            result.step_losses.append(value)
            total += value
        mean_loss = total / n_batches
        if val is not None:
            deg, cm, px, _ = refinenet_eval(model, val, val_cm, screen, cfg)
            result.history.append(HistoryRow(epoch + 1, "val", deg, cm, px, mean_loss))
            log.info("refinenet epoch %d loss %.4f val %.3f deg", epoch + 1, mean_loss, deg)
            if cfg.keep_best_val and (best is None or deg < best[0]):
                best = (deg, epoch + 1, model.state_dict())
    if best is not None:
        model.load_state_dict(best[2])
        result.best_epoch = best[1]
    return result


# ------------------------------------------------------------ checkpoints

def save_model(path, model):
    """Write weights (GZCK) plus a ``<path>.cfg`` sidecar with the model config."""
    path = Path(path)
    save_checkpoint(path, model.state_dict())
    side = configparser.ConfigParser(interpolation=None)
    kind = "eyenet" if isinstance(model, EyeNet) else "refinenet"
    side["model"] = {"kind": kind}
    side["config"] = {k: repr(v) for k, v in model.cfg.to_dict().items()}
    with open(str(path) + ".cfg", "w") as fh:
        side.write(fh)
    return path


def load_model(path, screen=None):
    import ast

    path = Path(path)
    side = configparser.ConfigParser(interpolation=None)
    try:
        with open(str(path) + ".cfg") as fh:
            side.read_file(fh)
        kind = side["model"]["kind"]
        values = {k: ast.literal_eval(v) for k, v in side["config"].items()}
    except (OSError, KeyError, ValueError, SyntaxError, configparser.Error) as exc:
        raise FormatError(f"cannot read model config {path}.cfg: {exc}") from exc
    if kind == "eyenet":
        model = EyeNet(EyeNetConfig.from_dict(values), Rng(0))
    elif kind == "refinenet":
        model = RefineNet(RefineNetConfig.from_dict(values), Rng(0), screen)
    else:
        raise FormatError(f"unknown model kind {kind!r} in {path}.cfg")
    model.load_state_dict(load_checkpoint(path))
    return model

