"""Plain SGD with learning-rate-adaptive gradient clipping and plateau decay."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .errors import DataError, ParameterError
from .regularizers import ObjectiveBreakdown, ObjectiveConfig, composite_objective
from .supervisor import GaslConfig, apply_gasl

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.1
    zeta: float = 0.1
    batch_size: int = 100
    max_epochs: int = 10
    plateau_patience: int = 5
    early_stop_patience: int = 20
    lr_drop_factor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("lr0", "zeta", "batch_size", "max_epochs", "plateau_patience",
                     "early_stop_patience", "lr_drop_factor"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be strictly positive, got {getattr(self, name)}")


@dataclass
class EpochRecord:
    epoch: int
    train_objective: ObjectiveBreakdown
    eval_error_pct: float
    current_lr: float
    gasl_applied_fraction: float
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        d["train_objective"] = self.train_objective.as_dict()
        return d

    def to_json(self):
        return json.dumps({"type": "epoch", **self.as_dict()}, sort_keys=True)


def adaptive_clip(grad, zeta, gamma):
    """Clamp every entry of ``grad`` to ``[-zeta/gamma, zeta/gamma]``.

    With ``gamma`` the current learning rate, each SGD step ``gamma * g``
    is then bounded by ``zeta`` in magnitude whatever the schedule.
    """
    if not gamma > 0:
        raise ParameterError(f"learning rate gamma must be positive, got {gamma}")
    bound = zeta / gamma
    return np.clip(grad, -bound, bound)


def sgd_step(net, grads, lr, zeta):
    """Apply one clipped update in place and return the largest |delta|."""
    biggest = 0.0
    for layer, g in zip(net.params, grads):
        for k in layer:
            delta = lr * adaptive_clip(g[k], zeta, lr)
            layer[k] = layer[k] - delta
            if delta.size:
                biggest = max(biggest, float(np.abs(delta).max()))
    return biggest


def iterate_minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def train(net, train_data, obj_cfg=None, gasl_cfg=None, train_cfg=None, eval_data=None,
          log_file=None, gasl_log_every=0, on_epoch=None):
    """Minimise the composite objective on ``train_data``.

    Each mini-batch: GASL injection (if enabled), forward pass, total
    gradient, adaptive clipping, SGD step. After each epoch the network is
    scored on ``eval_data`` (default: the training data); the learning
    rate drops by ``lr_drop_factor`` once the eval error has not strictly
    improved for ``plateau_patience`` epochs, and training stops after
    ``early_stop_patience`` epochs without improvement or at
    ``max_epochs``.

    ``net`` is updated in place and returned with the list of
    :class:`EpochRecord`. ``log_file`` (a writable text stream) receives
    one JSON object per line; with ``gasl_log_every=k`` every k-th batch's
    per-layer GASL outcomes are logged as well.
    """
    obj_cfg = obj_cfg or ObjectiveConfig()
    gasl_cfg = gasl_cfg or GaslConfig(enabled=False)
    train_cfg = train_cfg or TrainConfig()
    x, y = train_data.images, train_data.labels
    if len(y) == 0:
        raise DataError("training set is empty")
    if eval_data is None:
        eval_data = train_data

    root = nm.RngStream(train_cfg.seed)
    shuffle_rng = root.spawn(1)
    gasl_rng = root.spawn(2)

    n_drops = 0
    lr = float(train_cfg.lr0)
    best = np.inf
    since_best = 0
    since_drop = 0
    records = []
    batch_no = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        parts = []
        n_applied = n_outcomes = 0
        for idx in iterate_minibatches(len(y), train_cfg.batch_size, shuffle_rng):
            saved = None
            if gasl_cfg.enabled and not gasl_cfg.persist:
                saved = [{k: v.copy() for k, v in layer.items()} for layer in net.params]
            outcomes = apply_gasl(net, gasl_cfg, gasl_rng)
            n_outcomes += len(outcomes)
            n_applied += sum(o.applied for o in outcomes)
            if log_file is not None and gasl_log_every and batch_no % gasl_log_every == 0:
                for o in outcomes:
                    log_file.write(json.dumps({"type": "gasl", "epoch": epoch, "batch": batch_no,
                                               **o.as_dict()}, sort_keys=True) + "\n")
            bd, grads = composite_objective(net, x[idx], y[idx], obj_cfg)
            if saved is not None:
                net.params = saved
            sgd_step(net, grads, lr, train_cfg.zeta)
            parts.append(bd)
            batch_no += 1

        err = net.error_rate(eval_data.images, eval_data.labels)
        rec = EpochRecord(epoch, ObjectiveBreakdown.mean(parts), err, lr,
                          n_applied / n_outcomes if n_outcomes else 0.0)
        records.append(rec)
        logger.info("epoch %d  objective %.5f  eval error %.2f%%  lr %g", epoch,
                    rec.train_objective.total, err, lr)
        if log_file is not None:
            log_file.write(rec.to_json() + "\n")
            log_file.flush()
        if on_epoch is not None:
            on_epoch(net, rec)

        if err < best:
            best, since_best, since_drop = err, 0, 0
        else:
            since_best += 1
            since_drop += 1
        if since_best >= train_cfg.early_stop_patience:
            break
        if since_drop >= train_cfg.plateau_patience:
            n_drops += 1
            lr = train_cfg.lr0 / train_cfg.lr_drop_factor ** n_drops
            since_drop = 0
    return net, records
