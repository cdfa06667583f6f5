"""Composite training objective: cross-entropy + l2 + group lasso + inverse attention.

    total = CE + lambda_l2 * ||theta||^2 + lambda_s * GL(w) + lambda_v / (Psi(w) + eps)

``GL`` sums per-layer group norms scaled by ``1/sqrt(n_groups)``; ``Psi``
sums per-layer variances of those group norms with the same scaling. The
attention coefficient is never free: ``lambda_v = alpha * lambda_s``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import NumericalError, ParameterError
from .nn import GROUPING_MODES, cross_entropy

ATTENTION_MODES = ("structured", "unstructured", "none")


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_s: float = 0.0
    alpha: float = 1.0
    lambda_l2: float = 5e-4
    grouping_mode: str = "structured"
    attention: str = "structured"
    variance_epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lambda_s >= 0:
            raise ParameterError(f"lambda_s must be >= 0, got {self.lambda_s}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")
        if not self.lambda_l2 >= 0:
            raise ParameterError(f"lambda_l2 must be >= 0, got {self.lambda_l2}")
        if self.grouping_mode not in GROUPING_MODES:
            raise ParameterError(f"grouping_mode must be one of {GROUPING_MODES}")
        if self.attention not in ATTENTION_MODES:
            raise ParameterError(f"attention must be one of {ATTENTION_MODES}")
        if not self.variance_epsilon > 0:
            raise ParameterError(f"variance_epsilon must be > 0, got {self.variance_epsilon}")

    @property
    def lambda_v(self):
        if self.attention == "none":
            return 0.0
        return self.alpha * self.lambda_s


@dataclass
class ObjectiveBreakdown:
    """The four summands of the objective.

    ``sparsity_term`` and ``attention_term`` hold the *raw* group-lasso
    value and raw variance; the weighted contributions are the
    ``*_penalty`` properties.
    """

    data_loss: float
    l2_term: float
    sparsity_term: float
    attention_term: float
    total: float
    lambda_s: float = 0.0
    lambda_v: float = 0.0
    variance_epsilon: float = 1e-8

    @property
    def sparsity_penalty(self):
        return self.lambda_s * self.sparsity_term

    @property
    def attention_penalty(self):
        if self.lambda_v == 0:
            return 0.0
        return self.lambda_v / (self.attention_term + self.variance_epsilon)

    def as_dict(self):
        return asdict(self)

    @classmethod
    def mean(cls, items):
        items = list(items)
        vals = {f.name: float(np.mean([getattr(b, f.name) for b in items])) for f in fields(cls)}
        return cls(**vals)


def group_lasso_penalty(net, mode="structured", eps=1e-8, with_grad=True):
    """Return ``(value, grads)``; grads is a list of ``{"W", "b"}`` dicts.

    Biases never enter the penalty, so their gradient is zero.
    """
    value = 0.0
    grads = net.zeros_like_params() if with_grad else None
    for i in net.param_layers():
        g = net.group_matrix(i, mode)
        norms = np.sqrt(np.einsum("ij,ij->i", g, g))
        scale = 1.0 / np.sqrt(g.shape[0])
        value += scale * norms.sum()
        if with_grad:
            live = norms >= eps
            s = np.zeros_like(norms)
            s[live] = scale / norms[live]
            grads[i]["W"] = net.ungroup(i, g * s[:, None], mode).copy()
    return value, grads


def attention_variance(net, mode="structured", eps=1e-8, with_grad=True):
    """Return ``(Psi, grads)``: the scaled sum of per-layer group-norm variances.

    Layers with fewer than two groups contribute zero.
    """
    value = 0.0
    grads = net.zeros_like_params() if with_grad else None
    for i in net.param_layers():
        g = net.group_matrix(i, mode)
        m = g.shape[0]
        if m < 2:
            continue
        norms = np.sqrt(np.einsum("ij,ij->i", g, g))
        dev = norms - norms.mean()
        scale = 1.0 / np.sqrt(m)
        value += scale * np.dot(dev, dev) / m
        if with_grad:
            # d var / d n_j = 2 (n_j - mean) / m; the mean's own derivative cancels
            dn = scale * 2.0 * dev / m
            live = norms >= eps
            s = np.zeros_like(norms)
            s[live] = dn[live] / norms[live]
            grads[i]["W"] = net.ungroup(i, g * s[:, None], mode).copy()
    return value, grads


def l2_penalty(net, with_grad=True):
    value = sum(float(np.dot(p.ravel(), p.ravel())) for layer in net.params for p in layer.values())
    grads = None
    if with_grad:
        grads = [{k: 2.0 * v for k, v in layer.items()} for layer in net.params]
    return value, grads


def _axpy(acc, grads, coef):
    for a, g in zip(acc, grads):
        for k in a:
            a[k] += coef * g[k]


def regularizer_objective(net, cfg, with_grad=True):
    """Everything except the data term: ``(l2, gl, psi, reg_total, grads)``."""
    grads = net.zeros_like_params() if with_grad else None
    l2, g = l2_penalty(net, with_grad)
    if with_grad and cfg.lambda_l2:
        _axpy(grads, g, cfg.lambda_l2)
    reg = cfg.lambda_l2 * l2
    # raw values are always reported; gradients only where a coefficient is live
    gl, g = group_lasso_penalty(net, cfg.grouping_mode, cfg.variance_epsilon,
                                with_grad and cfg.lambda_s > 0)
    if cfg.lambda_s > 0:
        reg += cfg.lambda_s * gl
        if with_grad:
            _axpy(grads, g, cfg.lambda_s)
    lv = cfg.lambda_v
    attn_mode = "structured" if cfg.attention == "none" else cfg.attention
    psi, g = attention_variance(net, attn_mode, cfg.variance_epsilon, with_grad and lv > 0)
    if lv > 0:
        denom = psi + cfg.variance_epsilon
        reg += lv / denom
        if with_grad:
            _axpy(grads, g, -lv / denom**2)
    return cfg.lambda_l2 * l2, gl, psi, reg, grads


def composite_objective(net, x, labels, cfg, with_grad=True):
    """Evaluate the full objective on a batch.

    Returns ``(ObjectiveBreakdown, grads)`` where ``grads`` (None when
    ``with_grad`` is false) is the sum of the four gradient fields.
    """
    logits, cache = net.forward(x)
    ce, dlogits = cross_entropy(logits, labels)
    l2_term, gl, psi, reg, rgrads = regularizer_objective(net, cfg, with_grad)
    bd = ObjectiveBreakdown(data_loss=ce, l2_term=l2_term, sparsity_term=gl, attention_term=psi,
                            total=ce + reg, lambda_s=cfg.lambda_s, lambda_v=cfg.lambda_v,
                            variance_epsilon=cfg.variance_epsilon)
    check_breakdown(bd)
    if not with_grad:
        return bd, None
    grads = net.backward(cache, dlogits)
    _axpy(grads, rgrads, 1.0)
    return bd, grads


def check_breakdown(bd):
    """Raise :class:`NumericalError` naming the first non-finite term."""
    for name in ("data_loss", "l2_term", "sparsity_term", "attention_term", "total"):
        if not np.isfinite(getattr(bd, name)):
            raise NumericalError(f"non-finite objective term {name!r} = {getattr(bd, name)}")
