"""Additive random-vector variance injection and the covariance identity check.

For a vector ``v`` the transform draws ``beta ~ LogNormal(mu, sigma)``
per entry, forms ``vr = beta * v`` and, only if ``Var[vr] > Var[v]``,
returns ``v + M (vr - mean(vr))``. Centering on the sample mean of ``vr``
keeps the sample mean of the result equal to that of ``v``.

:func:`apply_gasl` lifts the transform to a network, once per mini-batch:
either on each layer's vector of group norms (groups are then rescaled to
hit the new norms) or on each layer's raw flattened weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .errors import InsufficientDataError, ParameterError, ShapeError
from .nn import group_norms

TARGETS = ("group_norms", "raw_weights")
MIXING_MATRICES = ("identity", "scaled_identity")


@dataclass(frozen=True)
class GaslConfig:
    """Parameters of the random-vector injection.

    ``mixing_matrix="scaled_identity"`` uses ``M = mixing_scale * I``; with
    ``"identity"`` the scale is ignored. With ``persist=False`` the
    training loop evaluates the batch gradient at the injected weights but
    applies the update to the un-injected ones.
    """

    enabled: bool = True
    mu: float = 0.1
    sigma: float = 1.0
    target: str = "group_norms"
    mixing_matrix: str = "identity"
    mixing_scale: float = 1.0
    min_norm: float = 1e-8
    persist: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if self.target not in TARGETS:
            raise ParameterError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.mixing_matrix not in MIXING_MATRICES:
            raise ParameterError(f"mixing_matrix must be one of {MIXING_MATRICES}")
        if not self.mixing_scale > 0:
            raise ParameterError(f"mixing_scale must be positive (M positive definite), got {self.mixing_scale}")

    @property
    def scale(self):
        return self.mixing_scale if self.mixing_matrix == "scaled_identity" else 1.0


@dataclass
class GaslOutcome:
    applied: bool
    var_before: float
    var_after: float
    mean_drift: float
    layer_index: int = -1
    n_skipped: int = 0
    n_clamped: int = 0

    def as_dict(self):
        return asdict(self)


def gasl_transform(v, rng, cfg=GaslConfig()):
    """Return ``(v_hat, GaslOutcome)`` for a 1-D vector ``v`` of length >= 2."""
    v = np.asarray(v, dtype=nm.DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"gasl_transform expects a 1-D vector, got shape {v.shape}")
    if v.size < 2:
        raise InsufficientDataError(f"gasl_transform needs at least 2 entries, got {v.size}")
    beta = nm.sample_lognormal(rng, cfg.mu, cfg.sigma, v.size)
    vr = beta * v
    var_v = nm.empirical_variance(v)
    if nm.empirical_variance(vr) > var_v:
        v_hat = v + cfg.scale * (vr - vr.mean())
        return v_hat, GaslOutcome(True, var_v, nm.empirical_variance(v_hat), float(v_hat.mean() - v.mean()))
    return v.copy(), GaslOutcome(False, var_v, var_v, 0.0)


def _apply_group_norms(net, layer, rng, cfg):
    g = net.group_matrix(layer)
    norms = group_norms(net, layer).norms
    live = np.flatnonzero(norms >= cfg.min_norm)
    n_skipped = norms.size - live.size
    if live.size < 2:
        var = nm.empirical_variance(norms) if norms.size > 1 else 0.0
        return GaslOutcome(False, var, var, 0.0, layer, n_skipped, 0)
    v = norms[live]
    v_hat, out = gasl_transform(v, rng, cfg)
    out.layer_index, out.n_skipped = layer, n_skipped
    if not out.applied:
        return out
    neg = v_hat < 0
    out.n_clamped = int(neg.sum())
    # a group cannot have negative norm: such groups are switched off
    factor = np.where(neg, 0.0, v_hat) / v
    g[live] *= factor[:, None]
    return out


def _apply_raw(net, layer, rng, cfg):
    W = net.params[layer]["W"]
    flat = W.ravel()
    v_hat, out = gasl_transform(flat, rng, cfg)
    out.layer_index = layer
    if out.applied:
        net.params[layer]["W"] = v_hat.reshape(W.shape)
    return out


def apply_gasl(net, cfg, rng):
    """Apply the transform to every groupable layer of ``net`` in place.

    Layers are visited in order, each consuming its draws from ``rng``
    sequentially, so a fixed seed gives a fixed result. Returns one
    :class:`GaslOutcome` per layer (empty when ``cfg.enabled`` is false).
    """
    if not cfg.enabled:
        return []
    step = _apply_group_norms if cfg.target == "group_norms" else _apply_raw
    return [step(net, i, rng, cfg) for i in net.groupable_layers()]


def variance_decomposition(v_samples, vr_samples, m):
    """Both sides of ``Var[V + M(Vr - E Vr)] = Var V + M Var Vr M^T + Z + Z^T``.

    ``Z = M Cov[Vr, V]``; all moments are population estimates over the k
    rows. Returns ``(lhs, rhs, parts)`` with the individual rhs terms.
    """
    v = np.asarray(v_samples, dtype=nm.DTYPE)
    vr = np.asarray(vr_samples, dtype=nm.DTYPE)
    m = np.asarray(m, dtype=nm.DTYPE)
    if v.ndim != 2 or v.shape != vr.shape:
        raise ShapeError(f"sample blocks must share a (k, n) shape, got {v.shape} and {vr.shape}")
    n = v.shape[1]
    if m.shape != (n, n):
        raise ShapeError(f"mixing matrix must be ({n}, {n}), got {m.shape}")
    if v.shape[0] < 2:
        raise InsufficientDataError(f"need k >= 2 samples, got {v.shape[0]}")
    v_hat = v + (vr - vr.mean(axis=0)) @ m.T
    lhs = nm.empirical_cross_cov(v_hat, v_hat)
    var_v = nm.empirical_cross_cov(v, v)
    var_r = nm.empirical_cross_cov(vr, vr)
    z = m @ nm.empirical_cross_cov(vr, v)
    rhs = var_v + m @ var_r @ m.T + z + z.T
    return lhs, rhs, {"var_v": var_v, "var_vr": var_r, "zeta": z, "v_hat": v_hat}


def verify_variance_decomposition(v_samples, vr_samples, m):
    """Max absolute entrywise residual of the covariance decomposition."""
    lhs, rhs, _ = variance_decomposition(v_samples, vr_samples, m)
    return float(np.max(np.abs(lhs - rhs)))
