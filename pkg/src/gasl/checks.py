"""Self-verification suites: finite-difference gradient checks and identity checks.

These back the ``verify`` CLI command and the acceptance tests. Every
check compares a production code path against an independent route
(central differences, a second implementation, or a direct moment
computation) and reports the worst discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import numeric as nm
from .pruning import PruneConfig, prune_groups, sparsity_percentages
from .regularizers import (ObjectiveConfig, attention_variance, composite_objective,
                           group_lasso_penalty, l2_penalty)
from .supervisor import GaslConfig, gasl_transform, variance_decomposition

FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    count: int

    @property
    def passed(self):
        return bool(self.worst < self.tolerance)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst {self.worst:.3e} (tol {self.tolerance:.0e}, n={self.count})"


def relative_error(analytic, numeric):
    """Norm-wise relative error ``||a - n|| / max(||a||, ||n||)``."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def numerical_gradient(fn, net, h=FD_STEP):
    """Central differences of ``fn(net) -> array`` for every parameter.

    Returns a list (one entry per output of ``fn``) of per-layer gradient
    dicts shaped like ``net.params``.
    """
    n_out = np.atleast_1d(fn(net)).size
    grads = [net.zeros_like_params() for _ in range(n_out)]
    for li, layer in enumerate(net.params):
        for key, p in layer.items():
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                fp = np.atleast_1d(fn(net))
                p[idx] = old - h
                fm = np.atleast_1d(fn(net))
                p[idx] = old
                d = (fp - fm) / (2 * h)
                for o in range(n_out):
                    grads[o][li][key][idx] = d[o]
    return grads


def flatten_grads(grads):
    return np.concatenate([g.ravel() for layer in grads for g in layer.values()])


def _min_relu_margin(net, x):
    h = net._prepare_input(x)
    margin = np.inf
    # recompute pre-activations of every relu/maxpool input to find kink proximity
    for spec, p in zip(net.layers, net.params):
        if spec.kind == "dense":
            h = h @ p["W"] + p["b"]
        elif spec.kind == "conv2d":
            d = spec.dims
            h = nm.conv2d_forward(h, p["W"], p["b"], d["stride"], d["pad"])
        elif spec.kind == "relu":
            margin = min(margin, float(np.abs(h).min()))
            h = np.maximum(h, 0)
        elif spec.kind == "maxpool":
            s = spec.dims["size"]
            n, c, hh, ww = h.shape
            win = h[:, :, :hh // s * s, :ww // s * s].reshape(n, c, hh // s, s, ww // s, s)
            srt = np.sort(win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, hh // s, ww // s, -1), axis=-1)
            margin = min(margin, float((srt[..., -1] - srt[..., -2]).min()))
            h = srt[..., -1]
        elif spec.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
    return margin


def random_instance(rng, max_params=1000, min_margin=1e-3, min_group_norm=1e-2):
    """A small random network, batch and labels away from non-smooth points.

    Instances whose ReLU pre-activations, max-pool winners or group norms
    come within the stated margins of a kink are redrawn, so central
    differences with step 1e-5 never straddle one.
    """
    while True:
        if rng.uniform() < 0.5:
            d_in = int(rng.integers(3, 9))
            widths = [d_in] + [int(rng.integers(3, 11)) for _ in range(int(rng.integers(1, 3)))]
            classes = int(rng.integers(2, 6))
            layers = []
            for a, b in zip(widths[:-1], widths[1:]):
                layers += [nn.dense(a, b), nn.relu()]
            layers += [nn.dense(widths[-1], classes), nn.softmax()]
            input_shape = (d_in,)
        else:
            c_in = int(rng.integers(1, 3))
            size = int(rng.integers(6, 8))
            f = int(rng.integers(2, 4))
            pad = int(rng.integers(0, 2))
            classes = int(rng.integers(2, 5))
            conv_out = size + 2 * pad - 2
            flat = f * (conv_out // 2) ** 2
            layers = [nn.conv2d(c_in, f, 3, 1, pad), nn.relu(), nn.maxpool(2), nn.flatten(),
                      nn.dense(flat, classes), nn.softmax()]
            input_shape = (c_in, size, size)
        grouping = "outgoing" if rng.uniform() < 0.5 else "incoming"
        net = nn.Network(layers, input_shape, dense_grouping=grouping, rng=rng.spawn(int(rng.integers(0, 2**31))))
        for p in net.params:
            if p:
                p["b"] = 0.1 * rng.standard_normal(p["b"].shape)
        if net.n_params() > max_params:
            continue
        batch = int(rng.integers(2, 6))
        x = rng.standard_normal((batch,) + input_shape)
        y = rng.integers(0, classes, batch)
        if _min_relu_margin(net, x) < min_margin:
            continue
        norms = [nn.group_norms(net, i, m).norms.min() for i in net.param_layers()
                 for m in ("structured", "unstructured")]
        if min(norms) < min_group_norm:
            continue
        return net, x, y


def _terms(net, x, y, mode, attn_mode, cfg):
    """Scalar values of every checked term, in a fixed order."""
    logits, _ = net.forward(x)
    ce, _ = nn.cross_entropy(logits, y)
    l2, _ = l2_penalty(net, with_grad=False)
    gl, _ = group_lasso_penalty(net, mode, with_grad=False)
    psi, _ = attention_variance(net, attn_mode, with_grad=False)
    total, _ = composite_objective(net, x, y, cfg, with_grad=False)
    return np.array([ce, l2, gl, psi, total.total])


TERM_NAMES = ("cross_entropy", "l2", "group_lasso", "attention_variance", "composite")


def gradient_check_suite(n_instances=100, seed=0, h=FD_STEP):
    """Analytic vs central-difference gradients on random small networks."""
    rng = nm.RngStream(seed)
    worst = np.zeros(len(TERM_NAMES))
    for _ in range(n_instances):
        net, x, y = random_instance(rng)
        mode = "structured" if rng.uniform() < 0.7 else "unstructured"
        attn = "structured" if rng.uniform() < 0.7 else "unstructured"
        cfg = ObjectiveConfig(lambda_s=float(rng.uniform(0.01, 1.0)), alpha=float(rng.uniform(0.1, 10)),
                              lambda_l2=float(rng.uniform(0, 1e-2)), grouping_mode=mode, attention=attn,
                              variance_epsilon=1e-2)
        analytic = [
            nn.loss_and_grads(net, x, y)[1],
            l2_penalty(net)[1],
            group_lasso_penalty(net, mode)[1],
            attention_variance(net, attn)[1],
            composite_objective(net, x, y, cfg)[1],
        ]
        numeric = numerical_gradient(lambda m: _terms(m, x, y, mode, attn, cfg), net, h)
        for t in range(len(TERM_NAMES)):
            worst[t] = max(worst[t], relative_error(flatten_grads(analytic[t]), flatten_grads(numeric[t])))
    tols = (1e-5, 1e-5, 1e-5, 1e-5, 1e-4)
    return [CheckResult(f"gradient/{name}", w, tol, n_instances)
            for name, w, tol in zip(TERM_NAMES, worst, tols)]


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T / n + np.eye(n)


def decomposition_suite(n_sets=50, k=64, n=16, seed=0, tol=1e-10):
    """Residual of the covariance decomposition for three mixing matrices.

    The random vector is built the way the injection builds it,
    ``vr = beta * v`` with log-normal ``beta``, so ``vr`` is correlated
    with ``v``.
    """
    rng = nm.RngStream(seed)
    worst = {"identity": 0.0, "2*identity": 0.0, "random_spd": 0.0}
    for _ in range(n_sets):
        v = rng.standard_normal((k, n)) * rng.uniform(0.5, 2.0, n)
        beta = nm.sample_lognormal(rng, 0.1, 1.0, k * n).reshape(k, n)
        vr = beta * v
        for name, m in (("identity", np.eye(n)), ("2*identity", 2 * np.eye(n)),
                        ("random_spd", random_spd(rng, n))):
            lhs, rhs, _ = variance_decomposition(v, vr, m)
            worst[name] = max(worst[name], float(np.max(np.abs(lhs - rhs))))
    return [CheckResult(f"decomposition/{name}", w, tol, n_sets) for name, w in worst.items()]


def _alg1_reference(v, normals, mu, sigma, scale):
    """Second, loop-based implementation of the injection step."""
    n = len(v)
    beta = [float(np.exp(mu + sigma * z)) for z in normals]
    vr = [b * x for b, x in zip(beta, v)]

    def var(xs):
        m = sum(xs) / len(xs)
        return sum((x - m) ** 2 for x in xs) / len(xs)

    applied = var(vr) > var(v)
    if not applied:
        return list(v), False
    m = sum(vr) / n
    return [x + scale * (r - m) for x, r in zip(v, vr)], True


def gasl_contract_suite(n_calls=1000, seed=0):
    """Mean preservation, gate agreement and the scalar trace identity."""
    rng = nm.RngStream(seed)
    cfg = GaslConfig()
    drift = gate_mismatch = trace = value_gap = 0.0
    for _ in range(n_calls):
        n = int(rng.integers(2, 64))
        kind = rng.uniform()
        if kind < 0.1:
            v = np.full(n, float(rng.normal()))
        elif kind < 0.2:
            v = np.abs(rng.standard_normal(n)) * 1e-3 + 5.0
        else:
            v = rng.standard_normal(n) * float(rng.uniform(0.1, 3)) + float(rng.normal())
        draw_seed = int(rng.integers(0, 2**31))
        v_hat, out = gasl_transform(v, nm.RngStream(draw_seed), cfg)
        ref, ref_applied = _alg1_reference(list(v), nm.RngStream(draw_seed).standard_normal(n),
                                           cfg.mu, cfg.sigma, cfg.scale)
        gate_mismatch += float(out.applied != ref_applied)
        value_gap = max(value_gap, float(np.max(np.abs(v_hat - np.array(ref)))))
        if out.applied:
            drift = max(drift, abs(float(v_hat.mean() - v.mean())))
            beta = nm.sample_lognormal(nm.RngStream(draw_seed), cfg.mu, cfg.sigma, n)
            vr = beta * v
            lhs = nm.empirical_variance(v_hat)
            d, dr = v - v.mean(), vr - vr.mean()
            rhs = nm.empirical_variance(v) + nm.empirical_variance(vr) + 2 * float(np.dot(dr, d) / n)
            trace = max(trace, abs(lhs - rhs))
    return [
        CheckResult("gasl/mean_drift", drift, 1e-12 + np.finfo(float).tiny, n_calls),
        CheckResult("gasl/gate_mismatches", gate_mismatch, 0.5, n_calls),
        CheckResult("gasl/trace_identity", trace, 1e-10, n_calls),
        CheckResult("gasl/value_vs_reference", value_gap, 1e-9, n_calls),
    ]


def random_prunable_net(rng):
    """A random dense or conv network whose group norms span three decades."""
    grouping = "outgoing" if rng.uniform() < 0.5 else "incoming"
    if rng.uniform() < 0.5:
        widths = [int(rng.integers(3, 12)) for _ in range(int(rng.integers(2, 5)))]
        layers = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.dense(a, b), nn.relu()]
        layers = layers[:-1] + [nn.softmax()]
        net = nn.Network(layers, (widths[0],), dense_grouping=grouping, rng=rng.spawn(1))
    else:
        f1, f2 = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        layers = [nn.conv2d(1, f1, 3), nn.relu(), nn.maxpool(2), nn.conv2d(f1, f2, 2), nn.relu(),
                  nn.flatten(), nn.dense(f2 * 16, 5), nn.relu(), nn.dense(5, 3), nn.softmax()]
        net = nn.Network(layers, (1, 12, 12), dense_grouping=grouping, rng=rng.spawn(2))
    for i in net.param_layers():
        g = net.group_matrix(i)
        g *= 10.0 ** rng.uniform(-3, 0, g.shape[0])[:, None]
    return net


def pruning_consistency_suite(n_nets=50, seed=0):
    """Idempotence, sparsity cross-count and the speedup-equals-one rule."""
    rng = nm.RngStream(seed)
    not_idempotent = count_gap = speedup_wrong = 0.0
    for k in range(n_nets):
        net = random_prunable_net(rng)
        # every other net gets a threshold below all norms, so nothing is pruned
        tau = float(rng.uniform(0.005, 0.2)) if k % 2 == 0 else 1e-9
        cfg = PruneConfig(tau=tau)
        once, rep = prune_groups(net, cfg)
        twice, _ = prune_groups(once, cfg)
        not_idempotent += float(not np.array_equal(once.get_flat(), twice.get_flat()))
        # groups within a layer are equal-sized, so both counts must agree
        direct = sparsity_percentages(once)
        via_groups = [100.0 * p / t for p, t in zip(rep.groups_pruned, rep.groups_total)]
        count_gap = max(count_gap, max(abs(a - b) for a, b in zip(direct, via_groups)))
        speedup_wrong += float((rep.flop_ratio == 1.0) != (sum(rep.groups_pruned) == 0)
                               or rep.flop_ratio < 1.0)
    return [
        CheckResult("pruning/idempotence_failures", not_idempotent, 0.5, n_nets),
        CheckResult("pruning/sparsity_cross_count", count_gap, 1e-9, n_nets),
        CheckResult("pruning/speedup_rule_failures", speedup_wrong, 0.5, n_nets),
    ]


def run_all(seed=0, n_gradient=100, n_decomposition=50, n_gasl=1000, n_pruning=50):
    return (gradient_check_suite(n_gradient, seed) + decomposition_suite(n_decomposition, seed=seed)
            + gasl_contract_suite(n_gasl, seed) + pruning_consistency_suite(n_pruning, seed))
