"""Group pruning, sparsity accounting and FLOP-ratio speedup estimates.

FLOPs are multiply-accumulate counts of the dense and conv layers
(pooling, ReLU and softmax are free). A unit -- a dense neuron or a conv
channel -- is *dead* when all of its incoming weights or all of its
outgoing weights are zero; dead units are removed end to end, so a
pruned neuron also shrinks the input dimension of the layer after it and
vice versa. The dense-to-pruned ratio is reported as ``flop_ratio``; it is
an analytic count, not a wall-clock measurement.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .nn import group_norms

PRUNE_MODES = ("relative_to_max", "absolute")


@dataclass(frozen=True)
class PruneConfig:
    tau: float = 0.01
    mode: str = "relative_to_max"
    cascade: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.mode == "relative_to_max" and not self.tau < 1:
            raise ParameterError(f"relative tau must be in (0, 1), got {self.tau}")
        if self.mode not in PRUNE_MODES:
            raise ParameterError(f"mode must be one of {PRUNE_MODES}, got {self.mode!r}")


@dataclass
class SparsityReport:
    """Per-layer sparsity, group survival and FLOP accounting.

    Serialised with :meth:`to_json` using a fixed, sorted key schema.
    """

    layer_names: list
    per_layer_sparsity_pct: list
    groups_total: list
    groups_pruned: list
    total_sparsity_pct: float = 0.0
    flops_dense: int = 0
    flops_pruned: int = 0
    flop_ratio: float = 1.0
    eval_error_pct: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def speedup(self):
        return self.flop_ratio

    def as_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def table_row(self, method="model"):
        spars = "-".join(f"{s:.0f}" for s in self.per_layer_sparsity_pct)
        err = "n/a" if self.eval_error_pct is None else f"{self.eval_error_pct:.2f}"
        return f"{method:<28} {err:>9} {spars + ' / ' + format(self.flop_ratio, '.2f') + 'x':>28}"

    def table(self, method="model"):
        head = f"{'Method':<28} {'Error(%)':>9} {'Sparsity(%) / flop_ratio':>28}"
        return "\n".join([head, "-" * len(head), self.table_row(method)])


def _layer_name(net, i):
    return f"{net.layers[i].kind}{i}"


def sparsity_percentages(net):
    """Percentage of exactly-zero weight entries in each weighted layer."""
    out = []
    for i in net.param_layers():
        W = net.params[i]["W"]
        out.append(float(100.0 * np.count_nonzero(W == 0) / W.size))
    return out


def total_sparsity(net):
    """Percentage of exactly-zero entries over all weight tensors together."""
    zeros = sum(np.count_nonzero(net.params[i]["W"] == 0) for i in net.param_layers())
    total = sum(net.params[i]["W"].size for i in net.param_layers())
    return float(100.0 * zeros / total)


def prune_mask(net, layer, cfg):
    """Boolean mask over groups of ``layer`` that fall below the threshold."""
    norms = group_norms(net, layer).norms
    if cfg.mode == "absolute":
        return norms < cfg.tau
    top = norms.max()
    if top == 0:
        return np.ones(norms.shape, dtype=bool)
    return norms < cfg.tau * top


def prune_groups(net, cfg=PruneConfig()):
    """Zero every group whose norm is below threshold; return ``(pruned, report)``.

    The input network is left untouched. With ``cfg.cascade`` the weights of
    units made dead by the pruning are zeroed as well (constant outputs of
    dead units are folded into the next layer's bias).
    """
    pruned = net.copy()
    totals, counts, notes = [], [], []
    for i in net.param_layers():
        mask = prune_mask(net, i, cfg)
        if group_norms(net, i).norms.max() == 0:
            msg = f"layer {_layer_name(net, i)} has all-zero weights; every group pruned"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        g = pruned.group_matrix(i)
        g[mask] = 0.0
        totals.append(int(mask.size))
        counts.append(int(mask.sum()))
    if cfg.cascade:
        cascade_dead_units(pruned)
    report = SparsityReport(
        layer_names=[_layer_name(net, i) for i in net.param_layers()],
        per_layer_sparsity_pct=sparsity_percentages(pruned),
        groups_total=totals, groups_pruned=counts, total_sparsity_pct=total_sparsity(pruned),
        warnings=notes)
    fill_flops(report, net, pruned)
    return pruned, report


# -- unit-level liveness ----------------------------------------------------

class _Link:
    """How the output units of one weighted layer feed the next one."""

    def __init__(self, net, a, b):
        self.a, self.b = a, b
        between = [net.layers[k].kind for k in range(a + 1, b)]
        self.relu = "relu" in between
        self.flatten = "flatten" in between
        if self.flatten:
            shape = net.shapes[[k for k in range(a + 1, b) if net.layers[k].kind == "flatten"][0]]
            self.block = int(np.prod(shape[1:]))
        else:
            self.block = 1


def _in_rows(net, i, W):
    """Per-input-unit 'has any outgoing weight' for weighted layer ``i``."""
    if net.layers[i].kind == "dense":
        return np.any(W != 0, axis=1)
    return np.any(W != 0, axis=(0, 2, 3))


def _out_cols(net, i, W):
    if net.layers[i].kind == "dense":
        return np.any(W != 0, axis=0)
    return np.any(W != 0, axis=(1, 2, 3))


def _zero_inputs(net, i, W, dead):
    if net.layers[i].kind == "dense":
        W[dead, :] = 0.0
    else:
        W[:, dead] = 0.0


def _zero_outputs(net, i, W, dead):
    if net.layers[i].kind == "dense":
        W[:, dead] = 0.0
    else:
        W[dead] = 0.0


def _propagate(net, weights, biases=None):
    """Zero weights of dead units until a fixed point; mutates ``weights``.

    When ``biases`` is given, the constant output of a unit whose incoming
    weights vanished is folded into the next layer's bias before its
    outgoing weights are dropped.
    """
    idx = net.param_layers()
    links = [_Link(net, a, b) for a, b in zip(idx[:-1], idx[1:])]
    changed = True
    while changed:
        changed = False
        for link in links:
            Wa, Wb = weights[link.a], weights[link.b]
            out_alive = _out_cols(net, link.a, Wa)
            in_alive = _in_rows(net, link.b, Wb).reshape(-1, link.block).any(axis=1)
            # constant unit still consumed downstream
            dead_const = ~out_alive & in_alive
            if dead_const.any():
                if biases is not None:
                    const = biases[link.a][dead_const]
                    if link.relu:
                        const = np.maximum(const, 0.0)
                    _fold(net, link, weights, biases, np.flatnonzero(dead_const), const)
                _zero_inputs(net, link.b, Wb, np.repeat(dead_const, link.block))
                changed = True
            # unit computed but never consumed
            dead_sink = out_alive & ~in_alive
            if dead_sink.any():
                _zero_outputs(net, link.a, Wa, dead_sink)
                changed = True
    return weights


def _fold(net, link, weights, biases, units, const):
    Wb = weights[link.b]
    if net.layers[link.b].kind == "dense":
        if link.block > 1:
            rows = (units[:, None] * link.block + np.arange(link.block)).ravel()
            contrib = np.repeat(const, link.block) @ Wb[rows]
        else:
            contrib = const @ Wb[units]
    else:
        contrib = np.einsum("c,fc->f", const, Wb[:, units].sum(axis=(2, 3)))
    biases[link.b] = biases[link.b] + contrib


def cascade_dead_units(net):
    """Zero weights of units with no live input or no live output, in place."""
    idx = net.param_layers()
    weights = {i: net.params[i]["W"] for i in idx}
    biases = {i: net.params[i]["b"].copy() for i in idx}
    _propagate(net, weights, biases)
    for i in idx:
        net.params[i]["b"] = biases[i]
    return net


def _layer_macs(net, i, W):
    if net.layers[i].kind == "dense":
        return int(_in_rows(net, i, W).sum()) * int(_out_cols(net, i, W).sum())
    k = W.shape[2] * W.shape[3]
    ho, wo = net.shapes[i + 1][1:]
    return int(_in_rows(net, i, W).sum()) * int(_out_cols(net, i, W).sum()) * k * ho * wo


def dense_flops(net):
    """MAC count of the full architecture, ignoring weight values."""
    total = 0
    for i in net.param_layers():
        W = net.params[i]["W"]
        total += _layer_macs(net, i, np.ones_like(W))
    return total


def pruned_flops(net):
    """MAC count after removing dead units end to end."""
    weights = {i: net.params[i]["W"].copy() for i in net.param_layers()}
    _propagate(net, weights)
    return sum(_layer_macs(net, i, weights[i]) for i in weights)


def estimate_speedup(net, pruned):
    """Dense-to-pruned FLOP ratio (``flop_ratio``) of ``pruned`` vs ``net``'s architecture."""
    if [s.kind for s in net.layers] != [s.kind for s in pruned.layers]:
        raise ParameterError("estimate_speedup needs two networks of the same architecture")
    dense = dense_flops(net)
    sparse = pruned_flops(pruned)
    return dense / sparse if sparse else float("inf")


def fill_flops(report, net, pruned):
    report.flops_dense = dense_flops(net)
    report.flops_pruned = pruned_flops(pruned)
    report.flop_ratio = (report.flops_dense / report.flops_pruned
                         if report.flops_pruned else float("inf"))
    return report


def write_group_norms_csv(net, path):
    """One row per group: layer index, layer kind, group index, l2 norm."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer", "kind", "group", "norm"])
        for i in net.param_layers():
            for j, v in enumerate(group_norms(net, i).norms):
                w.writerow([i, net.layers[i].kind, j, repr(float(v))])
