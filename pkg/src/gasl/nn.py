"""Layers, networks, forward/backward passes and the parameter grouping view.

A :class:`Network` is an ordered list of :class:`LayerSpec` plus one
parameter dict per layer (``{"W": ..., "b": ...}`` for dense and conv
layers, empty otherwise). Every dense and conv layer is *groupable*: its
weights are partitioned into equal-sized groups, one per neuron or output
channel. :meth:`Network.group_matrix` exposes that partition as a 2-D view
``(n_groups, group_size)`` so norms and penalties vectorise cleanly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .errors import DataError, ParameterError, QueryError, ShapeError

LAYER_KINDS = ("dense", "conv2d", "maxpool", "relu", "flatten", "softmax")
GROUPING_MODES = ("structured", "unstructured")
DENSE_GROUPINGS = ("outgoing", "incoming")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")

    @property
    def has_params(self):
        return self.kind in ("dense", "conv2d")


def dense(n_in, n_out):
    return LayerSpec("dense", {"in": int(n_in), "out": int(n_out)})


def conv2d(in_channels, out_channels, kernel, stride=1, pad=0):
    return LayerSpec("conv2d", {"in": int(in_channels), "out": int(out_channels),
                                "kernel": int(kernel), "stride": int(stride), "pad": int(pad)})


def maxpool(size=2):
    return LayerSpec("maxpool", {"size": int(size)})


def relu():
    return LayerSpec("relu")


def flatten():
    return LayerSpec("flatten")


def softmax():
    return LayerSpec("softmax")


@dataclass(frozen=True)
class ParamGroupView:
    layer_index: int
    group_index: int
    member_indices: np.ndarray


@dataclass
class GroupNormVector:
    layer_index: int
    norms: np.ndarray


class Network:
    """A feed-forward stack of layers with float64 parameters.

    Parameters
    ----------
    layers : list of LayerSpec
    input_shape : tuple
        Shape of a single input sample, e.g. ``(784,)`` or ``(1, 28, 28)``.
    dense_grouping : {"outgoing", "incoming"}
        Which weights of a dense neuron form its group. ``"outgoing"`` groups
        the row ``W[j, :]`` that neuron ``j`` of the layer input feeds
        forward; ``"incoming"`` groups the column ``W[:, j]`` producing
        output unit ``j``.
    rng : RngStream or int, optional
        Source for He-normal weight initialisation; biases start at zero.
    """

    def __init__(self, layers, input_shape, dense_grouping="outgoing", rng=None):
        if dense_grouping not in DENSE_GROUPINGS:
            raise ParameterError(f"dense_grouping must be one of {DENSE_GROUPINGS}, got {dense_grouping!r}")
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dense_grouping = dense_grouping
        self.shapes = self._infer_shapes()
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = nm.RngStream(0 if rng is None else int(rng))
        self.params = [self._init_params(spec, rng) for spec in self.layers]

    # -- construction -----------------------------------------------------

    def _infer_shapes(self):
        shape = self.input_shape
        shapes = [shape]
        for i, spec in enumerate(self.layers):
            d = spec.dims
            if spec.kind == "dense":
                if len(shape) != 1 or shape[0] != d["in"]:
                    raise ShapeError(f"layer {i} dense expects input ({d['in']},), got {shape}")
                shape = (d["out"],)
            elif spec.kind == "conv2d":
                if len(shape) != 3 or shape[0] != d["in"]:
                    raise ShapeError(f"layer {i} conv2d expects {d['in']} input channels, got shape {shape}")
                ho = nm.conv_output_size(shape[1], d["kernel"], d["stride"], d["pad"])
                wo = nm.conv_output_size(shape[2], d["kernel"], d["stride"], d["pad"])
                shape = (d["out"], ho, wo)
            elif spec.kind == "maxpool":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} maxpool expects a (C, H, W) input, got {shape}")
                shape = (shape[0], shape[1] // d["size"], shape[2] // d["size"])
            elif spec.kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif spec.kind == "softmax" and i != len(self.layers) - 1:
                raise ShapeError("softmax must be the final layer")
            shapes.append(shape)
        return shapes

    @staticmethod
    def _init_params(spec, rng):
        d = spec.dims
        if spec.kind == "dense":
            std = np.sqrt(2.0 / d["in"])
            return {"W": rng.normal(0.0, std, (d["in"], d["out"])), "b": np.zeros(d["out"])}
        if spec.kind == "conv2d":
            fan_in = d["in"] * d["kernel"] ** 2
            std = np.sqrt(2.0 / fan_in)
            shape = (d["out"], d["in"], d["kernel"], d["kernel"])
            return {"W": rng.normal(0.0, std, shape), "b": np.zeros(d["out"])}
        return {}

    def copy(self):
        return copy.deepcopy(self)

    # -- parameter access -------------------------------------------------

    @property
    def n_classes(self):
        return self.shapes[-1][0]

    def param_layers(self):
        """Indices of layers carrying weights (dense and conv)."""
        return [i for i, s in enumerate(self.layers) if s.has_params]

    groupable_layers = param_layers

    def n_params(self):
        return sum(p.size for layer in self.params for p in layer.values())

    def get_flat(self):
        return np.concatenate([p.ravel() for layer in self.params for p in layer.values()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=nm.DTYPE)
        if flat.size != self.n_params():
            raise ShapeError(f"flat vector has {flat.size} entries, network has {self.n_params()}")
        pos = 0
        for layer in self.params:
            for k, p in layer.items():
                layer[k] = flat[pos:pos + p.size].reshape(p.shape).copy()
                pos += p.size

    def zeros_like_params(self):
        return [{k: np.zeros_like(v) for k, v in layer.items()} for layer in self.params]

    # -- grouping view ----------------------------------------------------

    def _check_groupable(self, layer):
        if not 0 <= layer < len(self.layers):
            raise QueryError(f"layer index {layer} out of range")
        if not self.layers[layer].has_params:
            raise QueryError(f"layer {layer} ({self.layers[layer].kind}) has no weight groups")

    def group_matrix(self, layer, mode="structured"):
        """Weights of ``layer`` viewed as ``(n_groups, group_size)``.

        The result is a view where possible; for incoming dense grouping it
        is a transposed view, so writes still land in the weight tensor.
        """
        self._check_groupable(layer)
        if mode not in GROUPING_MODES:
            raise ParameterError(f"grouping mode must be one of {GROUPING_MODES}, got {mode!r}")
        W = self.params[layer]["W"]
        if mode == "unstructured":
            return W.reshape(-1, 1)
        if self.layers[layer].kind == "conv2d":
            return W.reshape(W.shape[0], -1)
        return W if self.dense_grouping == "outgoing" else W.T

    def ungroup(self, layer, gmat, mode="structured"):
        """Inverse of :meth:`group_matrix` for an arbitrary same-shaped array."""
        W = self.params[layer]["W"]
        if mode == "unstructured" or self.layers[layer].kind == "conv2d":
            return gmat.reshape(W.shape)
        return gmat if self.dense_grouping == "outgoing" else gmat.T

    def group_count(self, layer, mode="structured"):
        return self.group_matrix(layer, mode).shape[0]

    def group_counts(self, mode="structured"):
        return [self.group_count(i, mode) for i in self.param_layers()]

    def groups(self, layer, mode="structured"):
        """Explicit :class:`ParamGroupView` list (flat indices into ``W``)."""
        W = self.params[layer]["W"]
        idx = np.arange(W.size).reshape(W.shape)
        probe = Network.__new__(Network)
        probe.layers, probe.dense_grouping = self.layers, self.dense_grouping
        probe.params = [dict(p) for p in self.params]
        probe.params[layer] = {"W": idx, "b": self.params[layer]["b"]}
        gm = probe.group_matrix(layer, mode)
        return [ParamGroupView(layer, j, np.array(gm[j])) for j in range(gm.shape[0])]

    # -- passes -----------------------------------------------------------

    def _prepare_input(self, x):
        x = np.asarray(x, dtype=nm.DTYPE)
        want = self.input_shape
        if x.shape[1:] != want:
            if int(np.prod(x.shape[1:])) == int(np.prod(want)):
                x = x.reshape((x.shape[0],) + want)
            else:
                raise ShapeError(f"batch shape {x.shape} does not match input shape {want}")
        return x

    def forward(self, x):
        """Return ``(logits, cache)``; the final softmax is not applied."""
        h = self._prepare_input(x)
        cache = []
        for spec, p in zip(self.layers, self.params):
            k = spec.kind
            if k == "dense":
                cache.append(h)
                h = h @ p["W"] + p["b"]
            elif k == "conv2d":
                d = spec.dims
                cols, ho, wo = nm.im2col(h, d["kernel"], d["kernel"], d["stride"], d["pad"])
                cache.append((h.shape, cols))
                f = p["W"].shape[0]
                h = (cols @ p["W"].reshape(f, -1).T + p["b"]).reshape(h.shape[0], ho, wo, f).transpose(0, 3, 1, 2)
            elif k == "maxpool":
                out, mask = nm.maxpool2d_forward(h, spec.dims["size"])
                cache.append((h.shape, mask))
                h = out
            elif k == "relu":
                cache.append(h > 0)
                h = h * cache[-1]
            elif k == "flatten":
                cache.append(h.shape)
                h = h.reshape(h.shape[0], -1)
            else:  # softmax: logits are returned, the loss applies it
                cache.append(None)
        return h, cache

    def backward(self, cache, dlogits):
        """Back-propagate ``dlogits`` through the cached forward pass."""
        grads = self.zeros_like_params()
        g = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            spec, p, c = self.layers[i], self.params[i], cache[i]
            k = spec.kind
            if k == "dense":
                grads[i]["W"] = c.T @ g
                grads[i]["b"] = g.sum(axis=0)
                g = g @ p["W"].T
            elif k == "conv2d":
                d = spec.dims
                shape, cols = c
                g, grads[i]["W"], grads[i]["b"] = nm.conv2d_backward_cols(
                    g, shape, cols, p["W"], d["stride"], d["pad"])
            elif k == "maxpool":
                shape, mask = c
                g = nm.maxpool2d_backward(g, mask, shape, spec.dims["size"])
            elif k == "relu":
                g = g * c
            elif k == "flatten":
                g = g.reshape(c)
        return grads

    def predict_proba(self, x, batch_size=1000):
        out = []
        for s in range(0, len(x), batch_size):
            logits, _ = self.forward(x[s:s + batch_size])
            out.append(nm.softmax(logits))
        return np.concatenate(out)

    def predict(self, x, batch_size=1000):
        out = []
        for s in range(0, len(x), batch_size):
            logits, _ = self.forward(x[s:s + batch_size])
            out.append(logits.argmax(axis=1))
        return np.concatenate(out)

    def error_rate(self, x, y, batch_size=1000):
        """Classification error in percent."""
        y = np.asarray(y)
        if len(y) == 0:
            raise DataError("cannot evaluate on an empty dataset")
        return float(100.0 * np.mean(self.predict(x, batch_size) != y))

    def __repr__(self):
        kinds = "-".join(s.kind for s in self.layers)
        return f"Network({kinds}, params={self.n_params()}, dense_grouping={self.dense_grouping!r})"


def check_labels(labels, n_classes, n=None):
    labels = np.asarray(labels)
    if labels.ndim != 1 or (n is not None and len(labels) != n):
        raise DataError(f"labels must be a 1-D array of length {n}, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes
                        or not np.issubdtype(labels.dtype, np.integer)):
        raise DataError(f"labels must be integers in [0, {n_classes}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. ``logits``."""
    labels = check_labels(labels, logits.shape[1], logits.shape[0])
    n = logits.shape[0]
    lse = nm.logsumexp(logits, axis=1)
    loss = float(np.mean(lse - logits[np.arange(n), labels]))
    d = np.exp(logits - lse[:, None])
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def loss_and_grads(net, x, labels):
    logits, cache = net.forward(x)
    loss, dlogits = cross_entropy(logits, labels)
    return loss, net.backward(cache, dlogits)


def group_norms(net, layer, mode="structured"):
    """Per-group l2 norms of ``layer``'s weights (biases never included)."""
    g = net.group_matrix(layer, mode)
    return GroupNormVector(layer, np.sqrt(np.einsum("ij,ij->i", g, g)))


def build_mlp(rng=None, dense_grouping="outgoing"):
    """784-500-300-10 ReLU perceptron; one group per neuron's outgoing weights."""
    layers = [dense(784, 500), relu(), dense(500, 300), relu(), dense(300, 10), softmax()]
    return Network(layers, (784,), dense_grouping=dense_grouping, rng=rng)


def build_lenet(rng=None, dense_grouping="incoming"):
    """LeNet-5-Caffe: conv20(5) - pool2 - conv50(5) - pool2 - fc500 - fc10.

    Groups are conv output channels and, with the default ``"incoming"``
    dense grouping, fully-connected output neurons: ``[20, 50, 500, 10]``.
    """
    layers = [conv2d(1, 20, 5), maxpool(2), conv2d(20, 50, 5), maxpool(2), flatten(),
              dense(800, 500), relu(), dense(500, 10), softmax()]
    return Network(layers, (1, 28, 28), dense_grouping=dense_grouping, rng=rng)


def build_softmax_regression(n_features, n_classes=10, rng=None):
    """Single dense layer; the convex case used for sanity runs."""
    return Network([dense(n_features, n_classes), softmax()], (n_features,), rng=rng)


ARCHITECTURES = {"mlp": build_mlp, "lenet": build_lenet}


def build(arch, rng=None, **kwargs):
    try:
        return ARCHITECTURES[arch](rng=rng, **kwargs)
    except KeyError:
        raise ParameterError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
