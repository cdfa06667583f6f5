"""Dense float64 arithmetic, seeded randomness and sample statistics.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers
here add the shape checks and conventions the rest of the package relies
on: population (divide-by-k) covariance, deterministic random streams, and
im2col-based 2-D convolution.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientDataError, NumericalError, ParameterError, ShapeError

DTYPE = np.float64


def as_tensor(x, copy=False):
    """Return ``x`` as a C-contiguous float64 array."""
    if copy:
        return np.array(x, dtype=DTYPE, order="C")
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


class RngStream:
    """Single-consumer deterministic random stream.

    Backed by numpy's PCG64 bit generator, whose output is specified
    bit-for-bit across platforms. Standard normals come from numpy's
    ziggurat transform of those uniform draws, which is likewise fixed.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    @property
    def generator(self):
        return self._gen

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size, dtype=DTYPE)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return loc + scale * self.standard_normal(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def spawn(self, key):
        """Derive an independent stream from this one's seed and ``key``."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child

    def __getstate__(self):
        return {"seed": self.seed, "state": self._gen.bit_generator.state}

    def __setstate__(self, state):
        self.seed = state["seed"]
        self._gen = np.random.Generator(np.random.PCG64())
        self._gen.bit_generator.state = state["state"]


def sample_lognormal(rng, mu, sigma, n):
    """Draw ``n`` values ``exp(mu + sigma * y)`` with ``y`` standard normal."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    y = rng.standard_normal(int(n))
    return np.exp(mu + sigma * y)


def empirical_mean(v):
    v = np.asarray(v, dtype=DTYPE)
    if v.size < 1:
        raise InsufficientDataError("mean of an empty tensor")
    return float(v.mean())


def empirical_variance(v):
    """Population variance (divide by n) of all entries of ``v``."""
    v = np.asarray(v, dtype=DTYPE).ravel()
    if v.size < 2:
        raise InsufficientDataError(f"variance needs at least 2 values, got {v.size}")
    d = v - v.mean()
    return float(np.dot(d, d) / v.size)


def empirical_cross_cov(a, b):
    """Population cross-covariance ``E[(a - Ea)(b - Eb)^T]`` over rows.

    ``a`` has shape (k, n), ``b`` has shape (k, m); the result is (n, m).
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"cross-covariance needs (k, n) and (k, m) samples, got {a.shape} and {b.shape}")
    k = a.shape[0]
    if k < 2:
        raise InsufficientDataError(f"covariance needs at least 2 samples, got {k}")
    da = a - a.mean(axis=0)
    db = b - b.mean(axis=0)
    return da.T @ db / k


def empirical_cov_matrix(samples):
    """Population covariance matrix of a (k, n) block of k samples."""
    samples = np.asarray(samples, dtype=DTYPE)
    if samples.ndim != 2:
        raise ShapeError(f"expected a (k, n) sample block, got shape {samples.shape}")
    c = empirical_cross_cov(samples, samples)
    # symmetric by construction up to rounding; make it exact
    return 0.5 * (c + c.T)


def matmul(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def conv_output_size(size, kernel, stride, pad):
    out = (size + 2 * pad - kernel) // stride + 1
    if out < 1:
        raise ShapeError(f"kernel {kernel} does not fit input {size} with pad {pad}")
    return out


def im2col(x, kh, kw, stride, pad):
    """Unfold (N, C, H, W) into a (N*Ho*Wo, C*kh*kw) patch matrix."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _check_conv_shapes(x, w):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")


def conv2d_forward(x, w, b=None, stride=1, pad=0):
    """Cross-correlate ``x`` (N, C, H, W) with ``w`` (F, C, kh, kw)."""
    x = np.asarray(x, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    _check_conv_shapes(x, w)
    f, _, kh, kw = w.shape
    cols, ho, wo = im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(f, -1).T
    if b is not None:
        out += b
    return out.reshape(x.shape[0], ho, wo, f).transpose(0, 3, 1, 2)


def conv2d_backward(dout, x, w, stride=1, pad=0):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward`."""
    x = np.asarray(x, dtype=DTYPE)
    _check_conv_shapes(x, w)
    cols, _, _ = im2col(x, w.shape[2], w.shape[3], stride, pad)
    return conv2d_backward_cols(dout, x.shape, cols, w, stride, pad)


def conv2d_backward_cols(dout, x_shape, cols, w, stride=1, pad=0):
    """Like :func:`conv2d_backward` but reusing the forward patch matrix."""
    n, c, h, wd = x_shape
    f, _, kh, kw = w.shape
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(wd, kw, stride, pad)
    if dout.shape != (n, f, ho, wo):
        raise ShapeError(f"conv2d gradient shape {dout.shape} does not match output {(n, f, ho, wo)}")
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, f)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def maxpool2d_forward(x, size=2):
    """Non-overlapping max pooling (stride == size, no padding).

    Returns the pooled tensor and the argmax mask needed for backward.
    Trailing rows/columns that do not fill a window are dropped.
    """
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool size {size} larger than input {x.shape}")
    xs = x[:, :, :ho * size, :wo * size].reshape(n, c, ho, size, wo, size)
    out = xs.max(axis=(3, 5))
    mask = xs == out[:, :, :, None, :, None]
    # ties: keep only the first maximum in each window
    flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
    first = np.zeros_like(flat)
    idx = flat.argmax(axis=-1)
    np.put_along_axis(first, idx[..., None], True, axis=-1)
    mask = first.reshape(n, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    return out, mask


def maxpool2d_backward(dout, mask, input_shape, size=2):
    n, c, h, w = input_shape
    ho, wo = dout.shape[2], dout.shape[3]
    dx = np.zeros(input_shape, dtype=DTYPE)
    g = mask * dout[:, :, :, None, :, None]
    dx[:, :, :ho * size, :wo * size] = g.reshape(n, c, ho * size, wo * size)
    return dx


def logsumexp(z, axis=-1):
    m = z.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)
