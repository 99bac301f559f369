"""Dense tensor utilities, deterministic RNG, and vectorization helpers.

Tensors are plain ``numpy.ndarray`` values: contiguous, row-major (C order),
IEEE-754 floats. Two precision modes are supported everywhere: float32 for
training and float64 for gradient checking. Mini-batches of images use the
H x W x C x N layout (batch last); fully-connected activations use D x B
(features x batch columns).
"""

import numpy as np

from .errors import ShapeError

FLOAT_DTYPES = {32: np.float32, 64: np.float64}
INDEX_SENTINEL = -1  # marks padding cells in im2col source indices

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)


def dtype_for(precision):
    """Map a precision mode (32 or 64) to the numpy dtype."""
    try:
        return FLOAT_DTYPES[int(precision)]
    except (KeyError, TypeError, ValueError):
        raise ShapeError(f"precision must be 32 or 64, got {precision!r}")


class SeededRng:
    """Deterministic 64-bit generator (splitmix64 stepping).

    The state advances by the odd constant 0x9E3779B97F4A7C15 per draw; each
    output is the finalizer ``z ^= z>>30; z *= 0xBF58476D1CE4E5B9; z ^= z>>27;
    z *= 0x94D049BB133111EB; z ^= z>>31`` applied to the stepped state, all
    modulo 2**64. The integer stream is therefore identical on every platform.
    Uniform floats take the top 53 bits (``(z >> 11) * 2**-53``); normal draws
    are Box-Muller pairs over those uniforms, so float sequences match wherever
    libm's log/cos round identically (in practice, any one platform).
    """

    def __init__(self, seed):
        self.state = int(seed) & _MASK64

    def raw(self, n):
        """Next ``n`` 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ShapeError(f"draw count must be >= 0, got {n}")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self.state) + steps * _GOLDEN
        self.state = (self.state + n * int(_GOLDEN)) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX_A
        z = (z ^ (z >> np.uint64(27))) * _MIX_B
        return z ^ (z >> np.uint64(31))

    def uniform(self, shape=(), low=0.0, high=1.0, dtype=np.float64):
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = (low + (high - low) * u).astype(dtype)
        return out.reshape(shape) if shape else dtype(out[0])

    def normal(self, shape=(), std=1.0, mean=0.0, dtype=np.float64):
        n = int(np.prod(shape)) if shape else 1
        half = (n + 1) // 2
        u1 = (self.raw(half) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u2 = (self.raw(half) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = np.maximum(u1, 2.0**-53)  # keep log finite
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        out = (mean + std * z).astype(dtype)
        return out.reshape(shape) if shape else dtype(out[0])

    def random(self):
        """One uniform double in [0, 1)."""
        return float((int(self.raw(1)[0]) >> 11) * 2.0**-53)

    def integers(self, n, bound):
        """``n`` integers uniform in [0, bound); bias is below 2**-53 * bound."""
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return np.minimum((u * bound).astype(np.int64), bound - 1)

    def permutation(self, n):
        """Deterministic permutation of range(n) via stable key sort."""
        return np.argsort(self.raw(n), kind="stable")

    def get_state(self):
        return self.state

    def set_state(self, state):
        self.state = int(state) & _MASK64


def derive_seed(seed, stream):
    """Independent child seed for a named stream (splitmix64 finalizer)."""
    z = (int(seed) + (stream + 1) * int(_GOLDEN)) & _MASK64
    z = ((z ^ (z >> 30)) * int(_MIX_A)) & _MASK64
    z = ((z ^ (z >> 27)) * int(_MIX_B)) & _MASK64
    return z ^ (z >> 31)


def matmul(a, b):
    """Matrix product with explicit shape validation.

    Delegates to the BLAS-backed ``@`` operator; for a fixed build and thread
    count the summation order is fixed, so results are reproducible per
    precision mode.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    return a @ b


def reshape(x, shape):
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) to {shape}")
    return np.ascontiguousarray(x).reshape(shape)


def transpose(x, axes=None):
    """Transpose returning a fresh contiguous (row-major) array."""
    return np.ascontiguousarray(np.transpose(x, axes))


def elementwise(fn, x):
    """Apply a scalar map over every element, preserving shape and dtype."""
    try:
        y = np.asarray(fn(x))
    except (TypeError, ValueError):
        y = np.vectorize(fn)(x)
    if y.shape != x.shape:
        y = np.vectorize(fn)(x)
    return np.ascontiguousarray(y, dtype=x.dtype)


def add_broadcast(x, bias):
    """Add ``bias`` to ``x``, expanding only axes where bias has extent 1.

    Bias may have fewer axes than ``x``; missing leading axes count as
    extent 1. Any other mismatch is a shape error.
    """
    if bias.ndim > x.ndim:
        raise ShapeError(f"bias rank {bias.shape} exceeds input rank {x.shape}")
    aligned = (1,) * (x.ndim - bias.ndim) + bias.shape
    for xe, be in zip(x.shape, aligned):
        if be != 1 and be != xe:
            raise ShapeError(f"cannot broadcast bias {bias.shape} over {x.shape}")
    return x + bias.reshape(aligned)


def pool_extent(size, window, stride):
    """Number of windows along one padded axis."""
    if size < window:
        raise ShapeError(f"window {window} exceeds padded extent {size}")
    return (size - window) // stride + 1


def im2col_pool(x, window, stride, pad=(0, 0, 0, 0), pad_value=0.0):
    """Gather pooling windows of an H x W x C x N tensor into columns.

    Returns ``(columns, source_indices)``, both shaped (window_rows *
    window_cols) x L with L = H' * W' * C * N in row-major window order.
    ``source_indices`` holds each element's flat offset into the *unpadded*
    input, or -1 for padding cells; padding cells carry ``pad_value`` in
    ``columns``.
    """
    h, w, c, n = x.shape
    wr, wc = window
    sr, sc = stride
    pt, pb, pl, pr = pad
    hp, wp = h + pt + pb, w + pl + pr
    ho = pool_extent(hp, wr, sr)
    wo = pool_extent(wp, wc, sc)

    rows = (np.arange(ho) * sr - pt).reshape(1, 1, ho, 1) + np.arange(wr).reshape(wr, 1, 1, 1)
    cols = (np.arange(wo) * sc - pl).reshape(1, 1, 1, wo) + np.arange(wc).reshape(1, wc, 1, 1)
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)

    # flat offset of (r, cc, ch, b) in row-major H x W x C x N
    plane = (rows * w + cols) * (c * n)  # wr x wc x ho x wo
    chan = (np.arange(c) * n).reshape(1, 1, 1, 1, c, 1)
    batch = np.arange(n).reshape(1, 1, 1, 1, 1, n)
    idx = plane[..., None, None] + chan + batch  # wr x wc x ho x wo x c x n
    idx = np.where(valid[..., None, None], idx, INDEX_SENTINEL)

    flat_idx = idx.reshape(wr * wc, ho * wo * c * n)
    gathered = x.reshape(-1)[np.maximum(flat_idx, 0)]
    columns = np.where(flat_idx == INDEX_SENTINEL, x.dtype.type(pad_value), gathered)
    return columns, flat_idx


def scatter_accumulate(target_shape, indices, values):
    """Sum ``values`` into a zero tensor at flat ``indices``.

    Entries equal to the -1 sentinel are dropped; duplicate indices
    accumulate. Out-of-range non-sentinel indices raise IndexError.
    """
    size = int(np.prod(target_shape))
    idx = np.asarray(indices).reshape(-1)
    vals = np.asarray(values).reshape(-1)
    if idx.shape != vals.shape:
        raise ShapeError(f"indices {idx.shape} and values {vals.shape} disagree")
    bad = (idx < INDEX_SENTINEL) | (idx >= size)
    if bad.any():
        offender = int(idx[bad][0])
        raise IndexError(f"scatter index {offender} outside target of size {size}")
    keep = idx != INDEX_SENTINEL
    out = np.bincount(idx[keep].astype(np.int64), weights=vals[keep], minlength=size)
    return out.reshape(target_shape).astype(vals.dtype, copy=False)
