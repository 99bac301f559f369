"""Frequency-domain 2-D convolution and correlation, plus spatial oracles.

Complex spectra are plain numpy complex arrays (``.real``/``.imag`` views the
matching float planes). Geometry follows the usual shape algebra: with padded
extents Hp x Wp and kernel Kh x Kw, the output is
floor((Hp - Kh) / Sr) + 1  x  floor((Wp - Kw) / Sc) + 1.

Orientation convention: ``conv2_fft`` is TRUE convolution (kernel flipped),
``corr2_fft`` slides the kernel unflipped. The convolutional layer's forward
pass uses true convolution, which mirrors learned kernels relative to most
frameworks but changes nothing about learnability.

Strides are implemented by computing the full stride-1 result and
subsampling, so strided outputs equal subsampled unstrided ones exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class ConvGeometry:
    """Input/kernel extents plus padding (top, bottom, left, right) and stride."""

    input_hw: tuple
    kernel_hw: tuple
    pad: tuple = (0, 0, 0, 0)
    stride: tuple = (1, 1)

    def __post_init__(self):
        h, w = self.input_hw
        kh, kw = self.kernel_hw
        pt, pb, pl, pr = self.pad
        sr, sc = self.stride
        if min(h, w, kh, kw) < 1 or min(pt, pb, pl, pr) < 0 or min(sr, sc) < 1:
            raise ShapeError(f"invalid geometry: {self}")
        if h + pt + pb < kh or w + pl + pr < kw:
            raise ShapeError(
                f"kernel {self.kernel_hw} larger than padded input "
                f"({h + pt + pb}, {w + pl + pr})"
            )

    @property
    def padded_hw(self):
        return (self.input_hw[0] + self.pad[0] + self.pad[1],
                self.input_hw[1] + self.pad[2] + self.pad[3])

    @property
    def output_hw(self):
        hp, wp = self.padded_hw
        return ((hp - self.kernel_hw[0]) // self.stride[0] + 1,
                (wp - self.kernel_hw[1]) // self.stride[1] + 1)


def next_pow2(n):
    p = 1
    while p < n:
        p *= 2
    return p


def fft2(x):
    """Forward 2-D DFT at the input's own extents."""
    if x.ndim != 2 or min(x.shape) < 1:
        raise ShapeError(f"fft2 needs a non-empty 2-D input, got {x.shape}")
    return np.fft.fft2(x)


def ifft2(spectrum):
    """Inverse 2-D DFT, returning the real plane."""
    if spectrum.ndim != 2 or min(spectrum.shape) < 1:
        raise ShapeError(f"ifft2 needs a non-empty 2-D spectrum, got {spectrum.shape}")
    return np.real(np.fft.ifft2(spectrum))


def _pad2(x, pad):
    pt, pb, pl, pr = pad
    if max(pad) == 0:
        return x
    widths = ((pt, pb), (pl, pr)) + ((0, 0),) * (x.ndim - 2)
    return np.pad(x, widths)


def _complex_dtype(real_dtype):
    return np.complex64 if real_dtype == np.float32 else np.complex128


def _bank_matmul(a, b):
    # per-frequency product over stacked leading axes; contraction over axis 2
    return np.matmul(a.transpose(0, 1, 3, 2), b).transpose(0, 1, 3, 2)


class ConvBank:
    """FFT engine for one convolutional layer: shared spectra, all channels.

    Input layout H x W x Cin x B, kernels Kh x Kw x Cin x Cout. FFT extents
    are the next power of two at or above (padded + kernel - 1) per axis.
    """

    def __init__(self, geom: ConvGeometry):
        self.geom = geom
        hp, wp = geom.padded_hw
        kh, kw = geom.kernel_hw
        self.fft_hw = (next_pow2(hp + kh - 1), next_pow2(wp + kw - 1))
        self._x_spec = None
        self._k_spec = None

    def forward(self, x, kernels):
        geom = self.geom
        kh, kw = geom.kernel_hw
        sr, sc = geom.stride
        hv = geom.padded_hw[0] - kh + 1
        wv = geom.padded_hw[1] - kw + 1
        cdt = _complex_dtype(x.dtype)

        xp = _pad2(x, geom.pad)
        xs = np.fft.rfft2(xp, s=self.fft_hw, axes=(0, 1)).astype(cdt, copy=False)
        ks = np.fft.rfft2(kernels, s=self.fft_hw, axes=(0, 1)).astype(cdt, copy=False)
        # ys[f,g,o,b] = sum_i xs[f,g,i,b] * ks[f,g,i,o]
        ys = np.matmul(ks.transpose(0, 1, 3, 2), xs)
        full = np.fft.irfft2(ys, s=self.fft_hw, axes=(0, 1))
        y = full[kh - 1:kh - 1 + hv:sr, kw - 1:kw - 1 + wv:sc]
        self._x_spec, self._k_spec = xs, ks
        return np.ascontiguousarray(y.astype(x.dtype, copy=False))

    def backward(self, upstream, x_dtype):
        """Gradients for the cached forward call.

        Returns (input gradient, kernel gradient). Strides are undone by
        zero-upsampling the upstream map to the stride-1 grid before the
        full-size correlations.
        """
        if self._x_spec is None:
            raise ShapeError("backward called before forward")
        geom = self.geom
        kh, kw = geom.kernel_hw
        sr, sc = geom.stride
        pt, _, pl, _ = geom.pad
        h, w = geom.input_hw
        hp, wp = geom.padded_hw
        hv, wv = hp - kh + 1, wp - kw + 1
        cdt = _complex_dtype(x_dtype)

        cin = self._x_spec.shape[2]
        cout = upstream.shape[2]
        batch = upstream.shape[3]
        up = np.zeros((hv, wv, cout, batch), dtype=upstream.dtype)
        up[::sr, ::sc] = upstream
        us = np.fft.rfft2(up, s=self.fft_hw, axes=(0, 1)).astype(cdt, copy=False)

        # dx[f,g,i,b] = sum_o us[f,g,o,b] * conj(ks[f,g,i,o])
        dxs = np.matmul(np.conj(self._k_spec), us)
        dxp = np.fft.irfft2(dxs, s=self.fft_hw, axes=(0, 1))
        dxp = np.roll(dxp, (kh - 1, kw - 1), axis=(0, 1))[:hp, :wp]
        dx = dxp[pt:pt + h, pl:pl + w]

        # dk[f,g,i,o] = sum_b xs[f,g,i,b] * conj(us[f,g,o,b])
        dks = np.matmul(self._x_spec, np.conj(us).transpose(0, 1, 3, 2))
        dk_corr = np.fft.irfft2(dks, s=self.fft_hw, axes=(0, 1))[:kh, :kw]
        dk = dk_corr[::-1, ::-1]  # flip the correlation output

        return (np.ascontiguousarray(dx.astype(x_dtype, copy=False)),
                np.ascontiguousarray(dk.astype(x_dtype, copy=False)))


def conv2_fft(x, k, geom: ConvGeometry):
    """True 2-D convolution of the padded input, subsampled by stride."""
    _check_single(x, k, geom)
    bank = ConvBank(geom)
    y = bank.forward(x[:, :, None, None], k[:, :, None, None])
    return y[:, :, 0, 0]


def corr2_fft(x, k, geom: ConvGeometry):
    """Cross-correlation (no kernel flip) via conjugate spectra."""
    _check_single(x, k, geom)
    kh, kw = geom.kernel_hw
    sr, sc = geom.stride
    hv = geom.padded_hw[0] - kh + 1
    wv = geom.padded_hw[1] - kw + 1
    size = (next_pow2(geom.padded_hw[0] + kh - 1), next_pow2(geom.padded_hw[1] + kw - 1))
    xp = _pad2(x, geom.pad)
    spec = np.fft.rfft2(xp, s=size) * np.conj(np.fft.rfft2(k, s=size))
    full = np.fft.irfft2(spec, s=size)
    return np.ascontiguousarray(full[:hv:sr, :wv:sc].astype(x.dtype, copy=False))


def direct_conv2(x, k, geom: ConvGeometry):
    """Spatial-domain reference convolution (kernel-tap accumulation)."""
    _check_single(x, k, geom)
    return _direct(x, k[::-1, ::-1], geom)


def direct_corr2(x, k, geom: ConvGeometry):
    """Spatial-domain reference correlation."""
    _check_single(x, k, geom)
    return _direct(x, k, geom)


def _direct(x, taps, geom):
    kh, kw = geom.kernel_hw
    sr, sc = geom.stride
    hv = geom.padded_hw[0] - kh + 1
    wv = geom.padded_hw[1] - kw + 1
    xp = _pad2(x.astype(np.float64), geom.pad)
    out = np.zeros((hv, wv))
    for a in range(kh):
        for b in range(kw):
            out += float(taps[a, b]) * xp[a:a + hv, b:b + wv]
    return out[::sr, ::sc].astype(x.dtype)


def _check_single(x, k, geom):
    if x.ndim != 2 or k.ndim != 2:
        raise ShapeError(f"expected 2-D input and kernel, got {x.shape}, {k.shape}")
    if tuple(x.shape) != tuple(geom.input_hw) or tuple(k.shape) != tuple(geom.kernel_hw):
        raise ShapeError(
            f"geometry {geom.input_hw}/{geom.kernel_hw} does not match "
            f"operands {x.shape}/{k.shape}"
        )
