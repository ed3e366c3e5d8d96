"""Image-shaped autodiff primitives: convolution, pooling, resampling,
per-pixel kernel application. All layouts are batch x channel x height x width.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import DimensionError
from .tensor import Tensor, _make


def _im2col(xp, k, stride, out_h, out_w):
    """Patch matrix [B, C*k*k, out_h*out_w] from an already padded input."""
    b, c, hp, wp = xp.shape
    sb, sc, sh, sw = xp.strides
    view = as_strided(
        xp,
        shape=(b, c, k, k, out_h, out_w),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return view.reshape(b, c * k * k, out_h * out_w)


def _pad_hw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv_raw(x, w, stride, padding):
    """Grouped-free cross-correlation core. x [B,C,H,W], w [O,C,k,k]."""
    b, c, h, wd = x.shape
    o, _, k, _ = w.shape
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (wd + 2 * padding - k) // stride + 1
    cols = _im2col(_pad_hw(x, padding), k, stride, out_h, out_w)
    flat = cols.transpose(1, 0, 2).reshape(c * k * k, b * out_h * out_w)
    y = w.reshape(o, -1) @ flat
    return y.reshape(o, b, out_h, out_w).transpose(1, 0, 2, 3), flat


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlation with odd square kernels and zero padding.

    x: [B, Cin, H, W]; weight: [Cout, Cin/groups, k, k]; bias: [Cout] or None.
    Output spatial size (H + 2*padding - k) // stride + 1.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be rank 4, got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d: weight must be rank 4, got {weight.shape}")
    b, cin, h, wd = x.shape
    cout, cg, k, k2 = weight.shape
    if k != k2:
        raise DimensionError(f"conv2d: kernel must be square, got {k}x{k2}")
    if k % 2 == 0:
        raise DimensionError(f"conv2d: kernel extent {k} must be odd")
    if cin % groups != 0:
        raise DimensionError(
            f"conv2d: input channel axis extent {cin} not divisible by {groups} groups"
        )
    if cg != cin // groups:
        raise DimensionError(
            f"conv2d: weight channel axis expects {cin // groups} (Cin/groups), got {cg}"
        )
    if cout % groups != 0:
        raise DimensionError(
            f"conv2d: output channel axis extent {cout} not divisible by {groups} groups"
        )
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(
            f"conv2d: bias axis expects extent {cout}, got {bias.shape}"
        )
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise DimensionError(
            f"conv2d: spatial axes {h}x{wd} (pad {padding}) smaller than kernel {k}"
        )

    og = cout // groups
    outs = []
    for g in range(groups):
        xg = x.data[:, g * cg : (g + 1) * cg]
        wg = weight.data[g * og : (g + 1) * og]
        yg, _ = _conv_raw(xg, wg, stride, padding)
        outs.append(yg)
    out = outs[0] if groups == 1 else np.concatenate(outs, axis=1)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    out_h, out_w = out.shape[2], out.shape[3]

    def backward(grad):
        for g in range(groups):
            gg = grad[:, g * og : (g + 1) * og]
            wg = weight.data[g * og : (g + 1) * og]
            if weight.requires_grad:
                xg = x.data[:, g * cg : (g + 1) * cg]
                cols = _im2col(_pad_hw(xg, padding), k, stride, out_h, out_w)
                flat = cols.transpose(1, 0, 2).reshape(cg * k * k, b * out_h * out_w)
                gflat = gg.transpose(1, 0, 2, 3).reshape(og, -1)
                dw = gflat @ flat.T
                if weight.grad is None:
                    weight.grad = np.zeros_like(weight.data)
                weight.grad[g * og : (g + 1) * og] += dw.reshape(og, cg, k, k)
            if x.requires_grad:
                # dX = correlation of the (dilated) output grad with the
                # spatially flipped, channel-swapped weights.
                if stride > 1:
                    dil_h = (out_h - 1) * stride + 1
                    dil_w = (out_w - 1) * stride + 1
                    gd = np.zeros((b, og, dil_h, dil_w), dtype=grad.dtype)
                    gd[:, :, ::stride, ::stride] = gg
                else:
                    gd = gg
                rem_h = h + 2 * padding - k - (out_h - 1) * stride
                rem_w = wd + 2 * padding - k - (out_w - 1) * stride
                if rem_h or rem_w:
                    gd = np.pad(gd, ((0, 0), (0, 0), (0, rem_h), (0, rem_w)))
                wt = wg.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1].copy()
                dxg, _ = _conv_raw(gd, wt, 1, k - 1 - padding)
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad[:, g * cg : (g + 1) * cg] += dxg
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(grad.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward)


def avg_pool2d(x, window=2):
    """Non-overlapping window-mean downsampling (spatial extents must divide)."""
    if window != 2:
        raise DimensionError("avg_pool2d: only 2x2 windows are supported")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2d: spatial axes {h}x{w} must be even")
    # Accumulated member-by-member so a convex pooling with uniform weights
    # reproduces it bitwise.
    out = None
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        term = x.data[:, :, dy::2, dx::2] * x.data.dtype.type(0.25)
        out = term if out is None else out + term

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            q = x.data.dtype.type(0.25)
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                full[:, :, dy::2, dx::2] += g * q
            x.accumulate_grad(full)

    return _make(out, (x,), backward)


def _bin_edges(n_in, n_out):
    starts = (np.arange(n_out) * n_in) // n_out
    ends = -(-(np.arange(1, n_out + 1) * n_in) // n_out)
    return starts, ends


def adaptive_avg_pool2d(x, out_h, out_w):
    """Mean-pool to an arbitrary output grid (contiguous bins)."""
    b, c, h, w = x.shape
    if out_h > h or out_w > w:
        raise DimensionError(
            f"adaptive_avg_pool2d: target {out_h}x{out_w} exceeds input {h}x{w}"
        )
    ys, ye = _bin_edges(h, out_h)
    xs, xe = _bin_edges(w, out_w)
    out = np.empty((b, c, out_h, out_w), dtype=x.data.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[:, :, i, j] = x.data[:, :, ys[i] : ye[i], xs[j] : xe[j]].mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            for i in range(out_h):
                for j in range(out_w):
                    area = (ye[i] - ys[i]) * (xe[j] - xs[j])
                    full[:, :, ys[i] : ye[i], xs[j] : xe[j]] += (
                        g[:, :, i : i + 1, j : j + 1] / area
                    )
            x.accumulate_grad(full)

    return _make(out, (x,), backward)


_LERP_CACHE = {}


def _lerp_matrix(n, dtype):
    """[2n, n] row-stochastic matrix for scale-2 bilinear upsampling
    (half-pixel centers, edge clamped)."""
    key = (n, np.dtype(dtype).str)
    if key not in _LERP_CACHE:
        m = np.zeros((2 * n, n), dtype=dtype)
        for p in range(2 * n):
            src = (p + 0.5) / 2.0 - 0.5
            i0 = int(np.floor(src))
            f = src - i0
            a = min(max(i0, 0), n - 1)
            bidx = min(max(i0 + 1, 0), n - 1)
            m[p, a] += 1.0 - f
            m[p, bidx] += f
        _LERP_CACHE[key] = m
    return _LERP_CACHE[key]


def interpolate_bilinear2x(x):
    """Scale-2 bilinear upsampling (half-pixel alignment)."""
    b, c, h, w = x.shape
    rm = _lerp_matrix(h, x.data.dtype)
    cm = _lerp_matrix(w, x.data.dtype)
    out = np.einsum("ph,bchw,qw->bcpq", rm, x.data, cm, optimize=True)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.einsum("ph,bcpq,qw->bchw", rm, g, cm, optimize=True))

    return _make(out, (x,), backward)


def grid_sample_1d(bank, coords):
    """Linear interpolation along the row axis of a bank.

    bank: [q, D]; coords: [N] in [-1, 1] (out-of-range values clamp).
    Coordinate -1 maps to row 0, +1 to row q-1. Gradients flow to both
    the bank and the coordinates.
    """
    if bank.ndim != 2:
        raise DimensionError(f"grid_sample_1d: bank must be rank 2, got {bank.shape}")
    if coords.ndim != 1:
        raise DimensionError(f"grid_sample_1d: coords must be rank 1, got {coords.shape}")
    q = bank.shape[0]
    if q < 1:
        raise DimensionError("grid_sample_1d: empty bank")
    c = np.clip(coords.data, -1.0, 1.0)
    pos = (c + 1.0) * ((q - 1) / 2.0)
    i0 = np.floor(pos).astype(np.int64)
    i0 = np.clip(i0, 0, q - 1)
    i1 = np.minimum(i0 + 1, q - 1)
    f = (pos - i0).astype(bank.data.dtype)
    out = (1.0 - f)[:, None] * bank.data[i0] + f[:, None] * bank.data[i1]

    def backward(g):
        if bank.requires_grad:
            gb = np.zeros_like(bank.data)
            np.add.at(gb, i0, (1.0 - f)[:, None] * g)
            np.add.at(gb, i1, f[:, None] * g)
            bank.accumulate_grad(gb)
        if coords.requires_grad:
            dpos = ((bank.data[i1] - bank.data[i0]) * g).sum(axis=1)
            inside = (coords.data > -1.0) & (coords.data < 1.0)
            coords.accumulate_grad(dpos * ((q - 1) / 2.0) * inside)

    return _make(out, (bank, coords), backward)


def apply_kernels(img, kernels, ksize):
    """Per-pixel kernel filtering with zero-padded borders.

    img: [B, C, H, W]; kernels: [B, k*k, H, W]. Each output pixel is the
    kernel-weighted sum of its k x k neighbourhood, applied per channel.
    """
    b, c, h, w = img.shape
    k = ksize
    if kernels.shape != (b, k * k, h, w):
        raise DimensionError(
            f"apply_kernels: kernel axis expects {(b, k * k, h, w)}, got {kernels.shape}"
        )
    pad = k // 2
    padded = _pad_hw(img.data, pad)
    sb, sc, sh, sw = padded.strides
    patches = as_strided(
        padded,
        shape=(b, c, k, k, h, w),
        strides=(sb, sc, sh, sw, sh, sw),
        writeable=False,
    )
    kr = kernels.data.reshape(b, k, k, h, w)
    out = np.einsum("bcijhw,bijhw->bchw", patches, kr, optimize=True)

    def backward(g):
        if kernels.requires_grad:
            dk = np.einsum("bcijhw,bchw->bijhw", patches, g, optimize=True)
            kernels.accumulate_grad(dk.reshape(b, k * k, h, w))
        if img.requires_grad:
            gpad = np.zeros_like(padded)
            for i in range(k):
                for j in range(k):
                    gpad[:, :, i : i + h, j : j + w] += kr[:, None, i, j] * g
            img.accumulate_grad(gpad[:, :, pad : pad + h, pad : pad + w] if pad else gpad)

    return _make(out, (img, kernels), backward)


def downsample_slice(x, off_y, off_x):
    """Every second pixel starting at (off_y, off_x); used to split 2x2 windows."""
    out = np.ascontiguousarray(x.data[:, :, off_y::2, off_x::2])

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, :, off_y::2, off_x::2] = g
            x.accumulate_grad(full)

    return _make(out, (x,), backward)


def identity_kernel(ksize, dtype=np.float32):
    """Flattened k*k kernel with 1 at the centre, 0 elsewhere."""
    k = np.zeros(ksize * ksize, dtype=dtype)
    k[(ksize * ksize) // 2] = 1.0
    return k


def constant(data, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype))
