"""Differentiable layer operations: convolutions, batch norm, activations,
pooling, linear layers, the two-branch gating fusion, and the losses.

Spatial tensors are (B, C, H, W); single samples (C, H, W) are accepted and
returned without the batch axis. Convolutions are im2col + one GEMM per
call, with the column buffer kept for the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LengthError, ShapeError
from .tensor import (
    Tensor,
    _accumulate,
    _coerce,
    concat,
    div,
    make_op,
    mul,
    reshape,
    sqrt,
    tmean,
    tsum,
)

__all__ = [
    "conv2d",
    "depthwise_conv",
    "BatchNormState",
    "batchnorm",
    "relu",
    "sigmoid",
    "linear",
    "gap",
    "mmtm_fuse",
    "mse_loss",
    "negcorr_loss",
    "concat",
]


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _as_batched(x):
    """Return (array4d, had_batch_axis)."""
    xd = _coerce(x)
    if xd.ndim == 3:
        return xd[None], False
    if xd.ndim == 4:
        return xd, True
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W) input, got shape {xd.shape}")


def _conv_geometry(xshape, kh, kw, stride, padding):
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    b, c, h, w = xshape
    hp, wp = h + 2 * ph, w + 2 * pw
    if hp < kh:
        raise ShapeError(f"kernel height {kh} exceeds padded input height {hp}")
    if wp < kw:
        raise ShapeError(f"kernel width {kw} exceeds padded input width {wp}")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    return sh, sw, ph, pw, ho, wo


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """(B,C,Hp,Wp) -> contiguous (B, C, kh, kw, Ho, Wo) column buffer."""
    b, c = xp.shape[:2]
    col = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = xp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw]
    return col


def _col2im(dcol: np.ndarray, xp_shape, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    dxp = np.zeros(xp_shape, dtype=dcol.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho * sh : sh, j : j + wo * sw : sw] += dcol[:, :, i, j]
    return dxp


def _pad(xd: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return xd
    return np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of (B,C_in,H,W) with (C_out,C_in,kh,kw) kernels."""
    xd, batched = _as_batched(x)
    wd = _coerce(weight)
    if wd.ndim != 4:
        raise ShapeError(f"conv2d weight must be 4-d (C_out,C_in,kh,kw), got {wd.shape}")
    cout, cin, kh, kw = wd.shape
    if xd.shape[1] != cin:
        raise ShapeError(f"input channel axis has {xd.shape[1]} channels, weight expects {cin}")
    sh, sw, ph, pw, ho, wo = _conv_geometry(xd.shape, kh, kw, stride, padding)
    b = xd.shape[0]

    xp = _pad(xd, ph, pw)
    col = _im2col(xp, kh, kw, sh, sw, ho, wo)
    col_mat = col.reshape(b, cin * kh * kw, ho * wo)
    w_mat = wd.reshape(cout, cin * kh * kw)
    # (F, B*P) layout gives one large GEMM instead of B small ones
    flat = col_mat.transpose(1, 0, 2).reshape(cin * kh * kw, b * ho * wo)
    out = (w_mat @ flat).reshape(cout, b, ho, wo).transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + _coerce(bias).reshape(1, cout, 1, 1)

    def backward(grad):
        gflat = grad.transpose(1, 0, 2, 3).reshape(cout, b * ho * wo)
        if isinstance(weight, Tensor) and weight.requires_grad:
            _accumulate(weight, (gflat @ flat.T).reshape(wd.shape))
        if bias is not None and isinstance(bias, Tensor) and bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2, 3)).reshape(_coerce(bias).shape))
        if isinstance(x, Tensor) and x.requires_grad:
            dflat = w_mat.T @ gflat
            dcol = dflat.reshape(cin, kh, kw, b, ho, wo).transpose(3, 0, 1, 2, 4, 5)
            dxp = _col2im(dcol, xp.shape, kh, kw, sh, sw, ho, wo)
            dx = dxp[:, :, ph : ph + xd.shape[2], pw : pw + xd.shape[3]]
            _accumulate(x, dx if batched else dx[0])

    out_t = make_op(out if batched else out[0], (x, weight) + ((bias,) if bias is not None else ()), backward)
    return out_t


def depthwise_conv(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """Per-channel convolution: weight (C,1,kh,kw), channel c only sees channel c."""
    xd, batched = _as_batched(x)
    wd = _coerce(weight)
    if wd.ndim != 4 or wd.shape[1] != 1:
        raise ShapeError(f"depthwise weight must be (C,1,kh,kw), got {wd.shape}")
    c, _, kh, kw = wd.shape
    if xd.shape[1] != c:
        raise ShapeError(f"input has {xd.shape[1]} channels, depthwise weight expects {c}")
    sh, sw, ph, pw, ho, wo = _conv_geometry(xd.shape, kh, kw, stride, padding)
    b = xd.shape[0]
    xp = _pad(xd, ph, pw)

    if kh == 1 and sh == 1 and sw == 1:
        # long temporal kernels: sliding views keep the graph free of the
        # (B,C,k,Ho*Wo) column buffers the generic path would hold alive
        win = np.lib.stride_tricks.sliding_window_view(xp, kw, axis=3)
        out = np.empty((b, c, ho, wo), dtype=np.result_type(xd, wd))
        for ci in range(c):
            out[:, ci] = np.tensordot(win[:, ci], wd[ci, 0, 0], axes=([3], [0]))
        if bias is not None:
            out = out + _coerce(bias).reshape(1, c, 1, 1)

        def backward(grad):
            if isinstance(weight, Tensor) and weight.requires_grad:
                dw = np.empty_like(wd)
                for ci in range(c):
                    dw[ci, 0, 0] = np.tensordot(win[:, ci], grad[:, ci], axes=([0, 1, 2], [0, 1, 2]))
                _accumulate(weight, dw)
            if bias is not None and isinstance(bias, Tensor) and bias.requires_grad:
                _accumulate(bias, grad.sum(axis=(0, 2, 3)).reshape(_coerce(bias).shape))
            if isinstance(x, Tensor) and x.requires_grad:
                # dx = full convolution of the upstream grad with the kernel
                gp = np.pad(grad, ((0, 0), (0, 0), (0, 0), (kw - 1, kw - 1)))
                gwin = np.lib.stride_tricks.sliding_window_view(gp, kw, axis=3)
                dxp = np.empty_like(xp)
                for ci in range(c):
                    dxp[:, ci] = np.tensordot(gwin[:, ci], wd[ci, 0, 0, ::-1], axes=([3], [0]))
                dx = dxp[:, :, ph : ph + xd.shape[2], pw : pw + xd.shape[3]]
                _accumulate(x, dx if batched else dx[0])

        return make_op(out if batched else out[0], (x, weight) + ((bias,) if bias is not None else ()), backward)

    col = _im2col(xp, kh, kw, sh, sw, ho, wo)  # (B, C, kh, kw, Ho, Wo)
    col_c = col.reshape(b, c, kh * kw, ho * wo)
    w_c = wd.reshape(c, kh * kw)
    out = np.einsum("bckp,ck->bcp", col_c, w_c, optimize=True).reshape(b, c, ho, wo)
    if bias is not None:
        out = out + _coerce(bias).reshape(1, c, 1, 1)

    def backward(grad):
        gc = grad.reshape(b, c, ho * wo)
        if isinstance(weight, Tensor) and weight.requires_grad:
            dw = np.einsum("bckp,bcp->ck", col_c, gc, optimize=True)
            _accumulate(weight, dw.reshape(wd.shape))
        if bias is not None and isinstance(bias, Tensor) and bias.requires_grad:
            _accumulate(bias, grad.sum(axis=(0, 2, 3)).reshape(_coerce(bias).shape))
        if isinstance(x, Tensor) and x.requires_grad:
            dcol = np.einsum("bcp,ck->bckp", gc, w_c, optimize=True)
            dcol = dcol.reshape(b, c, kh, kw, ho, wo)
            dxp = _col2im(dcol, xp.shape, kh, kw, sh, sw, ho, wo)
            dx = dxp[:, :, ph : ph + xd.shape[2], pw : pw + xd.shape[3]]
            _accumulate(x, dx if batched else dx[0])

    return make_op(out if batched else out[0], (x, weight) + ((bias,) if bias is not None else ()), backward)


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm layer (population variance)."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        return cls(
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.running_mean.copy(), self.running_var.copy(), self.momentum, self.eps)


def batchnorm(x, gamma, beta, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel batch normalization over (B, H, W).

    Train mode normalizes by the batch statistics and folds them into the
    running estimates; eval mode normalizes by the running estimates.
    """
    xd, batched = _as_batched(x)
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    b, c = xd.shape[:2]
    gd = _coerce(gamma).reshape(1, c, 1, 1)
    bd = _coerce(beta).reshape(1, c, 1, 1)
    eps = state.eps

    if mode == "train":
        if b < 2:
            raise ShapeError("batchnorm train mode requires batch size >= 2")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(state.running_var.dtype)
    else:
        mean = state.running_mean.astype(xd.dtype)
        var = state.running_var.astype(xd.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xd - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
    out = gd * x_hat + bd

    def backward(grad):
        if isinstance(gamma, Tensor) and gamma.requires_grad:
            _accumulate(gamma, np.einsum("bchw,bchw->c", grad, x_hat, optimize=True))
        if isinstance(beta, Tensor) and beta.requires_grad:
            _accumulate(beta, grad.sum(axis=(0, 2, 3)))
        if isinstance(x, Tensor) and x.requires_grad:
            gi = grad * gd
            if mode == "train":
                n = grad[:, 0].size  # B*H*W samples per channel
                sum_gi = gi.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (gi * x_hat).sum(axis=(0, 2, 3), keepdims=True)
                dx = (inv_std.reshape(1, c, 1, 1) / n) * (n * gi - sum_gi - x_hat * sum_gx)
            else:
                dx = gi * inv_std.reshape(1, c, 1, 1)
            _accumulate(x, dx if batched else dx[0])

    return make_op(out if batched else out[0], (x, gamma, beta), backward)


def relu(x) -> Tensor:
    xd = _coerce(x)
    out = np.maximum(xd, 0)

    def backward(grad):
        if isinstance(x, Tensor) and x.requires_grad:
            _accumulate(x, grad * (xd > 0))

    return make_op(out, (x,), backward)


def sigmoid(x) -> Tensor:
    xd = _coerce(x)
    out = 1.0 / (1.0 + np.exp(-xd))

    def backward(grad):
        if isinstance(x, Tensor) and x.requires_grad:
            _accumulate(x, grad * out * (1.0 - out))

    return make_op(out, (x,), backward)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map: (B, F_in) @ weight.T + bias, weight (F_out, F_in)."""
    xd = _coerce(x)
    wd = _coerce(weight)
    squeeze = xd.ndim == 1
    x2 = xd[None] if squeeze else xd
    if x2.ndim != 2 or wd.ndim != 2 or x2.shape[1] != wd.shape[1]:
        raise ShapeError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    out = x2 @ wd.T
    if bias is not None:
        out = out + _coerce(bias)

    def backward(grad):
        g2 = grad[None] if squeeze else grad
        if isinstance(weight, Tensor) and weight.requires_grad:
            _accumulate(weight, g2.T @ x2)
        if bias is not None and isinstance(bias, Tensor) and bias.requires_grad:
            _accumulate(bias, g2.sum(axis=0))
        if isinstance(x, Tensor) and x.requires_grad:
            dx = g2 @ wd
            _accumulate(x, dx[0] if squeeze else dx)

    return make_op(out[0] if squeeze else out, (x, weight) + ((bias,) if bias is not None else ()), backward)


def gap(x) -> Tensor:
    """Global average pooling: (B,C,H,W) -> (B,C)."""
    xd, batched = _as_batched(x)
    b, c, h, w = xd.shape
    out = xd.mean(axis=(2, 3))

    def backward(grad):
        if isinstance(x, Tensor) and x.requires_grad:
            dx = np.broadcast_to(grad[:, :, None, None] / (h * w), xd.shape)
            _accumulate(x, dx if batched else dx[0])

    return make_op(out if batched else out[0], (x,), backward)


@dataclass
class MmtmParams:
    """Parameters of one two-branch gated fusion block.

    The squeeze layer mixes the pooled descriptors of both branches into a
    joint vector of dimension ceil((C_a + C_b) / 4); the per-branch gate
    layers map it back to channel gates 2*sigmoid(.), so all-zero gate
    parameters make the block an exact identity.
    """

    w_z: Tensor
    b_z: Tensor
    w_a: Tensor
    b_a: Tensor
    w_b: Tensor
    b_b: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"w_z": self.w_z, "b_z": self.b_z, "w_a": self.w_a, "b_a": self.b_a, "w_b": self.w_b, "b_b": self.b_b}


def mmtm_joint_dim(c_a: int, c_b: int) -> int:
    return -((c_a + c_b) // -4)  # ceil((c_a + c_b) / 4)


def mmtm_fuse(a, b, params: MmtmParams) -> tuple[Tensor, Tensor]:
    """Exchange channel information between two branches via squeezed gates.

    s = [gap(a); gap(b)], z = relu(W_z s + b_z), branch gates
    g = 2*sigmoid(W z + b) broadcast over the spatial axes. Accepts
    (C,H,W) or (B,C,H,W) inputs; both branches must agree on batching.
    """
    a = a if isinstance(a, Tensor) else Tensor(_coerce(a))
    b = b if isinstance(b, Tensor) else Tensor(_coerce(b))
    if a.ndim != b.ndim:
        raise ShapeError(f"branch ranks differ: {a.shape} vs {b.shape}")
    unbatched = a.ndim == 3
    if unbatched:
        a4, b4 = reshape(a, (1, *a.shape)), reshape(b, (1, *b.shape))
    elif a.ndim == 4:
        a4, b4 = a, b
    else:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W) branches, got {a.shape}")
    c_a, c_b = a4.shape[1], b4.shape[1]
    c_z = mmtm_joint_dim(c_a, c_b)
    if _coerce(params.w_z).shape != (c_z, c_a + c_b):
        raise ShapeError(
            f"mmtm squeeze weight shape {_coerce(params.w_z).shape} != {(c_z, c_a + c_b)}"
        )
    if _coerce(params.w_a).shape != (c_a, c_z) or _coerce(params.w_b).shape != (c_b, c_z):
        raise ShapeError("mmtm gate weight shapes inconsistent with branch channels")

    s = concat([gap(a4), gap(b4)], axis=1)
    z = relu(linear(s, params.w_z, params.b_z))
    g_a = mul(sigmoid(linear(z, params.w_a, params.b_a)), 2.0)
    g_b = mul(sigmoid(linear(z, params.w_b, params.b_b)), 2.0)
    a_out = mul(a4, reshape(g_a, (a4.shape[0], c_a, 1, 1)))
    b_out = mul(b4, reshape(g_b, (b4.shape[0], c_b, 1, 1)))
    if unbatched:
        return reshape(a_out, a.shape), reshape(b_out, b.shape)
    return a_out, b_out


def _target_like(pred_data: np.ndarray, target) -> np.ndarray:
    """Targets follow the prediction's float dtype so a float32 graph is
    not silently promoted to float64 by float64 labels."""
    dt = pred_data.dtype if np.issubdtype(pred_data.dtype, np.floating) else np.dtype(np.float64)
    return np.asarray(_coerce(target), dtype=dt)


def mse_loss(pred, target) -> Tensor:
    """Mean over all elements of the squared error."""
    pd = _coerce(pred)
    td = _target_like(pd, target)
    diff = pred - td if isinstance(pred, Tensor) else Tensor(pd - td)
    return tmean(mul(diff, diff))


def negcorr_loss(pred, target, eps: float = 1e-8) -> Tensor:
    """1 - Pearson correlation along the last axis, averaged over windows.

    The denominator carries an eps guard; a zero-variance side therefore
    yields r = 0 and loss 1 instead of NaN.
    """
    pd = _coerce(pred)
    td = _target_like(pd, target)
    if pd.shape != td.shape:
        raise ShapeError(f"negcorr_loss: pred shape {pd.shape} != target shape {td.shape}")
    if pd.shape[-1] < 2:
        raise LengthError("negcorr_loss needs at least 2 samples along the last axis")
    if not isinstance(pred, Tensor):
        pred = Tensor(pd)

    pc = pred - tmean(pred, axis=-1, keepdims=True)
    tc = td - td.mean(axis=-1, keepdims=True)
    num = tsum(mul(pc, tc), axis=-1)
    den = mul(sqrt(tsum(mul(pc, pc), axis=-1)), np.sqrt((tc * tc).sum(axis=-1)))
    r = div(num, den + eps)
    return tmean(1.0 - r)
