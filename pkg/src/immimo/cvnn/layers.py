"""Layers for fixed-sequence complex networks, with real-valued twins.

Gradient convention: for a real-valued loss L over complex activations z,
the array passed around in backward() packs dL/dRe(z) + j*dL/dIm(z). That
equals the complex gradient 2*dL/dz_bar, so backprop on the (real, imag)
split and Wirtinger-gradient descent coincide; each layer implements its
backward rule directly in this packed form. Real layers carry plain real
gradients.

Forward caches live on the layer, so one layer instance serves one
forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np

from immimo.linalg import Rng


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _glorot_limit(fan_in: int, fan_out: int) -> float:
    return np.sqrt(6.0 / (fan_in + fan_out))


def _init_complex(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = _glorot_limit(fan_in, fan_out) / np.sqrt(2.0)
    re = rng.symmetric_uniform(shape) * lim
    im = rng.symmetric_uniform(shape) * lim
    return re + 1j * im


def _init_real(rng: Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.symmetric_uniform(shape) * _glorot_limit(fan_in, fan_out)


def _out_hw(h: int, w: int, k: int, padding: str) -> tuple[int, int, int]:
    if padding == "same":
        if k % 2 == 0:
            raise ValueError("same padding needs an odd kernel")
        p = k // 2
        return h, w, p
    if padding == "valid":
        if h < k or w < k:
            raise ValueError("kernel larger than input")
        return h - k + 1, w - k + 1, 0
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*k*k, P) patch matrix, stride 1."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    b, c, ho, wo = win.shape[:4]
    # (B, C, Ho, Wo, k, k) -> (B, C, k, k, Ho*Wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, shape, k: int, pad: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto (B, C, H, W)."""
    b, c, h, w = shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    six = cols.reshape(b, c, k, k, ho, wo)
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for di in range(k):
        for dj in range(k):
            xp[:, :, di:di + ho, dj:dj + wo] += six[:, :, di, dj]
    return xp[:, :, pad:pad + h, pad:pad + w] if pad else xp


class Layer:
    """Base: forward/backward pair plus (de)serialization hooks."""

    kind = "layer"

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    # (name, array) lists; params are learnable, buffers are running state
    def param_items(self) -> list:
        return []

    def grad_items(self) -> list:
        return []

    def buffer_items(self) -> list:
        return []

    def tensor_items(self) -> list:
        return self.param_items() + self.buffer_items()


class _ConvBase(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 padding: str, rng: Rng | None, complex_valued: bool):
        if in_channels < 1 or out_channels < 1 or kernel < 1:
            raise ValueError("conv dims must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        shape = (out_channels, in_channels, kernel, kernel)
        if rng is None:
            init = np.zeros
            self.weight = init(shape, dtype=np.complex128 if complex_valued else np.float64)
        elif complex_valued:
            self.weight = _init_complex(rng, shape, fan_in, fan_out)
        else:
            self.weight = _init_real(rng, shape, fan_in, fan_out)
        self.bias = np.zeros(out_channels,
                             dtype=np.complex128 if complex_valued else np.float64)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def spec(self) -> dict:
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "padding": self.padding}

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [("weight", self.grads["weight"]), ("bias", self.grads["bias"])]

    def _forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} channels, got {c}")
        ho, wo, pad = _out_hw(h, w, self.kernel, self.padding)
        cols = _im2col(x, self.kernel, pad)                       # (B, CKK, P)
        wmat = self.weight.reshape(self.out_channels, -1)
        out = wmat @ cols + self.bias[None, :, None]
        self._cache = (cols, x.shape, pad)
        return out.reshape(b, self.out_channels, ho, wo)

    def _backward(self, grad: np.ndarray, conj: bool) -> np.ndarray:
        cols, xshape, pad = self._cache
        b = grad.shape[0]
        g = grad.reshape(b, self.out_channels, -1)                # (B, Cout, P)
        cc = cols.conj() if conj else cols
        dw = np.einsum("bop,bip->oi", g, cc)
        self.grads = {
            "weight": dw.reshape(self.weight.shape),
            "bias": g.sum(axis=(0, 2)),
        }
        wmat = self.weight.reshape(self.out_channels, -1)
        wb = wmat.conj() if conj else wmat
        dcols = np.einsum("oi,bop->bip", wb, g)
        return _col2im(dcols, xshape, self.kernel, pad)


class ComplexConv2d(_ConvBase):
    """2-D complex convolution, stride 1.

    Output = (W_r*X_r - W_i*X_i) + j(W_i*X_r + W_r*X_i), realized as one
    complex patch-matrix product (identical arithmetic, one code path).
    """

    kind = "complex_conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, padding="same", rng=None):
        super().__init__(in_channels, out_channels, kernel, padding, rng, True)

    def forward(self, x, train=False):
        return self._forward(np.asarray(x, dtype=np.complex128))

    def backward(self, grad):
        return self._backward(grad, conj=True)


class RealConv2d(_ConvBase):
    """Real twin of ComplexConv2d."""

    kind = "real_conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, padding="same", rng=None):
        super().__init__(in_channels, out_channels, kernel, padding, rng, False)

    def forward(self, x, train=False):
        return self._forward(np.asarray(x, dtype=np.float64))

    def backward(self, grad):
        return self._backward(grad, conj=False)


class _DenseBase(Layer):
    def __init__(self, in_features: int, out_features: int, rng: Rng | None,
                 complex_valued: bool):
        if in_features < 1 or out_features < 1:
            raise ValueError("dense dims must be >= 1")
        self.in_features = in_features
        self.out_features = out_features
        shape = (out_features, in_features)
        if rng is None:
            self.weight = np.zeros(shape, dtype=np.complex128 if complex_valued else np.float64)
        elif complex_valued:
            self.weight = _init_complex(rng, shape, in_features, out_features)
        else:
            self.weight = _init_real(rng, shape, in_features, out_features)
        self.bias = np.zeros(out_features,
                             dtype=np.complex128 if complex_valued else np.float64)
        self.grads: dict[str, np.ndarray] = {}
        self._x = None

    def spec(self) -> dict:
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [("weight", self.grads["weight"]), ("bias", self.grads["bias"])]

    def _forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"expected (B, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.weight.T + self.bias

    def _backward(self, grad, conj: bool):
        x = self._x
        xc = x.conj() if conj else x
        wc = self.weight.conj() if conj else self.weight
        self.grads = {"weight": grad.T @ xc, "bias": grad.sum(axis=0)}
        return grad @ wc


class ComplexDense(_DenseBase):
    """Complex fully-connected layer, y = x W^T + b."""

    kind = "complex_dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__(in_features, out_features, rng, True)

    def forward(self, x, train=False):
        return self._forward(np.asarray(x, dtype=np.complex128))

    def backward(self, grad):
        return self._backward(grad, conj=True)


class RealDense(_DenseBase):
    """Real twin of ComplexDense."""

    kind = "real_dense"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__(in_features, out_features, rng, False)

    def forward(self, x, train=False):
        return self._forward(np.asarray(x, dtype=np.float64))

    def backward(self, grad):
        return self._backward(grad, conj=False)


class ComplexReLU(Layer):
    """ReLU on real and imaginary parts independently."""

    kind = "complex_relu"

    def forward(self, x, train=False):
        self._mr = x.real > 0
        self._mi = x.imag > 0
        return x.real * self._mr + 1j * (x.imag * self._mi)

    def backward(self, grad):
        return grad.real * self._mr + 1j * (grad.imag * self._mi)


class RealReLU(Layer):
    kind = "real_relu"

    def forward(self, x, train=False):
        self._m = x > 0
        return x * self._m

    def backward(self, grad):
        return grad * self._m


class ComplexSigmoid(Layer):
    """Logistic sigmoid on real and imaginary parts independently."""

    kind = "complex_sigmoid"

    def forward(self, x, train=False):
        self._sr = _sigmoid(x.real)
        self._si = _sigmoid(x.imag)
        return self._sr + 1j * self._si

    def backward(self, grad):
        return (grad.real * self._sr * (1 - self._sr)
                + 1j * (grad.imag * self._si * (1 - self._si)))


class RealSigmoid(Layer):
    kind = "real_sigmoid"

    def forward(self, x, train=False):
        self._s = _sigmoid(x)
        return self._s

    def backward(self, grad):
        return grad * self._s * (1 - self._s)


class Flatten(Layer):
    """(B, C, H, W) -> (B, C*H*W); dtype (and complexness) preserved."""

    kind = "flatten"

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class SplitReIm(Layer):
    """Complex (B, C, H, W) -> real (B, 2C, H, W): real channels then imag."""

    kind = "split_reim"

    def forward(self, x, train=False):
        return np.concatenate([x.real, x.imag], axis=1)

    def backward(self, grad):
        c = grad.shape[1] // 2
        return grad[:, :c] + 1j * grad[:, c:]


class MergeReIm(Layer):
    """Inverse of SplitReIm: real (B, 2C, H, W) -> complex (B, C, H, W)."""

    kind = "merge_reim"

    def forward(self, x, train=False):
        c = x.shape[1] // 2
        return x[:, :c] + 1j * x[:, c:]

    def backward(self, grad):
        return np.concatenate([grad.real, grad.imag], axis=1)


class RealHeadDense(Layer):
    """Real dense readout over interleaved (re, im) features.

    Complex input (B, F) is viewed as (B, 2F) reals [r0, i0, r1, i1, ...];
    real input passes straight through to the matmul. `in_features` is the
    real width either way.
    """

    kind = "real_head_dense"

    def __init__(self, in_features: int, out_features: int, rng: Rng | None = None):
        self.in_features = in_features
        self.out_features = out_features
        if rng is None:
            self.weight = np.zeros((out_features, in_features))
        else:
            self.weight = _init_real(rng, (out_features, in_features),
                                     in_features, out_features)
        self.bias = np.zeros(out_features)
        self.grads: dict[str, np.ndarray] = {}

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def grad_items(self):
        return [("weight", self.grads["weight"]), ("bias", self.grads["bias"])]

    def forward(self, x, train=False):
        if np.iscomplexobj(x):
            self._complex_in = True
            xr = np.empty((x.shape[0], 2 * x.shape[1]))
            xr[:, 0::2] = x.real
            xr[:, 1::2] = x.imag
        else:
            self._complex_in = False
            xr = x
        if xr.shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} real features, got {xr.shape[1]}")
        self._xr = xr
        return xr @ self.weight.T + self.bias

    def backward(self, grad):
        self.grads = {"weight": grad.T @ self._xr, "bias": grad.sum(axis=0)}
        gx = grad @ self.weight
        if self._complex_in:
            return gx[:, 0::2] + 1j * gx[:, 1::2]
        return gx


def _moments_axes(x: np.ndarray) -> tuple:
    # channel axis is 1 for conv maps, the feature axis for (B, F) inputs
    return (0, 2, 3) if x.ndim == 4 else (0,)


class ComplexBatchNorm(Layer):
    """Per-channel whitening of the (re, im) pair, then learnable 2x2 gamma
    and complex beta.

    Train mode uses batch statistics and updates running stats with
    momentum; infer mode uses the running stats. The inverse square root of
    the 2x2 covariance (+ eps on the diagonal) is closed-form via its trace
    and determinant.
    """

    kind = "complex_batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        if channels < 1:
            raise ValueError("channels must be >= 1")
        if not (0 < momentum < 1):
            raise ValueError("momentum must be in (0, 1)")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        # gamma[c] = [[g_rr, g_ri], [g_ir, g_ii]]
        self.gamma = np.zeros((channels, 2, 2))
        self.gamma[:, 0, 0] = 1.0 / np.sqrt(2.0)
        self.gamma[:, 1, 1] = 1.0 / np.sqrt(2.0)
        self.beta = np.zeros(channels, dtype=np.complex128)
        self.running_mean = np.zeros(channels, dtype=np.complex128)
        # identity covariance start, stored as symmetric (v_rr, v_ri, v_ii)
        self.running_v = np.tile(np.array([1.0, 0.0, 1.0]), (channels, 1))
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}

    def param_items(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grad_items(self):
        return [("gamma", self.grads["gamma"]), ("beta", self.grads["beta"])]

    def buffer_items(self):
        return [("running_mean", self.running_mean), ("running_v", self.running_v)]

    @staticmethod
    def _whiten_coeffs(v11, v12, v22):
        """Entries of (V)^{-1/2} for symmetric 2x2 V (already eps-loaded).

        With s = sqrt(det V) and t = sqrt(tr V + 2 s):
        V^{1/2} = (V + s I)/t, hence V^{-1/2} = (V^{1/2})^{-1} / 1, computed
        directly: inv of (V + sI)/t is t * adj(V + sI) / det(V + sI), and
        det(V + sI) = det V + s tr V + s^2 = s (t^2).
        """
        s = np.sqrt(v11 * v22 - v12 * v12)
        t = np.sqrt(v11 + v22 + 2.0 * s)
        denom = s * t
        w11 = (v22 + s) / denom
        w22 = (v11 + s) / denom
        w12 = -v12 / denom
        return w11, w12, w22, s, t

    def _expand(self, per_channel: np.ndarray, ndim: int) -> np.ndarray:
        if ndim == 4:
            return per_channel[None, :, None, None]
        return per_channel[None, :]

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.complex128)
        if x.ndim not in (2, 4):
            raise ValueError("batchnorm expects (B, C, H, W) or (B, C)")
        ch = x.shape[1]
        if ch != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {ch}")
        axes = _moments_axes(x)
        if train:
            n = int(np.prod([x.shape[a] for a in axes]))
            if x.shape[0] < 2:
                raise ValueError("train-mode batchnorm needs batch >= 2")
            mean = x.mean(axis=axes)
            u = x - self._expand(mean, x.ndim)
            v11 = (u.real ** 2).mean(axis=axes)
            v12 = (u.real * u.imag).mean(axis=axes)
            v22 = (u.imag ** 2).mean(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            batch_v = np.stack([v11, v12, v22], axis=1)
            self.running_v = self.momentum * self.running_v + (1 - self.momentum) * batch_v
        else:
            mean = self.running_mean
            u = x - self._expand(mean, x.ndim)
            v11, v12, v22 = self.running_v.T
            n = 0
        w11, w12, w22, s, t = self._whiten_coeffs(v11 + self.eps, v12, v22 + self.eps)
        W11 = self._expand(w11, x.ndim)
        W12 = self._expand(w12, x.ndim)
        W22 = self._expand(w22, x.ndim)
        xt_r = W11 * u.real + W12 * u.imag
        xt_i = W12 * u.real + W22 * u.imag
        g = self.gamma
        y_r = self._expand(g[:, 0, 0], x.ndim) * xt_r + self._expand(g[:, 0, 1], x.ndim) * xt_i
        y_i = self._expand(g[:, 1, 0], x.ndim) * xt_r + self._expand(g[:, 1, 1], x.ndim) * xt_i
        beta = self._expand(self.beta, x.ndim)
        self._cache = (u, xt_r, xt_i, (w11, w12, w22, s, t),
                       (v11 + self.eps, v12, v22 + self.eps), axes, n, train)
        return (y_r + beta.real) + 1j * (y_i + beta.imag)

    def backward(self, grad):
        u, xt_r, xt_i, (w11, w12, w22, s, t), (v11, v12, v22), axes, n, train = self._cache
        gr, gi = grad.real, grad.imag
        nd = grad.ndim
        # gamma / beta grads
        dgamma = np.zeros_like(self.gamma)
        dgamma[:, 0, 0] = (gr * xt_r).sum(axis=axes)
        dgamma[:, 0, 1] = (gr * xt_i).sum(axis=axes)
        dgamma[:, 1, 0] = (gi * xt_r).sum(axis=axes)
        dgamma[:, 1, 1] = (gi * xt_i).sum(axis=axes)
        dbeta = gr.sum(axis=axes) + 1j * gi.sum(axis=axes)
        self.grads = {"gamma": dgamma, "beta": dbeta}
        # through the affine: grad wrt whitened pair
        g = self.gamma
        gt_r = self._expand(g[:, 0, 0], nd) * gr + self._expand(g[:, 1, 0], nd) * gi
        gt_i = self._expand(g[:, 0, 1], nd) * gr + self._expand(g[:, 1, 1], nd) * gi
        if not train:
            W11, W12, W22 = (self._expand(a, nd) for a in (w11, w12, w22))
            dx_r = W11 * gt_r + W12 * gt_i
            dx_i = W12 * gt_r + W22 * gt_i
            return dx_r + 1j * dx_i
        # train mode: W depends on batch covariance, mean subtraction on batch mean
        lw11 = (gt_r * u.real).sum(axis=axes)
        lw12 = (gt_r * u.imag + gt_i * u.real).sum(axis=axes)
        lw22 = (gt_i * u.imag).sum(axis=axes)
        # partials of (w11, w12, w22) wrt (v11, v12, v22); eps-loaded V
        ds = np.stack([v22 / (2 * s), -v12 / s, v11 / (2 * s)], axis=0)   # d s / d v*
        dtau = np.array([1.0, 0.0, 1.0])[:, None]
        dt = (dtau + 2 * ds) / (2 * t)
        dden = t * ds + s * dt                                            # d (s t) / d v*
        denom = s * t
        dnum11 = np.stack([np.zeros_like(s), np.zeros_like(s), np.ones_like(s)], axis=0) + ds
        dnum22 = np.stack([np.ones_like(s), np.zeros_like(s), np.zeros_like(s)], axis=0) + ds
        dnum12 = -np.stack([np.zeros_like(s), np.ones_like(s), np.zeros_like(s)], axis=0)
        dw11 = (dnum11 * denom - (v22 + s) * dden) / denom ** 2
        dw22 = (dnum22 * denom - (v11 + s) * dden) / denom ** 2
        dw12 = (dnum12 * denom + v12 * dden) / denom ** 2
        lv = lw11 * dw11 + lw12 * dw12 + lw22 * dw22                      # (3, C)
        lv11, lv12, lv22 = lv
        W11, W12, W22 = (self._expand(a, nd) for a in (w11, w12, w22))
        Lv11, Lv12, Lv22 = (self._expand(a, nd) for a in (lv11, lv12, lv22))
        du_r = W11 * gt_r + W12 * gt_i + (2 * Lv11 * u.real + Lv12 * u.imag) / n
        du_i = W12 * gt_r + W22 * gt_i + (Lv12 * u.real + 2 * Lv22 * u.imag) / n
        dx_r = du_r - du_r.mean(axis=axes, keepdims=True)
        dx_i = du_i - du_i.mean(axis=axes, keepdims=True)
        return dx_r + 1j * dx_i


class RealBatchNorm(Layer):
    """Standard per-channel batch normalization (real twin)."""

    kind = "real_batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}

    def param_items(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def grad_items(self):
        return [("gamma", self.grads["gamma"]), ("beta", self.grads["beta"])]

    def buffer_items(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def _expand(self, a, ndim):
        return a[None, :, None, None] if ndim == 4 else a[None, :]

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {x.shape[1]}")
        axes = _moments_axes(x)
        if train:
            if x.shape[0] < 2:
                raise ValueError("train-mode batchnorm needs batch >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv, x.ndim)
        n = int(np.prod([x.shape[a] for a in axes]))
        self._cache = (xhat, inv, axes, n, train)
        return self._expand(self.gamma, x.ndim) * xhat + self._expand(self.beta, x.ndim)

    def backward(self, grad):
        xhat, inv, axes, n, train = self._cache
        nd = grad.ndim
        self.grads = {"gamma": (grad * xhat).sum(axis=axes), "beta": grad.sum(axis=axes)}
        gsc = grad * self._expand(self.gamma * inv, nd)
        if not train:
            return gsc
        return gsc - gsc.mean(axis=axes, keepdims=True) \
            - xhat * self._expand((grad * xhat).mean(axis=axes)
                                  * self.gamma * inv, nd)


class Residual(Layer):
    """y = x + branch(x); the branch is a layer sequence of matching shape."""

    kind = "residual_add"

    def __init__(self, layers: list):
        self.layers = list(layers)

    def spec(self):
        return {"kind": self.kind, "layers": [l.spec() for l in self.layers]}

    def param_items(self):
        out = []
        for i, l in enumerate(self.layers):
            out.extend((f"{i}.{n}", a) for n, a in l.param_items())
        return out

    def grad_items(self):
        out = []
        for i, l in enumerate(self.layers):
            out.extend((f"{i}.{n}", a) for n, a in l.grad_items())
        return out

    def buffer_items(self):
        out = []
        for i, l in enumerate(self.layers):
            out.extend((f"{i}.{n}", a) for n, a in l.buffer_items())
        return out

    def forward(self, x, train=False):
        out = x
        for l in self.layers:
            out = l.forward(out, train=train)
        if out.shape != x.shape:
            raise ValueError(f"residual branch changed shape {x.shape} -> {out.shape}")
        return x + out

    def backward(self, grad):
        g = grad
        for l in reversed(self.layers):
            g = l.backward(g)
        return grad + g


_LAYER_CLASSES = {}
for _cls in (ComplexConv2d, RealConv2d, ComplexDense, RealDense, ComplexReLU,
             RealReLU, ComplexSigmoid, RealSigmoid, Flatten, SplitReIm,
             MergeReIm, RealHeadDense, ComplexBatchNorm, RealBatchNorm, Residual):
    _LAYER_CLASSES[_cls.kind] = _cls


def layer_from_spec(spec: dict) -> Layer:
    """Rebuild a layer from its spec dict; parameters start at zero."""
    kind = spec.get("kind")
    if kind not in _LAYER_CLASSES:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind in ("complex_conv2d", "real_conv2d"):
        return _LAYER_CLASSES[kind](spec["in_channels"], spec["out_channels"],
                                    spec["kernel"], spec["padding"], rng=None)
    if kind in ("complex_dense", "real_dense"):
        return _LAYER_CLASSES[kind](spec["in_features"], spec["out_features"], rng=None)
    if kind == "real_head_dense":
        return RealHeadDense(spec["in_features"], spec["out_features"], rng=None)
    if kind in ("complex_batchnorm", "real_batchnorm"):
        return _LAYER_CLASSES[kind](spec["channels"], spec["eps"], spec["momentum"])
    if kind == "residual_add":
        return Residual([layer_from_spec(s) for s in spec["layers"]])
    return _LAYER_CLASSES[kind]()
