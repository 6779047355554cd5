"""Differentiable layers over numpy arrays.

The layer zoo is deliberately small: exactly the operations the BEV
student and its pretraining head are built from (2D convolutions with
kernel 1 or 3, pointwise 3D convolutions, instance normalization,
relu/softplus/sigmoid, and the channels-to-volume reshape).  Layers are
functional: ``forward`` returns ``(output, ctx)`` and ``backward``
consumes that ctx, so one layer instance can have several outstanding
forward passes (needed for camera weight sharing).  Parameter gradients
accumulate into ``Parameter.grad``; input gradients are returned.

All math runs in the dtype the layer was built with.  float64 is the
default and is required for finite-difference verification; float32 is
available for faster training runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Parameter",
    "Layer",
    "Sequential",
    "Conv2d",
    "PointwiseConv3d",
    "InstanceNorm2d",
    "ReLU",
    "Softplus",
    "Sigmoid",
    "ChannelsToVolume",
    "relu",
    "softplus",
    "sigmoid",
    "sigmoid_grad",
    "volume_from_channels",
    "channels_from_volume",
]

SOFTPLUS_CUTOFF = 30.0  # above this, softplus(x) = x to within 1e-13


class Parameter:
    """A trainable tensor together with its accumulated gradient."""

    def __init__(self, value: np.ndarray, name: str = "param"):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:  # pragma: no cover
        return f"Parameter({self.name}, shape={self.value.shape})"


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# elementwise functions (shared by layers and by code that needs raw values)
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softplus(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x), returning x exactly for x > 30 to avoid overflow."""
    x = np.asarray(x)
    safe = np.minimum(x, SOFTPLUS_CUTOFF)
    return np.where(x > SOFTPLUS_CUTOFF, x, np.log1p(np.exp(safe)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    """1 / (1 + e^-x), evaluated without overflow on either tail."""
    x = np.asarray(x)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, t) / (1.0 + t)


def sigmoid_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 - s)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Layer:
    """Base class: parameterless identity-ish contract."""

    def parameters(self) -> list[Parameter]:
        params = []
        for attr in ("weight", "bias"):
            p = getattr(self, attr, None)
            if isinstance(p, Parameter):
                params.append(p)
        return params

    def named_parameters(self, prefix: str = ""):
        for attr in ("weight", "bias"):
            p = getattr(self, attr, None)
            if isinstance(p, Parameter):
                yield f"{prefix}{attr}", p

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: np.ndarray):
        raise NotImplementedError

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    """Cross-correlation over [C, H, W] maps.

    Kernel 3 uses padding 1 (shape preserving at stride 1); kernel 1 uses
    padding 0.  Stride may be 1 or 2 (2 is what the image encoder's
    downsampling stages need); other strides are out of scope.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, stride: int = 1, dtype=np.float64):
        if kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {kernel}")
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = 1 if kernel == 3 else 0
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(
            _uniform_init(rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype),
            name="weight",
        )
        self.bias = Parameter(_uniform_init(rng, (out_channels,), fan_in, dtype), name="bias")

    def out_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x: np.ndarray):
        c_in, h, w = x.shape
        if c_in != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c_in}")
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.out_shape(h, w)
        if p:
            xpad = np.zeros((c_in, h + 2 * p, w + 2 * p), dtype=x.dtype)
            xpad[:, p:p + h, p:p + w] = x
        else:
            xpad = x
        # im2col: one GEMM instead of k*k small ones
        cols = np.empty((c_in, k, k, ho, wo), dtype=x.dtype)
        for a in range(k):
            for b in range(k):
                cols[:, a, b] = xpad[:, a:a + (ho - 1) * s + 1:s, b:b + (wo - 1) * s + 1:s]
        cols = cols.reshape(c_in * k * k, ho * wo)
        wflat = self.weight.value.reshape(self.out_channels, c_in * k * k)
        out = wflat @ cols + self.bias.value[:, None]
        ctx = (cols, (h, w), (ho, wo))
        return out.reshape(self.out_channels, ho, wo), ctx

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        cols, (h, w), (ho, wo) = ctx
        k, s, p = self.kernel, self.stride, self.padding
        c_in = self.in_channels
        g = grad_out.reshape(self.out_channels, ho * wo)
        self.bias.grad += g.sum(axis=1)
        self.weight.grad += (g @ cols.T).reshape(self.weight.value.shape)
        wflat = self.weight.value.reshape(self.out_channels, c_in * k * k)
        gcols = (wflat.T @ g).reshape(c_in, k, k, ho, wo)
        gxpad = np.zeros((c_in, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
        for a in range(k):
            for b in range(k):
                gxpad[:, a:a + (ho - 1) * s + 1:s, b:b + (wo - 1) * s + 1:s] += gcols[:, a, b]
        if p:
            return gxpad[:, p:p + h, p:p + w].copy()
        return gxpad


class PointwiseConv3d(Layer):
    """1x1x1 convolution over [C, Z, H, W] volumes: a per-voxel linear map."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = Parameter(
            _uniform_init(rng, (out_channels, in_channels), in_channels, dtype), name="weight"
        )
        self.bias = Parameter(_uniform_init(rng, (out_channels,), in_channels, dtype), name="bias")

    def forward(self, x: np.ndarray):
        if x.shape[0] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[0]}")
        flat = x.reshape(self.in_channels, -1)
        y = self.weight.value @ flat + self.bias.value[:, None]
        return y.reshape(self.out_channels, *x.shape[1:]), x

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        x = ctx
        g = grad_out.reshape(self.out_channels, -1)
        flat = x.reshape(self.in_channels, -1)
        self.weight.grad += g @ flat.T
        self.bias.grad += g.sum(axis=1)
        return (self.weight.value.T @ g).reshape(x.shape)


class InstanceNorm2d(Layer):
    """Per-channel spatial whitening of a [C, H, W] map, no learnable affine.

    The denominator is sqrt(max(var, eps)): for any channel whose variance
    clears eps the output has exactly unit variance, and constant channels
    map to zeros instead of dividing by ~0.  (An additive eps would leave a
    relative variance error of eps/var, which the verification tolerances
    do not allow.)
    """

    def __init__(self, eps: float = 1e-5):
        self.eps = eps

    def forward(self, x: np.ndarray):
        n = x.shape[1] * x.shape[2]
        mu = x.mean(axis=(1, 2), keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=(1, 2), keepdims=True)
        live = var > self.eps
        sigma = np.sqrt(np.maximum(var, self.eps))
        xhat = xc / sigma
        return xhat, (xhat, sigma, live, n)

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        xhat, sigma, live, _ = ctx
        g_mean = grad_out.mean(axis=(1, 2), keepdims=True)
        gx = grad_out - g_mean
        # the variance term only exists where the eps floor is inactive
        proj = (grad_out * xhat).mean(axis=(1, 2), keepdims=True)
        gx = gx - np.where(live, proj, 0.0) * xhat
        return gx / sigma


class ReLU(Layer):
    def forward(self, x: np.ndarray):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        return np.where(ctx, grad_out, 0.0)


class Softplus(Layer):
    def forward(self, x: np.ndarray):
        return softplus(x), x

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * sigmoid(ctx)


class Sigmoid(Layer):
    def forward(self, x: np.ndarray):
        y = sigmoid(x)
        return y, y

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        y = ctx
        return grad_out * y * (1.0 - y)


def volume_from_channels(x: np.ndarray, z_cells: int) -> np.ndarray:
    """[(N*Z), H, W] -> [N, Z, H, W]; block g of N contiguous channels
    becomes height slice z = g."""
    c, h, w = x.shape
    if c % z_cells:
        raise ValueError(f"channel count {c} not divisible by z_cells {z_cells}")
    n = c // z_cells
    return x.reshape(z_cells, n, h, w).transpose(1, 0, 2, 3)


def channels_from_volume(v: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`volume_from_channels`."""
    n, z, h, w = v.shape
    return v.transpose(1, 0, 2, 3).reshape(n * z, h, w)


class ChannelsToVolume(Layer):
    """Reshape layer wrapping :func:`volume_from_channels` (no parameters)."""

    def __init__(self, z_cells: int):
        self.z_cells = z_cells

    def forward(self, x: np.ndarray):
        return volume_from_channels(x, self.z_cells), None

    def backward(self, ctx, grad_out: np.ndarray) -> np.ndarray:
        return channels_from_volume(grad_out)


class Sequential(Layer):
    """An ordered stack of layers; the ModuleGraph of this project."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}{i}.")

    def forward(self, x: np.ndarray):
        ctxs = []
        for layer in self.layers:
            x, ctx = layer.forward(x)
            ctxs.append(ctx)
        return x, ctxs

    def backward(self, ctxs, grad_out: np.ndarray) -> np.ndarray:
        for layer, ctx in zip(reversed(self.layers), reversed(ctxs)):
            grad_out = layer.backward(ctx, grad_out)
        return grad_out
