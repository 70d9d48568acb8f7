"""Dense neural primitives over channel-major (N, C, H, W) torch tensors.

Reductions (convolution, pooling, normalization) accumulate in float64 and
hand back float32, so results do not depend on the thread count.
"""
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeException

NORM_EPS = 1e-5

@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    # None means "same" padding, (k - 1) / 2
    padding: Optional[int] = None
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeException(f"Kernel size must be odd, got { self.kernel_size }")
        if self.stride < 1:
            raise ShapeException(f"Stride must be positive, got { self.stride }")
        if self.groups < 1 or self.in_channels % self.groups != 0 or self.out_channels % self.groups != 0:
            raise ShapeException(
                f"Channels { self.in_channels } -> { self.out_channels } are not divisible by { self.groups } groups"
            )

    @property
    def pad(self) -> int:
        return (self.kernel_size - 1) // 2 if self.padding is None else self.padding

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups, self.kernel_size, self.kernel_size)

    @classmethod
    def depthwise(cls, channels: int, kernel_size: int, bias: bool = True) -> "ConvSpec":
        return cls(channels, channels, kernel_size, groups=channels, bias=bias)

    def output_size(self, h: int, w: int):
        p, k, s = self.pad, self.kernel_size, self.stride
        return ((h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


def conv2d(input: torch.Tensor, spec: ConvSpec, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Cross-correlation of `input` with `weight` under `spec`.

    Parameters
    ----------
    input: torch.Tensor
        Feature map of shape (N, C_in, H, W).
    spec: ConvSpec
        Kernel size, stride, padding and grouping.
    weight: torch.Tensor
        Kernel of shape (C_out, C_in / groups, k, k).
    bias: torch.Tensor, optional
        Per-output-channel offset of shape (C_out,).
    """
    if input.dim() != 4:
        raise ShapeException(f"conv2d expects a rank-4 input, got shape { tuple(input.shape) }")
    if input.shape[1] != spec.in_channels:
        raise ShapeException(f"conv2d expects { spec.in_channels } input channels, got { input.shape[1] }")
    if tuple(weight.shape) != spec.weight_shape:
        raise ShapeException(f"conv2d weight must have shape { spec.weight_shape }, got { tuple(weight.shape) }")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ShapeException(f"conv2d bias must have shape ({ spec.out_channels },), got { tuple(bias.shape) }")
    out = F.conv2d(
        input.double(),
        weight.double(),
        None if bias is None else bias.double(),
        stride=spec.stride,
        padding=spec.pad,
        groups=spec.groups,
    )
    return out.to(input.dtype)

def _channel_view(param: torch.Tensor, ndim: int) -> torch.Tensor:
    return param.reshape([1, -1] + [1] * (ndim - 2))

def layer_norm(input: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """ Normalizes the channel axis (dim 1) at every site, population variance. """
    if gamma.numel() != input.shape[1] or beta.numel() != input.shape[1]:
        raise ShapeException(f"layer_norm affine must have { input.shape[1] } entries, got { gamma.numel() }")
    x = input.double()
    mean = x.mean(dim=1, keepdim=True)
    var = (x - mean).pow(2).mean(dim=1, keepdim=True)
    normalized = (x - mean) / torch.sqrt(var + eps)
    out = normalized * _channel_view(gamma.double(), x.dim()) + _channel_view(beta.double(), x.dim())
    return out.to(input.dtype)

def activations(input: torch.Tensor, kind: str) -> torch.Tensor:
    if kind == "silu":
        return F.silu(input)
    if kind == "relu":
        return F.relu(input)
    if kind == "sigmoid":
        return torch.sigmoid(input)
    if kind == "gelu":
        return F.gelu(input)
    raise ValueError(f"Unknown activation '{ kind }'")

def softmax(input: torch.Tensor, axis: int) -> torch.Tensor:
    # torch subtracts the running max before exponentiating
    return torch.softmax(input, dim=axis)

def pool_axis(input: torch.Tensor, axis: str) -> torch.Tensor:
    """ Mean over height -> (N, C, 1, W), or over width -> (N, C, H, 1). """
    if input.dim() != 4:
        raise ShapeException(f"pool_axis expects a rank-4 input, got shape { tuple(input.shape) }")
    if axis == "height":
        dim = 2
    elif axis == "width":
        dim = 3
    else:
        raise ValueError(f"Unknown pooling axis '{ axis }'")
    return input.double().mean(dim=dim, keepdim=True).to(input.dtype)

def resize_bilinear(input: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resize with the half-pixel convention.

    Output site i samples source coordinate (i + 0.5) * in / out - 0.5,
    clamped below at 0, and interpolates the two neighbours clamped to the
    last row/column.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeException(f"Cannot resize to { out_h }x{ out_w }")
    if tuple(input.shape[-2:]) == (out_h, out_w):
        return input.clone()
    out = F.interpolate(input.double(), size=(out_h, out_w), mode="bilinear", align_corners=False)
    return out.to(input.dtype)

def pixel_shuffle(input: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """ (N, C*r*r, H, W) -> (N, C, H*r, W*r), out[c, h*r + i, w*r + j] = in[c*r*r + i*r + j, h, w]. """
    if input.shape[1] % (factor * factor) != 0:
        raise ShapeException(f"pixel_shuffle needs channels divisible by { factor * factor }, got { input.shape[1] }")
    return F.pixel_shuffle(input, factor)

def pixel_unshuffle(input: torch.Tensor, factor: int = 2) -> torch.Tensor:
    if input.shape[-2] % factor != 0 or input.shape[-1] % factor != 0:
        raise ShapeException(f"pixel_unshuffle needs H and W divisible by { factor }, got { tuple(input.shape[-2:]) }")
    return F.pixel_unshuffle(input, factor)


class Conv(nn.Module):
    def __init__(self, spec: ConvSpec):
        super().__init__()
        self.spec = spec
        self.weight = nn.Parameter(torch.zeros(spec.weight_shape))
        self.bias = nn.Parameter(torch.zeros(spec.out_channels)) if spec.bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.spec, self.weight, self.bias)


class ChannelNorm(nn.Module):
    """ LayerNorm over the channel axis of (N, C, ...) maps. """
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return layer_norm(x, self.weight, self.bias)


class InferenceBatchNorm(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.batch_norm(
            x.double(),
            self.running_mean.double(),
            self.running_var.double(),
            self.weight.double(),
            self.bias.double(),
            training=False,
            eps=NORM_EPS,
        )
        return out.to(x.dtype)
