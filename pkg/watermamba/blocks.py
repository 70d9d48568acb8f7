"""SOSS, CCOSS and MSFFN and their composition into the SCOSS block.

Every block maps (N, C, H, W) to (N, C, H, W). "Linear" layers on feature
maps are 1x1 convolutions over the channel axis.
"""
from typing import Optional, Tuple

import torch
from einops import rearrange
from torch import nn

from .config import ModelConfig
from .layout import DIRECTIONS, coordinate_concat, coordinate_split, flatten, merge_directions
from .ssm import SelectiveScan, cbssm, cfssm
from .tensor import ChannelNorm, Conv, ConvSpec, InferenceBatchNorm, activations, pool_axis, softmax

MSFFN_KERNELS = (1, 3, 5)
SINGLE_SCALE_KERNELS = (3,)
POOL_ATTENTION_REDUCTION = 4


class Soss(nn.Module):
    """Spatial omnidirectional selective scan.

    X1 = LN(scan2d(SiLU(DWConv(Linear(x)))))
    X2 = SiLU(Linear(x))
    out = Linear(X1 * X2) + x
    """
    def __init__(self, channels: int, state_size: int, expansion: int = 2, bbar_mode: str = "zoh", chunk_len: int = 64):
        super().__init__()
        inner = expansion * channels
        self.in_proj = Conv(ConvSpec(channels, inner, 1))
        self.gate_proj = Conv(ConvSpec(channels, inner, 1))
        self.dwconv = Conv(ConvSpec.depthwise(inner, 3))
        self.scans = nn.ModuleList([
            SelectiveScan(inner, state_size, bbar_mode, chunk_len) for _ in DIRECTIONS
        ])
        self.norm = ChannelNorm(inner)
        self.out_proj = Conv(ConvSpec(inner, channels, 1))

    def scan2d(self, x: torch.Tensor, reference: bool = False) -> torch.Tensor:
        h, w = x.shape[-2:]
        ys = [
            scan(flatten(x, direction), reference=reference)
            for scan, direction in zip(self.scans, DIRECTIONS)
        ]
        return merge_directions(ys, h, w)

    def forward(self, x: torch.Tensor, reference: bool = False) -> torch.Tensor:
        x1 = activations(self.dwconv(self.in_proj(x)), "silu")
        x1 = self.norm(self.scan2d(x1, reference=reference))
        x2 = activations(self.gate_proj(x), "silu")
        return self.out_proj(x1 * x2) + x


class Ccoss(nn.Module):
    """Channel coordinate omnidirectional selective scan.

    Height- and width-pooled maps go through a shared 1x1 conv, BN and ReLU,
    then each pooled coordinate is scanned along the channel axis in both
    directions to build sigmoid masks:

        mask = Sigmoid(CF(s) * SiLU(s) + CB(s) * SiLU(s))
        out = mask_h * mask_w * y * Softmax_c(DWConv1x1(y)) + y
    """
    def __init__(self, channels: int, state_size: int, bbar_mode: str = "zoh", chunk_len: int = 64):
        super().__init__()
        self.conv = Conv(ConvSpec(channels, channels, 1))
        self.bn = InferenceBatchNorm(channels)
        self.forward_h = SelectiveScan(1, state_size, bbar_mode, chunk_len)
        self.backward_h = SelectiveScan(1, state_size, bbar_mode, chunk_len)
        self.forward_w = SelectiveScan(1, state_size, bbar_mode, chunk_len)
        self.backward_w = SelectiveScan(1, state_size, bbar_mode, chunk_len)
        self.dwconv = Conv(ConvSpec.depthwise(channels, 1))

    @staticmethod
    def _mask(seq: torch.Tensor, forward: SelectiveScan, backward: SelectiveScan, reference: bool) -> torch.Tensor:
        gate = activations(seq, "silu")
        f = cfssm(seq, forward.params(), forward.chunk_len, reference=reference)
        b = cbssm(seq, backward.params(), backward.chunk_len, reference=reference)
        return activations(f * gate + b * gate, "sigmoid")

    def forward(self, y: torch.Tensor, reference: bool = False) -> torch.Tensor:
        n, c, h, w = y.shape
        y1 = coordinate_concat(pool_axis(y, "height"), pool_axis(y, "width"))
        y1 = activations(self.bn(self.conv(y1)), "relu")
        y_h1, y_w1 = coordinate_split(y1, h, w)

        seq_h = rearrange(y_h1, "n c 1 w -> (n w) 1 c")
        mask_h = self._mask(seq_h, self.forward_h, self.backward_h, reference)
        mask_h = rearrange(mask_h, "(n w) 1 c -> n c 1 w", n=n, w=w)

        seq_w = rearrange(y_w1, "n c h 1 -> (n h) 1 c")
        mask_w = self._mask(seq_w, self.forward_w, self.backward_w, reference)
        mask_w = rearrange(mask_w, "(n h) 1 c -> n c h 1", n=n, h=h)

        modulation = softmax(self.dwconv(y), axis=1)
        return mask_h * mask_w * y * modulation + y


class MsffnBranch(nn.Module):
    """ DW^k C^k (ReLU (DW^k C^k (z))) """
    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        self.conv_in = Conv(ConvSpec(channels, channels, kernel_size))
        self.dw_in = Conv(ConvSpec.depthwise(channels, kernel_size))
        self.conv_out = Conv(ConvSpec(channels, channels, kernel_size))
        self.dw_out = Conv(ConvSpec.depthwise(channels, kernel_size))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = activations(self.dw_in(self.conv_in(z)), "relu")
        return self.dw_out(self.conv_out(z))


class Msffn(nn.Module):
    def __init__(self, channels: int, fuse: str = "sum", kernels: Tuple[int, ...] = MSFFN_KERNELS):
        super().__init__()
        self.fuse = fuse
        self.norm = ChannelNorm(channels)
        self.branches = nn.ModuleList([MsffnBranch(channels, k) for k in kernels])
        self.proj = Conv(ConvSpec(len(kernels) * channels, channels, 1)) if fuse == "concat_proj" else None

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z = self.norm(z)
        outs = [branch(z) for branch in self.branches]
        if self.proj is not None:
            return self.proj(torch.cat(outs, dim=1))
        fused = outs[0]
        for out in outs[1:]:
            fused = fused + out
        return fused


class GatedFfn(nn.Module):
    """ project_out(GELU(z1) * z2), with [z1, z2] = DWConv3(project_in(LN(z))). """
    def __init__(self, channels: int):
        super().__init__()
        self.norm = ChannelNorm(channels)
        self.project_in = Conv(ConvSpec(channels, 2 * channels, 1))
        self.dwconv = Conv(ConvSpec.depthwise(2 * channels, 3))
        self.project_out = Conv(ConvSpec(channels, channels, 1))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        z1, z2 = self.dwconv(self.project_in(self.norm(z))).chunk(2, dim=1)
        return self.project_out(activations(z1, "gelu") * z2)


class PoolAttention(nn.Module):
    """Channel attention from the global average, standing in for CCOSS.

    out = y * Sigmoid(Excite(ReLU(Squeeze(mean_hw(y))))) + y
    """
    def __init__(self, channels: int, reduction: int = POOL_ATTENTION_REDUCTION):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.squeeze = Conv(ConvSpec(channels, hidden, 1))
        self.excite = Conv(ConvSpec(hidden, channels, 1))

    def forward(self, y: torch.Tensor, reference: bool = False) -> torch.Tensor:
        pooled = pool_axis(pool_axis(y, "height"), "width")
        mask = activations(self.excite(activations(self.squeeze(pooled), "relu")), "sigmoid")
        return y * mask + y


class ResBlock(nn.Module):
    """ Convolutional baseline: x + Conv3(ReLU(Conv3(x))). """
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = Conv(ConvSpec(channels, channels, 3))
        self.conv2 = Conv(ConvSpec(channels, channels, 3))

    def forward(self, x: torch.Tensor, reference: bool = False) -> torch.Tensor:
        return self.conv2(activations(self.conv1(x), "relu")) + x


def _spatial_unit(channels: int, config: ModelConfig) -> Optional[nn.Module]:
    if config.USE_SOSS:
        return Soss(channels, config.STATE_SIZE, config.EXPANSION, config.BBAR_MODE, config.SCAN_CHUNK)
    if config.SOSS_REPLACEMENT == "conv":
        return ResBlock(channels)
    return None

def _channel_unit(channels: int, config: ModelConfig) -> Optional[nn.Module]:
    if config.USE_CCOSS:
        return Ccoss(channels, config.STATE_SIZE, config.BBAR_MODE, config.SCAN_CHUNK)
    if config.CCOSS_REPLACEMENT == "pool_attention":
        return PoolAttention(channels)
    return None

def _feed_forward_unit(channels: int, config: ModelConfig) -> Optional[nn.Module]:
    if config.USE_MSFFN:
        return Msffn(channels, config.MSFFN_FUSE)
    if config.MSFFN_REPLACEMENT == "gated":
        return GatedFfn(channels)
    if config.MSFFN_REPLACEMENT == "single_scale":
        return Msffn(channels, config.MSFFN_FUSE, SINGLE_SCALE_KERNELS)
    return None


class ScossBlock(nn.Module):
    """Z = CCOSS(SOSS(x)) + x ; out = MSFFN(Z) + Z.

    A disabled module is swapped for its configured replacement: SOSS for a
    conv residual block, CCOSS for pooled channel attention, MSFFN for a
    gated or single-scale feed-forward network. With no replacement a
    disabled SOSS or CCOSS passes its input through, and a disabled MSFFN
    drops the whole feed-forward residual unit, so out = Z.
    """
    def __init__(self, channels: int, config: ModelConfig):
        super().__init__()
        self.soss = _spatial_unit(channels, config)
        self.ccoss = _channel_unit(channels, config)
        self.msffn = _feed_forward_unit(channels, config)

    def forward(self, x: torch.Tensor, reference: bool = False) -> torch.Tensor:
        y = x if self.soss is None else self.soss(x, reference=reference)
        y = y if self.ccoss is None else self.ccoss(y, reference=reference)
        z = y + x
        if self.msffn is None:
            return z
        return self.msffn(z) + z


def make_block(channels: int, config: ModelConfig) -> nn.Module:
    if config.BLOCK_TYPE == "resblock":
        return ResBlock(channels)
    return ScossBlock(channels, config)
