"""Analytic parameter and multiply-accumulate census.

Counting convention, per layer:

    conv (k x k, groups g)   params k*k*Cin*Cout/g (+ Cout bias)
                             MACs   k*k*Cin*Cout/g * Hout * Wout
    1x1 "linear"             a k = 1 conv
    layer norm / batch norm  params 2C, MACs 2 per element
    selective scan (D, N, rank R), per step of every sequence:
                             x_proj D*(R + 2N), dt_proj R*D, recurrence D*N
                             params D*(R + 2N) + R*D + D + D*N + D

Elementwise gates, activations and the softmax are not counted. Batch-norm
running statistics are buffers, not parameters.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List

from .blocks import MSFFN_KERNELS, POOL_ATTENTION_REDUCTION, SINGLE_SCALE_KERNELS
from .config import ModelConfig
from .ssm import dt_rank_for
from .tensor import ConvSpec

REFERENCE_PARAMS = 3.69e6
REFERENCE_MACS_256 = 7.53e9
# The ablation table lists the full model at a different size
ABLATION_OVERALL_PARAMS = 3.53e6


@dataclass
class LayerCount:
    name: str
    params: int
    macs: int

    @property
    def module(self) -> str:
        return self.name.split(".", 1)[0]


@dataclass
class FlopReport:
    height: int
    width: int
    layers: List[LayerCount] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(layer.params for layer in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(layer.macs for layer in self.layers)

    def by_module(self) -> Dict[str, LayerCount]:
        modules = OrderedDict()
        for layer in self.layers:
            entry = modules.setdefault(layer.module, LayerCount(layer.module, 0, 0))
            entry.params += layer.params
            entry.macs += layer.macs
        return modules

    def matching(self, fragment: str) -> LayerCount:
        """ Totals over every layer whose name contains `fragment`. """
        picked = [layer for layer in self.layers if fragment in layer.name]
        return LayerCount(fragment, sum(l.params for l in picked), sum(l.macs for l in picked))


def _conv(name: str, spec: ConvSpec, h: int, w: int) -> LayerCount:
    h_out, w_out = spec.output_size(h, w)
    k2 = spec.kernel_size * spec.kernel_size
    per_site = k2 * spec.in_channels * spec.out_channels // spec.groups
    params = per_site + (spec.out_channels if spec.bias else 0)
    return LayerCount(name, params, per_site * h_out * w_out)

def _norm(name: str, channels: int, sites: int) -> LayerCount:
    return LayerCount(name, 2 * channels, 2 * channels * sites)

def _scan(name: str, channels: int, state_size: int, length: int, sequences: int) -> LayerCount:
    rank = dt_rank_for(channels)
    x_proj = channels * (rank + 2 * state_size)
    dt_proj = rank * channels
    params = x_proj + dt_proj + channels + channels * state_size + channels
    macs = (x_proj + dt_proj + channels * state_size) * length * sequences
    return LayerCount(name, params, macs)

def _soss(prefix: str, c: int, config: ModelConfig, h: int, w: int) -> List[LayerCount]:
    inner = config.EXPANSION * c
    layers = [
        _conv(f"{ prefix }.in_proj", ConvSpec(c, inner, 1), h, w),
        _conv(f"{ prefix }.gate_proj", ConvSpec(c, inner, 1), h, w),
        _conv(f"{ prefix }.dwconv", ConvSpec.depthwise(inner, 3), h, w),
    ]
    layers += [
        _scan(f"{ prefix }.scans.{ k }", inner, config.STATE_SIZE, h * w, 1) for k in range(4)
    ]
    layers.append(_norm(f"{ prefix }.norm", inner, h * w))
    layers.append(_conv(f"{ prefix }.out_proj", ConvSpec(inner, c, 1), h, w))
    return layers

def _ccoss(prefix: str, c: int, config: ModelConfig, h: int, w: int) -> List[LayerCount]:
    n = config.STATE_SIZE
    return [
        _conv(f"{ prefix }.conv", ConvSpec(c, c, 1), 1, h + w),
        _norm(f"{ prefix }.bn", c, h + w),
        _scan(f"{ prefix }.forward_h", 1, n, c, w),
        _scan(f"{ prefix }.backward_h", 1, n, c, w),
        _scan(f"{ prefix }.forward_w", 1, n, c, h),
        _scan(f"{ prefix }.backward_w", 1, n, c, h),
        _conv(f"{ prefix }.dwconv", ConvSpec.depthwise(c, 1), h, w),
    ]

def _msffn(prefix: str, c: int, config: ModelConfig, h: int, w: int, kernels=MSFFN_KERNELS) -> List[LayerCount]:
    layers = [_norm(f"{ prefix }.norm", c, h * w)]
    for index, k in enumerate(kernels):
        branch = f"{ prefix }.branches.{ index }"
        layers += [
            _conv(f"{ branch }.conv_in", ConvSpec(c, c, k), h, w),
            _conv(f"{ branch }.dw_in", ConvSpec.depthwise(c, k), h, w),
            _conv(f"{ branch }.conv_out", ConvSpec(c, c, k), h, w),
            _conv(f"{ branch }.dw_out", ConvSpec.depthwise(c, k), h, w),
        ]
    if config.MSFFN_FUSE == "concat_proj":
        layers.append(_conv(f"{ prefix }.proj", ConvSpec(len(kernels) * c, c, 1), h, w))
    return layers

def _gated_ffn(prefix: str, c: int, h: int, w: int) -> List[LayerCount]:
    return [
        _norm(f"{ prefix }.norm", c, h * w),
        _conv(f"{ prefix }.project_in", ConvSpec(c, 2 * c, 1), h, w),
        _conv(f"{ prefix }.dwconv", ConvSpec.depthwise(2 * c, 3), h, w),
        _conv(f"{ prefix }.project_out", ConvSpec(c, c, 1), h, w),
    ]

def _pool_attention(prefix: str, c: int) -> List[LayerCount]:
    hidden = max(1, c // POOL_ATTENTION_REDUCTION)
    return [
        _conv(f"{ prefix }.squeeze", ConvSpec(c, hidden, 1), 1, 1),
        _conv(f"{ prefix }.excite", ConvSpec(hidden, c, 1), 1, 1),
    ]

def _resblock(prefix: str, c: int, h: int, w: int) -> List[LayerCount]:
    return [
        _conv(f"{ prefix }.conv1", ConvSpec(c, c, 3), h, w),
        _conv(f"{ prefix }.conv2", ConvSpec(c, c, 3), h, w),
    ]

def block_counts(prefix: str, c: int, config: ModelConfig, h: int, w: int) -> List[LayerCount]:
    if config.BLOCK_TYPE == "resblock":
        return _resblock(prefix, c, h, w)
    layers = []
    if config.USE_SOSS:
        layers += _soss(f"{ prefix }.soss", c, config, h, w)
    elif config.SOSS_REPLACEMENT == "conv":
        layers += _resblock(f"{ prefix }.soss", c, h, w)
    if config.USE_CCOSS:
        layers += _ccoss(f"{ prefix }.ccoss", c, config, h, w)
    elif config.CCOSS_REPLACEMENT == "pool_attention":
        layers += _pool_attention(f"{ prefix }.ccoss", c)
    if config.USE_MSFFN:
        layers += _msffn(f"{ prefix }.msffn", c, config, h, w)
    elif config.MSFFN_REPLACEMENT == "gated":
        layers += _gated_ffn(f"{ prefix }.msffn", c, h, w)
    elif config.MSFFN_REPLACEMENT == "single_scale":
        layers += _msffn(f"{ prefix }.msffn", c, config, h, w, SINGLE_SCALE_KERNELS)
    return layers

def _stage(prefix: str, c: int, count: int, config: ModelConfig, h: int, w: int) -> List[LayerCount]:
    layers = []
    for index in range(count):
        layers += block_counts(f"{ prefix }.{ index }", c, config, h, w)
    return layers


def count_breakdown(config: ModelConfig, h: int = 256, w: int = 256) -> FlopReport:
    """Per-layer census of the whole network at an h x w input.

    Layer names follow the module names of the network, with the top-level
    part renamed per stage: shallow, encoder1..3, down1..3, bottleneck,
    up1..3, fuse1..3, decoder1..3, refinement, output.
    """
    widths = config.widths
    sizes = [(h >> level, w >> level) for level in range(4)]
    report = FlopReport(h, w)
    layers = report.layers
    layers.append(_conv("shallow", ConvSpec(3, widths[0], 3), h, w))
    for level in range(3):
        lh, lw = sizes[level]
        layers += _stage(f"encoder{ level + 1 }", widths[level], config.ENCODER_BLOCKS[level], config, lh, lw)
        layers.append(_conv(f"down{ level + 1 }", ConvSpec(widths[level], widths[level + 1], 3, stride=2), lh, lw))
    layers += _stage("bottleneck", widths[3], config.BOTTLENECK_BLOCKS, config, *sizes[3])
    for k, level in enumerate((2, 1, 0)):
        lh, lw = sizes[level]
        layers.append(_conv(f"up{ k + 1 }", ConvSpec(widths[level + 1], 4 * widths[level], 1), *sizes[level + 1]))
        if config.SKIP_FUSION == "concat":
            layers.append(_conv(f"fuse{ k + 1 }", ConvSpec(2 * widths[level], widths[level], 1), lh, lw))
        layers += _stage(f"decoder{ k + 1 }", widths[level], config.DECODER_BLOCKS[level], config, lh, lw)
    layers += _stage("refinement", widths[0], config.REFINEMENT_BLOCKS, config, h, w)
    layers.append(_conv("output", ConvSpec(widths[0], 3, 3), h, w))
    return report

def count_params(config: ModelConfig) -> int:
    return count_breakdown(config, 8, 8).total_params

def count_flops(config: ModelConfig, h: int = 256, w: int = 256) -> int:
    """ Multiply-accumulates of one forward pass at h x w. """
    return count_breakdown(config, h, w).total_macs


FULL_MODEL = { "BLOCK_TYPE": "scoss", "USE_SOSS": True, "USE_CCOSS": True, "USE_MSFFN": True }

@dataclass(frozen=True)
class Ablation:
    """ A variant of the ablation listing and the figures it reports at 256x256. """
    name: str
    overrides: Dict[str, object]
    listed_params: float
    listed_macs: float

    def apply(self, config: ModelConfig) -> ModelConfig:
        return ModelConfig({ **config.as_dict(), **FULL_MODEL, **self.overrides })


ABLATIONS = (
    Ablation("resblock baseline", { "BLOCK_TYPE": "resblock" }, 3.35e6, 17.42e9),
    Ablation("w/o SOSS (conv)", { "USE_SOSS": False, "SOSS_REPLACEMENT": "conv" }, 3.45e6, 7.48e9),
    Ablation("w/o CCOSS (pool attention)", { "USE_CCOSS": False, "CCOSS_REPLACEMENT": "pool_attention" }, 3.68e6, 7.52e9),
    # The listing has one column for both feed-forward replacements
    Ablation("w/o MSFFN (gated)", { "USE_MSFFN": False, "MSFFN_REPLACEMENT": "gated" }, 3.56e6, 7.46e9),
    Ablation("w/o MSFFN (single scale)", { "USE_MSFFN": False, "MSFFN_REPLACEMENT": "single_scale" }, 3.56e6, 7.46e9),
    Ablation("full", {}, ABLATION_OVERALL_PARAMS, REFERENCE_MACS_256),
)
