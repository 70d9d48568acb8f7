import logging
from typing import List

import torch
from torch import nn

from .blocks import make_block
from .config import ModelConfig
from .exceptions import ShapeException
from .tensor import Conv, ConvSpec, pixel_shuffle

logger = logging.getLogger(__name__)

# Three stride-2 stages
SIZE_MULTIPLE = 8


def _stage(channels: int, count: int, config: ModelConfig) -> nn.Sequential:
    return nn.Sequential(*[make_block(channels, config) for _ in range(count)])


class WaterMamba(nn.Module):
    """U-shaped enhancer.

    shallow conv -> 3 x (encoder stage, stride-2 down) -> bottleneck ->
    3 x (1x1 up + pixel shuffle, skip fusion, decoder stage) -> refinement
    -> output conv. The output conv gives the residual DR and the enhanced
    image is FR = DR + I.
    """
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        widths = config.widths
        self.shallow = Conv(ConvSpec(3, widths[0], 3))
        self.encoders = nn.ModuleList([
            _stage(widths[level], config.ENCODER_BLOCKS[level], config) for level in range(3)
        ])
        self.downs = nn.ModuleList([
            Conv(ConvSpec(widths[level], widths[level + 1], 3, stride=2)) for level in range(3)
        ])
        self.bottleneck = _stage(widths[3], config.BOTTLENECK_BLOCKS, config)
        # Decoder modules run deepest level first
        levels = (2, 1, 0)
        self.ups = nn.ModuleList([
            Conv(ConvSpec(widths[level + 1], 4 * widths[level], 1)) for level in levels
        ])
        if config.SKIP_FUSION == "concat":
            self.fuses = nn.ModuleList([
                Conv(ConvSpec(2 * widths[level], widths[level], 1)) for level in levels
            ])
        else:
            self.fuses = None
        self.decoders = nn.ModuleList([
            _stage(widths[level], config.DECODER_BLOCKS[level], config) for level in levels
        ])
        self.refinement = _stage(widths[0], config.REFINEMENT_BLOCKS, config)
        self.output = Conv(ConvSpec(widths[0], 3, 3))

    def _check_input(self, image: torch.Tensor):
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeException(f"Expected an (N, 3, H, W) image, got { tuple(image.shape) }")
        h, w = image.shape[-2:]
        if h % SIZE_MULTIPLE != 0 or w % SIZE_MULTIPLE != 0:
            raise ShapeException(
                f"Image size { h }x{ w } is not divisible by { SIZE_MULTIPLE }; "
                f"pad it to a multiple of { SIZE_MULTIPLE } first (e.g. the pad8 size policy)"
            )

    @torch.no_grad()
    def residual(self, image: torch.Tensor) -> torch.Tensor:
        """ DR, the learned correction added to the input. """
        self._check_input(image)
        x = self.shallow(image)
        skips: List[torch.Tensor] = []
        for encoder, down in zip(self.encoders, self.downs):
            x = encoder(x)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        for k, (up, decoder) in enumerate(zip(self.ups, self.decoders)):
            x = pixel_shuffle(up(x), 2)
            skip = skips[-1 - k]
            if self.fuses is not None:
                x = self.fuses[k](torch.cat([x, skip], dim=1))
            else:
                x = x + skip
            x = decoder(x)
        x = self.refinement(x)
        return self.output(x)

    @torch.no_grad()
    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.residual(image) + image


def build(config: ModelConfig, store) -> WaterMamba:
    """ Instantiate the network for `config` and load `store` into it. """
    store.validate(config)
    model = WaterMamba(config)
    model.load_state_dict(store.tensors, strict=True)
    model.requires_grad_(False)
    model.eval()
    logger.debug(f"Built model with { len(store.tensors) } tensors: { config.as_dict() }")
    return model
