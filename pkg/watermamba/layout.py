"""Flattening feature maps into scan sequences and back.

Index maps for an H x W map, sequence position i <-> site (h, w):

    ROW_MAJOR            i = h * W + w                 top-left to bottom-right
    ROW_MAJOR_REVERSED   i = H * W - 1 - (h * W + w)   bottom-right to top-left
    COLUMN_MAJOR         i = (W - 1 - w) * H + h       top-right to bottom-left
    COLUMN_MAJOR_REVERSED
                         i = H * W - 1 - ((W - 1 - w) * H + h)
                                                       bottom-left to top-right
"""
from enum import Enum
from typing import Tuple

import torch
from einops import rearrange

from .exceptions import ShapeException


class ScanDirection(Enum):
    ROW_MAJOR = 1
    ROW_MAJOR_REVERSED = 2
    COLUMN_MAJOR = 3
    COLUMN_MAJOR_REVERSED = 4

    def index(self, h: int, w: int, height: int, width: int) -> int:
        if self.value <= 2:
            i = h * width + w
        else:
            i = (width - 1 - w) * height + h
        if self.value % 2 == 0:
            i = height * width - 1 - i
        return i


DIRECTIONS = tuple(ScanDirection)

def _check_map(feature: torch.Tensor):
    if feature.dim() != 4:
        raise ShapeException(f"Expected an (N, C, H, W) map, got { tuple(feature.shape) }")
    if feature.shape[2] < 1 or feature.shape[3] < 1:
        raise ShapeException(f"Map extents must be at least 1, got { tuple(feature.shape[2:]) }")

def flatten(feature: torch.Tensor, direction: ScanDirection) -> torch.Tensor:
    """ (N, C, H, W) -> (N, C, H * W) along one direction. """
    _check_map(feature)
    if direction in (ScanDirection.ROW_MAJOR, ScanDirection.ROW_MAJOR_REVERSED):
        seq = rearrange(feature, "n c h w -> n c (h w)")
    else:
        seq = rearrange(feature.flip(-1), "n c h w -> n c (w h)")
    if direction.value % 2 == 0:
        seq = seq.flip(-1)
    return seq

def unflatten(seq: torch.Tensor, direction: ScanDirection, h: int, w: int) -> torch.Tensor:
    if seq.dim() != 3 or seq.shape[-1] != h * w:
        raise ShapeException(f"Sequence { tuple(seq.shape) } does not hold a { h }x{ w } map")
    if direction.value % 2 == 0:
        seq = seq.flip(-1)
    if direction in (ScanDirection.ROW_MAJOR, ScanDirection.ROW_MAJOR_REVERSED):
        return rearrange(seq, "n c (h w) -> n c h w", h=h, w=w)
    return rearrange(seq, "n c (w h) -> n c h w", h=h, w=w).flip(-1)

def flatten_directions(feature: torch.Tensor) -> torch.Tensor:
    """ (N, C, H, W) -> (N, 4, C, H * W), one slice per ScanDirection in order. """
    return torch.stack([flatten(feature, direction) for direction in DIRECTIONS], dim=1)

def merge_directions(sequences: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """ Un-permute each of the four (N, C, H * W) sequences and sum them. """
    if isinstance(sequences, (list, tuple)):
        shapes = { tuple(seq.shape) for seq in sequences }
        if len(sequences) != 4 or len(shapes) != 1:
            raise ShapeException(f"merge_directions needs four equally shaped sequences, got { sorted(shapes) }")
        sequences = torch.stack(list(sequences), dim=1)
    if sequences.dim() != 4 or sequences.shape[1] != 4:
        raise ShapeException(f"merge_directions needs (N, 4, C, L), got { tuple(sequences.shape) }")
    merged = unflatten(sequences[:, 0], DIRECTIONS[0], h, w)
    for k in range(1, 4):
        merged = merged + unflatten(sequences[:, k], DIRECTIONS[k], h, w)
    return merged

def coordinate_concat(y_h: torch.Tensor, y_w: torch.Tensor) -> torch.Tensor:
    """ y_h (N, C, 1, W) and y_w (N, C, H, 1) -> (N, C, 1, W + H), width entries first. """
    if y_h.dim() != 4 or y_w.dim() != 4 or y_h.shape[2] != 1 or y_w.shape[3] != 1:
        raise ShapeException(f"Expected (N, C, 1, W) and (N, C, H, 1), got { tuple(y_h.shape) } and { tuple(y_w.shape) }")
    if y_h.shape[:2] != y_w.shape[:2]:
        raise ShapeException(f"Pooled maps disagree on (N, C): { tuple(y_h.shape[:2]) } vs { tuple(y_w.shape[:2]) }")
    if y_h.shape[3] < 1 or y_w.shape[2] < 1:
        raise ShapeException("Pooled maps need H and W of at least 1")
    return torch.cat([y_h, y_w.transpose(-1, -2)], dim=-1)

def coordinate_split(y1: torch.Tensor, h: int, w: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """ Inverse of coordinate_concat: -> (N, C, 1, W) and (N, C, H, 1). """
    if h < 1 or w < 1:
        raise ShapeException(f"Split extents must be at least 1, got h={ h }, w={ w }")
    if y1.dim() != 4 or y1.shape[2] != 1 or y1.shape[3] != h + w:
        raise ShapeException(f"Expected (N, C, 1, { h + w }), got { tuple(y1.shape) }")
    y_h, y_w = torch.split(y1, [w, h], dim=-1)
    return y_h, y_w.transpose(-1, -2)
