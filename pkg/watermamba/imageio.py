"""Reading and writing 8-bit RGB images (PNG, PPM P6) as float arrays.

8-bit values map to v / 255 on read and back to round(v * 255), clamped to
0..255, on write. P6 files are written as "P6\\n<w> <h>\\n255\\n" followed by
the RGB bytes.
"""
import os
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .exceptions import ImageFormatException
from .tensor import resize_bilinear

IMAGE_SUFFIXES = (".png", ".ppm")
PAD_MULTIPLE = 8
PAPER_SIZE = 256


def read_image(path: Union[str, os.PathLike]) -> np.ndarray:
    """ (H, W, 3) float32 in [0, 1]. """
    try:
        with Image.open(path) as image:
            if image.mode not in ("RGB", "RGBA", "L", "P"):
                raise ImageFormatException(f"{ path } has unsupported image mode { image.mode }")
            pixels = np.asarray(image.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ImageFormatException(f"Unable to read image { path }: { e }") from e
    return pixels.astype(np.float32) / 255.0

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)

def write_image(image: np.ndarray, path: Union[str, os.PathLike]):
    path = Path(path)
    pixels = to_uint8(image)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageFormatException(f"Expected an (H, W, 3) image, got shape { pixels.shape }")
    if path.suffix.lower() == ".ppm":
        with open(path, "wb") as f:
            f.write(f"P6\n{ pixels.shape[1] } { pixels.shape[0] }\n255\n".encode("ascii"))
            f.write(pixels.tobytes())
        return
    Image.fromarray(pixels).save(path, format="PNG")


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """ (H, W, 3) -> (1, 3, H, W). """
    return torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None].contiguous()

def from_tensor(tensor: torch.Tensor) -> np.ndarray:
    return tensor[0].permute(1, 2, 0).detach().cpu().numpy()


def pad_to_multiple(image: torch.Tensor, multiple: int = PAD_MULTIPLE) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """Reflect-pad the bottom and right of (N, C, H, W) up to a multiple.

    Reflection needs the pad to be smaller than the extent; smaller images
    are replicate-padded. Returns the padded tensor and the original size.
    """
    h, w = image.shape[-2:]
    pad_h, pad_w = (-h) % multiple, (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return image, (h, w)
    mode = "reflect" if pad_h < h and pad_w < w else "replicate"
    padded = torch.nn.functional.pad(image, (0, pad_w, 0, pad_h), mode=mode)
    return padded, (h, w)

def crop(image: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    h, w = size
    return image[..., :h, :w]

def resize_for_model(image: torch.Tensor, size: int = PAPER_SIZE) -> Tuple[torch.Tensor, Tuple[int, int]]:
    h, w = image.shape[-2:]
    return resize_bilinear(image, size, size), (h, w)

def restore_size(image: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    return resize_bilinear(image, *size)
