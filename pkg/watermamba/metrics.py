"""Full-reference (PSNR, SSIM) and no-reference (UIQM, UCIQE) image metrics.

Images are float arrays of shape (H, W, 3) with values in [0, 1].

Constants
---------
SSIM     Rec. 601 luma, 11x11 Gaussian window, sigma 1.5, K1 0.01, K2 0.03,
         population statistics, mean over the valid (unpadded) region.
UIQM     0.0282 UICM + 0.2953 UISM + 3.5753 UIConM on the 0..255 scale
         (Panetta, Gao and Agaian, IEEE J. Oceanic Eng. 2016).
  UICM   -0.0268 sqrt(mu_RG^2 + mu_YB^2) + 0.1586 sqrt(var_RG + var_YB);
         means alpha-trimmed by ceil(0.1 K) low and floor(0.1 K) high values,
         variances about the trimmed mean over all K pixels.
  UISM   0.299 / 0.587 / 0.114 weighted EME of each channel times its Sobel
         magnitude (scaled so the largest magnitude is 255).
  EME    2 / (k1 k2) * sum over 8x8 blocks of ln(max / min); blocks with a
         zero extreme add nothing.
  UIConM -1 / (k1 k2) * sum over 8x8 RGB blocks of r ln r, r = (max - min) / (max + min);
         blocks with r = 0 add nothing.
         Blocks tile the image from the top-left; partial edge blocks are dropped.
UCIQE    0.4680 sigma_chroma + 0.2745 contrast_L + 0.2576 mean_saturation
         (Yang and Sowmya, IEEE TIP 2015), on CIELab L / 100 and chroma / 100.
         contrast_L is the mean of the brightest 1% of L minus the mean of the
         darkest 1% (at least one pixel each); saturation is C / sqrt(C^2 + L^2),
         0 where both vanish.
Lab      sRGB transfer, IEC 61966-2-1 RGB->XYZ matrix, white point = matrix
         applied to (1, 1, 1), so neutral greys land on a* = b* = 0 up to rounding.
"""
import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.table import Table
from scipy import ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from .exceptions import ImageFormatException, MetricException
from .imageio import IMAGE_SUFFIXES, read_image

logger = logging.getLogger(__name__)

LUMA_601 = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

UIQM_COEFFS = (0.0282, 0.2953, 3.5753)
UICM_COEFFS = (-0.0268, 0.1586)
UISM_CHANNEL_WEIGHTS = (0.299, 0.587, 0.114)
UICM_ALPHA = 0.1
BLOCK_SIZE = 8

UCIQE_COEFFS = (0.4680, 0.2745, 0.2576)
UCIQE_CONTRAST_FRACTION = 0.01
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
WHITE_POINT = SRGB_TO_XYZ @ np.ones(3)

FULL_REFERENCE = ("psnr", "ssim")
NO_REFERENCE = ("uiqm", "uciqe")
ALL_METRICS = FULL_REFERENCE + NO_REFERENCE


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise MetricException(f"Expected an (H, W, 3) RGB image, got shape { image.shape }")
    return image

def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricException(f"PSNR needs equal shapes, got { a.shape } and { b.shape }")
    if np.array_equal(a, b):
        return math.inf
    return float(peak_signal_noise_ratio(a, b, data_range=peak))

def luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return _as_rgb(image) @ LUMA_601

def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a, b = luma(a), luma(b)
    if a.shape != b.shape:
        raise MetricException(f"SSIM needs equal shapes, got { a.shape } and { b.shape }")
    if min(a.shape) < SSIM_WINDOW:
        raise MetricException(
            f"SSIM needs images of at least { SSIM_WINDOW }x{ SSIM_WINDOW }, got { a.shape[0] }x{ a.shape[1] }; resize first"
        )
    return float(structural_similarity(
        a, b,
        win_size=SSIM_WINDOW,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        data_range=1.0,
    ))


def _trimmed_stats(values: np.ndarray) -> Tuple[float, float]:
    ordered = np.sort(values.ravel())
    k = ordered.size
    low = math.ceil(UICM_ALPHA * k)
    high = math.floor(UICM_ALPHA * k)
    kept = ordered[low:k - high]
    mu = float(kept.mean()) if kept.size else 0.0
    var = float(np.mean((ordered - mu) ** 2))
    return mu, var

def uicm(image: np.ndarray) -> float:
    rgb = _as_rgb(image) * 255
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mu_rg, var_rg = _trimmed_stats(r - g)
    mu_yb, var_yb = _trimmed_stats((r + g) / 2 - b)
    c_mean, c_var = UICM_COEFFS
    return c_mean * math.sqrt(mu_rg ** 2 + mu_yb ** 2) + c_var * math.sqrt(var_rg + var_yb)

def _blocks(channel: np.ndarray) -> np.ndarray:
    """ (k1, k2, 8, 8, ...) view of the whole 8x8 blocks, partial edges dropped. """
    k1, k2 = channel.shape[0] // BLOCK_SIZE, channel.shape[1] // BLOCK_SIZE
    cropped = channel[:k1 * BLOCK_SIZE, :k2 * BLOCK_SIZE]
    shape = (k1, BLOCK_SIZE, k2, BLOCK_SIZE) + channel.shape[2:]
    return np.swapaxes(cropped.reshape(shape), 1, 2)

def eme(channel: np.ndarray) -> float:
    blocks = _blocks(channel)
    k1, k2 = blocks.shape[:2]
    if k1 * k2 == 0:
        return 0.0
    flat = blocks.reshape(k1, k2, -1)
    hi, lo = flat.max(axis=-1), flat.min(axis=-1)
    valid = (hi > 0) & (lo > 0)
    ratio = np.where(valid, hi / np.where(valid, lo, 1.0), 1.0)
    return 2.0 / (k1 * k2) * float(np.log(ratio).sum())

def sobel_magnitude(channel: np.ndarray) -> np.ndarray:
    gx = ndimage.sobel(channel, axis=1, mode="reflect")
    gy = ndimage.sobel(channel, axis=0, mode="reflect")
    magnitude = np.hypot(gx, gy)
    peak = magnitude.max()
    if peak > 0:
        magnitude = magnitude * (255.0 / peak)
    return magnitude

def uism(image: np.ndarray) -> float:
    rgb = _as_rgb(image) * 255
    total = 0.0
    for c, weight in enumerate(UISM_CHANNEL_WEIGHTS):
        channel = rgb[..., c]
        total += weight * eme(sobel_magnitude(channel) * channel)
    return total

def uiconm(image: np.ndarray) -> float:
    blocks = _blocks(_as_rgb(image) * 255)
    k1, k2 = blocks.shape[:2]
    if k1 * k2 == 0:
        return 0.0
    flat = blocks.reshape(k1, k2, -1)
    hi, lo = flat.max(axis=-1), flat.min(axis=-1)
    top, bottom = hi - lo, hi + lo
    valid = (top > 0) & (bottom > 0)
    ratio = np.where(valid, top / np.where(valid, bottom, 1.0), 1.0)
    return -1.0 / (k1 * k2) * float((ratio * np.log(ratio)).sum())

def uiqm(image: np.ndarray) -> float:
    c1, c2, c3 = UIQM_COEFFS
    return c1 * uicm(image) + c2 * uism(image) + c3 * uiconm(image)


def _srgb_to_linear(values: np.ndarray) -> np.ndarray:
    return np.where(values <= 0.04045, values / 12.92, ((values + 0.055) / 1.055) ** 2.4)

def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)

def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    linear = _srgb_to_linear(np.clip(_as_rgb(image), 0.0, 1.0))
    xyz = (linear @ SRGB_TO_XYZ.T) / WHITE_POINT
    fx, fy, fz = _lab_f(xyz[..., 0]), _lab_f(xyz[..., 1]), _lab_f(xyz[..., 2])
    return np.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)], axis=-1)

def uciqe_components(image: np.ndarray) -> Tuple[float, float, float]:
    """ (sigma_chroma, contrast_L, mean_saturation) on L / 100 and chroma / 100. """
    lab = rgb_to_lab(image)
    lightness = lab[..., 0].ravel() / 100
    chroma = np.hypot(lab[..., 1], lab[..., 2]).ravel() / 100
    sigma_c = float(chroma.std())
    ordered = np.sort(lightness)
    n = max(1, int(UCIQE_CONTRAST_FRACTION * ordered.size))
    contrast_l = float(ordered[-n:].mean() - ordered[:n].mean())
    radius = np.hypot(chroma, lightness)
    saturation = np.where(radius > 0, chroma / np.where(radius > 0, radius, 1.0), 0.0)
    return sigma_c, contrast_l, float(saturation.mean())

def uciqe(image: np.ndarray) -> float:
    c1, c2, c3 = UCIQE_COEFFS
    sigma_c, contrast_l, mu_s = uciqe_components(image)
    return c1 * sigma_c + c2 * contrast_l + c3 * mu_s


def _format(value: Optional[float]) -> str:
    if value is None:
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))

def _parse(value: str) -> Optional[float]:
    return None if value == "" else float(value)

@dataclass
class MetricRow:
    path: str
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    uiqm: Optional[float] = None
    uciqe: Optional[float] = None
    warning: str = ""


@dataclass
class MetricReport:
    rows: List[MetricRow] = field(default_factory=list)

    def values(self, metric: str) -> List[float]:
        return [getattr(row, metric) for row in self.rows if getattr(row, metric) is not None]

    def aggregate(self) -> Dict[str, Optional[float]]:
        means = {}
        for metric in ALL_METRICS:
            values = self.values(metric)
            means[metric] = float(np.mean(values)) if values else None
        return means

    def counts(self) -> Dict[str, int]:
        return { metric: len(self.values(metric)) for metric in ALL_METRICS }

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("path",) + ALL_METRICS)
        for row in self.rows:
            writer.writerow([row.path] + [_format(getattr(row, metric)) for metric in ALL_METRICS])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != ("path",) + ALL_METRICS:
            raise ValueError(f"Unexpected metric CSV header { reader.fieldnames }")
        return cls([
            MetricRow(record["path"], **{ metric: _parse(record[metric]) for metric in ALL_METRICS })
            for record in reader
        ])

    def to_table(self, title: str = "Metrics") -> Table:
        table = Table(title=title)
        table.add_column("Image")
        for metric in ALL_METRICS:
            table.add_column(metric.upper(), justify="right")
        for row in self.rows:
            table.add_row(row.path, *[_format_cell(getattr(row, metric)) for metric in ALL_METRICS])
        means = self.aggregate()
        table.add_section()
        table.add_row("mean", *[_format_cell(means[metric]) for metric in ALL_METRICS])
        return table

def _format_cell(value: Optional[float]) -> str:
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf"
    return f"{value:.3f}"


def _image_files(directory: Path) -> List[Path]:
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name
    )

def _evaluate_one(path: Path, reference_dir: Optional[Path], metrics: Sequence[str], strict: bool) -> Optional[MetricRow]:
    try:
        image = read_image(path)
    except ImageFormatException as e:
        if strict:
            raise
        logger.warning(f"Skipping { path.name }: { e }")
        return None

    row = MetricRow(path.name)
    if "uiqm" in metrics:
        row.uiqm = uiqm(image)
    if "uciqe" in metrics:
        row.uciqe = uciqe(image)

    wants_reference = any(metric in metrics for metric in FULL_REFERENCE)
    if wants_reference and reference_dir is not None:
        reference_path = reference_dir / path.name
        if not reference_path.exists():
            row.warning = "unpaired"
            logger.warning(f"No reference for { path.name } in { reference_dir }")
            return row
        try:
            reference = read_image(reference_path)
            if "psnr" in metrics:
                row.psnr = psnr(image, reference)
            if "ssim" in metrics:
                row.ssim = ssim(image, reference)
        except (ImageFormatException, MetricException) as e:
            if strict:
                raise
            row.psnr = row.ssim = None
            row.warning = str(e)
            logger.warning(f"Full-reference metrics skipped for { path.name }: { e }")
    return row

def evaluate_dir(
    input_dir: Union[str, os.PathLike],
    reference_dir: Optional[Union[str, os.PathLike]] = None,
    metrics: Iterable[str] = ALL_METRICS,
    strict: bool = False,
    workers: Optional[int] = None
) -> MetricReport:
    """Score every PNG/PPM image in `input_dir`, rows ordered by filename.

    Parameters
    ----------
    reference_dir: path, optional
        Directory holding same-named references for PSNR and SSIM.
    strict: bool
        Raise on malformed images instead of skipping them with a warning.
    """
    metrics = tuple(metrics)
    unknown = [metric for metric in metrics if metric not in ALL_METRICS]
    if unknown:
        raise ValueError(f"Unknown metrics: { ', '.join(unknown) }")
    if reference_dir is None and any(metric in FULL_REFERENCE for metric in metrics):
        raise ValueError("PSNR and SSIM need a reference directory")
    input_dir = Path(input_dir)
    reference_dir = None if reference_dir is None else Path(reference_dir)
    files = _image_files(input_dir)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda p: _evaluate_one(p, reference_dir, metrics, strict), files))
    return MetricReport([row for row in rows if row is not None])
