"""Straight-from-the-definition loop implementations.

These are slow on purpose: every quantity is written out per element with
plain Python loops and `math`, sharing no code with the vectorized modules
they cross-check.
"""
import math
from typing import List, Sequence

import numpy as np

from .layout import DIRECTIONS


def conv2d_naive(x: np.ndarray, weight: np.ndarray, bias, stride: int, padding: int, groups: int) -> np.ndarray:
    n, c_in, h, w = x.shape
    c_out, c_per_group, k, _ = weight.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    out_per_group = c_out // groups
    out = np.zeros((n, c_out, h_out, w_out))
    for b in range(n):
        for o in range(c_out):
            group = o // out_per_group
            for i in range(h_out):
                for j in range(w_out):
                    total = 0.0 if bias is None else float(bias[o])
                    for ci in range(c_per_group):
                        channel = group * c_per_group + ci
                        for di in range(k):
                            for dj in range(k):
                                y = i * stride + di - padding
                                x_ = j * stride + dj - padding
                                if 0 <= y < h and 0 <= x_ < w:
                                    total += float(weight[o, ci, di, dj]) * float(x[b, channel, y, x_])
                    out[b, o, i, j] = total
    return out


def lti_kernel_output(x: Sequence[float], delta: float, a: Sequence[float], b: Sequence[float], c: Sequence[float], d: float) -> List[float]:
    """Scan output for time-invariant parameters as a causal convolution.

    K_k = sum_n c_n * a_bar_n^k * b_bar_n, plus d at k = 0.
    """
    a_bar = [math.exp(delta * a_n) for a_n in a]
    b_bar = [(math.exp(delta * a_n) - 1) / a_n * b_n for a_n, b_n in zip(a, b)]
    length = len(x)
    kernel = [
        sum(c_n * a_bar_n ** k * b_bar_n for c_n, a_bar_n, b_bar_n in zip(c, a_bar, b_bar))
        for k in range(length)
    ]
    kernel[0] += d if length else 0.0
    return [sum(kernel[k] * x[t - k] for k in range(t + 1)) for t in range(length)]


def merge_scatter(sequences: np.ndarray, h: int, w: int) -> np.ndarray:
    """ sequences (N, 4, C, H*W) -> (N, C, H, W) by scattering through each direction's index map. """
    n, _, c, _ = sequences.shape
    out = np.zeros((n, c, h, w))
    for k, direction in enumerate(DIRECTIONS):
        for row in range(h):
            for col in range(w):
                out[:, :, row, col] += sequences[:, k, :, direction.index(row, col, h, w)]
    return out


def _trimmed(values: List[float], alpha: float = 0.1):
    ordered = sorted(values)
    k = len(ordered)
    low, high = math.ceil(alpha * k), math.floor(alpha * k)
    kept = ordered[low:k - high]
    mu = sum(kept) / len(kept)
    var = sum((v - mu) ** 2 for v in ordered) / k
    return mu, var

def uicm(image: np.ndarray) -> float:
    h, w, _ = image.shape
    rg, yb = [], []
    for i in range(h):
        for j in range(w):
            r, g, b = (float(v) * 255 for v in image[i, j])
            rg.append(r - g)
            yb.append((r + g) / 2 - b)
    mu_rg, var_rg = _trimmed(rg)
    mu_yb, var_yb = _trimmed(yb)
    return -0.0268 * math.sqrt(mu_rg ** 2 + mu_yb ** 2) + 0.1586 * math.sqrt(var_rg + var_yb)

def _sobel(channel: List[List[float]]) -> List[List[float]]:
    h, w = len(channel), len(channel[0])
    at = lambda i, j: channel[min(max(i, 0), h - 1)][min(max(j, 0), w - 1)]
    smooth = (1.0, 2.0, 1.0)
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            gx = sum(smooth[di + 1] * (at(i + di, j + 1) - at(i + di, j - 1)) for di in (-1, 0, 1))
            gy = sum(smooth[dj + 1] * (at(i + 1, j + dj) - at(i - 1, j + dj)) for dj in (-1, 0, 1))
            out[i][j] = math.sqrt(gx * gx + gy * gy)
    peak = max(max(row) for row in out)
    if peak > 0:
        out = [[v * 255.0 / peak for v in row] for row in out]
    return out

def _eme(values: List[List[float]], block: int = 8) -> float:
    k1, k2 = len(values) // block, len(values[0]) // block
    if k1 * k2 == 0:
        return 0.0
    total = 0.0
    for bi in range(k1):
        for bj in range(k2):
            cells = [values[bi * block + i][bj * block + j] for i in range(block) for j in range(block)]
            hi, lo = max(cells), min(cells)
            if hi > 0 and lo > 0:
                total += math.log(hi / lo)
    return 2.0 / (k1 * k2) * total

def uism(image: np.ndarray) -> float:
    h, w, _ = image.shape
    total = 0.0
    for c, weight in enumerate((0.299, 0.587, 0.114)):
        channel = [[float(image[i, j, c]) * 255 for j in range(w)] for i in range(h)]
        edges = _sobel(channel)
        weighted = [[edges[i][j] * channel[i][j] for j in range(w)] for i in range(h)]
        total += weight * _eme(weighted)
    return total

def uiconm(image: np.ndarray, block: int = 8) -> float:
    h, w, _ = image.shape
    k1, k2 = h // block, w // block
    if k1 * k2 == 0:
        return 0.0
    total = 0.0
    for bi in range(k1):
        for bj in range(k2):
            cells = [
                float(image[bi * block + i, bj * block + j, c]) * 255
                for i in range(block) for j in range(block) for c in range(3)
            ]
            hi, lo = max(cells), min(cells)
            top, bottom = hi - lo, hi + lo
            if top > 0 and bottom > 0:
                ratio = top / bottom
                total += ratio * math.log(ratio)
    return -1.0 / (k1 * k2) * total

def uiqm(image: np.ndarray) -> float:
    return 0.0282 * uicm(image) + 0.2953 * uism(image) + 3.5753 * uiconm(image)


_XYZ = (
    (0.4124564, 0.3575761, 0.1804375),
    (0.2126729, 0.7151522, 0.0721750),
    (0.0193339, 0.1191920, 0.9503041),
)

def _lab(r: float, g: float, b: float):
    def linear(v):
        v = min(max(v, 0.0), 1.0)
        return v / 12.92 if v <= 0.04045 else ((v + 0.055) / 1.055) ** 2.4
    def f(t):
        delta = 6.0 / 29.0
        return t ** (1.0 / 3.0) if t > delta ** 3 else t / (3 * delta ** 2) + 4.0 / 29.0
    rgb = (linear(r), linear(g), linear(b))
    fx, fy, fz = (
        f(sum(m * v for m, v in zip(row, rgb)) / sum(row)) for row in _XYZ
    )
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)

def uciqe(image: np.ndarray) -> float:
    h, w, _ = image.shape
    lightness, chroma = [], []
    for i in range(h):
        for j in range(w):
            l, a, b = _lab(*(float(v) for v in image[i, j]))
            lightness.append(l / 100)
            chroma.append(math.sqrt(a * a + b * b) / 100)
    k = len(chroma)
    mean_c = sum(chroma) / k
    sigma_c = math.sqrt(sum((v - mean_c) ** 2 for v in chroma) / k)
    ordered = sorted(lightness)
    n = max(1, int(0.01 * k))
    contrast = sum(ordered[-n:]) / n - sum(ordered[:n]) / n
    saturation = [
        c / math.sqrt(c * c + l * l) if c * c + l * l > 0 else 0.0
        for c, l in zip(chroma, lightness)
    ]
    return 0.4680 * sigma_c + 0.2745 * contrast + 0.2576 * sum(saturation) / k
