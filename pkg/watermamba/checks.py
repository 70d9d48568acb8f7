"""Seeded property suites behind `watermamba check`."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from . import oracles
from .blocks import Soss
from .config import ModelConfig
from .layout import DIRECTIONS, coordinate_concat, coordinate_split, flatten, unflatten
from .metrics import psnr, ssim, uciqe, uiqm
from .network import build
from .rng import Rng
from .ssm import ScanInput, SsmParams, selective_scan_fast, selective_scan_ref
from .weights import init_weights

logger = logging.getLogger(__name__)

SCAN_LENGTHS = (1, 2, 7, 64, 1000, 4096)
SCAN_TOLERANCE = 1e-5
LTI_TOLERANCE = 1e-4
METRIC_TOLERANCE = 1e-6


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class CheckResult:
    suite: str
    properties: List[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties)

    def record(self, name: str, passed: bool, detail: str = ""):
        self.properties.append(PropertyResult(name, bool(passed), detail))
        if passed:
            logger.info(f"[{ self.suite }] { name }: pass { detail }")
        else:
            logger.error(f"[{ self.suite }] { name }: FAIL { detail }")


def _tensor(rng: Rng, shape, low: float = -1.0, high: float = 1.0) -> torch.Tensor:
    n = int(np.prod(shape))
    return torch.from_numpy(rng.uniform_range(n, low, high).reshape(shape).astype(np.float32))

def _int(rng: Rng, low: int, high: int) -> int:
    """ Uniform integer in [low, high]. """
    return low + int(rng.uniform(1)[0] * (high - low + 1))

def _random_scan(rng: Rng, length: int):
    """ A float64 instance, so ref and fast are compared before any float32 rounding. """
    batch, channels, n = _int(rng, 1, 2), _int(rng, 1, 4), _int(rng, 1, 32)
    params = SsmParams(
        a_log=torch.log(_tensor(rng, (channels, n), 0.5, float(n))).double(),
        d=_tensor(rng, (channels,)).double(),
    )
    delta = torch.exp(_tensor(rng, (batch, channels, length), math.log(1e-3), math.log(1.0)))
    scan = ScanInput(
        u=_tensor(rng, (batch, channels, length)).double(),
        delta=delta.double(),
        b=_tensor(rng, (batch, n, length)).double(),
        c=_tensor(rng, (batch, n, length)).double(),
    )
    return scan, params


def scan_oracle_suite(instances: int = 1000, seed: int = 0) -> CheckResult:
    result = CheckResult("scan-oracle")
    rng = Rng(seed)
    worst = 0.0
    for k in range(instances):
        scan, params = _random_scan(rng, SCAN_LENGTHS[k % len(SCAN_LENGTHS)])
        error = (selective_scan_fast(scan, params) - selective_scan_ref(scan, params)).abs()
        worst = max(worst, float(error.max()) if error.numel() else 0.0)
    result.record("fast scan matches reference", worst <= SCAN_TOLERANCE, f"max error { worst:.3e} over { instances } instances")
    return result


def lti_suite(instances: int = 100, seed: int = 1) -> CheckResult:
    """ Constant delta, B and C: the scan is a convolution with an unrolled kernel. """
    result = CheckResult("lti")
    rng = Rng(seed)
    worst = 0.0
    for k in range(instances):
        length, n = _int(rng, 1, 32), _int(rng, 1, 4)
        if k % 2 == 0:
            # |delta * a| well under the Taylor switch
            a = -rng.uniform_range(n, 1e-7, 1e-6)
            delta = float(rng.uniform_range(1, 0.5, 1.0)[0])
        else:
            a = -rng.uniform_range(n, 0.5, float(n) + 0.5)
            delta = float(rng.uniform_range(1, 1e-2, 1.0)[0])
        b = rng.uniform_range(n, -0.5, 0.5)
        c = rng.uniform_range(n, -0.5, 0.5)
        d = float(rng.uniform_range(1, -1.0, 1.0)[0])
        x = rng.uniform_range(length, -1.0, 1.0)

        params = SsmParams(a_log=torch.from_numpy(np.log(-a))[None], d=torch.tensor([d], dtype=torch.float64))
        scan = ScanInput(
            u=torch.from_numpy(x)[None, None],
            delta=torch.full((1, 1, length), delta, dtype=torch.float64),
            b=torch.from_numpy(np.repeat(b[None, :, None], length, axis=2)),
            c=torch.from_numpy(np.repeat(c[None, :, None], length, axis=2)),
        )
        y = selective_scan_fast(scan, params)[0, 0].numpy()
        expected = np.array(oracles.lti_kernel_output(list(x), delta, list(a), list(b), list(c), d))
        worst = max(worst, float(np.abs(y - expected).max()))
    result.record("scan equals kernel convolution", worst <= LTI_TOLERANCE, f"max error { worst:.3e} over { instances } instances")
    return result


def _tiny_config() -> ModelConfig:
    return ModelConfig({
        "BASE_WIDTH": 4, "STATE_SIZE": 4, "BOTTLENECK_BLOCKS": 1,
    })

def residual_suite(seed: int = 2) -> CheckResult:
    result = CheckResult("residual")
    rng = Rng(seed)
    with torch.no_grad():
        config = _tiny_config()
        store = init_weights(config, seed)
        soss = Soss(config.BASE_WIDTH, config.STATE_SIZE, config.EXPANSION)
        prefix = "encoders.0.0.soss."
        soss.load_state_dict({
            name[len(prefix):]: tensor for name, tensor in store.tensors.items() if name.startswith(prefix)
        })
        soss.out_proj.weight.zero_()
        soss.out_proj.bias.zero_()
        x = _tensor(rng, (2, 4, 6, 5))
        result.record("SOSS with zeroed projection is the identity", torch.equal(soss(x), x))

        model = build(config, store)
        image = _tensor(rng, (1, 3, 16, 24), 0.0, 1.0)
        dr = model.residual(image)
        result.record("FR equals DR + I", torch.equal(model(image), dr + image))
        model.output.weight.zero_()
        model.output.bias.zero_()
        result.record("network with zeroed output conv is the identity", torch.equal(model(image), image))
    return result


def layout_suite(instances: int = 500, seed: int = 3) -> CheckResult:
    result = CheckResult("layout")
    rng = Rng(seed)
    round_trip = reversal = coordinates = True
    for _ in range(instances):
        h, w = _int(rng, 1, 64), _int(rng, 1, 64)
        feature = _tensor(rng, (1, 2, h, w))
        sequences = [flatten(feature, direction) for direction in DIRECTIONS]
        for direction, seq in zip(DIRECTIONS, sequences):
            round_trip &= torch.equal(unflatten(seq, direction, h, w), feature)
        reversal &= torch.equal(sequences[1], sequences[0].flip(-1))
        reversal &= torch.equal(sequences[3], sequences[2].flip(-1))
        y_h, y_w = feature[:, :, :1, :], feature[:, :, :, :1]
        split_h, split_w = coordinate_split(coordinate_concat(y_h, y_w), h, w)
        coordinates &= torch.equal(split_h, y_h) and torch.equal(split_w, y_w)
    result.record("unflatten inverts flatten in every direction", round_trip, f"{ instances } shapes")
    result.record("reversed directions are exact reversals", reversal)
    result.record("coordinate split inverts concat", coordinates)
    return result


def metrics_oracle_suite(instances: int = 50, seed: int = 4) -> CheckResult:
    result = CheckResult("metrics-oracle")
    rng = Rng(seed)

    a = np.full((8, 8, 3), 100.0)
    value = psnr(a, a + 16, peak=255.0)
    result.record("PSNR closed form", abs(value - 24.048) <= 1e-3, f"{ value:.4f} dB")

    x = rng.uniform(32 * 32 * 3).reshape(32, 32, 3)
    value = ssim(x, x)
    result.record("SSIM of an image with itself", abs(value - 1.0) <= 1e-9, f"{ value!r}")

    gray = np.full((16, 16, 3), 0.5)
    result.record("UIQM of a constant image", abs(uiqm(gray)) <= METRIC_TOLERANCE)
    result.record("UCIQE of a constant image", abs(uciqe(gray)) <= METRIC_TOLERANCE)

    uiqm_worst = uciqe_worst = 0.0
    for _ in range(instances):
        image = rng.uniform(16 * 16 * 3).reshape(16, 16, 3)
        uiqm_worst = max(uiqm_worst, abs(uiqm(image) - oracles.uiqm(image)))
        uciqe_worst = max(uciqe_worst, abs(uciqe(image) - oracles.uciqe(image)))
    result.record("UIQM matches the loop oracle", uiqm_worst <= METRIC_TOLERANCE, f"max error { uiqm_worst:.3e}")
    result.record("UCIQE matches the loop oracle", uciqe_worst <= METRIC_TOLERANCE, f"max error { uciqe_worst:.3e}")
    return result


SUITES: Dict[str, Callable[..., CheckResult]] = {
    "scan-oracle": scan_oracle_suite,
    "lti": lti_suite,
    "residual": residual_suite,
    "layout": layout_suite,
    "metrics-oracle": metrics_oracle_suite,
}
SUITE_NAMES = tuple(SUITES) + ("all",)

def run_suite(name: str, instances: Optional[int] = None) -> List[CheckResult]:
    """ Run one suite (or every suite for "all"); `instances` overrides the instance counts. """
    if name not in SUITE_NAMES:
        raise ValueError(f"Unknown check suite '{ name }', expected one of { ', '.join(SUITE_NAMES) }")
    names = list(SUITES) if name == "all" else [name]
    results = []
    for suite in names:
        runner = SUITES[suite]
        if instances is not None and suite != "residual":
            results.append(runner(instances=instances))
        else:
            results.append(runner())
    return results
