import math

import numpy as np
import pytest
import torch

from watermamba import ssm
from watermamba.checks import run_suite
from watermamba.exceptions import ShapeException
from watermamba.rng import Rng
from watermamba.ssm import (
    ScanInput, ScanStats, SelectiveScan, SsmParams, cbssm, cfssm, discretize,
    s6_layer, selective_scan_fast, selective_scan_ref
)


def _scalar_system(a: float, d: float = 0.0) -> SsmParams:
    return SsmParams(
        a_log=torch.tensor([[math.log(-a)]], dtype=torch.float64),
        d=torch.tensor([d], dtype=torch.float64),
    )

def _scalar_input(x, delta: float = 1.0, b: float = 1.0, c: float = 1.0) -> ScanInput:
    length = len(x)
    return ScanInput(
        u=torch.tensor(x, dtype=torch.float64).reshape(1, 1, length),
        delta=torch.full((1, 1, length), delta, dtype=torch.float64),
        b=torch.full((1, 1, length), b, dtype=torch.float64),
        c=torch.full((1, 1, length), c, dtype=torch.float64),
    )

def _random_scan(seed: int, batch: int, channels: int, n: int, length: int, dtype=torch.float64):
    rng = Rng(seed)
    def draw(shape, low=-1.0, high=1.0):
        return torch.from_numpy(rng.uniform_range(int(np.prod(shape)), low, high).reshape(shape)).to(dtype)
    params = SsmParams(
        a_log=torch.log(draw((channels, n), 0.5, 4.0)).double(),
        d=draw((channels,)).double(),
    )
    scan = ScanInput(
        u=draw((batch, channels, length)),
        delta=torch.exp(draw((batch, channels, length), math.log(1e-3), 0.0)),
        b=draw((batch, n, length)),
        c=draw((batch, n, length)),
    )
    return scan, params


def test_discretize_zero_order_hold():
    # When
    a_bar, b_bar = discretize(0.5, -2.0, 1.0)

    # Then
    assert a_bar.item() == pytest.approx(0.367879, abs=1e-6)
    assert b_bar.item() == pytest.approx(0.316060, abs=1e-6)


def test_discretize_small_exponent_uses_series():
    a_bar, b_bar = discretize(1.0, -1e-9, 1.0)
    assert a_bar.item() == pytest.approx(1.0, abs=1e-8)
    assert b_bar.item() == pytest.approx(1.0, abs=1e-8)


def test_discretize_tiny_step():
    a_bar, b_bar = discretize(1e-12, -3.0, 2.0)
    assert a_bar.item() == pytest.approx(1.0)
    assert b_bar.item() == pytest.approx(0.0, abs=1e-11)


def test_discretize_euler():
    _, b_bar = discretize(0.5, -2.0, 3.0, mode="euler")
    assert b_bar.item() == 1.5


def test_discretize_rejects_non_positive_step():
    with pytest.raises(ValueError, match="strictly positive"):
        discretize(0.0, -1.0, 1.0)
    with pytest.raises(ValueError, match="Unknown discretization"):
        discretize(1.0, -1.0, 1.0, mode="bilinear")


def test_reference_scan_accumulates_when_decay_vanishes():
    # When
    y = selective_scan_ref(_scalar_input([1.0, 2.0, 3.0]), _scalar_system(-1e-9))

    # Then
    assert torch.allclose(y.flatten(), torch.tensor([1.0, 3.0, 6.0], dtype=torch.float64), atol=1e-7)


def test_reference_scan_skip_only():
    x = [0.5, -1.25, 2.0, 7.0]

    # When
    y = selective_scan_ref(_scalar_input(x, b=0.0), _scalar_system(-1.0, d=1.0))

    # Then
    assert torch.equal(y.flatten(), torch.tensor(x, dtype=torch.float64))


def test_reference_scan_single_step():
    y = selective_scan_ref(_scalar_input([2.0]), _scalar_system(-1.0))
    assert y.item() == pytest.approx(2 * (1 - math.exp(-1)), abs=1e-6)


def test_empty_sequence():
    scan, params = _random_scan(0, 1, 2, 3, 0)

    # Then
    assert selective_scan_ref(scan, params).shape == (1, 2, 0)
    assert selective_scan_fast(scan, params).shape == (1, 2, 0)


@pytest.mark.parametrize("length", [1, 7, 63, 64, 65, 200])
def test_fast_scan_matches_reference(length):
    scan, params = _random_scan(length, 2, 3, 4, length)

    # When
    fast = selective_scan_fast(scan, params)
    ref = selective_scan_ref(scan, params)

    # Then
    assert torch.allclose(fast, ref, rtol=0, atol=1e-10)


def test_chunk_length_never_changes_the_output():
    scan, params = _random_scan(9, 1, 2, 4, 300, dtype=torch.float32)

    # When
    outputs = [selective_scan_fast(scan, params, chunk_len=chunk) for chunk in (64, 128, 256, 512)]

    # Then
    for out in outputs[1:]:
        assert torch.equal(out, outputs[0])


def test_chunk_length_must_be_block_multiple():
    scan, params = _random_scan(0, 1, 1, 1, 10)
    with pytest.raises(ValueError, match="multiple of 64"):
        selective_scan_fast(scan, params, chunk_len=96)


def test_stats_count_steps():
    scan, params = _random_scan(1, 1, 1, 2, 130)
    ref_stats, fast_stats = ScanStats(), ScanStats()

    # When
    selective_scan_ref(scan, params, stats=ref_stats)
    selective_scan_fast(scan, params, stats=fast_stats)

    # Then
    assert ref_stats.steps == 130
    assert fast_stats.steps == 130


def test_reference_scan_returns_states():
    scan, params = _random_scan(2, 1, 2, 3, 5)

    # When
    y, states = selective_scan_ref(scan, params, return_states=True)

    # Then
    assert states.shape == (1, 2, 5, 3)
    readout = (states * scan.c.transpose(1, 2)[:, None]).sum(-1) + params.d[None, :, None] * scan.u
    assert torch.allclose(y, readout, atol=1e-12)


def test_scans_are_causal():
    scan, params = _random_scan(3, 2, 3, 4, 160)
    u = scan.u.clone()
    u[..., 100] += 5.0
    perturbed = ScanInput(u, scan.delta, scan.b, scan.c)

    for run in (selective_scan_ref, selective_scan_fast):
        # When
        before = run(scan, params)
        after = run(perturbed, params)

        # Then
        assert torch.equal(before[..., :100], after[..., :100])
        assert not torch.equal(before[..., 100:], after[..., 100:])


def test_scans_are_linear_in_the_input():
    scan, params = _random_scan(4, 1, 3, 4, 130)
    other, _ = _random_scan(5, 1, 3, 4, 130)
    combined = ScanInput(2.0 * scan.u - 0.5 * other.u, scan.delta, scan.b, scan.c)
    swapped = ScanInput(other.u, scan.delta, scan.b, scan.c)

    for run in (selective_scan_ref, selective_scan_fast):
        # When
        expected = 2.0 * run(scan, params) - 0.5 * run(swapped, params)

        # Then
        assert torch.allclose(run(combined, params), expected, atol=1e-10)


def test_state_stays_within_the_geometric_bound():
    scan, params = _random_scan(6, 2, 3, 4, 200)
    scan = ScanInput(scan.u, scan.delta.clamp_min(0.1), scan.b, scan.c)

    # When
    _, states = selective_scan_ref(scan, params, return_states=True)

    # Then
    a_bar, b_bar = discretize(scan.delta[..., None], params.a[None, :, None, :], scan.b.transpose(1, 2)[:, None])
    drive = (b_bar * scan.u[..., None]).abs().max()
    bound = drive / (1 - a_bar.abs().max())
    assert states.abs().max() <= bound + 1e-12


def test_scan_input_shape_checks():
    with pytest.raises(ShapeException):
        ScanInput(torch.zeros(1, 2, 5), torch.ones(1, 2, 4), torch.zeros(1, 3, 5), torch.zeros(1, 3, 5))
    with pytest.raises(ShapeException):
        ScanInput(torch.zeros(1, 2, 5), torch.ones(1, 2, 5), torch.zeros(1, 3, 5), torch.zeros(1, 2, 5))
    with pytest.raises(ValueError, match="strictly positive"):
        ScanInput(torch.zeros(1, 1, 2), torch.zeros(1, 1, 2), torch.zeros(1, 1, 2), torch.zeros(1, 1, 2))


def test_scan_checks_params_against_input():
    scan, _ = _random_scan(0, 1, 2, 3, 4)
    _, params = _random_scan(0, 1, 5, 3, 4)
    with pytest.raises(ShapeException, match="channels"):
        selective_scan_ref(scan, params)


def _seeded_scan_module(channels: int, state_size: int, seed: int) -> SelectiveScan:
    module = SelectiveScan(channels, state_size)
    rng = Rng(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name == "A_log":
                param.copy_(torch.log(torch.arange(1, state_size + 1, dtype=torch.float32)).expand(channels, -1))
            elif name == "D":
                param.fill_(1.0)
            else:
                param.copy_(torch.from_numpy(rng.uniform_range(param.numel(), -0.5, 0.5).reshape(param.shape)))
    return module


def test_s6_layer_reference_and_fast_agree():
    module = _seeded_scan_module(6, 4, seed=5)
    x = torch.from_numpy(Rng(6).uniform_range(2 * 6 * 90, -1.0, 1.0).reshape(2, 6, 90)).float()

    # When
    fast = module(x)
    ref = module(x, reference=True)

    # Then
    assert fast.shape == (2, 6, 90)
    assert fast.dtype == torch.float32
    assert torch.allclose(fast, ref, atol=1e-6)


def test_s6_layer_rejects_wrong_channels():
    module = _seeded_scan_module(6, 4, seed=5)
    with pytest.raises(ShapeException):
        s6_layer(torch.zeros(1, 5, 3), module.params())


def test_channel_scans():
    module = _seeded_scan_module(1, 4, seed=8)
    seq = torch.from_numpy(Rng(9).uniform_range(3 * 10, -1.0, 1.0).reshape(3, 1, 10)).float()

    # When
    forward = cfssm(seq, module.params())
    backward = cbssm(seq, module.params())

    # Then
    assert torch.equal(backward, cfssm(seq.flip(-1), module.params()).flip(-1))
    assert not torch.allclose(forward, backward)
    single = seq[..., :1]
    assert torch.equal(cfssm(single, module.params()), cbssm(single, module.params()))
    with pytest.raises(ShapeException):
        cfssm(torch.zeros(3, 1, 0), module.params())
    with pytest.raises(ShapeException):
        cbssm(torch.zeros(3, 1, 0), module.params())


def test_lti_suite_passes():
    results = run_suite("lti", instances=20)
    assert all(result.passed for result in results)


def test_broken_series_branch_fails_lti_suite(monkeypatch):
    monkeypatch.setattr(ssm, "_phi_series", lambda z: torch.zeros_like(z))

    # When
    results = run_suite("lti", instances=20)

    # Then
    assert not results[0].passed
