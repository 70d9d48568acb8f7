"""Selective state-space scans.

Shapes used throughout: u and delta are (B, D, L), b and c are (B, N, L),
the diagonal state matrix is (D, N) and the skip coefficient is (D,). All
recurrences run in float64; outputs come back in the dtype of u.
"""
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ShapeException

# Below this |delta * a| the ZOH factor (e^z - 1) / z switches to its Taylor series
TAYLOR_THRESHOLD = 1e-4
# Fixed combination block of the fast scan
SCAN_BLOCK = 64
DEFAULT_CHUNK = 64
DT_MIN = 1e-3
DT_MAX = 1e-1


@dataclass
class SsmParams:
    # log(-A), shape (D, N)
    a_log: torch.Tensor
    # skip coefficient, shape (D,)
    d: torch.Tensor
    x_proj_weight: Optional[torch.Tensor] = None
    dt_proj_weight: Optional[torch.Tensor] = None
    dt_proj_bias: Optional[torch.Tensor] = None
    bbar_mode: str = "zoh"

    @property
    def a(self) -> torch.Tensor:
        return -torch.exp(self.a_log.double())

    @property
    def inner_channels(self) -> int:
        return self.a_log.shape[0]

    @property
    def state_size(self) -> int:
        return self.a_log.shape[1]

    @property
    def dt_rank(self) -> int:
        return self.dt_proj_weight.shape[1]


@dataclass
class ScanInput:
    u: torch.Tensor
    delta: torch.Tensor
    b: torch.Tensor
    c: torch.Tensor

    def __post_init__(self):
        if self.u.dim() != 3 or self.delta.shape != self.u.shape:
            raise ShapeException(
                f"u and delta must share a (B, D, L) shape, got { tuple(self.u.shape) } and { tuple(self.delta.shape) }"
            )
        batch, _, length = self.u.shape
        for name, value in (("b", self.b), ("c", self.c)):
            if value.dim() != 3 or value.shape[0] != batch or value.shape[2] != length:
                raise ShapeException(f"{ name } must be (B, N, L) = ({ batch }, N, { length }), got { tuple(value.shape) }")
        if self.b.shape != self.c.shape:
            raise ShapeException(f"b and c must share a shape, got { tuple(self.b.shape) } and { tuple(self.c.shape) }")
        if length > 0 and not bool((self.delta > 0).all()):
            raise ValueError("delta must be strictly positive")


@dataclass
class ScanStats:
    steps: int = 0


def _phi_series(z: torch.Tensor) -> torch.Tensor:
    return 1 + z / 2 + z * z / 6

def _phi(z: torch.Tensor) -> torch.Tensor:
    """ (e^z - 1) / z, continuous through z = 0. """
    small = z.abs() < TAYLOR_THRESHOLD
    safe = torch.where(small, torch.ones_like(z), z)
    return torch.where(small, _phi_series(z), torch.expm1(safe) / safe)

def _discretize(delta: torch.Tensor, a: torch.Tensor, b: torch.Tensor, mode: str) -> Tuple[torch.Tensor, torch.Tensor]:
    z = delta * a
    a_bar = torch.exp(z)
    if mode == "zoh":
        b_bar = delta * b * _phi(z)
    elif mode == "euler":
        b_bar = delta * b
    else:
        raise ValueError(f"Unknown discretization mode '{ mode }'")
    return a_bar, b_bar

def discretize(
    delta: Union[float, torch.Tensor],
    a: Union[float, torch.Tensor],
    b: Union[float, torch.Tensor],
    mode: str = "zoh"
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Zero-order hold for a diagonal system.

    a_bar = exp(delta * a)
    b_bar = (exp(delta * a) - 1) / a * b  (zoh), or delta * b (euler)
    """
    delta = torch.as_tensor(delta, dtype=torch.float64)
    a = torch.as_tensor(a, dtype=torch.float64)
    b = torch.as_tensor(b, dtype=torch.float64)
    if not bool((delta > 0).all()):
        raise ValueError("delta must be strictly positive")
    return _discretize(delta, a, b, mode)

def _scan_terms(
    delta: torch.Tensor,
    u: torch.Tensor,
    a: torch.Tensor,
    b: torch.Tensor,
    mode: str
) -> Tuple[torch.Tensor, torch.Tensor]:
    """ Per-step a_bar and b_bar * x, both (B, D, L, N). """
    a_bar, b_bar = _discretize(delta[..., None], a[None, :, None, :], b.transpose(1, 2)[:, None], mode)
    return a_bar, b_bar * u[..., None]

def _check_params(input: ScanInput, params: SsmParams):
    if input.u.shape[1] != params.inner_channels:
        raise ShapeException(f"Scan expects { params.inner_channels } channels, got { input.u.shape[1] }")
    if input.b.shape[1] != params.state_size:
        raise ShapeException(f"Scan expects state size { params.state_size }, got { input.b.shape[1] }")


def selective_scan_ref(
    input: ScanInput,
    params: SsmParams,
    stats: Optional[ScanStats] = None,
    return_states: bool = False
):
    """Plain per-step recurrence, h_0 = 0:

        h_t = a_bar_t * h_{t-1} + b_bar_t * x_t
        y_t = <c_t, h_t> + d * x_t
    """
    _check_params(input, params)
    batch, channels, length = input.u.shape
    n = params.state_size
    u = input.u.double()
    y = torch.zeros(batch, channels, length, dtype=torch.float64)
    states = torch.zeros(batch, channels, length, n, dtype=torch.float64)
    if length > 0:
        a_bar, bx = _scan_terms(input.delta.double(), u, params.a, input.b.double(), params.bbar_mode)
        c = input.c.double()
        h = torch.zeros(batch, channels, n, dtype=torch.float64)
        for t in range(length):
            h = a_bar[:, :, t] * h + bx[:, :, t]
            states[:, :, t] = h
            y[:, :, t] = (h * c[:, None, :, t]).sum(-1)
            if stats is not None:
                stats.steps += 1
        y = y + params.d.double()[None, :, None] * u
    y = y.to(input.u.dtype)
    if return_states:
        return y, states
    return y


def _block_scan(a: torch.Tensor, b: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Inclusive scan of affine maps h -> a * h + b along dim -2 (size SCAN_BLOCK).

    Hillis-Steele doubling; (a2, b2) after (a1, b1) composes to
    (a2 * a1, a2 * b1 + b2).
    """
    offset = 1
    while offset < SCAN_BLOCK:
        a_prev = torch.cat([torch.ones_like(a[..., :offset, :]), a[..., :-offset, :]], dim=-2)
        b_prev = torch.cat([torch.zeros_like(b[..., :offset, :]), b[..., :-offset, :]], dim=-2)
        b = a * b_prev + b
        a = a * a_prev
        offset *= 2
    return a, b

def selective_scan_fast(
    input: ScanInput,
    params: SsmParams,
    chunk_len: int = DEFAULT_CHUNK,
    stats: Optional[ScanStats] = None
) -> torch.Tensor:
    """Blocked associative form of selective_scan_ref.

    The sequence is cut into blocks of SCAN_BLOCK steps. Each block is scanned
    in parallel, then the block totals are chained left to right to give every
    block its incoming state. `chunk_len` only bounds how many steps are
    materialized at once; the combination order is fixed by SCAN_BLOCK, so
    every chunk length gives bit-identical output.
    """
    if chunk_len < SCAN_BLOCK or chunk_len % SCAN_BLOCK != 0:
        raise ValueError(f"chunk_len must be a positive multiple of { SCAN_BLOCK }, got { chunk_len }")
    _check_params(input, params)
    batch, channels, length = input.u.shape
    n = params.state_size
    y = torch.zeros(batch, channels, length, dtype=torch.float64)
    if length == 0:
        return y.to(input.u.dtype)

    a = params.a
    h = torch.zeros(batch, channels, n, dtype=torch.float64)
    for start in range(0, length, chunk_len):
        stop = min(start + chunk_len, length)
        pad = (-(stop - start)) % SCAN_BLOCK
        # delta = 0 turns padded steps into the identity map (a_bar = 1, b_bar = 0)
        delta = F.pad(input.delta[..., start:stop].double(), (0, pad))
        u = F.pad(input.u[..., start:stop].double(), (0, pad))
        b = F.pad(input.b[..., start:stop].double(), (0, pad))
        c = F.pad(input.c[..., start:stop].double(), (0, pad))
        a_bar, bx = _scan_terms(delta, u, a, b, params.bbar_mode)

        blocks = a_bar.shape[2] // SCAN_BLOCK
        a_pref, b_pref = _block_scan(
            a_bar.reshape(batch, channels, blocks, SCAN_BLOCK, n),
            bx.reshape(batch, channels, blocks, SCAN_BLOCK, n),
        )
        incoming = []
        for j in range(blocks):
            incoming.append(h)
            h = a_pref[:, :, j, -1] * h + b_pref[:, :, j, -1]
        h_in = torch.stack(incoming, dim=2)[:, :, :, None, :]
        states = (b_pref + a_pref * h_in).reshape(batch, channels, blocks * SCAN_BLOCK, n)
        readout = (states * c.transpose(1, 2)[:, None]).sum(-1)
        y[..., start:stop] = readout[..., : stop - start]
        if stats is not None:
            stats.steps += stop - start

    y = y + params.d.double()[None, :, None] * input.u.double()
    return y.to(input.u.dtype)


def s6_layer(
    x: torch.Tensor,
    params: SsmParams,
    chunk_len: int = DEFAULT_CHUNK,
    reference: bool = False,
    stats: Optional[ScanStats] = None
) -> torch.Tensor:
    """Input-dependent scan over x of shape (B, D, L).

    Parameters
    ----------
    x: torch.Tensor
        Sequence batch, channel-major.
    params: SsmParams
        Must carry the x/dt projections: x_proj (R + 2N, D), dt_proj (D, R).
    reference: bool
        Use the per-step reference recurrence instead of the blocked scan.
    """
    if x.dim() != 3:
        raise ShapeException(f"s6_layer expects (B, D, L), got { tuple(x.shape) }")
    if x.shape[1] != params.inner_channels:
        raise ShapeException(f"s6_layer expects { params.inner_channels } channels, got { x.shape[1] }")
    rank, n = params.dt_rank, params.state_size
    x_dbl = torch.einsum("bdl,rd->brl", x.double(), params.x_proj_weight.double())
    dt, b, c = torch.split(x_dbl, [rank, n, n], dim=1)
    dt = torch.einsum("brl,dr->bdl", dt, params.dt_proj_weight.double()) + params.dt_proj_bias.double()[None, :, None]
    delta = F.softplus(dt).clamp_min(torch.finfo(torch.float64).tiny)
    input = ScanInput(x, delta, b, c)
    if reference:
        return selective_scan_ref(input, params, stats=stats)
    return selective_scan_fast(input, params, chunk_len=chunk_len, stats=stats)

def cfssm(seq: torch.Tensor, params: SsmParams, chunk_len: int = DEFAULT_CHUNK, reference: bool = False) -> torch.Tensor:
    """ Forward scan over a channel-axis sequence (B, 1, C). """
    if seq.shape[-1] == 0:
        raise ShapeException("Channel scans need at least one channel")
    return s6_layer(seq, params, chunk_len=chunk_len, reference=reference)

def cbssm(seq: torch.Tensor, params: SsmParams, chunk_len: int = DEFAULT_CHUNK, reference: bool = False) -> torch.Tensor:
    """ Backward scan: reverse, scan forward, reverse back. """
    if seq.shape[-1] == 0:
        raise ShapeException("Channel scans need at least one channel")
    return s6_layer(seq.flip(-1), params, chunk_len=chunk_len, reference=reference).flip(-1)


def dt_rank_for(channels: int) -> int:
    return math.ceil(channels / 16)


class SelectiveScan(nn.Module):
    def __init__(self, channels: int, state_size: int, bbar_mode: str = "zoh", chunk_len: int = DEFAULT_CHUNK):
        super().__init__()
        self.bbar_mode = bbar_mode
        self.chunk_len = chunk_len
        rank = dt_rank_for(channels)
        self.x_proj = nn.Linear(channels, rank + 2 * state_size, bias=False)
        self.dt_proj = nn.Linear(rank, channels, bias=True)
        self.A_log = nn.Parameter(torch.zeros(channels, state_size))
        self.D = nn.Parameter(torch.ones(channels))

    def params(self) -> SsmParams:
        return SsmParams(
            a_log=self.A_log,
            d=self.D,
            x_proj_weight=self.x_proj.weight,
            dt_proj_weight=self.dt_proj.weight,
            dt_proj_bias=self.dt_proj.bias,
            bbar_mode=self.bbar_mode,
        )

    def forward(self, x: torch.Tensor, reference: bool = False) -> torch.Tensor:
        return s6_layer(x, self.params(), chunk_len=self.chunk_len, reference=reference)
