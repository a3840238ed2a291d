"""Window evolution and throughput model for TCP with a network-coding layer.

Random erasures are masked by the coding layer, so the window only grows:
each round it gains ``min{1, R(1-p)}`` until it reaches ``wmax``. The module
also carries the absorbing Markov chain of per-packet window growth, which is
used as an independent check on the closed-form transmission count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats

from .model_tcp import FlowParams, ThroughputEstimate

REDUNDANCY_STEP = 0.01
REDUNDANCY_CAP = 4.0


class RedundancyNotFound(RuntimeError):
    pass


def window_slope(params: FlowParams) -> float:
    """Per-round window increment ``min{1, R(1-p)}``."""
    return min(1.0, params.redundancy * (1.0 - params.loss_prob))


def nc_expected_window(params: FlowParams, i: float) -> float:
    """Expected window after ``i`` rounds of growth: ``min(wmax, W1 + i * slope)``.

    ``i = 0`` is the starting window, so the window in use during the
    1-based round ``k`` is ``nc_expected_window(params, k - 1)``.
    """
    if i < 0:
        raise ValueError("round index must be >= 0")
    return min(float(params.wmax), params.initial_window + i * window_slope(params))


@dataclass(frozen=True)
class NcWindowCurve:
    """Expected window per round over a horizon of ``n`` rounds."""

    params: FlowParams
    n: int

    @property
    def slope(self) -> float:
        return window_slope(self.params)

    @property
    def ramp_length(self) -> float:
        """Rounds needed to climb from the initial window to ``wmax``."""
        return (self.params.wmax - self.params.initial_window) / self.slope

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    @cached_property
    def expected_window(self) -> np.ndarray:
        w = self.params.initial_window + (self.rounds - 1) * self.slope
        return np.minimum(w, float(self.params.wmax))


def nc_round_throughput(params: FlowParams, i: int) -> float:
    """Packets per second in the 1-based round ``i``."""
    if i < 1:
        raise ValueError("rounds are numbered from 1")
    w = nc_expected_window(params, i - 1)
    return w / params.srtt * window_slope(params)


def window_sum(params: FlowParams, n: int) -> float:
    """Sum of expected windows over rounds ``1..n``.

    With slope 1 this is ``n*W1 + n(n-1)/2`` up to the breakpoint
    ``r* = wmax - W1`` and ``n*wmax - r*(wmax - W1) + r*(r*-1)/2`` beyond it.
    """
    s = window_slope(params)
    w1 = params.initial_window
    wmax = float(params.wmax)
    # rounds whose window is still below the cap: k - 1 < r*
    ramp = math.ceil((wmax - w1) / s - 1e-12)
    m = min(n, ramp)
    return m * w1 + s * m * (m - 1) / 2.0 + (n - m) * wmax


def nc_average_throughput(params: FlowParams, n: int) -> ThroughputEstimate:
    """Throughput averaged over the first ``n`` rounds, ``s * f(n) / (n * SRTT)``."""
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    n = int(n)
    s = window_slope(params)
    f = window_sum(params, n)
    rate = s * f / (n * params.srtt)
    return ThroughputEstimate(
        packets_per_second=rate,
        packet_size_bits=params.packet_size_bits,
        expected_window=f / n,
        clamped_by_wmax=n > (params.wmax - params.initial_window) / s,
        extra={"n": n, "f_n": f, "slope": s, "ramp_length": (params.wmax - params.initial_window) / s},
    )


def rounds_for_duration(duration_s: float, srtt: float) -> int:
    """Number of whole rounds that fit in ``duration_s``."""
    return max(1, int(math.floor(duration_s / srtt + 1e-9)))


# --- Markov chain of per-packet window growth -------------------------------


@dataclass(frozen=True)
class MarkovChainSpec:
    """Micro-state chain for window growth from ``initial_window`` to ``wmax``.

    Window band ``w`` holds ``w`` micro-states ``w, w + 1/w, ..., w + (w-1)/w``;
    each transient state stays put with probability ``p`` (packet lost) and
    advances with probability ``1 - p``. The last state, ``wmax``, absorbs.
    """

    wmax: int
    loss_prob: float
    initial_window: int = 1

    def __post_init__(self):
        if self.initial_window < 1 or self.wmax < self.initial_window:
            raise ValueError("need 1 <= initial_window <= wmax")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be a probability")

    @cached_property
    def micro_states(self) -> list[float]:
        states = [w + k / w for w in range(self.initial_window, self.wmax) for k in range(w)]
        states.append(float(self.wmax))
        return states

    @property
    def n_transient(self) -> int:
        return len(self.micro_states) - 1

    def transition_matrix(self) -> np.ndarray:
        n = len(self.micro_states)
        P = np.zeros((n, n))
        idx = np.arange(n - 1)
        P[idx, idx] = self.loss_prob
        P[idx, idx + 1] = 1.0 - self.loss_prob
        P[-1, -1] = 1.0
        return P

    def transient_block(self) -> np.ndarray:
        n = self.n_transient
        return self.transition_matrix()[:n, :n]


def fundamental_matrix_row(spec: MarkovChainSpec) -> np.ndarray:
    """First row of ``N = (I - Q)^-1``: expected visits to each transient state.

    Solved numerically from ``(I - Q)^T x = e_1``; the closed form is not assumed.
    """
    if spec.loss_prob >= 1.0:
        raise np.linalg.LinAlgError("chain never advances at p = 1; I - Q is singular")
    n = spec.n_transient
    if n == 0:
        return np.zeros(0)
    A = np.eye(n) - spec.transient_block()
    e1 = np.zeros(n)
    e1[0] = 1.0
    return np.linalg.solve(A.T, e1)


def markov_expected_transmissions(p: float, w: int) -> float:
    """Expected packet transmissions to grow the window from 1 to ``w``."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    if w < 1:
        raise ValueError("w must be >= 1")
    return w * (w - 1) / (2.0 * (1.0 - p))


def transmissions_from_chain(p: float, w: int) -> float:
    """Same quantity as :func:`markov_expected_transmissions`, from the explicit chain."""
    if w <= 1:
        return 0.0
    row = fundamental_matrix_row(MarkovChainSpec(wmax=w, loss_prob=p))
    return float(row.sum())


# --- redundancy factor ------------------------------------------------------


def minimum_redundancy(p: float) -> float:
    return 1.0 / (1.0 - p)


def mask_probability(p: float, w: float, r: float) -> float:
    """Upper bound on the chance that one round's losses are all absorbed by redundancy.

    ``R*W`` rounded half-up coded packets are sent, and the round is masked
    when no more than ``sent - W`` of them are lost. For ``frac(RW) < 1/2``
    that limit is ``floor(W(R-1))``; otherwise it is one higher, which keeps
    the result nondecreasing in ``R``.
    """
    if w < 1 or r < 1:
        raise ValueError("need w >= 1 and r >= 1")
    if p == 0.0:
        return 1.0
    sent = int(math.floor(r * w + 0.5 + 1e-9))
    spare = int(math.floor(sent - w + 1e-9))
    if spare < 0:
        return 0.0
    return float(stats.binom.cdf(spare, sent, p))


def recommend_redundancy(
    p: float,
    w: float,
    target: float = 0.8,
    step: float = REDUNDANCY_STEP,
    cap: float = REDUNDANCY_CAP,
) -> float:
    """Smallest ``R`` on a ``step`` grid with ``R >= 1/(1-p)`` and mask probability >= ``target``."""
    if not 0.0 < target < 1.0:
        raise ValueError("target must be in (0, 1)")
    floor_r = minimum_redundancy(p)
    k = math.ceil(floor_r / step - 1e-9)
    while k * step <= cap + 1e-9:
        r = round(k * step, 10)
        if mask_probability(p, w, r) >= target:
            return r
        k += 1
    raise RedundancyNotFound(f"no R <= {cap} reaches mask probability {target} at p={p}, W={w}")
