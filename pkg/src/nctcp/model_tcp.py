"""Closed-form steady-state throughput of standard TCP over an i.i.d. erasure path.

The model follows the round abstraction: a round lasts one RTT, the sender
pushes its whole window, and Go-Back-N discards everything after the first
loss in a round. Triple-duplicate (TD) periods are analysed first, then the
expected cost of time-out (TO) periods is folded in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Largest loss rate for which the TD-spacing radicand stays nonnegative:
# (1-p)/p >= 1/12  <=>  p <= 12/13.
P_MAX = 12.0 / 13.0

MAX_BACKOFF = 64


class DomainError(ValueError):
    """Raised when a model is evaluated outside the region where it is defined."""


@dataclass(frozen=True)
class FlowParams:
    """Model inputs for one flow.

    ``srtt`` defaults to ``rtt``. The time-out length in rounds is always
    derived from ``timeout_seconds / rtt`` and never stored.
    """

    loss_prob: float
    rtt: float
    wmax: int = 50
    redundancy: float = 1.0
    srtt: float | None = None
    timeout_seconds: float = 3.0
    initial_window: float = 1.0
    packet_size_bits: int = 8000

    def __post_init__(self):
        if not 0.0 <= self.loss_prob < 1.0:
            raise ValueError(f"loss_prob must be in [0, 1), got {self.loss_prob}")
        if self.rtt <= 0:
            raise ValueError(f"rtt must be positive, got {self.rtt}")
        if self.srtt is None:
            object.__setattr__(self, "srtt", self.rtt)
        elif self.srtt <= 0:
            raise ValueError(f"srtt must be positive, got {self.srtt}")
        if int(self.wmax) != self.wmax or self.wmax < 1:
            raise ValueError(f"wmax must be an integer >= 1, got {self.wmax}")
        object.__setattr__(self, "wmax", int(self.wmax))
        if self.redundancy < 1.0:
            raise ValueError(f"redundancy must be >= 1, got {self.redundancy}")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")
        if not 1.0 <= self.initial_window <= self.wmax:
            raise ValueError("initial_window must lie in [1, wmax]")
        if self.packet_size_bits <= 0:
            raise ValueError("packet_size_bits must be positive")

    @property
    def timeout_rounds(self) -> float:
        return self.timeout_seconds / self.rtt

    @property
    def max_rate(self) -> float:
        """Window-limited ceiling ``wmax / rtt`` in packets per second."""
        return self.wmax / self.rtt


@dataclass(frozen=True)
class ThroughputEstimate:
    """A model prediction plus the intermediates that produced it."""

    packets_per_second: float
    packet_size_bits: int
    expected_r: float | None = None
    expected_window: float | None = None
    timeout_probability: float | None = None
    timeout_duration_rounds: float | None = None
    clamped_by_wmax: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def mbps(self) -> float:
        return self.packets_per_second * self.packet_size_bits / 1e6


def expected_td_spacing(p: float) -> float:
    """Expected number of rounds ``E[r]`` between consecutive TD events."""
    if p <= 0.0:
        raise DomainError("TD spacing is infinite at p = 0")
    if p > P_MAX:
        raise DomainError(f"p = {p} exceeds 12/13; the TD-spacing radicand is negative")
    radicand = -1.0 / 18.0 + (2.0 / 3.0) * (1.0 - p) / p
    # p == 12/13 can land a hair below zero in floating point
    return 2.0 / 3.0 + math.sqrt(max(radicand, 0.0))


def expected_window_tcp(p: float) -> float:
    """Steady-state mean window, the average of the post-halving and pre-loss windows."""
    return 1.5 * expected_td_spacing(p) - 1.0


def _binom(w: float, i: int) -> float:
    # gamma-function binomial; exact on integers, continuous for real w >= i
    return math.exp(math.lgamma(w + 1.0) - math.lgamma(i + 1.0) - math.lgamma(w - i + 1.0))


def timeout_probability(p: float, w: float) -> float:
    """Probability that a loss in a window of size ``w`` ends in a TO rather than a TD.

    A TO happens when at most two packets of the window survive, so fewer
    than three duplicate ACKs can come back. Real ``w`` is accepted because
    the model substitutes the mean window.
    """
    if w < 3:
        return 1.0
    if p == 0.0:
        return 0.0
    total = sum(_binom(w, i) * p ** (w - i) * (1.0 - p) ** i for i in range(3))
    return min(1.0, total)


def expected_timeout_duration(p: float, to_rounds: float) -> float:
    """Expected length, in rounds, of a TO period with exponential backoff.

    Backoff doubles from ``to_rounds`` up to 64 times that; the tail beyond
    the sixth doubling is summed in closed form.
    """
    q = 1.0 - p
    head = p + 3 * p**2 + 7 * p**3 + 15 * p**4 + 31 * p**5
    tail = 63 * p**6 / q + 64 * p**7 / q**2
    return q * to_rounds * (head + tail)


def timeout_duration_series(p: float, to_rounds: float, tol: float = 1e-12) -> float:
    """Direct summation of the backoff series; reference for the closed form."""
    total = 0.0
    for k, coef in enumerate((1, 3, 7, 15, 31), start=1):
        total += coef * p**k
    i = 0
    while True:
        term = (63 + 64 * i) * p ** (6 + i)
        total += term
        if term < tol or i > 100_000:
            break
        i += 1
    return (1.0 - p) * to_rounds * total


def td_only_throughput(p: float, rtt: float) -> float:
    """Packets per second when only TD events are accounted for."""
    return (1.0 - p) / p / (rtt * (expected_td_spacing(p) + 1.0))


def tcp_throughput(params: FlowParams) -> ThroughputEstimate:
    """Average TCP throughput including both TD and TO events, capped at ``wmax/rtt``."""
    p = params.loss_prob
    cap = params.max_rate
    if p == 0.0:
        return ThroughputEstimate(cap, params.packet_size_bits, clamped_by_wmax=True)
    if p > P_MAX:
        raise DomainError(f"p = {p} exceeds 12/13")

    er = expected_td_spacing(p)
    ew = 1.5 * er - 1.0
    pto = timeout_probability(p, ew)
    duration = expected_timeout_duration(p, params.timeout_rounds)
    # E[r] + 1 = 5/3 + sqrt(...)
    rate = (1.0 - p) / p / (params.rtt * (er + 1.0 + pto * duration))
    # subnormal p overflows E[r]; the limit is the window cap
    clamped = math.isnan(rate) or rate >= cap
    return ThroughputEstimate(
        packets_per_second=cap if clamped else rate,
        packet_size_bits=params.packet_size_bits,
        expected_r=er,
        expected_window=ew,
        timeout_probability=pto,
        timeout_duration_rounds=duration,
        clamped_by_wmax=clamped,
    )
