"""Base-station provisioning from per-user throughput.

A user downloading files of mean size ``mu_f`` at throughput ``Θ`` is busy
for ``Δ = mu_f / Θ`` seconds per transaction. With transactions arriving at
rate ``q`` per second, Little's law gives the activity probability
``P = min{1, Δq}``, and a cell serving ``N`` users needs
``N * P * max{B/Bmax, 1/Nmax}`` base stations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model_nc import nc_average_throughput, rounds_for_duration
from .model_tcp import FlowParams, tcp_throughput

PROTOCOLS = ("ideal", "tcp", "nc")
DEFAULT_BMAX = 300.0
DEFAULT_NMAX = 200
TICK_S = 0.1

KB = 8e3  # bits
MB = 8e6

# (size_bits, probability)
FILE_PRESETS: dict[str, tuple[tuple[float, float], ...]] = {
    "mu3.2": ((8 * KB, 0.3), (1 * MB, 0.3), (3 * MB, 0.3), (20 * MB, 0.1)),
    "mu5.08": ((8 * KB, 0.26), (1 * MB, 0.27), (3 * MB, 0.27), (20 * MB, 0.2)),
}

SWEEP_COLUMNS = ("B_mbps", "p", "rtt_s", "q_user", "mu_f_mb", "protocol",
                 "throughput_mbps", "P_active", "n_bs_frac", "n_bs_ceil")


def _validate_distribution(dist: Sequence[tuple[float, float]]):
    if not dist:
        raise ValueError("file distribution is empty")
    total = 0.0
    for size, prob in dist:
        if size <= 0:
            raise ValueError(f"file size must be positive, got {size}")
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"probability out of range: {prob}")
        total += prob
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"file probabilities sum to {total}, not 1")


def mean_file_size(dist: Sequence[tuple[float, float]]) -> float:
    """Expected file size in bits."""
    _validate_distribution(dist)
    return float(sum(size * prob for size, prob in dist))


def active_probability(mu_f: float, throughput: float, q_user: float) -> float:
    """``min{1, (mu_f / Θ) q}`` with ``mu_f`` in bits and ``Θ`` in Mbps.

    A zero throughput with a positive arrival rate can never drain, so the
    user is always active.
    """
    if q_user < 0 or mu_f < 0 or throughput < 0:
        raise ValueError("arguments must be nonnegative")
    if q_user == 0:
        return 0.0
    if throughput == 0:
        return 1.0
    return min(1.0, mu_f / (throughput * 1e6) * q_user)


def base_stations(n_users: float, p_active: float, bandwidth: float,
                  bmax: float = DEFAULT_BMAX, nmax: float = DEFAULT_NMAX) -> float:
    """Fractional base-station count ``N * P * max{B/Bmax, 1/Nmax}``."""
    if n_users < 0 or not 0.0 <= p_active <= 1.0 or bandwidth <= 0 or bmax <= 0 or nmax < 1:
        raise ValueError("invalid provisioning arguments")
    return n_users * p_active * max(bandwidth / bmax, 1.0 / nmax)


def effective_throughput(protocol: str, bandwidth: float, params: FlowParams,
                         duration_s: float = 1000.0) -> float:
    """Throughput in Mbps a user sees with bandwidth grant ``bandwidth`` Mbps.

    Every protocol is held to ``B(1-p)``. Without erasures all three reduce
    to ``min{B, wmax/rtt}``.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    p = params.loss_prob
    cap = params.max_rate * params.packet_size_bits / 1e6
    ceiling = bandwidth * (1.0 - p)
    if protocol == "ideal" or p == 0.0:
        return min(bandwidth, cap) * (1.0 - p)
    if protocol == "tcp":
        return min(ceiling, tcp_throughput(params).mbps)
    n = rounds_for_duration(duration_s, params.srtt)
    return min(ceiling, nc_average_throughput(params, n).mbps)


@dataclass(frozen=True)
class ProvisioningResult:
    throughput: float
    transaction_duration: float
    active_probability: float
    expected_active_users: float
    n_bs_fractional: float
    n_bs_integral: int
    unstable: bool


@dataclass(frozen=True)
class ProvisioningScenario:
    users: int
    transaction_prob: float
    file_distribution: tuple[tuple[float, float], ...]
    bandwidth: float
    flow_params: FlowParams
    protocol: str = "ideal"
    cell_bandwidth: float = DEFAULT_BMAX
    cell_user_cap: int = DEFAULT_NMAX
    duration_s: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "file_distribution",
                           tuple((float(s), float(p)) for s, p in self.file_distribution))
        _validate_distribution(self.file_distribution)
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.transaction_prob < 0:
            raise ValueError("transaction_prob must be >= 0")
        if self.bandwidth <= 0 or self.cell_bandwidth <= 0:
            raise ValueError("bandwidths must be positive")
        if self.cell_user_cap < 1:
            raise ValueError("cell_user_cap must be >= 1")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")

    @property
    def mean_file_size(self) -> float:
        return mean_file_size(self.file_distribution)

    @property
    def throughput(self) -> float:
        return effective_throughput(self.protocol, self.bandwidth, self.flow_params, self.duration_s)

    @property
    def bs_factor(self) -> float:
        return max(self.bandwidth / self.cell_bandwidth, 1.0 / self.cell_user_cap)

    def evaluate(self) -> ProvisioningResult:
        theta = self.throughput
        mu = self.mean_file_size
        delta = math.inf if theta == 0 else mu / (theta * 1e6)
        p_act = active_probability(mu, theta, self.transaction_prob)
        frac = base_stations(self.users, p_act, self.bandwidth, self.cell_bandwidth, self.cell_user_cap)
        return ProvisioningResult(
            throughput=theta,
            transaction_duration=delta,
            active_probability=p_act,
            expected_active_users=self.users * p_act,
            n_bs_fractional=frac,
            n_bs_integral=math.ceil(frac - 1e-12),
            unstable=delta * self.transaction_prob >= 1.0,
        )


@dataclass
class OccupancyTrace:
    """Monte Carlo output sampled every 0.1 s."""

    time: np.ndarray
    active_users: np.ndarray
    n_bs_ceil: np.ndarray
    users: int

    @property
    def mean_active_fraction(self) -> float:
        return float(self.active_users.mean()) / self.users

    @property
    def mean_n_bs_ceil(self) -> float:
        return float(self.n_bs_ceil.mean())

    def tail(self, fraction: float = 0.5) -> "OccupancyTrace":
        """The last ``fraction`` of the run, for steady-state statistics."""
        k = int(len(self.time) * (1.0 - fraction))
        return OccupancyTrace(self.time[k:], self.active_users[k:], self.n_bs_ceil[k:], self.users)


def monte_carlo_occupancy(scenario: ProvisioningScenario, duration_s: float, seed: int,
                          throughput: float | None = None) -> OccupancyTrace:
    """Simulate user activity in 0.1 s ticks.

    Each tick every user starts a transaction with probability ``q/10``.
    A user with ``k`` open transactions serves each at ``Θ/k``; a
    transaction closes once its remaining bits reach zero.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    theta = scenario.throughput if throughput is None else throughput
    rng = np.random.default_rng(int(seed))
    n = scenario.users
    sizes = np.array([s for s, _ in scenario.file_distribution])
    probs = np.array([p for _, p in scenario.file_distribution])
    p_start = min(1.0, scenario.transaction_prob * TICK_S)
    drain = theta * 1e6 * TICK_S
    factor = scenario.bs_factor

    n_ticks = int(math.floor(duration_s / TICK_S + 1e-9))
    owner = np.zeros(0, dtype=np.int64)
    remaining = np.zeros(0)
    active = np.zeros(n_ticks, dtype=np.int64)
    for t in range(n_ticks):
        if p_start > 0:
            starters = np.flatnonzero(rng.random(n) < p_start)
            if starters.size:
                picks = rng.choice(sizes.size, size=starters.size, p=probs)
                owner = np.concatenate([owner, starters])
                remaining = np.concatenate([remaining, sizes[picks]])
        if owner.size:
            k = np.bincount(owner, minlength=n)
            active[t] = int(np.count_nonzero(k))
            remaining = remaining - drain / k[owner]
            keep = remaining > 1e-9
            owner, remaining = owner[keep], remaining[keep]
    n_bs = np.ceil(active * factor - 1e-12).astype(np.int64)
    return OccupancyTrace(np.arange(n_ticks) * TICK_S, active, n_bs, n)


def provision_sweep(
    bandwidths: Iterable[float],
    losses: Iterable[float],
    q_users: Iterable[float],
    distributions: Iterable[Sequence[tuple[float, float]]],
    protocols: Iterable[str] = PROTOCOLS,
    *,
    rtt: float = 0.1,
    users: int = 1000,
    wmax: int = 50,
    redundancy: float | None = None,
    duration_s: float = 1000.0,
) -> list[dict]:
    """Analytic provisioning over a grid; one row per combination.

    ``redundancy=None`` picks ``R`` per loss rate with the 0.8 mask heuristic.
    """
    from .model_nc import recommend_redundancy

    rows = []
    protocols = tuple(protocols)
    dists = [tuple(d) for d in distributions]
    for p in losses:
        r = redundancy if redundancy is not None else recommend_redundancy(p, wmax)
        params = FlowParams(loss_prob=p, rtt=rtt, wmax=wmax, redundancy=r)
        for b in bandwidths:
            for q in q_users:
                for dist in dists:
                    for proto in protocols:
                        sc = ProvisioningScenario(users, q, dist, b, params, proto, duration_s=duration_s)
                        res = sc.evaluate()
                        rows.append({
                            "B_mbps": b,
                            "p": p,
                            "rtt_s": rtt,
                            "q_user": q,
                            "mu_f_mb": sc.mean_file_size / MB,
                            "protocol": proto,
                            "throughput_mbps": res.throughput,
                            "P_active": res.active_probability,
                            "n_bs_frac": res.n_bs_fractional,
                            "n_bs_ceil": res.n_bs_integral,
                        })
    return rows
