"""Seeded round-based simulator for TCP and TCP/NC flows over an erasure path.

Time advances in ticks of one base RTT. In each tick every active flow
hands its packets to the path, the path optionally queues them behind a
bottleneck link, erasures are drawn per packet, and ACKs come back at the end
of the tick. Packets held in the bottleneck queue are delivered (and ACKed)
in a later tick, which is how queueing inflates the measured SRTT.

TCP uses a Go-Back-N receiver: everything after the first missing packet is
discarded and answered with a duplicate ACK. TCP/NC sends ``R`` coded packets
per TCP packet; a surviving coded packet is innovative while the receiver has
seen fewer degrees of freedom than the number of TCP packets it covers.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .model_tcp import MAX_BACKOFF, FlowParams

PROTOCOLS = ("tcp", "nc")
SRTT_GAIN = 1.0 / 8.0
EVENT_NONE = ""
EVENT_TD = "TD"
EVENT_TO_START = "TO-start"
EVENT_TO_END = "TO-end"

# (flow_id, tick, count) -> boolean loss mask; replaces the random draw when given
LossFn = Callable[[int, int, int], np.ndarray]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathConfig:
    """A chain of ``hops`` identical links, optionally with a shared bottleneck.

    ``capacity_mbps=None`` means the path never constrains the flows.
    """

    per_link_loss: float = 0.0
    hops: int = 4
    capacity_mbps: float | None = None
    buffer_packets: int = 200
    one_way_delay: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.per_link_loss < 1.0:
            raise ConfigError("per_link_loss must be in [0, 1)")
        if self.hops < 1:
            raise ConfigError("hops must be >= 1")
        if self.capacity_mbps is not None and self.capacity_mbps <= 0:
            raise ConfigError("capacity_mbps must be positive or None")
        if self.buffer_packets < 0:
            raise ConfigError("buffer_packets must be >= 0")
        if self.one_way_delay <= 0:
            raise ConfigError("one_way_delay must be positive")

    @classmethod
    def from_end_to_end(cls, p: float, hops: int = 4, **kwargs) -> "PathConfig":
        q = 1.0 - (1.0 - p) ** (1.0 / hops)
        return cls(per_link_loss=q, hops=hops, **kwargs)

    @property
    def loss_prob(self) -> float:
        return end_to_end_loss(self.per_link_loss, self.hops)

    @property
    def base_rtt(self) -> float:
        return 2 * self.hops * self.one_way_delay


def end_to_end_loss(q: float, hops: int) -> float:
    if not 0.0 <= q < 1.0 or hops < 1:
        raise ValueError("need 0 <= q < 1 and hops >= 1")
    return 1.0 - (1.0 - q) ** hops


@dataclass(frozen=True)
class FlowSpec:
    protocol: str
    params: FlowParams
    start_time: float = 0.0
    end_time: float | None = None

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.start_time < 0:
            raise ConfigError("start_time must be >= 0")
        if self.end_time is not None and self.end_time <= self.start_time:
            raise ConfigError("end_time must come after start_time")


@dataclass(frozen=True)
class SimConfig:
    path: PathConfig
    flows: tuple[FlowSpec, ...]
    duration: float
    seed: int
    measurement_warmup: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if not self.flows:
            raise ConfigError("at least one flow is required")
        if self.measurement_warmup < 0:
            raise ConfigError("measurement_warmup must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        rtt = self.path.base_rtt
        for k, f in enumerate(self.flows):
            if not math.isclose(f.params.rtt, rtt, rel_tol=1e-9):
                raise ConfigError(f"flow {k}: rtt {f.params.rtt} != path base RTT {rtt}")
            if not math.isclose(f.params.loss_prob, self.path.loss_prob, rel_tol=1e-6, abs_tol=1e-9):
                raise ConfigError(f"flow {k}: loss_prob {f.params.loss_prob} != path loss {self.path.loss_prob}")


def single_flow_config(
    protocol: str,
    p: float,
    redundancy: float = 1.0,
    *,
    duration: float = 1000.0,
    seed: int = 0,
    wmax: int = 50,
    capacity_mbps: float | None = None,
    warmup: float = 0.0,
    **param_kwargs,
) -> SimConfig:
    """Convenience constructor for the standard 4-hop, 100 ms-per-link path."""
    path = PathConfig.from_end_to_end(p, capacity_mbps=capacity_mbps)
    params = FlowParams(loss_prob=path.loss_prob, rtt=path.base_rtt, wmax=wmax,
                        redundancy=redundancy, **param_kwargs)
    return SimConfig(path, (FlowSpec(protocol, params),), duration, seed, warmup)


@dataclass
class FlowTrace:
    """Per-tick record of one flow plus its throughput summary."""

    flow_id: int
    protocol: str
    rtt: float
    packet_size_bits: int
    start_time: float
    end_time: float
    measure_from: float
    time: np.ndarray
    window: np.ndarray
    srtt: np.ndarray
    delivered: np.ndarray
    dupacks: np.ndarray
    events: list[str]
    tcp_sent: np.ndarray
    coded_sent: np.ndarray

    def delivered_by(self, t: float) -> int:
        """Packets delivered by time ``t`` (ACKs land at the end of each tick)."""
        ends = self.time + self.rtt
        k = np.searchsorted(ends, t + 1e-9, side="right")
        return int(self.delivered[k - 1]) if k > 0 else 0

    def throughput_between(self, t0: float, t1: float) -> float:
        """Mean throughput in Mbps over ``[t0, t1]``."""
        if t1 <= t0:
            raise ValueError("empty interval")
        pkts = self.delivered_by(t1) - self.delivered_by(t0)
        return pkts * self.packet_size_bits / (t1 - t0) / 1e6

    @property
    def throughput_mbps(self) -> float:
        return self.throughput_between(self.measure_from, self.end_time)

    @property
    def mean_srtt(self) -> float:
        mask = self.time >= self.measure_from - 1e-9
        return float(self.srtt[mask].mean()) if mask.any() else float("nan")

    def count(self, event: str) -> int:
        return sum(1 for e in self.events if e == event)


# --- senders ----------------------------------------------------------------


@dataclass
class _Chunk:
    flow: int
    tag: int  # first sequence number (tcp) or coverage (nc)
    count: int
    tick: int


class _Sender:
    def __init__(self, flow_id: int, spec: FlowSpec, rng: np.random.Generator,
                 path: PathConfig, loss_fn: LossFn | None):
        prm = spec.params
        self.id = flow_id
        self.protocol = spec.protocol
        self.params = prm
        self.rng = rng
        self.rtt = path.base_rtt
        self.p = path.loss_prob
        self.loss_fn = loss_fn
        self.window = float(prm.initial_window)
        self.una = 0  # cumulative ACK point == packets delivered in order / degrees seen
        self.snd_nxt = 0
        self.snd_max = 0
        self.karn_limit = 0  # packets below this were retransmitted: no RTT samples
        self.send_tick: list[int] = []
        self.srtt = self.rtt
        self.timeout = False
        self.backoff = 1
        self.resume_tick = 0
        self.retry_sent = False
        self.last_progress = -1
        self.acked = 0
        self.dups = 0
        self.event = EVENT_NONE
        self.tcp_sent = 0
        self.coded_sent = 0
        self.rec: dict[str, list] = {k: [] for k in
                                     ("time", "window", "srtt", "delivered", "dupacks", "event",
                                      "tcp_sent", "coded_sent")}

    # shared machinery

    def idle_ticks(self, backoff: int) -> int:
        return math.ceil(self.params.timeout_seconds * backoff / self.rtt - 1e-9)

    def tx_budget(self, tick: int) -> int:
        """TCP-layer packets the sender may (re)transmit this tick."""
        self.retry_sent = False
        if self.timeout:
            if tick < self.resume_tick:
                return 0
            self.snd_nxt = self.una
            self.retry_sent = True
            return 1
        return max(0, int(math.floor(self.window + 1e-9)) - (self.snd_nxt - self.una))

    def advance(self, tx: int, tick: int) -> int:
        """Move ``snd_nxt`` forward by ``tx``; returns the first sequence sent."""
        first = self.snd_nxt
        if first < self.snd_max:
            self.karn_limit = max(self.karn_limit, min(self.snd_max, first + tx))
        new = first + tx - self.snd_max
        if new > 0:
            self.send_tick.extend([tick] * new)
            self.snd_max += new
        self.snd_nxt += tx
        self.tcp_sent += tx
        return first

    def sample(self, lo: int, hi: int, tick: int):
        """Feed RTT samples for in-order progress over sequence numbers ``[lo, hi)``."""
        lo = max(lo, self.karn_limit)
        if hi <= lo:
            return
        sent = np.asarray(self.send_tick[lo:hi])
        samples = (tick - sent + 1) * self.rtt
        k = len(samples)
        decay = (1.0 - SRTT_GAIN) ** np.arange(k - 1, -1, -1)
        self.srtt = (1.0 - SRTT_GAIN) ** k * self.srtt + SRTT_GAIN * float(decay @ samples)

    def losses(self, tick: int, count: int) -> np.ndarray:
        if self.loss_fn is not None:
            return np.asarray(self.loss_fn(self.id, tick, count), dtype=bool)
        return self.rng.random(count) < self.p

    def enter_timeout(self, tick: int, wait: bool):
        self.window = 1.0
        self.snd_nxt = self.una
        self.timeout = True
        self.backoff = 1
        self.resume_tick = tick + 1 + (self.idle_ticks(1) if wait else 0)
        self.event = EVENT_TO_START

    def settle_timeout(self, tick: int) -> bool:
        """Handle a tick spent in time-out. Returns True when the tick is fully handled."""
        if not self.timeout:
            return False
        if self.acked > 0:
            self.timeout = False
            self.backoff = 1
            self.grow()
            self.event = EVENT_TO_END
            self.last_progress = tick
        elif self.retry_sent:
            self.backoff = min(MAX_BACKOFF, 2 * self.backoff)
            self.resume_tick = tick + 1 + self.idle_ticks(self.backoff)
            self.snd_nxt = self.una
        return True

    def grow(self):
        if self.acked:
            self.window = min(float(self.params.wmax), self.window + self.acked / self.window)

    def silent_too_long(self, tick: int) -> bool:
        outstanding = self.snd_max > self.una
        return outstanding and tick - self.last_progress >= self.idle_ticks(1)

    def record(self, tick: int):
        r = self.rec
        r["time"].append(tick * self.rtt)
        r["window"].append(self.window)
        r["srtt"].append(self.srtt)
        r["delivered"].append(self.una)
        r["dupacks"].append(self.dups_tick)
        r["event"].append(self.event)
        r["tcp_sent"].append(self.tcp_sent)
        r["coded_sent"].append(self.coded_sent)

    def begin_tick(self):
        self.acked = 0
        self.dups_tick = 0
        self.event = EVENT_NONE


class _TcpSender(_Sender):
    def __init__(self, *args):
        super().__init__(*args)
        self.hole_tick: int | None = None

    def emit(self, tick: int) -> list[_Chunk]:
        tx = self.tx_budget(tick)
        if tx == 0:
            return []
        first = self.advance(tx, tick)
        self.coded_sent += tx
        return [_Chunk(self.id, first, tx, tick)]

    def receive(self, chunk: _Chunk, tick: int):
        lost = self.losses(tick, chunk.count)
        alive = ~lost
        if chunk.tag == self.una:
            bad = np.flatnonzero(lost)
            good = chunk.count if bad.size == 0 else int(bad[0])
            if good:
                self.sample(self.una, self.una + good, tick)
                self.una += good
                self.acked += good
            if good < chunk.count:
                self.open_hole(tick)
                self.dups_tick += int(alive[good:].sum())
        else:
            # everything here is out of order (ahead of a hole) or a stale copy
            self.dups_tick += int(alive.sum())
            if chunk.tag > self.una and alive.any():
                self.open_hole(tick)

    def open_hole(self, tick: int):
        if self.hole_tick is None:
            self.hole_tick = tick
            self.dups = 0

    def end_tick(self, tick: int):
        self.dups += self.dups_tick
        if self.acked:
            self.last_progress = tick
        if self.settle_timeout(tick):
            self.hole_tick = None
            return
        self.grow()
        if self.hole_tick is not None and tick > self.hole_tick:
            # end of the feedback round that follows the loss round
            if self.dups >= 3:
                self.window = max(1.0, self.window / 2.0)
                self.snd_nxt = self.una
                self.event = EVENT_TD
                self.last_progress = tick
            else:
                self.enter_timeout(tick, wait=True)
            self.hole_tick = None
            self.dups = 0
        elif self.hole_tick is None and self.silent_too_long(tick):
            self.enter_timeout(tick, wait=False)


class _NcSender(_Sender):
    def __init__(self, *args):
        super().__init__(*args)
        self.carry = 0.0

    def emit(self, tick: int) -> list[_Chunk]:
        tx = self.tx_budget(tick)
        if tx == 0:
            return []
        self.advance(tx, tick)
        want = self.params.redundancy * tx + self.carry
        coded = int(math.floor(want + 1e-9))
        self.carry = max(0.0, want - coded)
        if coded == 0:
            return []
        self.coded_sent += coded
        return [_Chunk(self.id, self.snd_max, coded, tick)]

    def receive(self, chunk: _Chunk, tick: int):
        if self.loss_fn is not None:
            survivors = int((~self.losses(tick, chunk.count)).sum())
        else:
            survivors = int(self.rng.binomial(chunk.count, 1.0 - self.p))
        gain = min(survivors, max(0, chunk.tag - self.una))
        if gain:
            self.sample(self.una, self.una + gain, tick)
            self.una += gain
            self.acked += gain
        self.dups_tick += survivors - gain

    def end_tick(self, tick: int):
        if self.acked:
            self.last_progress = tick
        if self.settle_timeout(tick):
            return
        self.grow()
        if self.silent_too_long(tick):
            self.enter_timeout(tick, wait=False)


_SENDERS = {"tcp": _TcpSender, "nc": _NcSender}


# --- bottleneck link --------------------------------------------------------


class _Link:
    """FIFO bottleneck with tail drop. ``capacity=None`` passes everything through."""

    def __init__(self, path: PathConfig, rng: np.random.Generator, packet_bits: int):
        self.rng = rng
        self.buffer = path.buffer_packets
        if path.capacity_mbps is None:
            self.per_tick = None
        else:
            self.per_tick = path.capacity_mbps * 1e6 * path.base_rtt / packet_bits
        self.carry = 0.0
        self.queue: deque[tuple[int, int, int, bool]] = deque()
        self.dropped = 0

    def forward(self, chunks: list[_Chunk], protocols: dict[int, str]) -> list[_Chunk]:
        if self.per_tick is None:
            return chunks
        arrivals = self._interleave(chunks, protocols)
        self.queue.extend(arrivals)
        budget = self.per_tick + self.carry
        n_serve = min(len(self.queue), int(math.floor(budget + 1e-9)))
        self.carry = budget - n_serve if n_serve < len(self.queue) else 0.0
        served = [self.queue.popleft() for _ in range(n_serve)]
        while len(self.queue) > self.buffer:
            self.queue.pop()
            self.dropped += 1
        return self._regroup(served)

    def _interleave(self, chunks, protocols):
        per_flow = []
        for c in chunks:
            seq_step = protocols[c.flow] == "tcp"
            per_flow.append([(c.flow, c.tag + k if seq_step else c.tag, c.tick, seq_step)
                             for k in range(c.count)])
        if len(per_flow) <= 1:
            return per_flow[0] if per_flow else []
        # random interleave that keeps each flow's own order
        labels = np.concatenate([np.full(len(pkts), i) for i, pkts in enumerate(per_flow)])
        self.rng.shuffle(labels)
        cursors = [0] * len(per_flow)
        out = []
        for lab in labels:
            out.append(per_flow[lab][cursors[lab]])
            cursors[lab] += 1
        return out

    @staticmethod
    def _regroup(served) -> list[_Chunk]:
        runs: list[_Chunk] = []
        for flow, tag, tick, seq_step in served:
            if runs:
                last = runs[-1]
                nxt = last.tag + last.count if seq_step else last.tag
                if last.flow == flow and last.tick == tick and tag == nxt:
                    last.count += 1
                    continue
            runs.append(_Chunk(flow, tag, 1, tick))
        return runs


# --- driver -----------------------------------------------------------------


def _run(config: SimConfig, flow_ids: Sequence[int], capacity: bool,
         loss_fn: LossFn | None = None) -> list[FlowTrace]:
    path = config.path
    if not capacity:
        path = PathConfig(path.per_link_loss, path.hops, None, path.buffer_packets, path.one_way_delay)
    rtt = path.base_rtt
    n_ticks = int(math.floor(config.duration / rtt + 1e-9))
    streams = np.random.SeedSequence(int(config.seed)).spawn(len(config.flows) + 1)
    senders = {}
    for k in flow_ids:
        spec = config.flows[k]
        senders[k] = _SENDERS[spec.protocol](k, spec, np.random.default_rng(streams[k + 1]), path, loss_fn)
    protocols = {k: s.protocol for k, s in senders.items()}
    packet_bits = config.flows[flow_ids[0]].params.packet_size_bits
    link = _Link(path, np.random.default_rng(streams[0]), packet_bits)

    windows = {}
    for k in flow_ids:
        spec = config.flows[k]
        end = config.duration if spec.end_time is None else min(spec.end_time, config.duration)
        first = math.ceil(spec.start_time / rtt - 1e-9)
        last = int(math.floor(end / rtt + 1e-9))  # exclusive
        windows[k] = (first, last)
        senders[k].last_progress = first - 1

    for tick in range(n_ticks):
        active = [k for k in flow_ids if windows[k][0] <= tick < windows[k][1]]
        chunks = []
        for k in active:
            senders[k].begin_tick()
            chunks.extend(senders[k].emit(tick))
        for run in link.forward(chunks, protocols):
            if run.flow in active:
                senders[run.flow].receive(run, tick)
        for k in active:
            senders[k].end_tick(tick)
            senders[k].record(tick)

    traces = []
    for k in flow_ids:
        s, spec = senders[k], config.flows[k]
        first, last = windows[k]
        r = s.rec
        traces.append(FlowTrace(
            flow_id=k,
            protocol=spec.protocol,
            rtt=rtt,
            packet_size_bits=spec.params.packet_size_bits,
            start_time=first * rtt,
            end_time=last * rtt,
            measure_from=min(first + math.ceil(config.measurement_warmup / rtt - 1e-9), last) * rtt,
            time=np.asarray(r["time"], dtype=float),
            window=np.asarray(r["window"], dtype=float),
            srtt=np.asarray(r["srtt"], dtype=float),
            delivered=np.asarray(r["delivered"], dtype=np.int64),
            dupacks=np.asarray(r["dupacks"], dtype=np.int64),
            events=list(r["event"]),
            tcp_sent=np.asarray(r["tcp_sent"], dtype=np.int64),
            coded_sent=np.asarray(r["coded_sent"], dtype=np.int64),
        ))
    return traces


def run_tcp_flow(config: SimConfig, flow_index: int = 0, *, loss_fn: LossFn | None = None) -> FlowTrace:
    """Simulate one TCP flow of ``config`` alone on an unconstrained path."""
    if config.flows[flow_index].protocol != "tcp":
        raise ConfigError(f"flow {flow_index} is not a tcp flow")
    return _run(config, [flow_index], capacity=False, loss_fn=loss_fn)[0]


def run_nc_flow(config: SimConfig, flow_index: int = 0, *, loss_fn: LossFn | None = None) -> FlowTrace:
    """Simulate one TCP/NC flow of ``config`` alone on an unconstrained path."""
    if config.flows[flow_index].protocol != "nc":
        raise ConfigError(f"flow {flow_index} is not an nc flow")
    return _run(config, [flow_index], capacity=False, loss_fn=loss_fn)[0]


def run_shared_link(config: SimConfig, *, loss_fn: LossFn | None = None) -> list[FlowTrace]:
    """Simulate all flows of ``config`` together through the path's bottleneck."""
    return _run(config, list(range(len(config.flows))), capacity=True, loss_fn=loss_fn)


# --- export -----------------------------------------------------------------

TRACE_COLUMNS = ("time_s", "flow_id", "protocol", "window", "srtt_s", "delivered_cum", "event")
SUMMARY_COLUMNS = ("flow_id", "protocol", "p", "R", "C_mbps", "mean_throughput_mbps", "seed")


def write_trace_csv(path, traces: Iterable[FlowTrace]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            for k in range(len(tr.time)):
                w.writerow([repr(float(tr.time[k])), tr.flow_id, tr.protocol,
                            repr(float(tr.window[k])), repr(float(tr.srtt[k])),
                            int(tr.delivered[k]), tr.events[k] or "none"])


def summary_rows(config: SimConfig, traces: Iterable[FlowTrace]) -> list[dict]:
    rows = []
    for tr in traces:
        prm = config.flows[tr.flow_id].params
        rows.append({
            "flow_id": tr.flow_id,
            "protocol": tr.protocol,
            "p": config.path.loss_prob,
            "R": prm.redundancy,
            "C_mbps": config.path.capacity_mbps,
            "mean_throughput_mbps": tr.throughput_mbps,
            "seed": int(config.seed),
        })
    return rows
