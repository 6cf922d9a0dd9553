"""Fluid-flow discrete-event simulator of a collaborative training run.

Peers accumulate samples at their compute rate until the collaboration reaches
the target batch, then average. With delayed parameter updates (``dpu``)
computation continues while the previous batch is being averaged, so a step
costs ``max(T_compute, T_comm)`` and gradients are at most one step stale;
without it a step costs ``T_compute + T_comm``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import groups as groups_mod
from . import strategy
from .core import CollaborationSpec

ALLREDUCE = "allreduce"
PARAMETER_SERVER = "ps"
ADAPTIVE = "adaptive"
ALGORITHMS = (ALLREDUCE, PARAMETER_SERVER, ADAPTIVE)


class TrainingStalled(RuntimeError):
    def __init__(self, message: str, trace: "SimTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class EventKind(str, enum.Enum):
    JOIN = "join"
    LEAVE = "leave"
    FAIL = "fail"


@dataclass(frozen=True, order=True)
class ChurnEvent:
    time: float
    peer: str
    kind: EventKind


@dataclass(frozen=True)
class ChurnTrace:
    events: tuple[ChurnEvent, ...]
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        self.validate()

    def validate(self) -> None:
        last = -math.inf
        present: set[str] = set()
        for ev in self.events:
            if ev.time < last:
                raise ValueError("churn events must be time-ordered")
            last = ev.time
            if ev.kind is EventKind.JOIN:
                if ev.peer in present:
                    raise ValueError(f"{ev.peer} joins twice without leaving")
                present.add(ev.peer)
            else:
                if ev.peer not in present:
                    raise ValueError(f"{ev.peer} leaves before joining")
                present.discard(ev.peer)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")

    @classmethod
    def static(cls, peer_ids: Iterable[str], horizon: float) -> "ChurnTrace":
        return cls(tuple(ChurnEvent(0.0, pid, EventKind.JOIN) for pid in peer_ids), horizon)

    @classmethod
    def from_json(cls, doc) -> "ChurnTrace":
        events = [ChurnEvent(float(e["time"]), str(e["peer"]), EventKind(e["kind"].lower())) for e in doc["events"]]
        return cls(tuple(events), float(doc["horizon"]))

    def to_json(self) -> dict:
        return {
            "horizon": self.horizon,
            "events": [{"time": e.time, "peer": e.peer, "kind": e.kind.value} for e in self.events],
        }


def part_time_trace(always: Sequence[str], part_time: Sequence[str], period: float, horizon: float) -> ChurnTrace:
    """``part_time`` peers alternate ``period`` seconds online and offline, starting online."""
    events = [ChurnEvent(0.0, pid, EventKind.JOIN) for pid in list(always) + list(part_time)]
    t, online = period, True
    while t < horizon:
        kind = EventKind.LEAVE if online else EventKind.JOIN
        events.extend(ChurnEvent(t, pid, kind) for pid in part_time)
        online = not online
        t += period
    return ChurnTrace(tuple(events), horizon)


@dataclass(frozen=True)
class StepRecord:
    index: int
    time: float
    samples: float
    peers: tuple[str, ...]
    staleness: int
    round_seconds: float


@dataclass(frozen=True)
class AveragingRecord:
    start: float
    duration: float
    algorithm: str
    success: bool
    attempts: int


@dataclass
class SimTrace:
    steps: list[StepRecord] = field(default_factory=list)
    averaging_rounds: list[AveragingRecord] = field(default_factory=list)
    restarts: int = 0
    solver_calls: int = 0
    peer_samples: dict[str, float] = field(default_factory=dict)
    active_time: dict[str, float] = field(default_factory=dict)
    horizon: float = 0.0

    def steps_per_hour(self) -> float:
        if not self.steps:
            return 0.0
        return float(3600.0 * len(self.steps) / self.steps[-1].time)

    def window_rates(self, window: float) -> list[tuple[float, float]]:
        """(window start, steps/hour) over consecutive windows up to the horizon."""
        edges = np.arange(0.0, self.horizon + 1e-9, window)
        times = np.array([s.time for s in self.steps])
        out = []
        for lo in edges[:-1]:
            k = int(((times >= lo) & (times < lo + window)).sum())
            out.append((float(lo), 3600.0 * k / window))
        return out


@dataclass(frozen=True)
class TrainingConfig:
    algorithm: str = ADAPTIVE
    dpu: bool = True
    batch_size: float | None = None
    group_size: int | None = None
    catch_up: float = 60.0
    refresh: float = 30.0
    stall_timeout: float = 600.0
    seed: int = 0
    server: str | None = None

    @classmethod
    def from_json(cls, doc) -> "TrainingConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**doc)


# -- averaging time -------------------------------------------------------------

def simulate_averaging(spec: CollaborationSpec, algorithm: str, server: int | None = None) -> float:
    """Seconds for one averaging round of the whole collaboration."""
    if spec.n < 2:
        return 0.0
    if algorithm == ALLREDUCE:
        return strategy.throughput_allreduce(spec)
    if algorithm == PARAMETER_SERVER:
        if server is None:
            return strategy.best_parameter_server(spec)[1]
        return strategy.throughput_parameter_server(spec, server)
    if algorithm == ADAPTIVE:
        return strategy.comm_round_seconds(spec)
    raise ValueError(f"unknown algorithm {algorithm!r}")


# -- simulator ------------------------------------------------------------------

@dataclass
class _Averaging:
    end: float
    samples: float
    contributors: tuple[int, ...]
    members: frozenset
    version: int
    record: int
    tau: float


class _Sim:
    def __init__(self, spec: CollaborationSpec, trace: ChurnTrace, cfg: TrainingConfig):
        self.spec = spec
        self.trace = trace
        self.cfg = cfg
        self.B = float(cfg.batch_size if cfg.batch_size is not None else spec.batch_size)
        self.ids = [p.id for p in spec.peers]
        self.index = {pid: i for i, pid in enumerate(self.ids)}
        for ev in trace.events:
            if ev.peer not in self.index:
                raise ValueError(f"trace references unknown peer {ev.peer!r}")
        self.rates = spec.rates()
        self.rng = np.random.default_rng(cfg.seed)
        self.out = SimTrace(horizon=trace.horizon)
        self.out.peer_samples = {pid: 0.0 for pid in self.ids}
        self.out.active_time = {pid: 0.0 for pid in self.ids}
        self.active: set[int] = set()
        self.pending: dict[int, float] = {}  # peer -> time it becomes active
        self.acc = np.zeros(spec.n)  # samples for the batch being accumulated
        self.batch_version = 0  # oldest parameter version inside the current batch
        self.avg: _Averaging | None = None
        self.committed = 0
        self.cache: dict[frozenset, float] = {}
        self.idle_since: float | None = None

    # membership ------------------------------------------------------------
    def _round_seconds(self) -> float:
        key = frozenset(self.active)
        self.out.solver_calls += 1
        if key not in self.cache:
            order = sorted(key)
            if len(order) < 2:
                self.cache[key] = 0.0
            else:
                sub = self.spec.subset(order)
                server = None
                if self.cfg.algorithm == PARAMETER_SERVER and self.cfg.server is not None:
                    sid = self.index[self.cfg.server]
                    server = order.index(sid) if sid in key else None
                if self.cfg.algorithm == ADAPTIVE and not any(p.can_compute for p in sub.peers):
                    self.cache[key] = 0.0
                else:
                    self.cache[key] = simulate_averaging(sub, self.cfg.algorithm, server)
        return self.cache[key]

    def _computing(self) -> list[int]:
        return [i for i in sorted(self.active) if self.spec.peers[i].can_compute and self.rates[i] > 0]

    def _rate(self) -> float:
        if self.avg is not None and not self.cfg.dpu:
            return 0.0
        return float(sum(self.rates[i] for i in self._computing()))

    def _averaging_time(self) -> tuple[float, int, float]:
        """Duration, total group attempts and per-round cost of a new averaging."""
        base = self.current_round
        members = sorted(self.active)
        n = len(members)
        if n < 2 or base == 0.0:
            return base, 1, 0.0
        m = self.cfg.group_size or n
        m = max(2, min(m, n))
        plan = groups_mod.build_plan(n, m)
        tau = base / len(plan.rounds)
        fail = np.array([self.spec.peers[i].failure_rate for i in members])
        total_attempts = 0
        for grp_round in plan.rounds:
            worst = 1
            for grp in grp_round:
                attempts = 1
                idx = list(grp)
                while fail[idx].any() and (self.rng.random(len(idx)) < fail[idx]).any():
                    attempts += 1
                    if attempts > 1000:
                        break
                worst = max(worst, attempts)
            total_attempts += worst
        return tau * total_attempts, total_attempts, tau

    # main loop -----------------------------------------------------------------
    def run(self) -> SimTrace:
        cfg = self.cfg
        horizon = self.trace.horizon
        events = list(self.trace.events)
        ev_i = 0
        t = 0.0
        next_refresh = cfg.refresh
        self.current_round = 0.0
        while True:
            # apply everything due at t
            changed = False
            while ev_i < len(events) and events[ev_i].time <= t:
                changed |= self._apply(events[ev_i], t)
                ev_i += 1
            for pid, when in sorted(self.pending.items()):
                if when <= t:
                    del self.pending[pid]
                    self.active.add(pid)
                    changed = True
            if changed:
                self.current_round = self._round_seconds()
            if t >= next_refresh:
                self.current_round = self._round_seconds()
                next_refresh += cfg.refresh
            if self.avg is not None and self.avg.end <= t:
                self._commit(t)
            if self.avg is None and self.acc.sum() >= self.B * (1 - 1e-9) and self.active:
                self._start_averaging(t)
                continue
            if t >= horizon:
                break
            computing = self._computing()
            if computing:
                self.idle_since = None
            elif self.idle_since is None:
                self.idle_since = t
            if self.idle_since is not None and t - self.idle_since >= cfg.stall_timeout:
                raise TrainingStalled(f"no computing peers for {t - self.idle_since:.0f} s at t={t:.0f}", self.out)

            # next event time
            cands = [horizon, next_refresh]
            if ev_i < len(events):
                cands.append(events[ev_i].time)
            if self.pending:
                cands.append(min(self.pending.values()))
            if self.avg is not None:
                cands.append(self.avg.end)
            rate = self._rate()
            need = self.B - self.acc.sum()
            if self.avg is None and rate > 0 and need > 0:
                cands.append(max(t + need / rate, np.nextafter(t, math.inf)))
            if self.idle_since is not None:
                cands.append(self.idle_since + cfg.stall_timeout)
            t_next = max(min(cands), t)
            self._advance(t, t_next)
            t = t_next
        return self.out

    def _advance(self, t0: float, t1: float) -> None:
        dt = t1 - t0
        if dt <= 0:
            return
        for i in self.active:
            self.out.active_time[self.ids[i]] += dt
        if self._rate() == 0.0:
            return
        for i in self._computing():
            self.acc[i] += self.rates[i] * dt

    def _apply(self, ev: ChurnEvent, t: float) -> bool:
        i = self.index[ev.peer]
        if ev.kind is EventKind.JOIN:
            if t <= 0.0:
                self.active.add(i)
                return True
            self.pending[i] = t + self.cfg.catch_up
            return False
        self.pending.pop(i, None)
        if i not in self.active:
            return False
        self.active.discard(i)
        # its share of the batch in progress is lost
        self.acc[i] = 0.0
        if self.avg is not None and i in self.avg.members:
            # the departed peer's group repeats one group round without it
            self.avg.end += self.avg.tau
            old = self.out.averaging_rounds[self.avg.record]
            self.out.averaging_rounds[self.avg.record] = AveragingRecord(
                old.start, old.duration + self.avg.tau, old.algorithm, old.success, old.attempts + 1
            )
            self.out.restarts += 1
        return True

    def _start_averaging(self, t: float) -> None:
        contrib = tuple(i for i in range(self.spec.n) if self.acc[i] > 0)
        for i in contrib:
            self.out.peer_samples[self.ids[i]] += float(self.acc[i])
        duration, attempts, tau = self._averaging_time()
        self.out.averaging_rounds.append(AveragingRecord(float(t), float(duration), self.cfg.algorithm, True, attempts))
        self.avg = _Averaging(
            end=t + duration,
            samples=float(self.acc.sum()),
            contributors=contrib,
            members=frozenset(self.active),
            version=self.batch_version,
            record=len(self.out.averaging_rounds) - 1,
            tau=tau,
        )
        self.acc[:] = 0.0
        # the next batch starts on the parameters currently held
        self.batch_version = self.committed

    def _commit(self, t: float) -> None:
        avg = self.avg
        self.avg = None
        self.committed += 1
        k = self.committed
        self.out.steps.append(
            StepRecord(
                k, float(t), avg.samples, tuple(self.ids[i] for i in avg.contributors), (k - 1) - avg.version, self.current_round
            )
        )
        if not self.cfg.dpu:
            self.batch_version = self.committed


def simulate_training(
    spec: CollaborationSpec, trace: ChurnTrace, config: TrainingConfig | None = None
) -> SimTrace:
    cfg = config or TrainingConfig()
    if cfg.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
    return _Sim(spec, trace, cfg).run()


@dataclass(frozen=True)
class StrategyRow:
    algorithm: str
    round_seconds: float
    steps_per_hour: float


def compare_strategies(
    spec: CollaborationSpec, hours: float = 1.0, config: TrainingConfig | None = None
) -> list[StrategyRow]:
    base = config or TrainingConfig()
    trace = ChurnTrace.static([p.id for p in spec.peers], hours * 3600.0)
    rows = []
    for algo in ALGORITHMS:
        cfg = TrainingConfig(**{**base.__dict__, "algorithm": algo})
        secs = simulate_averaging(spec, algo)
        sim = simulate_training(spec, trace, cfg)
        rows.append(StrategyRow(algo, secs, sim.steps_per_hour()))
    return rows
