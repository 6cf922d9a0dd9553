"""Averaging-strategy optimizer and closed-form baseline timings.

Flows inside the programs are expressed in payload vectors per second (bits/s
divided by the payload size) which keeps coefficients near unity. Returned
matrices are converted back to bits/s.

Three policies choose which peers compute gradients:

``all``
    every capable peer computes; one flow program maximizes the
    communication rate for that fixed set.
``exhaustive``
    enumerate every subset of capable peers and keep the best; exact, but
    exponential, so limited to small collaborations.
``relaxed``
    solve the full program with continuous compute indicators, round them at
    ``1 - 1e-6`` and re-solve the flows for the rounded set.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import lp as lpmod
from .core import CollaborationSpec, StrategyAssignment, validate

ROUND_THRESHOLD = 1.0 - 1e-6
EXHAUSTIVE_LIMIT = 12


class InvalidSpec(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class NoComputingPeers(InvalidSpec):
    def __init__(self):
        ValueError.__init__(self, "no computing peers")
        self.violations = []


class LpInfeasible(RuntimeError):
    pass


class _Rows:
    """Sparse row accumulator."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self.r: list[int] = []
        self.c: list[int] = []
        self.v: list[float] = []
        self.rhs: list[float] = []
        self.families: dict[str, list[int]] = {}

    def add(self, family: str, entries, rhs: float) -> None:
        row = len(self.rhs)
        for col, val in entries:
            self.r.append(row)
            self.c.append(col)
            self.v.append(val)
        self.rhs.append(rhs)
        self.families.setdefault(family, []).append(row)

    def matrix(self):
        return sp.csr_matrix((self.v, (self.r, self.c)), shape=(len(self.rhs), self.n_vars))


@dataclass(frozen=True)
class StrategyProblem:
    """The relaxed program over ``a``, ``g``, ``c`` and the surrogate ``xi``."""

    spec: CollaborationSpec
    program: lpmod.LinearProgram
    families: dict[str, tuple[int, ...]] = field(repr=False)

    @property
    def n(self) -> int:
        return self.spec.n

    def a(self, i: int, j: int) -> int:
        return i * self.n + j

    def g(self, i: int, j: int) -> int:
        return self.n * self.n + i * self.n + j

    def c(self, i: int) -> int:
        return 2 * self.n * self.n + i

    @property
    def xi(self) -> int:
        return 2 * self.n * self.n + self.n

    @property
    def n_vars(self) -> int:
        return 2 * self.n * self.n + self.n + 1

    def with_fixed_c(self, c: Sequence[float]) -> lpmod.LinearProgram:
        """Same program with every compute indicator pinned to ``c``."""
        lo, hi = self.program.lower.copy(), self.program.upper.copy()
        for i, ci in enumerate(c):
            lo[self.c(i)] = hi[self.c(i)] = float(ci)
        return lpmod.LinearProgram(
            self.program.objective, self.program.A, self.program.senses, self.program.rhs, lo, hi
        )


def _check(spec: CollaborationSpec) -> None:
    problems = validate(spec)
    if problems:
        if all(v.field == "peers" for v in problems):
            raise NoComputingPeers()
        raise InvalidSpec(problems)


def receivers_of(spec: CollaborationSpec, compute: Sequence[bool] | None = None) -> tuple[int, ...]:
    """Peers that must download the averaged result: computing and reachable."""
    if compute is None:
        compute = [p.can_compute for p in spec.peers]
    return tuple(i for i, p in enumerate(spec.peers) if compute[i] and not p.client_mode)


def build_lp(spec: CollaborationSpec) -> StrategyProblem:
    _check(spec)
    n = spec.n
    P = spec.payload_bits
    s = spec.rates()
    d = spec.download() / P
    u = spec.upload() / P
    t = spec.link_matrix() / P
    B = float(spec.batch_size)
    V = 2 * n * n + n + 1
    A = lambda i, j: i * n + j
    G = lambda i, j: n * n + i * n + j
    C = lambda i: 2 * n * n + i
    X = 2 * n * n + n
    # stand-in for an infinite download in the big-M term; no flow ever needs
    # to exceed the best possible step rate
    f_max = float(s.sum()) / B
    big_m = np.where(np.isfinite(d), d, f_max)
    capable = [k for k, p in enumerate(spec.peers) if p.can_compute]

    rows = _Rows(V)
    rows.add("compute", [(X, 1.0)] + [(C(i), -s[i] / B) for i in range(n) if s[i]], 0.0)
    for i in receivers_of(spec):
        rows.add("aggregate", [(X, 1.0)] + [(G(j, i), -1.0) for j in range(n)], 0.0)
    for i in range(n):
        for j in range(n):
            for k in capable:
                rows.add("partition", [(G(i, j), 1.0), (A(k, i), -1.0), (C(k), big_m[i])], big_m[i])
    for i in range(n):
        if math.isfinite(d[i]):
            rows.add("download", [(A(j, i), 1.0) for j in range(n) if j != i]
                     + [(G(j, i), 1.0) for j in range(n) if j != i], d[i])
    for i in range(n):
        if math.isfinite(u[i]):
            rows.add("upload", [(A(i, j), 1.0) for j in range(n) if j != i]
                     + [(G(i, j), 1.0) for j in range(n) if j != i], u[i])
    for i in range(n):
        for j in range(n):
            if i != j and math.isfinite(t[i, j]):
                rows.add("link", [(A(i, j), 1.0), (G(i, j), 1.0)], t[i, j])

    lo = np.zeros(V)
    hi = np.full(V, np.inf)
    for i, p in enumerate(spec.peers):
        hi[C(i)] = 1.0 if p.can_compute else 0.0
        if p.client_mode:
            for j in range(n):
                if j != i:
                    hi[A(j, i)] = hi[G(j, i)] = 0.0
    obj = np.zeros(V)
    obj[X] = 1.0
    program = lpmod.LinearProgram(
        obj, rows.matrix(), (lpmod.LE,) * len(rows.rhs), np.array(rows.rhs), lo, hi
    )
    return StrategyProblem(spec, program, {k: tuple(v) for k, v in rows.families.items()})


# -- fixed compute set ------------------------------------------------------------

@dataclass(frozen=True)
class FlowSolution:
    a: np.ndarray  # vectors/s
    g: np.ndarray
    comm_rate: float  # math.inf when communication never binds
    iterations: int


def _flow_cap(spec: CollaborationSpec) -> float:
    P = spec.payload_bits
    finite = [x for x in np.concatenate([spec.download(), spec.upload()]) if math.isfinite(x)]
    finite += [bps for _, bps in spec.links if math.isfinite(bps)]
    return 4.0 * sum(finite) / P + 1.0


def solve_flows(spec: CollaborationSpec, compute: Sequence[bool], method: str = "highs") -> FlowSolution:
    """Maximize the pure-communication averaging rate for a fixed compute set.

    Aggregated partitions are tracked through an auxiliary rate ``h_i``: reducer i
    can return at most what it has received from every computing peer.
    """
    n = spec.n
    P = spec.payload_bits
    d = spec.download() / P
    u = spec.upload() / P
    t = spec.link_matrix() / P
    comp = [k for k in range(n) if compute[k]]
    recv = receivers_of(spec, compute)
    nn = n * n
    A = lambda i, j: i * n + j
    G = lambda i, j: nn + i * n + j
    H = lambda i: 2 * nn + i
    Z = 2 * nn + n
    V = 2 * nn + n + 1
    rows = _Rows(V)
    for i in recv:
        rows.add("aggregate", [(Z, 1.0)] + [(G(j, i), -1.0) for j in range(n)], 0.0)
    for i in range(n):
        for k in comp:
            if k != i:
                rows.add("partition", [(H(i), 1.0), (A(k, i), -1.0)], 0.0)
        for j in range(n):
            rows.add("return", [(G(i, j), 1.0), (H(i), -1.0)], 0.0)
    for i in range(n):
        if math.isfinite(d[i]):
            rows.add("download", [(A(j, i), 1.0) for j in range(n) if j != i]
                     + [(G(j, i), 1.0) for j in range(n) if j != i], d[i])
        if math.isfinite(u[i]):
            rows.add("upload", [(A(i, j), 1.0) for j in range(n) if j != i]
                     + [(G(i, j), 1.0) for j in range(n) if j != i], u[i])
    for i in range(n):
        for j in range(n):
            if i != j and math.isfinite(t[i, j]):
                rows.add("link", [(A(i, j), 1.0), (G(i, j), 1.0)], t[i, j])
    cap = _flow_cap(spec)
    lo = np.zeros(V)
    hi = np.full(V, np.inf)
    hi[Z] = cap
    for i in range(n):
        hi[A(i, i)] = 0.0  # in-node transfer is free; reported as h_i below
        if spec.peers[i].client_mode:
            for j in range(n):
                if j != i:
                    hi[A(j, i)] = hi[G(j, i)] = 0.0
    obj = np.zeros(V)
    obj[Z] = 1.0
    program = lpmod.LinearProgram(obj, rows.matrix(), (lpmod.LE,) * len(rows.rhs), np.array(rows.rhs), lo, hi)
    sol = lpmod.solve(program, method=method)
    if not sol.ok:
        raise LpInfeasible(f"flow program returned {sol.status.value}")
    x = sol.x
    a = x[:nn].reshape(n, n).copy()
    g = x[nn:2 * nn].reshape(n, n).copy()
    h = x[2 * nn:2 * nn + n]
    for i in range(n):
        if compute[i]:
            a[i, i] = h[i]
    zeta = x[Z]
    rate = math.inf if zeta >= cap * (1 - 1e-9) else float(zeta)
    return FlowSolution(a, g, rate, sol.iterations)


def compute_rate(spec: CollaborationSpec, compute: Sequence[bool]) -> float:
    s = spec.rates()
    return float(sum(s[i] for i in range(spec.n) if compute[i])) / float(spec.batch_size)


def _fractions(g: np.ndarray, recv: Sequence[int], n: int, eligible: Sequence[bool]) -> np.ndarray:
    if recv:
        eff = g[:, list(recv)].min(axis=1)
    else:
        eff = np.zeros(n)
    eff = np.where(np.asarray(eligible) & (eff > 0), eff, 0.0)
    total = eff.sum()
    if total > 0:
        return eff / total
    pool = [i for i in (recv or range(n)) if eligible[i]] or list(range(n))
    out = np.zeros(n)
    out[pool] = 1.0 / len(pool)
    return out


def _assemble(
    spec: CollaborationSpec,
    compute: Sequence[bool],
    flows: FlowSolution,
    policy: str,
    c_raw: np.ndarray | None = None,
    bound: float | None = None,
) -> StrategyAssignment:
    n = spec.n
    P = spec.payload_bits
    recv = receivers_of(spec, compute)
    f_compute = compute_rate(spec, compute)
    xi = min(f_compute, flows.comm_rate)
    eligible = [not p.client_mode for p in spec.peers]
    fractions = _fractions(flows.g, recv, n, eligible)
    c = np.asarray(c_raw if c_raw is not None else [1.0 if x else 0.0 for x in compute], dtype=float)
    out = StrategyAssignment(
        a=flows.a * P,
        g=flows.g * P,
        c=c,
        compute=tuple(bool(x) for x in compute),
        throughput=float(xi),
        compute_throughput=f_compute,
        comm_throughput=flows.comm_rate,
        fractions=fractions,
        payload_bits=P,
        receivers=recv,
        policy=policy,
        relaxation_bound=bound,
        lp_iterations=flows.iterations,
        peer_ids=tuple(p.id for p in spec.peers),
    )
    return out


def solve_relaxation(spec: CollaborationSpec, method: str = "highs") -> tuple[StrategyProblem, lpmod.LpSolution]:
    problem = build_lp(spec)
    sol = lpmod.solve(problem.program, method=method)
    if not sol.ok:
        raise LpInfeasible(f"strategy program returned {sol.status.value}")
    return problem, sol


def round_compute(c: Sequence[float], threshold: float = ROUND_THRESHOLD) -> tuple[bool, ...]:
    return tuple(bool(x >= threshold) for x in c)


def solve_strategy(spec: CollaborationSpec, policy: str = "all", method: str = "highs") -> StrategyAssignment:
    _check(spec)
    capable = tuple(p.can_compute for p in spec.peers)
    if policy == "all":
        return _assemble(spec, capable, solve_flows(spec, capable, method), "all")
    if policy == "relaxed":
        problem, sol = solve_relaxation(spec, method)
        c_raw = np.array([sol.x[problem.c(i)] for i in range(spec.n)])
        compute = round_compute(c_raw)
        if not any(compute):
            # every indicator is fractional; keep the peers tied at the top
            top = c_raw.max()
            compute = tuple(bool(cap and x >= top - 1e-6) for cap, x in zip(capable, c_raw))
        flows = solve_flows(spec, compute, method)
        return _assemble(spec, compute, flows, "relaxed", c_raw, sol.objective_value)
    if policy == "exhaustive":
        idx = [i for i in range(spec.n) if capable[i]]
        if len(idx) > EXHAUSTIVE_LIMIT:
            raise ValueError(f"exhaustive policy supports at most {EXHAUSTIVE_LIMIT} capable peers")
        best = None
        # larger sets first so ties keep more peers computing
        for size in range(len(idx), 0, -1):
            for chosen in itertools.combinations(idx, size):
                compute = tuple(i in chosen for i in range(spec.n))
                cand = _assemble(spec, compute, solve_flows(spec, compute, method), "exhaustive")
                if best is None or cand.throughput > best.throughput * (1 + 1e-9):
                    best = cand
        return best
    raise ValueError(f"unknown policy {policy!r}")


def comm_round_seconds(spec: CollaborationSpec, method: str = "highs") -> float:
    """Duration of one averaging round when every capable peer contributes."""
    _check(spec)
    capable = tuple(p.can_compute for p in spec.peers)
    rate = solve_flows(spec, capable, method).comm_rate
    return 0.0 if math.isinf(rate) else 1.0 / rate


# -- closed forms ---------------------------------------------------------------

def _incident_link(spec: CollaborationSpec, i: int) -> float:
    t = spec.link_matrix()
    return float(min(t[i, :].min(), t[:, i].min()))


def throughput_allreduce(spec: CollaborationSpec) -> float:
    """Seconds per butterfly all-reduce round (scatter-reduce then all-gather)."""
    n = spec.n
    if n < 2:
        raise ValueError("all-reduce needs at least two peers")
    slowest = min(min(p.download_bps, p.upload_bps, _incident_link(spec, i)) for i, p in enumerate(spec.peers))
    if math.isinf(slowest):
        return 0.0
    return 2.0 * (n - 1) / n * spec.payload_bits / slowest


def throughput_parameter_server(spec: CollaborationSpec, server_index: int) -> float:
    """Seconds per round when peer ``server_index`` gathers and broadcasts everything."""
    if not 0 <= server_index < spec.n:
        raise IndexError(server_index)
    P = spec.payload_bits
    t = spec.link_matrix()
    srv = spec.peers[server_index]
    workers = [i for i in range(spec.n) if i != server_index]
    w = len(workers)
    gather = [w * P / srv.download_bps]
    bcast = [w * P / srv.upload_bps]
    for i in workers:
        p = spec.peers[i]
        gather.append(P / min(p.upload_bps, t[i, server_index]))
        bcast.append(P / min(p.download_bps, t[server_index, i]))
    return float(max(max(gather), max(bcast)))


def best_parameter_server(spec: CollaborationSpec) -> tuple[int, float]:
    """Server choice with the shortest round; ties go to the lowest index."""
    times = [throughput_parameter_server(spec, k) for k in range(spec.n)]
    k = int(np.argmin(times))
    return k, times[k]


def xi_from_matrices(spec: CollaborationSpec, asg: StrategyAssignment) -> float:
    """Recompute the step rate from returned flows and compute flags."""
    f_compute = compute_rate(spec, asg.compute)
    if not asg.receivers or math.isinf(asg.comm_throughput):
        return f_compute
    f_agg = float(asg.g.sum(axis=0)[list(asg.receivers)].min()) / spec.payload_bits
    return min(f_compute, f_agg)

