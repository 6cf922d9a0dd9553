"""Independent reference computations used to cross-check the package."""
from __future__ import annotations

import itertools
import math

import numpy as np

from swarm_planner import lp, strategy
from swarm_planner.core import CollaborationSpec, PeerSpec


# -- linear programs -------------------------------------------------------------

def random_bounded_lp(rng: np.random.Generator, max_vars: int = 6) -> lp.LinearProgram:
    """Random box-bounded program; about one in four carries an equality row."""
    v = int(rng.integers(1, max_vars + 1))
    rows = int(rng.integers(1, 6))
    A = rng.normal(size=(rows, v)).round(3)
    rhs = rng.uniform(0.5, 5.0, size=rows).round(3)
    senses = [lp.LE] * rows
    lo = np.zeros(v)
    hi = rng.uniform(1.0, 6.0, size=v).round(2)
    if rng.random() < 0.25:
        # equality through an interior point keeps most of these feasible
        point = rng.uniform(0.0, 1.0, size=v) * hi
        row = rng.normal(size=v).round(3)
        A = np.vstack([A, row])
        rhs = np.append(rhs, round(float(row @ point), 6))
        senses.append(lp.EQ)
    obj = rng.normal(size=v).round(3)
    return lp.LinearProgram(obj, A, tuple(senses), rhs, lo, hi)


def vertex_enumeration(program: lp.LinearProgram, tol: float = 1e-9):
    """Best objective over all basic feasible points, or None when infeasible.

    Every variable here has a finite box, so the optimum sits at a vertex
    obtained by making ``V`` constraints tight.
    """
    A = program.dense()
    v = program.n_vars
    cons = []  # (row, rhs, must_be_tight)
    for r in range(A.shape[0]):
        cons.append((A[r], program.rhs[r], program.senses[r] == lp.EQ))
    for j in range(v):
        e = np.zeros(v)
        e[j] = 1.0
        cons.append((e, program.upper[j], False))
        cons.append((-e, -program.lower[j], False))
    forced = [k for k, c in enumerate(cons) if c[2]]
    optional = [k for k, c in enumerate(cons) if not c[2]]
    best = None
    for extra in itertools.combinations(optional, v - len(forced)):
        idx = forced + list(extra)
        M = np.array([cons[k][0] for k in idx])
        b = np.array([cons[k][1] for k in idx])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b)
        scale = 1.0 + np.abs(x).max()
        ok = True
        for row, rhs, eq in cons:
            lhs = row @ x
            if eq and abs(lhs - rhs) > tol * scale * 100:
                ok = False
            elif not eq and lhs > rhs + tol * scale * 100:
                ok = False
            if not ok:
                break
        if ok:
            val = float(program.objective @ x)
            best = val if best is None else max(best, val)
    return best


# -- strategy --------------------------------------------------------------------

def random_small_spec(rng: np.random.Generator, max_peers: int = 3) -> CollaborationSpec:
    n = int(rng.integers(1, max_peers + 1))
    peers = []
    for i in range(n):
        can = bool(rng.random() < 0.8) or i == 0
        peers.append(PeerSpec(
            f"p{i}",
            float(rng.uniform(0.5, 3.0)) if can else 0.0,
            float(rng.uniform(0.2, 3.0)) * 1e9,
            float(rng.uniform(0.2, 3.0)) * 1e9,
            can_compute=can,
            client_mode=bool(rng.random() < 0.2) and i > 0,
        ))
    links = tuple(
        ((i, j), float(rng.uniform(0.2, 3.0)) * 1e9)
        for i in range(n) for j in range(n) if i != j and rng.random() < 0.3
    )
    return CollaborationSpec(tuple(peers), float(rng.uniform(1.0, 6.0)), 1e8, 32, links)


def binary_enumeration_xi(spec: CollaborationSpec) -> float:
    """max over nonzero binary compute vectors of the program with c pinned.

    Solved with the package's own simplex so the route is independent of the
    HiGHS solve used for the relaxation.
    """
    prob = strategy.build_lp(spec)
    capable = [i for i, p in enumerate(spec.peers) if p.can_compute]
    best = -math.inf
    for bits in itertools.product((0.0, 1.0), repeat=len(capable)):
        if not any(bits):
            continue
        c = [0.0] * spec.n
        for k, b in zip(capable, bits):
            c[k] = b
        sol = lp.solve(prob.with_fixed_c(c), method="simplex")
        if sol.ok:
            best = max(best, sol.objective_value)
    return best


def fraction_grid_xi(spec: CollaborationSpec, step: float = 0.005) -> tuple[float, np.ndarray]:
    """Grid search over aggregation fractions for n <= 3, no per-link limits.

    Every capable peer computes. Peer j receives the share ``f_i`` of every
    other computing peer's gradient at reducer i and later downloads ``f_i`` of
    the average from each other reducer.
    """
    n = spec.n
    assert n <= 3 and not spec.links
    P = spec.payload_bits
    comp = [p.can_compute for p in spec.peers]
    recv = [i for i in range(n) if comp[i] and not spec.peers[i].client_mode]
    eligible = [not p.client_mode for p in spec.peers]
    F = sum(p.samples_per_sec for p in spec.peers) / spec.batch_size
    ks = int(round(1 / step))
    best, arg = -1.0, None
    for parts in itertools.product(range(ks + 1), repeat=n - 1):
        last = ks - sum(parts)
        if last < 0:
            continue
        f = np.array(list(parts) + [last], dtype=float) / ks
        if any(f[i] > 0 and not eligible[i] for i in range(n)):
            continue
        up = np.zeros(n)
        down = np.zeros(n)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                if comp[i]:
                    up[i] += f[j] * P
                    down[j] += f[j] * P
                if j in recv:
                    up[i] += f[i] * P
                    down[j] += f[i] * P
        rates = [spec.peers[i].upload_bps / up[i] for i in range(n) if up[i] > 0]
        rates += [spec.peers[i].download_bps / down[i] for i in range(n) if down[i] > 0]
        xi = min([F] + rates)
        if xi > best:
            best, arg = xi, f
    return best, arg


# -- closed-form round times -----------------------------------------------------

def butterfly_seconds(P_bits: float, bandwidths: list[float]) -> float:
    """Equal shares, every peer sends and receives (n-1)/n of P twice."""
    n = len(bandwidths)
    return max(2 * P_bits * (n - 1) / n / b for b in bandwidths)


def parameter_server_seconds(P_bits: float, server: tuple[float, float], workers: list[tuple[float, float]]) -> float:
    """Server gathers and broadcasts; ``(down, up)`` pairs. Full duplex lets
    the gather and broadcast legs overlap, so the slower leg sets the round."""
    k = len(workers)
    gather = max([k * P_bits / server[0]] + [P_bits / up for _, up in workers])
    bcast = max([k * P_bits / server[1]] + [P_bits / down for down, _ in workers])
    return max(gather, bcast)
