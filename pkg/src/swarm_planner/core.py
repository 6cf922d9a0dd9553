"""Domain types shared by the planner, the simulator and the CLI.

Bandwidths are bits per second, compute rates are samples per second. Peer order
is the list order and every matrix in the package is indexed by it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

MBPS = 1e6
UNLIMITED = math.inf


class SpecError(ValueError):
    """Raised when a collaboration document cannot be parsed."""


@dataclass(frozen=True)
class PeerSpec:
    id: str
    samples_per_sec: float
    download_bps: float
    upload_bps: float
    can_compute: bool = True
    client_mode: bool = False
    failure_rate: float = 0.0

    def with_(self, **changes) -> "PeerSpec":
        fields = {**self.__dict__, **changes}
        return PeerSpec(**fields)


@dataclass(frozen=True)
class Violation:
    peer_index: int | None
    field: str
    message: str

    def __str__(self) -> str:
        where = "collaboration" if self.peer_index is None else f"peer {self.peer_index}"
        return f"{where}: {self.field}: {self.message}"


@dataclass(frozen=True)
class CollaborationSpec:
    peers: tuple[PeerSpec, ...]
    batch_size: float
    param_count: float
    bits_per_param: int = 32
    # ((from_index, to_index), bits/s); pairs not listed are unlimited
    links: tuple[tuple[tuple[int, int], float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "peers", tuple(self.peers))
        if isinstance(self.links, Mapping):
            items = self.links.items()
        else:
            items = self.links
        object.__setattr__(self, "links", tuple(sorted((tuple(k), float(v)) for k, v in items)))

    @property
    def n(self) -> int:
        return len(self.peers)

    @property
    def payload_bits(self) -> float:
        """Size of one full gradient vector in bits."""
        return float(self.param_count) * self.bits_per_param

    def link_matrix(self) -> np.ndarray:
        t = np.full((self.n, self.n), UNLIMITED)
        for (i, j), bps in self.links:
            t[i, j] = bps
        np.fill_diagonal(t, UNLIMITED)
        return t

    def download(self) -> np.ndarray:
        return np.array([p.download_bps for p in self.peers], dtype=float)

    def upload(self) -> np.ndarray:
        return np.array([p.upload_bps for p in self.peers], dtype=float)

    def rates(self) -> np.ndarray:
        return np.array([p.samples_per_sec for p in self.peers], dtype=float)

    def index_of(self, peer_id: str) -> int:
        for i, p in enumerate(self.peers):
            if p.id == peer_id:
                return i
        raise KeyError(peer_id)

    def subset(self, indices: Sequence[int]) -> "CollaborationSpec":
        """Spec restricted to ``indices`` (in that order), remapping link limits."""
        remap = {old: new for new, old in enumerate(indices)}
        links = [((remap[i], remap[j]), bps) for (i, j), bps in self.links if i in remap and j in remap]
        return CollaborationSpec(
            peers=tuple(self.peers[i] for i in indices),
            batch_size=self.batch_size,
            param_count=self.param_count,
            bits_per_param=self.bits_per_param,
            links=tuple(links),
        )

    def replace(self, **changes) -> "CollaborationSpec":
        fields = dict(
            peers=self.peers,
            batch_size=self.batch_size,
            param_count=self.param_count,
            bits_per_param=self.bits_per_param,
            links=self.links,
        )
        fields.update(changes)
        return CollaborationSpec(**fields)


def validate(spec: CollaborationSpec) -> list[Violation]:
    """Return every invariant violation of ``spec``; an empty list means valid.

    Violations come out in peer order, then field order, so the result is
    stable for a given input.
    """
    out: list[Violation] = []
    seen_ids: set[str] = set()
    for i, p in enumerate(spec.peers):
        if p.id in seen_ids:
            out.append(Violation(i, "id", f"duplicate peer id {p.id!r}"))
        seen_ids.add(p.id)
        if not (p.samples_per_sec >= 0) or math.isinf(p.samples_per_sec):
            out.append(Violation(i, "samples_per_sec", "compute rate must be finite and >= 0"))
        if not p.can_compute and p.samples_per_sec != 0:
            out.append(Violation(i, "samples_per_sec", "peer that cannot compute must have zero compute rate"))
        if not (p.download_bps > 0):
            out.append(Violation(i, "download_bps", "download bandwidth must be > 0"))
        if not (p.upload_bps > 0):
            out.append(Violation(i, "upload_bps", "upload bandwidth must be > 0"))
        if not (0.0 <= p.failure_rate < 1.0):
            out.append(Violation(i, "failure_rate", "failure_rate out of range [0, 1)"))
    if not any(p.can_compute for p in spec.peers):
        out.append(Violation(None, "peers", "no computing peers"))
    if not (spec.batch_size > 0):
        out.append(Violation(None, "batch_size", "target batch size must be > 0"))
    if not (spec.param_count > 0):
        out.append(Violation(None, "param_count", "parameter count must be > 0"))
    if not (spec.bits_per_param > 0):
        out.append(Violation(None, "bits_per_param", "bits per parameter must be > 0"))
    for (i, j), bps in spec.links:
        if not (0 <= i < spec.n and 0 <= j < spec.n):
            out.append(Violation(None, "links", f"link ({i}, {j}) references an unknown peer"))
        elif not (bps >= 0):
            out.append(Violation(None, "links", f"link ({i}, {j}) has negative capacity"))
    return out


@dataclass(frozen=True)
class StrategyAssignment:
    """Solved averaging strategy.

    ``a[i, j]`` is the rate (bits/s) at which peer i sends gradient partitions to
    reducer j, ``g[i, j]`` the rate at which reducer i returns averaged
    partitions to peer j. ``throughput`` is optimizer steps per second.
    """

    a: np.ndarray
    g: np.ndarray
    c: np.ndarray
    compute: tuple[bool, ...]
    throughput: float
    compute_throughput: float
    comm_throughput: float
    fractions: np.ndarray
    payload_bits: float
    receivers: tuple[int, ...]
    policy: str = "all"
    relaxation_bound: float | None = None
    lp_iterations: int = 0
    peer_ids: tuple[str, ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.fractions)

    @property
    def round_seconds(self) -> float:
        """Duration of one pure-communication averaging round."""
        if math.isinf(self.comm_throughput):
            return 0.0
        return 1.0 / self.comm_throughput

    def roles(self) -> list[str]:
        roles = []
        for i in range(self.n):
            comp = self.compute[i]
            agg = self.fractions[i] > 1e-9
            roles.append("both" if comp and agg else "compute" if comp else "aggregate" if agg else "idle")
        return roles

    def check_invariants(self, rtol: float = 1e-6) -> None:
        """Assert the assignment invariants; raises AssertionError on violation."""
        assert np.all(self.a >= -1e-9 * max(1.0, float(np.abs(self.a).max(initial=0)))), "negative a"
        assert np.all(self.g >= -1e-9 * max(1.0, float(np.abs(self.g).max(initial=0)))), "negative g"
        assert abs(float(self.fractions.sum()) - 1.0) <= 1e-9, "fractions do not sum to 1"
        assert np.all(self.fractions >= 0), "negative fraction"
        slack = 1.0 + rtol
        assert self.throughput <= self.compute_throughput * slack + 1e-12, "xi exceeds compute bound"
        if self.receivers:
            got = self.g.sum(axis=0)[list(self.receivers)].min() / self.payload_bits
            if not math.isinf(self.comm_throughput):
                assert self.throughput <= got * slack + 1e-12, "xi exceeds aggregation bound"

    def to_json(self) -> dict[str, Any]:
        return {
            "peers": list(self.peer_ids),
            "xi": self.throughput,
            "compute_throughput": self.compute_throughput,
            "comm_throughput": None if math.isinf(self.comm_throughput) else self.comm_throughput,
            "round_seconds": self.round_seconds,
            "c": [int(x) for x in self.compute],
            "c_raw": [float(x) for x in self.c],
            "fractions": [float(x) for x in self.fractions],
            "a": [[float(x) for x in row] for row in self.a],
            "g": [[float(x) for x in row] for row in self.g],
            "policy": self.policy,
            "relaxation_bound": self.relaxation_bound,
        }


# -- JSON ---------------------------------------------------------------------

def _mbps(value: Any) -> float:
    if value is None or value == "inf" or value == "unlimited":
        return UNLIMITED
    return float(value) * MBPS


def spec_from_json(doc: Mapping[str, Any]) -> CollaborationSpec:
    try:
        peers = []
        for raw in doc["peers"]:
            can = bool(raw.get("can_compute", True))
            peers.append(
                PeerSpec(
                    id=str(raw["id"]),
                    samples_per_sec=float(raw.get("samples_per_sec", 0.0)),
                    download_bps=_mbps(raw["download_mbps"]),
                    upload_bps=_mbps(raw["upload_mbps"]),
                    can_compute=can,
                    client_mode=bool(raw.get("client_mode", False)),
                    failure_rate=float(raw.get("failure_rate", 0.0)),
                )
            )
        ids = {p.id: i for i, p in enumerate(peers)}
        links = []
        for raw in doc.get("links", []):
            links.append(((ids[str(raw["from"])], ids[str(raw["to"])]), _mbps(raw["mbps"])))
        return CollaborationSpec(
            peers=tuple(peers),
            batch_size=float(doc["batch_size"]),
            param_count=float(doc["param_count"]),
            bits_per_param=int(doc.get("bits_per_param", 32)),
            links=tuple(links),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"malformed collaboration document: {exc!r}") from exc


def _to_mbps(bps: float) -> float | str:
    return "inf" if math.isinf(bps) else bps / MBPS


def spec_to_json(spec: CollaborationSpec) -> dict[str, Any]:
    return {
        "peers": [
            {
                "id": p.id,
                "samples_per_sec": p.samples_per_sec,
                "download_mbps": _to_mbps(p.download_bps),
                "upload_mbps": _to_mbps(p.upload_bps),
                "can_compute": p.can_compute,
                "client_mode": p.client_mode,
                "failure_rate": p.failure_rate,
            }
            for p in spec.peers
        ],
        "batch_size": spec.batch_size,
        "param_count": spec.param_count,
        "bits_per_param": spec.bits_per_param,
        "links": [
            {"from": spec.peers[i].id, "to": spec.peers[j].id, "mbps": _to_mbps(bps)}
            for (i, j), bps in spec.links
        ],
    }


def load_spec(path) -> CollaborationSpec:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise SpecError(str(exc)) from exc
    return spec_from_json(doc)


def homogeneous(
    n: int,
    *,
    samples_per_sec: float = 1.0,
    bandwidth_bps: float = 1e9,
    batch_size: float | None = None,
    param_count: float = 25.6e6,
    bits_per_param: int = 32,
    prefix: str = "peer",
) -> CollaborationSpec:
    """``n`` identical computing peers with symmetric bandwidth."""
    peers = tuple(
        PeerSpec(f"{prefix}{i}", samples_per_sec, bandwidth_bps, bandwidth_bps) for i in range(n)
    )
    return CollaborationSpec(
        peers=peers,
        batch_size=float(n) if batch_size is None else batch_size,
        param_count=param_count,
        bits_per_param=bits_per_param,
    )


def concat_peers(*groups: Iterable[PeerSpec]) -> tuple[PeerSpec, ...]:
    out: list[PeerSpec] = []
    for grp in groups:
        out.extend(grp)
    return tuple(out)
