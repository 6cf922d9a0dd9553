"""Named collaborations used by the tests, the CLI and the README examples."""
from __future__ import annotations

from . import strategy
from .core import CollaborationSpec, PeerSpec, homogeneous

GBPS = 1e9
MBPS = 1e6

RESNET50_PARAMS = 25.6e6
ALBERT_LARGE_PARAMS = 17e6

# averaging round seconds measured for ResNet-50 (AR, PS, adaptive)
REFERENCE_ROUND_SECONDS = {
    "A": (1.19, 4.73, 1.20),
    "B": (5.3, 39.6, 5.3),
    "C": (5.69, 14.1, 2.96),
    "D": (5.3, 3.22, 3.18),
}


def _peers(prefix: str, count: int, bps: float, rate: float = 1.0) -> tuple[PeerSpec, ...]:
    return tuple(PeerSpec(f"{prefix}{i}", rate, bps, bps) for i in range(count))


def _collab(peers, param_count=RESNET50_PARAMS) -> CollaborationSpec:
    return CollaborationSpec(peers=tuple(peers), batch_size=float(len(peers)), param_count=param_count)


def setup_a() -> CollaborationSpec:
    return _collab(_peers("server", 8, 1 * GBPS))


def setup_b() -> CollaborationSpec:
    return _collab(_peers("ws", 16, 0.2 * GBPS))


def setup_c() -> CollaborationSpec:
    return _collab(_peers("server", 8, 1 * GBPS) + _peers("ws", 16, 0.2 * GBPS))


def setup_d() -> CollaborationSpec:
    return _collab(_peers("ws", 16, 0.2 * GBPS) + _peers("fast", 1, 2.5 * GBPS))


BENCHMARK_SETUPS = {"A": setup_a, "B": setup_b, "C": setup_c, "D": setup_d}

# peer used as the dedicated server in the PS column: the best-connected one
BENCHMARK_PS_SERVER = {"A": 0, "B": 0, "C": 0, "D": 16}


def homogeneous8() -> CollaborationSpec:
    return homogeneous(8, samples_per_sec=1.0, bandwidth_bps=1 * GBPS, batch_size=8)


def with_fat_server(spec: CollaborationSpec, factor: float = 100.0) -> CollaborationSpec:
    """Append a peer that cannot compute but has ``factor`` times the top bandwidth."""
    top = max(max(p.download_bps, p.upload_bps) for p in spec.peers)
    srv = PeerSpec("server", 0.0, factor * top, factor * top, can_compute=False)
    return spec.replace(peers=spec.peers + (srv,))


def albert_high_bandwidth(samples_per_sec: float, batch_size: float) -> CollaborationSpec:
    peers = _peers("t4-", 16, 25 * GBPS, samples_per_sec)
    return CollaborationSpec(peers, batch_size, ALBERT_LARGE_PARAMS)


def albert_heterogeneous(samples_per_sec: float, batch_size: float) -> CollaborationSpec:
    peers = (
        _peers("t4-200m-", 4, 200 * MBPS, samples_per_sec)
        + _peers("t4-100m-", 8, 100 * MBPS, samples_per_sec)
        + _peers("t4-50m-", 4, 50 * MBPS, samples_per_sec)
    )
    return CollaborationSpec(peers, batch_size, ALBERT_LARGE_PARAMS)


def albert_auxiliary(samples_per_sec: float, batch_size: float) -> CollaborationSpec:
    base = albert_heterogeneous(samples_per_sec, batch_size)
    aux = tuple(PeerSpec(f"cpu{i}", 0.0, 1 * GBPS, 1 * GBPS, can_compute=False) for i in range(4))
    return base.replace(peers=base.peers + aux)


def albert_part_time(samples_per_sec: float, batch_size: float) -> CollaborationSpec:
    base = albert_auxiliary(samples_per_sec, batch_size)
    extra = _peers("part", 8, 100 * MBPS, samples_per_sec)
    return base.replace(peers=base.peers + extra)


def calibrated_compute_seconds(slowdown: float = 2.5, batch_size: float = 4096) -> float:
    """Per-batch compute time at which naive all-reduce on the heterogeneous
    fleet runs ``slowdown`` times slower than the well-connected fleet.

    Both fleets pipeline compute with averaging, so a step lasts
    ``max(T_compute, T_round)``.
    """
    naive = albert_heterogeneous(1.0, batch_size)
    fast = albert_high_bandwidth(1.0, batch_size)
    t_naive = strategy.throughput_allreduce(naive)
    t_fast = strategy.throughput_allreduce(fast)
    t_c = t_naive / slowdown
    if t_c < t_fast:
        raise ValueError("slowdown too large for this model")
    return t_c


def calibrated_samples_per_sec(slowdown: float = 2.5, batch_size: float = 4096, peers: int = 16) -> float:
    return batch_size / (peers * calibrated_compute_seconds(slowdown, batch_size))
