import math

import numpy as np
import pytest

from swarm_planner import presets, strategy
from swarm_planner.core import CollaborationSpec, PeerSpec, homogeneous
from oracles import (
    binary_enumeration_xi,
    butterfly_seconds,
    fraction_grid_xi,
    parameter_server_seconds,
    random_small_spec,
)

P_RESNET = 25.6e6 * 32


def test_butterfly_recovery():
    asg = strategy.solve_strategy(presets.homogeneous8())
    assert all(asg.compute)
    assert np.allclose(asg.fractions, 1 / 8, atol=1e-6)
    asg.check_invariants()


def test_parameter_server_recovery():
    spec = presets.with_fat_server(presets.homogeneous8())
    asg = strategy.solve_strategy(spec)
    assert asg.fractions[-1] >= 0.9
    assert not asg.compute[-1]
    assert asg.roles()[-1] == "aggregate"


def test_two_peers_generous_bandwidth():
    spec = CollaborationSpec((PeerSpec("a", 1, 1e12, 1e12), PeerSpec("b", 1, 1e12, 1e12)), 2, 25.6e6)
    assert strategy.solve_strategy(spec).throughput == pytest.approx(1.0)


def test_no_computing_peers_raises():
    peers = tuple(PeerSpec(f"p{i}", 0.0, 1e9, 1e9, can_compute=False) for i in range(2))
    with pytest.raises(strategy.NoComputingPeers):
        strategy.solve_strategy(CollaborationSpec(peers, 2, 1e6))


def test_invalid_spec_raises():
    spec = homogeneous(2)
    bad = spec.replace(peers=(spec.peers[0].with_(download_bps=0.0), spec.peers[1]))
    with pytest.raises(strategy.InvalidSpec):
        strategy.build_lp(bad)


def test_build_lp_row_families():
    spec = CollaborationSpec(homogeneous(2).peers, 2, 1e6, links=(((0, 1), 1e9), ((1, 0), 1e9)))
    prob = strategy.build_lp(spec)
    sizes = {k: len(v) for k, v in prob.families.items()}
    assert sizes == {"compute": 1, "aggregate": 2, "partition": 8, "download": 2, "upload": 2, "link": 2}
    assert prob.program.n_rows == 17
    assert prob.n_vars == 2 * 4 + 2 + 1


@pytest.mark.parametrize("seed", range(40))
def test_xi_recomputed_from_matrices(seed):
    spec = random_small_spec(np.random.default_rng(seed), max_peers=6)
    asg = strategy.solve_strategy(spec)
    asg.check_invariants()
    again = strategy.xi_from_matrices(spec, asg)
    assert asg.throughput == pytest.approx(again, rel=1e-6)


@pytest.mark.parametrize("seed", range(30))
def test_adding_helper_never_hurts(seed):
    rng = np.random.default_rng(500 + seed)
    spec = random_small_spec(rng, max_peers=5)
    bw = float(rng.uniform(0.1, 5.0)) * 1e9
    bigger = spec.replace(peers=spec.peers + (PeerSpec("helper", 0.0, bw, bw, can_compute=False),))
    before = strategy.solve_strategy(spec).throughput
    after = strategy.solve_strategy(bigger).throughput
    assert after >= before * (1 - 1e-9)


@pytest.mark.parametrize("n", [2, 3, 5, 8, 12])
def test_homogeneous_symmetry(n):
    asg = strategy.solve_strategy(homogeneous(n, bandwidth_bps=3e8))
    assert asg.fractions.max() - asg.fractions.min() <= 1e-6


def test_client_mode_gets_nothing_incoming():
    peers = homogeneous(4).peers
    peers = peers[:2] + (peers[2].with_(client_mode=True),) + peers[3:]
    asg = strategy.solve_strategy(CollaborationSpec(peers, 4, 25.6e6))
    assert asg.fractions[2] == 0.0
    assert np.all(np.delete(asg.a[:, 2], 2) == 0.0)
    assert np.all(np.delete(asg.g[:, 2], 2) == 0.0)
    assert 2 not in asg.receivers


@pytest.mark.parametrize("seed", range(25))
def test_relaxation_dominates_binary_enumeration(seed):
    spec = random_small_spec(np.random.default_rng(2000 + seed))
    _, sol = strategy.solve_relaxation(spec)
    assert sol.objective_value >= binary_enumeration_xi(spec) * (1 - 1e-6)


@pytest.mark.parametrize("seed", range(12))
def test_all_policy_matches_fraction_grid(seed):
    rng = np.random.default_rng(3000 + seed)
    spec = random_small_spec(rng).replace(links=())
    if spec.n == 1:
        spec = homogeneous(2, bandwidth_bps=float(rng.uniform(0.2, 2)) * 1e9)
    grid, _ = fraction_grid_xi(spec, step=0.005)
    xi = strategy.solve_strategy(spec).throughput
    # the grid can only undershoot the continuous optimum
    assert grid <= xi * (1 + 1e-9)
    assert xi <= grid * 1.02


def test_policies_are_ordered():
    spec = presets.setup_d().subset(range(0, 17, 2))
    everyone = strategy.solve_strategy(spec, "all")
    best = strategy.solve_strategy(spec, "exhaustive")
    relaxed = strategy.solve_strategy(spec, "relaxed")
    assert best.throughput >= everyone.throughput * (1 - 1e-9)
    assert relaxed.relaxation_bound >= best.throughput * (1 - 1e-6)
    for asg in (everyone, best, relaxed):
        asg.check_invariants()


def test_allreduce_closed_form():
    assert strategy.throughput_allreduce(presets.homogeneous8()) == pytest.approx(butterfly_seconds(P_RESNET, [1e9] * 8))
    assert strategy.throughput_allreduce(presets.homogeneous8()) == pytest.approx(1.4336, abs=1e-4)
    assert strategy.throughput_allreduce(presets.setup_b()) == pytest.approx(7.68, abs=1e-2)
    unlimited = homogeneous(2, bandwidth_bps=math.inf)
    assert strategy.throughput_allreduce(unlimited) == 0.0
    with pytest.raises(ValueError):
        strategy.throughput_allreduce(homogeneous(1))


def test_parameter_server_closed_form():
    spec = presets.homogeneous8()
    got = strategy.throughput_parameter_server(spec, 0)
    assert got == pytest.approx(parameter_server_seconds(P_RESNET, (1e9, 1e9), [(1e9, 1e9)] * 7))
    assert got == pytest.approx(5.7344, abs=1e-4)
    one = CollaborationSpec((PeerSpec("w", 1, 2e9, 1e9), PeerSpec("s", 0, math.inf, math.inf, can_compute=False)), 1, 25.6e6)
    assert strategy.throughput_parameter_server(one, 1) == pytest.approx(P_RESNET / 1e9)
    with pytest.raises(IndexError):
        strategy.throughput_parameter_server(spec, 8)


def test_adaptive_setup_d_uses_fast_peer():
    spec = presets.setup_d()
    asg = strategy.solve_strategy(spec)
    fast = spec.index_of("fast0")
    assert int(np.argmax(asg.fractions)) == fast
    assert asg.fractions[fast] > 0.5
