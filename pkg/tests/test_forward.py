import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinbond.cylinders import CylinderEvent
from spinbond.forward import (
    ModelParams,
    SpinBondState,
    adoption_update,
    edge_flip_rate,
    read_state_file,
    sample_product_state,
    simulate_forward,
    write_state_file,
)
from spinbond.graphs import builtin_graph, uniform_kernel
from spinbond.rng import RngStream

from conftest import striped_state


def test_model_params_validation():
    ModelParams(p=0.0, v=0.0)
    ModelParams(p=1.0, v=3.5)
    with pytest.raises(ValueError, match="p must lie"):
        ModelParams(p=1.2, v=1.0)
    with pytest.raises(ValueError, match="v must be"):
        ModelParams(p=0.5, v=-0.1)


def test_adoption_update_truth_table(k2):
    g, _ = k2
    # adopted sign is neighbor sign times edge sign, for every combination
    for neighbor_sign in (1, -1):
        for edge_sign in (1, -1):
            for own_sign in (1, -1):
                state = SpinBondState(
                    site_signs=np.array([own_sign, neighbor_sign], dtype=np.int8),
                    edge_signs=np.array([edge_sign], dtype=np.int8),
                )
                adoption_update(state, 0, 1, g)
                assert state.site_signs[0] == neighbor_sign * edge_sign
                assert state.site_signs[1] == neighbor_sign


def test_edge_flip_rate_values():
    params = ModelParams(p=0.25, v=2.0)
    assert edge_flip_rate(-1, params) == pytest.approx(0.5)  # v * p
    assert edge_flip_rate(1, params) == pytest.approx(1.5)  # v * (1 - p)
    static = ModelParams(p=0.25, v=0.0)
    assert edge_flip_rate(-1, static) == 0.0
    assert edge_flip_rate(1, static) == 0.0
    with pytest.raises(ValueError):
        edge_flip_rate(0, params)


def test_state_validation(p3):
    g, _ = p3
    good = SpinBondState.constant(g)
    good.validate(g)
    with pytest.raises(ValueError, match="site_signs has shape"):
        SpinBondState(np.ones(2, dtype=np.int8), np.ones(2, dtype=np.int8)).validate(g)
    bad = SpinBondState.constant(g)
    bad.edge_signs[1] = 0
    with pytest.raises(ValueError, match="edge signs must be"):
        bad.validate(g)


def test_simulate_does_not_mutate_initial(p3):
    g, kern = p3
    initial = striped_state(g)
    before = (initial.site_signs.copy(), initial.edge_signs.copy())
    simulate_forward(g, kern, ModelParams(0.4, 1.0), initial, 5.0, RngStream(3))
    assert np.array_equal(initial.site_signs, before[0])
    assert np.array_equal(initial.edge_signs, before[1])


def test_determinism_same_seed(p3):
    g, kern = p3
    params = ModelParams(0.4, 1.0)
    runs = []
    for _ in range(2):
        events = []
        traj = simulate_forward(
            g, kern, params, striped_state(g), 8.0, RngStream(17), record_events=events
        )
        runs.append((traj.final_state, events, traj.event_count))
    assert runs[0][1] == runs[1][1]
    assert runs[0][2] == runs[1][2]
    assert np.array_equal(runs[0][0].site_signs, runs[1][0].site_signs)
    assert np.array_equal(runs[0][0].edge_signs, runs[1][0].edge_signs)
    other = simulate_forward(g, kern, params, striped_state(g), 8.0, RngStream(18))
    assert other.event_count != runs[0][2] or not np.array_equal(
        other.final_state.site_signs, runs[0][0].site_signs
    )


def test_event_times_within_horizon_and_sorted(p3):
    g, kern = p3
    events = []
    simulate_forward(
        g, kern, ModelParams(0.5, 2.0), striped_state(g), 4.0, RngStream(5), record_events=events
    )
    times = [ev[1] for ev in events]
    assert times == sorted(times)
    assert all(0.0 <= t <= 4.0 for t in times)


def test_edge_flip_rate_matches_alternating_rates(k2):
    # in equilibrium an edge flips up at rate v p from minus and down at
    # rate v (1-p) from plus, so the long-run flip rate is 2 v p (1-p)
    g, kern = k2
    p, v, horizon = 0.3, 2.0, 3000.0
    traj = simulate_forward(
        g, kern, ModelParams(p, v), SpinBondState.constant(g), horizon, RngStream(29)
    )
    rate = traj.edge_flip_counts[0] / horizon
    target = 2.0 * v * p * (1.0 - p)
    assert abs(rate - target) < 0.05 * target


def test_edge_marginal_transient_closed_form(p3):
    # from sign -1 an edge is +1 at time t with probability p(1 - e^{-vt})
    g, kern = p3
    p, v, t = 0.3, 1.2, 0.7
    target = p * (1.0 - math.exp(-v * t))
    n = 20000
    stream = RngStream(31)
    hits = 0
    initial = SpinBondState.constant(g, 1, -1)
    for i in range(n):
        traj = simulate_forward(g, kern, ModelParams(p, v), initial, t, stream.substream(i))
        hits += traj.final_state.edge_signs[0] == 1
    se = math.sqrt(target * (1 - target) / n)
    assert abs(hits / n - target) < 3 * se


def test_consensus_absorbs_when_edges_always_refresh_positive(p3):
    g, kern = p3
    params = ModelParams(p=1.0, v=1.0)
    for seed in range(30):
        traj = simulate_forward(
            g, kern, params, SpinBondState.constant(g, -1, -1), 60.0, RngStream(seed)
        )
        final = traj.final_state
        assert np.all(final.edge_signs == 1)
        assert len(set(final.site_signs.tolist())) == 1


def test_checkpoint_rows(p3):
    g, kern = p3
    obs = [CylinderEvent.of(sites={0: 1}), CylinderEvent.of(edges={1: -1})]
    traj = simulate_forward(
        g,
        kern,
        ModelParams(0.5, 1.0),
        striped_state(g),
        2.0,
        RngStream(7),
        checkpoint_times=[0.0, 1.0, 2.0],
        observables=obs,
    )
    assert len(traj.checkpoint_rows) == 6
    assert [row[0] for row in traj.checkpoint_rows] == [0.0, 0.0, 1.0, 1.0, 2.0, 2.0]
    assert traj.checkpoint_rows[0] == (0.0, "site0=+1", 1.0)
    assert traj.checkpoint_rows[1] == (0.0, "edge1=-1", 1.0)
    assert all(row[2] in (0.0, 1.0) for row in traj.checkpoint_rows)
    with pytest.raises(ValueError, match="beyond t_max"):
        simulate_forward(
            g, kern, ModelParams(0.5, 1.0), striped_state(g), 1.0, RngStream(7),
            checkpoint_times=[2.0],
        )


def test_frozen_edges_when_refresh_rate_zero(p3):
    g, kern = p3
    initial = striped_state(g)
    traj = simulate_forward(g, kern, ModelParams(0.3, 0.0), initial, 10.0, RngStream(9))
    assert np.array_equal(traj.final_state.edge_signs, initial.edge_signs)


def test_state_file_roundtrip(tmp_path, p3):
    g, _ = p3
    state = striped_state(g)
    path = tmp_path / "state.txt"
    write_state_file(state, path)
    assert path.read_text() == "+-+\n+-\n"
    back = read_state_file(g, path)
    assert np.array_equal(back.site_signs, state.site_signs)
    assert np.array_equal(back.edge_signs, state.edge_signs)
    path.write_text("# comment\n+-+\n+-\n")
    read_state_file(g, path)
    path.write_text("+-+\n+\n")
    with pytest.raises(ValueError, match="edge line has 1 signs"):
        read_state_file(g, path)
    path.write_text("+-x\n+-\n")
    with pytest.raises(ValueError, match="'x'"):
        read_state_file(g, path)
    path.write_text("+-+\n")
    with pytest.raises(ValueError, match="two sign lines"):
        read_state_file(g, path)


def test_sample_product_state_statistics(c6):
    g, _ = c6
    gen = RngStream(13).generator()
    site_hits = edge_hits = 0
    n = 4000
    for _ in range(n):
        st_ = sample_product_state(g, gen, site_plus_prob=0.5, edge_plus_prob=0.2)
        site_hits += int(np.sum(st_.site_signs == 1))
        edge_hits += int(np.sum(st_.edge_signs == 1))
    assert abs(site_hits / (n * 6) - 0.5) < 0.01
    assert abs(edge_hits / (n * 6) - 0.2) < 0.01


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.floats(0.0, 1.0), v=st.floats(0.0, 3.0))
def test_signs_stay_plus_minus_one(seed, p, v):
    g = builtin_graph("path", 4)
    kern = uniform_kernel(g)
    traj = simulate_forward(
        g, kern, ModelParams(p, v), striped_state(g), 3.0, RngStream(seed)
    )
    traj.final_state.validate(g)
