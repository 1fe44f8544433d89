"""Monte Carlo estimators: determinism, parallel equivalence, known targets."""

import math

import numpy as np
import pytest
from conftest import striped_state
from scipy.linalg import expm

from spinbond import estimators as est
from spinbond import oracle
from spinbond.cylinders import CylinderEvent, single_constraint_events
from spinbond.dual import DualState
from spinbond.errors import CensoringError
from spinbond.forward import ModelParams, NeighborSampler, SpinBondState, simulate_forward
from spinbond.graphs import build_graph, uniform_kernel
from spinbond.rng import RngStream


def test_deviation_sigmas_edge_cases():
    zero = est.EstimateResult("x", 0.5, 0.0, 10)
    assert est.deviation_sigmas(zero, 0.5) == 0.0
    assert est.deviation_sigmas(zero, 0.6) == math.inf
    noisy = est.EstimateResult("x", 0.5, 0.01, 10)
    assert est.deviation_sigmas(noisy, 0.53) == pytest.approx(3.0)


def test_default_time_cap_scales_with_graph(k2, c6):
    assert est.default_time_cap(k2[0]) == pytest.approx(1e4 * 4)
    assert est.default_time_cap(c6[0]) == pytest.approx(1e4 * 36)


def test_cylinder_estimates_shape_and_determinism(p3):
    g, kern = p3
    params = ModelParams(0.3, 1.0)
    cyls = [CylinderEvent.of(sites={0: 1}), CylinderEvent.of(edges={0: -1})]
    kwargs = dict(
        g=g,
        kernel=kern,
        params=params,
        initial=est.ProductInitial(),
        times=[0.5, 1.5],
        cylinders=cyls,
        replicas=64,
    )
    first = est.estimate_cylinder_probabilities(stream=RngStream(7), **kwargs)
    again = est.estimate_cylinder_probabilities(stream=RngStream(7), **kwargs)
    other = est.estimate_cylinder_probabilities(stream=RngStream(8), **kwargs)
    assert set(first) == {(t, c.label()) for t in (0.5, 1.5) for c in cyls}
    for key, res in first.items():
        assert res.replicas == 64
        assert 0.0 <= res.estimate <= 1.0
        assert res.estimate == again[key].estimate
        assert res.std_error == again[key].std_error
    assert any(first[k].estimate != other[k].estimate for k in first)


def test_parallel_workers_reproduce_sequential(p3):
    # Replica i draws from substream i regardless of scheduling, so the
    # worker count must not change a single bit of the output.
    g, kern = p3
    params = ModelParams(0.4, 1.0)
    cyls = [CylinderEvent.of(sites={1: -1})]
    kwargs = dict(
        g=g,
        kernel=kern,
        params=params,
        initial=est.ProductInitial(),
        times=[1.0],
        cylinders=cyls,
        replicas=48,
    )
    seq = est.estimate_cylinder_probabilities(stream=RngStream(11), workers=1, **kwargs)
    par = est.estimate_cylinder_probabilities(stream=RngStream(11), workers=2, **kwargs)
    for key in seq:
        assert seq[key].estimate == par[key].estimate
        assert seq[key].std_error == par[key].std_error


def test_mu_dyn_single_walker_is_exact(k2):
    # One walker is coalesced from the start: every replica returns 1/2
    # with zero variance, and a revealed edge only rescales by p or 1-p.
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    plain = est.estimate_mu_dyn(
        g, kern, params, sites=[0], signs=[1], replicas=100, stream=RngStream(3)
    )
    assert plain.result.estimate == 0.5
    assert plain.result.std_error == 0.0
    assert plain.censored_count == 0
    constrained = est.estimate_mu_dyn(
        g,
        kern,
        params,
        sites=[0],
        signs=[1],
        replicas=100,
        stream=RngStream(3),
        revealed_positive=[0],
    )
    assert constrained.result.estimate == pytest.approx(0.5 * params.p)
    assert constrained.result.std_error == 0.0


def test_mu_dyn_reports_describe_replicas(k2):
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    out = est.estimate_mu_dyn(
        g,
        kern,
        params,
        sites=[0, 1],
        signs=[1, 1],
        replicas=40,
        stream=RngStream(5),
        report_limit=10,
    )
    assert len(out.reports) == 10
    for rep in out.reports:
        assert rep.partition == ((0, 1),)  # two walkers on K2 must merge
        assert len(rep.sync) == 1
        assert rep.time >= 0.0
        assert not rep.censored
        js = rep.to_json()
        assert js["partition"] == [[0, 1]]


def test_mu_dyn_censoring_raises(k2):
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    with pytest.raises(CensoringError):
        est.estimate_mu_dyn(
            g,
            kern,
            params,
            sites=[0, 1],
            signs=[1, 1],
            replicas=50,
            stream=RngStream(9),
            t_cap=1e-6,
        )
    # within tolerance, censored runs are dropped from the mean, not averaged in
    partial = est.estimate_mu_dyn(
        g,
        kern,
        params,
        sites=[0, 1],
        signs=[1, 1],
        replicas=60,
        stream=RngStream(9),
        t_cap=0.35,
        censor_tolerance=1.0,
    )
    assert 0 < partial.censored_count < 60
    assert partial.result.replicas == 60 - partial.censored_count
    with pytest.raises(CensoringError):  # nothing completed, nothing to average
        est.estimate_mu_dyn(
            g,
            kern,
            params,
            sites=[0, 1],
            signs=[1, 1],
            replicas=10,
            stream=RngStream(9),
            t_cap=1e-9,
            censor_tolerance=1.0,
        )


def test_mu_dyn_two_walker_estimate_matches_exact(k2):
    # On two sites the stationary mass of {eta(0)=eta(1)=+1} is p/2: the
    # agreement indicator follows the edge sign, whose stationary plus
    # probability is p, and the common value is a fair coin.
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    out = est.estimate_mu_dyn(
        g, kern, params, sites=[0, 1], signs=[1, 1], replicas=4000,
        stream=RngStream(21),
    )
    assert est.deviation_sigmas(out.result, params.p / 2.0) < 3.0


def test_mu_dyn_rejects_non_plus_site_signs(k2):
    g, kern = k2
    with pytest.raises(ValueError, match="all-\\+1"):
        est.estimate_mu_dyn(
            g, kern, ModelParams(0.3, 1.0), sites=[0], signs=[-1], replicas=10,
            stream=RngStream(1),
        )


def test_mu_dyn_separate_components_never_merge():
    # Walkers in different components stay distinct classes forever, so the
    # replica value is (1/2)^2 with certainty; the exact solve agrees.
    g = build_graph([(0, 1), (2, 3)], 4)
    kern = uniform_kernel(g)
    params = ModelParams(0.4, 1.0)
    out = est.estimate_mu_dyn(
        g, kern, params, sites=[0, 2], signs=[1, 1], replicas=200,
        stream=RngStream(31),
    )
    assert out.result.estimate == 0.25
    assert out.result.std_error == 0.0
    for rep in out.reports:
        assert rep.partition == ((0,), (1,))
    L = oracle.build_forward_generator(g, kern, params)
    pi = oracle.stationary_distribution(L)
    exact = oracle.cylinder_probability(g, pi, CylinderEvent.of(sites={0: 1, 2: 1}))
    assert exact == pytest.approx(0.25, abs=1e-10)


def test_two_site_mass_is_quarter_in_symmetric_environment(p3):
    # At p = 1/2 the sign carried to a merge is a fair coin, so the two-site
    # all-plus mass is exactly 2^-2 -- checked by estimator and exact solve.
    g, kern = p3
    params = ModelParams(0.5, 1.0)
    out = est.estimate_mu_dyn(
        g, kern, params, sites=[0, 2], signs=[1, 1], replicas=4000,
        stream=RngStream(37),
    )
    assert est.deviation_sigmas(out.result, 0.25) < 3.0
    L = oracle.build_forward_generator(g, kern, params)
    pi = oracle.stationary_distribution(L)
    exact = oracle.cylinder_probability(g, pi, CylinderEvent.of(sites={0: 1, 2: 1}))
    assert exact == pytest.approx(0.25, abs=1e-10)


def test_mu_dyn_is_stationary(k2):
    # Forward runs started from the exact stationary law keep the two-site
    # all-plus mass at the mu_dyn value at every later time.
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    L = oracle.build_forward_generator(g, kern, params)
    pi = oracle.stationary_distribution(L)
    mu = est.estimate_mu_dyn(
        g, kern, params, sites=[0, 1], signs=[1, 1], replicas=4000,
        stream=RngStream(59),
    )
    cyl = CylinderEvent.of(sites={0: 1, 1: 1})
    sampler = NeighborSampler(g, kern)
    stream = RngStream(61)
    for call, t in enumerate((1.0, 5.0)):
        values = []
        for i in range(4000):
            gen = stream.child(call).substream(i)
            start = oracle.decode_forward_state(g, int(gen.choice(pi.size, p=pi)))
            traj = simulate_forward(
                g, sampler, params, start, t, gen,
                checkpoint_times=[t], observables=[cyl],
            )
            values.append(traj.checkpoint_rows[0][2])
        arr = np.asarray(values, dtype=np.float64)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size))
        pooled = math.hypot(se, mu.result.std_error)
        assert abs(float(arr.mean()) - mu.result.estimate) <= 3.0 * pooled


# --------------------------------------------------------- dual-side values


def test_dual_side_at_time_zero_is_the_event_indicator(p3):
    g, kern = p3
    params = ModelParams(0.3, 1.0)
    fwd = SpinBondState(
        np.array([1, -1, 1], dtype=np.int8), np.array([1, -1], dtype=np.int8)
    )
    matching = DualState.of([0], [1], [0], [1])
    res = est.estimate_dual_side(g, kern, params, fwd, matching, 0.0, 20, RngStream(41))
    assert res.estimate == 1.0
    assert res.std_error == 0.0
    mismatched = DualState.of([1], [1])  # site 1 carries -1 in fwd
    res2 = est.estimate_dual_side(g, kern, params, fwd, mismatched, 0.0, 20, RngStream(41))
    assert res2.estimate == 0.0


def test_dual_side_cross_checks_forward_and_oracle(p3):
    # The same transient event probability three ways: dual-side MC,
    # forward MC, and uniformization.
    g, kern = p3
    params = ModelParams(0.3, 1.0)
    fwd = striped_state(g)
    t = 1.0
    cases = [
        (DualState.of([1], [1]), CylinderEvent.of(sites={1: 1})),
        (DualState.of([1], [1], [0], ()), CylinderEvent.of(sites={1: 1}, edges={0: 1})),
    ]
    L = oracle.build_forward_generator(g, kern, params)
    dist = oracle.transient_distribution(L, oracle.forward_delta(g, fwd), t)
    for call, (dual, cyl) in enumerate(cases):
        dual_res = est.estimate_dual_side(
            g, kern, params, fwd, dual, t, 4000, RngStream(43, (call,))
        )
        fwd_res = est.estimate_cylinder_probabilities(
            g, kern, params, fwd, [t], [cyl], 4000, RngStream(44, (call,))
        )[(t, cyl.label())]
        pooled = math.hypot(dual_res.std_error, fwd_res.std_error)
        assert abs(dual_res.estimate - fwd_res.estimate) <= 3.0 * pooled
        exact = oracle.cylinder_probability(g, dist, cyl)
        assert est.deviation_sigmas(dual_res, exact) < 3.0
        assert est.deviation_sigmas(fwd_res, exact) < 3.0


# ------------------------------------------------------------------ TV decay


def test_tv_decay_identical_initials_stay_near_zero(p3):
    g, kern = p3
    params = ModelParams(0.5, 1.0)
    state = SpinBondState.constant(g, site_sign=1, edge_sign=-1)
    points = est.estimate_tv_decay(
        g, kern, params, state, state, [0.5, 1.5],
        single_constraint_events(g), 600, RngStream(47),
    )
    for pt in points:
        assert pt.bound <= 3.0 * pt.std_error


def test_tv_decay_separates_then_decays(p3):
    g, kern = p3
    params = ModelParams(0.5, 1.0)
    plus = SpinBondState.constant(g, site_sign=1, edge_sign=1)
    minus = SpinBondState.constant(g, site_sign=-1, edge_sign=-1)
    points = est.estimate_tv_decay(
        g, kern, params, plus, minus, [0.0, 1.0, 12.0],
        single_constraint_events(g), 1500, RngStream(49),
    )
    assert points[0].bound == 1.0  # deterministic opposite starts
    assert points[0].time == 0.0
    assert points[2].bound <= 0.01 + 3.0 * points[2].std_error


def test_single_site_frequency_relaxes_to_half_on_cycle(c6):
    # From the all-plus start the single-site law flattens to a fair coin.
    g, kern = c6
    params = ModelParams(0.5, 1.0)
    res = est.estimate_cylinder_probabilities(
        g, kern, params, SpinBondState.constant(g, site_sign=1, edge_sign=1),
        [30.0], [CylinderEvent.of(sites={0: 1})], 10000, RngStream(53),
    )[(30.0, "site0=+1")]
    assert abs(res.estimate - 0.5) <= 0.02


def test_spin_flip_symmetry_of_site_marginals(p3):
    # With a density-1/2 site initial the one-site marginals stay fair at
    # every checkpoint no matter how biased the edge initial is.
    g, kern = p3
    params = ModelParams(0.3, 2.0)
    cyls = [CylinderEvent.of(sites={x: s}) for x in range(3) for s in (1, -1)]
    out = est.estimate_cylinder_probabilities(
        g, kern, params, est.ProductInitial(site_plus_prob=0.5, edge_plus_prob=0.2),
        [0.5, 1.5], cyls, 4000, RngStream(67),
    )
    for x in range(3):
        for t in (0.5, 1.5):
            plus = out[(t, f"site{x}=+1")]
            minus = out[(t, f"site{x}=-1")]
            # the two frequencies share replicas and sum to 1, so the std
            # error of their difference is the sum, not the hypotenuse
            assert abs(plus.estimate - minus.estimate) <= 3.0 * (
                plus.std_error + minus.std_error
            )


def test_birth_death_mgf_against_truncated_generator():
    # Independent oracle: truncate the birth-death generator at a large cap
    # and exponentiate densely.
    v, cap = 1.5, 80
    Q = np.zeros((cap + 1, cap + 1))
    for k in range(cap + 1):
        if k < cap:
            Q[k, k + 1] = 1.0
        if k > 0:
            Q[k, k - 1] = v * k
    np.fill_diagonal(Q, -Q.sum(axis=1))
    for r0 in (0, 1, 3):
        for t in (0.4, 2.0):
            P = expm(Q * t)
            for theta in (-1.0, -0.2, 0.5):
                weights = np.exp(theta * np.arange(cap + 1))
                reference = float(P[r0] @ weights)
                assert est.birth_death_mgf(theta, t, v, r0) == pytest.approx(
                    reference, abs=1e-12
                )


def test_birth_death_mgf_identities():
    assert est.birth_death_mgf(0.0, 3.0, 2.0, 5) == pytest.approx(1.0)
    # theta -> -inf limit is P(population 0); for r0=0 that is
    # exp(-(1-e^{-vt})/v).
    v, t = 2.0, 1.3
    expected = math.exp(-(1.0 - math.exp(-v * t)) / v)
    assert est.birth_death_mgf(-40.0, t, v, 0) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(ValueError):
        est.birth_death_mgf(0.1, 1.0, 0.0, 0)


def test_mgf_monte_carlo_within_three_sigma():
    v, theta, t, r0 = 1.5, -0.7, 1.2, 2
    res = est.estimate_mgf(theta, t, v, r0, replicas=20000, stream=RngStream(13))
    assert est.deviation_sigmas(res, est.birth_death_mgf(theta, t, v, r0)) < 3.0


def test_revealed_weight_estimator_basics(k2):
    g, kern = k2
    params = ModelParams(0.3, 1.0)
    initial = DualState.of([0], [1])
    res = est.estimate_revealed_weight(
        g, kern, params, initial, theta=-0.5, t=1.0, replicas=500,
        stream=RngStream(17),
    )
    # exp(theta * size) with theta < 0 and size >= 0 lies in (0, 1].
    assert 0.0 < res.estimate <= 1.0
    repeat = est.estimate_revealed_weight(
        g, kern, params, initial, theta=-0.5, t=1.0, replicas=500,
        stream=RngStream(17),
    )
    assert res.estimate == repeat.estimate
