import numpy as np
import pytest
from scipy.integrate import quad_vec
from scipy.linalg import hilbert

from heatcost.control import (GRAMIAN_OPTIMAL, THREE_PHASE, _cond, choose_c0, cost_curve, cost_form,
                              fit_cost_curve, hum_control, leading_block, phase1_control, phase2_decay,
                              phase3_nullcontrol, synthesize, window_gram, worst_case)
from heatcost.errors import ControlError, ValidationError
from heatcost.geometry import Subdomain, dilate
from heatcost.heat import HeatState, evolve_modal
from heatcost.reference import knot_min_norm_cost, sphere_max_ratio


@pytest.fixture(scope="module")
def small(small_1d):
    """A well-conditioned 8-mode system with a wide control region."""
    dom, op, full = small_1d
    basis = full.truncate(8)
    om = Subdomain.interval(dom, 0.2, 0.6)
    return dom, op, basis, om


def unit_datum(dom, basis, D, seed):
    v = np.zeros(dom.n_nodes)
    v[D.membership] = np.random.default_rng(seed).standard_normal(D.count)
    return v / np.sqrt(np.sum(basis.mass * v * v))


def test_window_gram_matches_quadrature(small):
    _, _, basis, om = small
    B = basis.gram(om)
    lam = basis.eigenvalues
    ref, _ = quad_vec(lambda s: B * np.exp(-np.add.outer(lam, lam) * s), 0.0, 0.1, epsrel=1e-12)
    np.testing.assert_allclose(window_gram(B, lam, lam, 0.1), ref, rtol=1e-10, atol=1e-16)


@pytest.mark.parametrize("cmax", [1e3, 1e6, 1e10])
def test_leading_block_matches_linear_scan(cmax):
    G = hilbert(10)
    m, cond = leading_block(G, cmax)
    scan = max(k for k in range(1, 11) if _cond(G[:k, :k]) <= cmax)
    assert m == scan
    assert cond <= cmax


def test_phase_one_annihilates_projection(small):
    dom, _, basis, om = small
    u0 = HeatState(0.0, unit_datum(dom, basis, Subdomain.full(dom), 0))
    T, c0 = 0.5, 10.0
    f1, u1 = phase1_control(basis, om, u0, T, c0)
    m = f1.dual.dual_dim
    assert 0 < m < basis.count
    c1 = basis.to_modal(u1.values)
    assert np.abs(c1[:m]).max() < 1e-10
    # the high modes are untouched by a control built on the low ones only up to coupling
    assert u1.time == pytest.approx(T / 3)


def test_phase_two_rejects_unannihilated_state(small):
    dom, _, basis, _ = small
    u = HeatState(0.0, basis.eigenvectors[:, 0])
    with pytest.raises(ControlError):
        phase2_decay(basis, u, 0.5, 10.0)


def test_phase_two_decay_bound(small):
    dom, _, basis, _ = small
    T, c0 = 0.5, 10.0
    c = np.zeros(basis.count)
    c[5:] = 1.0  # only modes above the cutoff
    u2 = phase2_decay(basis, HeatState(T / 3, basis.from_modal(c)), T, c0)
    c2 = basis.to_modal(u2.values)
    assert np.linalg.norm(c2) <= np.exp(-(c0 / T**2) * T / 3) * np.linalg.norm(c)


def test_phase_three_null_control(small):
    dom, _, basis, om = small
    u2 = HeatState(1 / 3, unit_datum(dom, basis, Subdomain.full(dom), 1))
    f3, term = phase3_nullcontrol(basis, om, u2, 0.5)
    assert not f3.phase3.truncated
    assert np.linalg.norm(basis.to_modal(term.values)) < 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_min_norm_matches_knot_oracle(small_1d, seed):
    dom, _, full = small_1d
    rng = np.random.default_rng(seed)
    N = 3
    basis = full.truncate(N)
    om = Subdomain.interval(dom, 0.25, 0.55)
    T = 0.6
    u = HeatState(2 * T / 3, rng.standard_normal(dom.n_nodes))
    f3, _ = phase3_nullcontrol(basis, om, u, T)
    c = basis.to_modal(u.values)
    oracle = knot_min_norm_cost(basis, om, np.arange(N), -np.exp(-basis.eigenvalues * T / 3) * c, T / 3)
    assert np.sqrt(f3.norm_sq) == pytest.approx(oracle, rel=1e-3)
    assert np.sqrt(f3.norm_sq) <= oracle * (1 + 1e-9)  # the oracle is a restricted problem


def test_hum_cost_equals_quadratic_form(small):
    dom, _, basis, om = small
    u0 = unit_datum(dom, basis, dilate(om, 0.1), 2)
    T = 0.3
    f, term = hum_control(basis, om, HeatState(0.0, u0), T)
    S, _, _ = cost_form(basis, om, T, method=GRAMIAN_OPTIMAL)
    c = basis.to_modal(u0)
    assert f.norm_sq == pytest.approx(c @ S @ c, rel=1e-9)
    assert np.linalg.norm(basis.to_modal(term.values)) < 1e-9


def test_three_phase_cost_equals_quadratic_form(small):
    dom, op, basis, om = small
    u0 = unit_datum(dom, basis, dilate(om, 0.1), 3)
    T, c0 = 0.5, 10.0
    syn = synthesize(basis, om, HeatState(0.0, u0), T, c0, op=op, cn_steps=512, cn_tol=1e-3)
    S, _, _ = cost_form(basis, om, T, c0, THREE_PHASE)
    c = basis.to_modal(u0)
    assert syn.total_cost**2 == pytest.approx(c @ S @ c, rel=1e-9)
    assert syn.relative_residual < 1e-9
    assert syn.projection_residual < 1e-9
    assert syn.decay_factor <= syn.decay_bound
    # re-simulation of the assembled control reproduces the terminal state
    cT = evolve_modal(basis, c, 0.0, syn.control, T)
    assert np.linalg.norm(cT) == pytest.approx(syn.terminal_residual, abs=1e-12)


def test_worst_case_dominates_random_data(small):
    dom, _, basis, om = small
    D = dilate(om, 0.1)
    T, c0 = 0.5, 10.0
    wc = worst_case(basis, om, D, T, c0)
    assert np.all(wc.u0[~D.membership] == 0)
    assert np.sum(basis.mass * wc.u0**2) == pytest.approx(1.0)
    for seed in range(5):
        u0 = unit_datum(dom, basis, D, seed)
        syn = synthesize(basis, om, HeatState(0.0, u0), T, c0)
        assert syn.total_cost <= wc.value * (1 + 1e-9)
    best = synthesize(basis, om, HeatState(0.0, wc.u0), T, c0)
    assert best.total_cost == pytest.approx(wc.value, rel=1e-8)
    with pytest.raises(ValidationError):
        worst_case(basis, om, Subdomain(dom, np.zeros(dom.n_nodes, bool)), T, c0)


def test_three_phase_dominates_optimal(small):
    dom, _, basis, om = small
    for T in (0.2, 0.5):
        for D in (dilate(om, 0.05), Subdomain.full(dom)):
            a = worst_case(basis, om, D, T, 10.0).value
            b = worst_case(basis, om, D, T, method=GRAMIAN_OPTIMAL).value
            assert a >= b * (1 - 1e-9)


def test_choose_c0_gate(small):
    _, _, basis, om = small
    c0, amp = choose_c0(basis, om, 0.5)
    assert c0 / 0.25 >= basis.eigenvalues[0]
    assert amp * np.exp(-c0 / 1.5) <= 1.0
    # the previous doubling fails the gate
    half = c0 / 2
    assert half / 0.25 < basis.eigenvalues[0] or amp * np.exp(-half / 1.5) > 1.0 or c0 == 1.0


def test_synthesize_validation(small):
    dom, _, basis, om = small
    u0 = HeatState(0.0, np.ones(dom.n_nodes))
    for T in (0.0, 1.5):
        with pytest.raises(ValidationError):
            synthesize(basis, om, u0, T, 4.0)
    with pytest.raises(ValidationError):
        synthesize(basis, om, u0, 0.5, -1.0)
    with pytest.raises(ValidationError):
        cost_form(basis, om, 0.5, 4.0, method="bogus")


def test_fit_cost_curve_exact():
    T = np.array([0.5, 0.25, 0.125])
    fit = fit_cost_curve(T, 2.0 * np.exp(0.7 / T))
    assert fit.slope == pytest.approx(0.7)
    assert np.exp(fit.intercept) == pytest.approx(2.0)
    assert fit.r_squared == pytest.approx(1.0)


def test_cost_curve_structure(small):
    _, _, basis, om = small
    cc = cost_curve(basis, om, [0.05, 0.1], [0.5, 0.3, 0.2], c0=10.0)
    assert len(cc.rows) == 3 * 2 * 3
    assert set(cc.fits) == {(d, m) for d in (0.05, 0.1, np.inf) for m in (THREE_PHASE, GRAMIAN_OPTIMAL)}
    assert cc.dominance_violations == ()
    assert all(r.terminal_residual < 1e-8 for r in cc.rows)
    with pytest.raises(ValidationError):
        cost_curve(basis, om, [0.1], [])
    with pytest.raises(ValidationError):
        cost_curve(basis, om, [0.1], [1.5])


def test_single_mode_phase_one_closed_form(small_1d):
    dom, _, full = small_1d
    basis = full.truncate(1)
    om = Subdomain.full(dom)
    T, c0, amp = 0.5, 4.0, 0.7
    lam, tau = basis.eigenvalues[0], T / 3
    f1, u1 = phase1_control(basis, om, HeatState(0.0, amp * basis.eigenvectors[:, 0]), T, c0)
    g = -np.expm1(-2 * lam * tau) / (2 * lam)
    expected = -amp * np.exp(-lam * tau) * 2 * lam / (1 - np.exp(-2 * lam * tau))
    assert f1.dual.coefficients[0] == pytest.approx(expected, rel=1e-12)
    assert f1.norm_sq == pytest.approx(expected**2 * g, rel=1e-12)
    assert abs(basis.to_modal(u1.values)[0]) < 1e-12


def test_single_mode_phase_three_closed_form(small_1d):
    dom, _, full = small_1d
    basis = full.truncate(1)
    T, amp = 0.5, -1.3
    lam, tau = basis.eigenvalues[0], T / 3
    f3, term = phase3_nullcontrol(basis, Subdomain.full(dom), HeatState(2 * T / 3, amp * basis.eigenvectors[:, 0]),
                                  T)
    expected = abs(amp) * np.sqrt(2 * lam / np.expm1(2 * lam * tau))
    assert np.sqrt(f3.norm_sq) == pytest.approx(expected, rel=1e-12)
    assert abs(basis.to_modal(term.values)[0]) < 1e-12


@pytest.mark.parametrize("c0, m", [(4.0, 1), (20.0, 2), (40.0, 3)])
def test_phase_one_matches_knot_oracle(small_1d, c0, m):
    dom, _, full = small_1d
    basis = full.truncate(8)
    om = Subdomain.interval(dom, 0.25, 0.55)
    T = 0.6
    u0 = HeatState(0.0, np.random.default_rng(m).standard_normal(dom.n_nodes))
    f1, _ = phase1_control(basis, om, u0, T, c0)
    assert f1.dual.dual_dim == m
    c = basis.to_modal(u0.values)
    tau = T / 3
    oracle = knot_min_norm_cost(basis, om, np.arange(m), -np.exp(-basis.eigenvalues[:m] * tau) * c[:m], tau)
    assert np.sqrt(f1.norm_sq) == pytest.approx(oracle, rel=1e-4)


@pytest.mark.parametrize("N", [1, 2, 4])
def test_hum_matches_knot_oracle(small_1d, N):
    dom, _, full = small_1d
    basis = full.truncate(N)
    om = Subdomain.interval(dom, 0.3, 0.6)
    T = 0.3
    u0 = HeatState(0.0, np.random.default_rng(N).standard_normal(dom.n_nodes))
    f, _ = hum_control(basis, om, u0, T)
    c = basis.to_modal(u0.values)
    oracle = knot_min_norm_cost(basis, om, np.arange(N), -np.exp(-basis.eigenvalues * T) * c, T)
    assert np.sqrt(f.norm_sq) == pytest.approx(oracle, rel=1e-3)


def test_first_mode_on_dilated_support_is_nulled(small):
    dom, op, basis, om = small
    D = dilate(om, 0.1)
    u0 = np.where(D.membership, basis.eigenvectors[:, 0], 0.0)
    syn = synthesize(basis, om, HeatState(0.0, u0), 0.5, 10.0, op=op, cn_steps=512, cn_tol=1e-3)
    assert syn.relative_residual < 1e-8


def test_zero_datum_and_linearity(small):
    dom, _, basis, om = small
    zero = synthesize(basis, om, HeatState(0.0, np.zeros(dom.n_nodes)), 0.5, 10.0)
    assert zero.total_cost == 0.0
    u0 = unit_datum(dom, basis, Subdomain.full(dom), 7)
    a = synthesize(basis, om, HeatState(0.0, u0), 0.5, 10.0)
    b = synthesize(basis, om, HeatState(0.0, 2.5 * u0), 0.5, 10.0)
    assert b.total_cost == pytest.approx(2.5 * a.total_cost, rel=1e-12)


@pytest.mark.parametrize("n_nodes", [1, 3, 5])
def test_worst_case_matches_sphere_sampling(small, n_nodes):
    dom, _, basis, om = small
    member = np.zeros(dom.n_nodes, bool)
    member[30:30 + n_nodes] = True
    D = Subdomain(dom, member)
    T, c0 = 0.4, 10.0
    S, _, _ = cost_form(basis, om, T, c0)
    idx = D.indices
    F = basis.eigenvectors[idx].T * basis.mass[idx]  # nodal values on D -> modal coefficients
    ref = sphere_max_ratio(F.T @ S @ F, np.diag(basis.mass[idx]), n_directions=100_000)
    assert worst_case(basis, om, D, T, c0).value == pytest.approx(ref, rel=1e-2)
