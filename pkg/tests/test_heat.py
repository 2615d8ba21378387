import numpy as np
import pytest
from scipy.integrate import quad_vec

from heatcost.errors import ValidationError
from heatcost.geometry import Subdomain
from heatcost.heat import (ControlSequence, HeatState, KnotControl, ModalControl, _phi0, _phi1,
                           evolve_cn, evolve_spectral, exp_integral, write_trajectory)


def duhamel_oracle(basis, f, t0, t1):
    """Adaptive quadrature of ``int e^{-Lambda (t1 - s)} E^T M f(s) ds``, split at breakpoints."""
    lam = basis.eigenvalues
    pts = [t0] + [b for b in f.breakpoints if t0 < b < t1] + [t1]
    out = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = quad_vec(lambda s: np.exp(-lam * (t1 - s)) * basis.to_modal(f.sample(s)), a, b,
                          epsabs=1e-14, epsrel=1e-12)
        out = out + val
    return out


@pytest.fixture(scope="module")
def setup(small_1d):
    dom, op, basis = small_1d
    om = Subdomain.interval(dom, 0.3, 0.6)
    return dom, op, basis, om


def test_phi_functions_series_and_limits():
    z = np.array([0.0, 1e-8, 1e-4, 0.5, 3.0])
    np.testing.assert_allclose(_phi0(z)[1:], -np.expm1(-z[1:]) / z[1:], rtol=1e-12)
    ref = np.array([0.5] + [float((1 - np.exp(-t) * (1 + t)) / t**2) for t in z[3:]])
    np.testing.assert_allclose(_phi1(z[[0, 3, 4]]), ref, rtol=1e-12)
    # series branch continuous with the closed form at the switch
    assert _phi1(np.array([0.999e-3]))[0] == pytest.approx(_phi1(np.array([1.001e-3]))[0], rel=1e-5)
    assert exp_integral(np.array([0.0]), 2.0)[0] == 2.0


def test_free_evolution_is_exact(setup):
    dom, _, basis, _ = setup
    c = np.random.default_rng(0).standard_normal(basis.count)
    u = evolve_spectral(basis, HeatState(0.0, basis.from_modal(c)), None, 0.01)
    np.testing.assert_allclose(basis.to_modal(u.values), np.exp(-0.01 * basis.eigenvalues) * c,
                               atol=1e-12)
    assert u.time == 0.01


def test_knot_control_duhamel_matches_quadrature(setup):
    dom, _, basis, om = setup
    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 0.02, 6)
    vals = np.zeros((6, dom.n_nodes))
    vals[:, om.membership] = rng.standard_normal((6, om.count))
    f = KnotControl(om, t, vals)
    np.testing.assert_allclose(f.duhamel(basis, 0.0, 0.02), duhamel_oracle(basis, f, 0.0, 0.02),
                               rtol=1e-9, atol=1e-12)
    # exact piecewise-linear L2 norm
    ref, _ = quad_vec(lambda s: om.norm_sq(f.sample(s)), 0.0, 0.02, epsrel=1e-12, points=t[1:-1])
    assert f.norm_sq == pytest.approx(ref, rel=1e-9)


def test_modal_control_duhamel_matches_quadrature(setup):
    dom, _, basis, om = setup
    rng = np.random.default_rng(2)
    f = ModalControl(basis, om, [0, 1, 2, 3], rng.standard_normal(4), 0.01, 0.03)
    for t0, t1 in ((0.0, 0.05), (0.015, 0.025), (0.02, 0.04)):
        np.testing.assert_allclose(f.duhamel(basis, t0, t1), duhamel_oracle(basis, f, t0, t1),
                                   rtol=1e-8, atol=1e-12)
    ref, _ = quad_vec(lambda s: om.norm_sq(f.sample(s)), 0.01, 0.03, epsrel=1e-12)
    assert f.norm_sq == pytest.approx(ref, rel=1e-9)
    assert f.sample(0.005).sum() == 0.0


def test_knot_control_validation(setup):
    dom, _, basis, om = setup
    v = np.ones((2, dom.n_nodes))
    with pytest.raises(ValidationError):
        KnotControl(om, [0.0, 1.0], v)  # nonzero off support
    with pytest.raises(ValidationError):
        KnotControl(om, [1.0, 0.0], np.zeros((2, dom.n_nodes)))
    f = KnotControl(om, [0.0, 0.5], np.zeros((2, dom.n_nodes)))
    with pytest.raises(ValidationError):
        evolve_spectral(basis, HeatState(0.0, np.zeros(dom.n_nodes)), f, 1.0)  # knots do not cover


def test_sequence_rejects_overlap(setup):
    _, _, basis, om = setup
    a = ModalControl(basis, om, [0], [1.0], 0.0, 0.2)
    b = ModalControl(basis, om, [0], [1.0], 0.1, 0.3)
    with pytest.raises(ValidationError):
        ControlSequence([a, b])
    c = ModalControl(basis, om, [0], [1.0], 0.2, 0.3)
    seq = ControlSequence([a, c])
    np.testing.assert_allclose(seq.breakpoints, [0.0, 0.2, 0.3])
    assert seq.norm_sq == pytest.approx(a.norm_sq + c.norm_sq)


def test_cn_second_order_with_window_edge_inside_step(setup):
    dom, op, basis, om = setup
    rng = np.random.default_rng(3)
    u0 = HeatState(0.0, basis.from_modal(rng.standard_normal(basis.count) * np.exp(-0.001 * basis.eigenvalues)))
    # window edge at 0.0317 falls strictly inside CN steps for every n below
    f = ControlSequence([ModalControl(basis, om, [0, 1, 2], [3.0, -2.0, 1.0], 0.0, 0.0317)])
    T = 0.05
    exact = evolve_spectral(basis, u0, f, T).values
    errs = [np.sqrt(np.sum(op.mass_diag * (evolve_cn(op, u0, f, T, n).values - exact) ** 2))
            for n in (200, 400, 800)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8), rates


def test_cn_validation(setup):
    dom, op, _, _ = setup
    u0 = HeatState(0.0, np.zeros(dom.n_nodes))
    with pytest.raises(ValidationError):
        evolve_cn(op, u0, None, 1.0, 0)
    with pytest.raises(ValidationError):
        evolve_cn(op, HeatState(0.0, np.zeros(3)), None, 1.0, 4)
    with pytest.raises(ValidationError):
        HeatState(-1.0, np.zeros(3))


def test_write_trajectory(tmp_path, setup):
    dom, _, basis, _ = setup
    u0 = HeatState(0.0, basis.eigenvectors[:, 0])
    p = tmp_path / "traj.csv"
    write_trajectory(basis, u0, None, [0.0, 0.01], p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,node,value"
    assert len(rows) == 1 + 2 * dom.n_nodes
    last = float(rows[-1].split(",")[2])
    assert last == pytest.approx(np.exp(-0.01 * basis.eigenvalues[0]) * basis.eigenvectors[-1, 0], rel=1e-10)
