"""
Null controls for the truncated heat system and their worst-case costs.

Everything is computed in the modal coordinates of a (truncated) eigenbasis.
With ``B = E^T W_omega E`` (the observation Gram over all modes) the minimal
L2 control steering the modes ``J`` during a window of length ``tau`` has the
exponential profile

    f(t) = 1_omega * sum_{k in J} p_k exp(-lambda_k (t_end - t)) e_k,

and its coefficients solve a system with the *window Gram*

    H[i, j] = B[i, j] * (1 - exp(-(lambda_i + lambda_j) tau)) / (lambda_i + lambda_j).

Three-phase synthesis (a Lebeau--Robbiano scheme with cutoff
``lambda = c0 / T^2``) splits ``[0, T]`` into thirds:

1. steer the projection onto ``E_lambda`` to zero with a minimal-norm control
   (moment problem);
2. let the remaining high modes decay freely;
3. apply the minimal-norm (HUM) null control of the whole truncated system.

Costs are quadratic forms in the initial datum, so the worst case over unit
data supported in a set ``D`` is the top eigenvalue of an explicit matrix.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .elliptic import SpectralBasis, filter_modes
from .errors import ControlError, RegularizationWarning, ValidationError
from .geometry import Subdomain, dilate
from .heat import (ControlSequence, HeatState, ModalControl, evolve_cn, evolve_modal,
                   exp_integral)

__all__ = [
    "COND_MAX",
    "PhaseOneDual",
    "PhaseThreeInfo",
    "ControlSynthesis",
    "CostRow",
    "CurveFit",
    "CostCurve",
    "WorstCase",
    "phase1_control",
    "phase2_decay",
    "phase3_nullcontrol",
    "hum_control",
    "synthesize",
    "worst_case",
    "worst_case_cost",
    "choose_c0",
    "cost_curve",
    "fit_cost_curve",
]

logger = logging.getLogger(__name__)

#: condition-number ceiling for the window Grams
COND_MAX = 1e14

THREE_PHASE = "three-phase"
GRAMIAN_OPTIMAL = "gramian-optimal"


def window_gram(B, lam_rows, lam_cols, tau):
    """``B * int_0^tau exp(-(lambda_i + lambda_j) s) ds`` (elementwise)."""
    return B * exp_integral(np.add.outer(lam_rows, lam_cols), tau)


def _cond(G):
    w = np.linalg.eigvalsh(G)
    return float(w[-1] / w[0]) if w[0] > 0 else np.inf


def _tikhonov_solve(G, rhs, cond_max=COND_MAX):
    """Solve the SPD system ``G x = rhs``; Tikhonov-regularize if ill-conditioned.

    Returns
    -------
    x : ndarray
    cond : float
        Condition number of ``G``.
    eps : float
        Tikhonov shift added to the diagonal (0 when none).
    """
    G = 0.5 * (G + G.T)
    w = np.linalg.eigvalsh(G)
    cond = float(w[-1] / w[0]) if w[0] > 0 else np.inf
    eps = 0.0
    if not cond <= cond_max:
        eps = float(w[-1]) / cond_max
        G = G + eps * np.eye(len(G))
    x = scipy.linalg.solve(G, rhs, assume_a="pos")
    return x, cond, eps


def leading_block(G, cond_max=COND_MAX):
    """Largest ``m`` with ``cond(G[:m, :m]) <= cond_max`` and that block's condition.

    The condition number of leading principal blocks is nondecreasing in
    ``m`` (eigenvalue interlacing), so bisection applies.
    """
    n = len(G)
    if _cond(G) <= cond_max:
        return n, _cond(G)
    lo, hi = 1, n  # cond(G[:lo,:lo]) ok (1x1), cond(G[:hi,:hi]) too large
    if not G[0, 0] > 0:
        return 0, np.inf
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _cond(G[:mid, :mid]) <= cond_max:
            lo = mid
        else:
            hi = mid
    return lo, _cond(G[:lo, :lo])


# --------------------------------------------------------------------------
# phase records
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class PhaseOneDual:
    """Moment system of the first phase.

    Attributes
    ----------
    lambda_cut : float
        ``c0 / T^2``.
    dual_dim : int
        ``m = dim E_lambda``.
    gram : ndarray, shape (m, m)
        Window Gram over ``[0, T/3]`` for the first ``m`` modes.
    rhs : ndarray, shape (m,)
        Moments ``exp(-lambda_i T/3) <u0, e_i>``; the control coefficients
        solve ``gram @ a = -rhs``.
    coefficients : ndarray
    cond : float
    tikhonov : float
        Diagonal shift used (0 when the Gram was well conditioned).
    """

    lambda_cut: float
    dual_dim: int
    gram: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    cond: float = 1.0
    tikhonov: float = 0.0

    @property
    def regularized(self) -> bool:
        return self.tikhonov > 0


@dataclass(frozen=True)
class PhaseThreeInfo:
    """Diagnostics of the final HUM phase.

    Attributes
    ----------
    n_controlled : int
        Size of the leading Gramian block actually inverted.
    n_modes : int
        Size of the truncated system.
    cond : float
        Condition number of the inverted block.
    excluded_residual : float
        Norm of the terminal modal coefficients on the uncontrolled modes.
    """

    n_controlled: int
    n_modes: int
    cond: float
    excluded_residual: float = 0.0

    @property
    def truncated(self) -> bool:
        return self.n_controlled < self.n_modes


@dataclass(frozen=True)
class ControlSynthesis:
    """Result of :func:`synthesize`.

    ``terminal_residual`` is the absolute ``||u(T)||_M`` obtained by
    re-simulating the assembled control from ``u0``;
    ``relative_residual`` divides it by ``||u0||_M``.
    """

    f1: ModalControl = field(repr=False)
    f3: ModalControl = field(repr=False)
    u1_mid: HeatState = field(repr=False)
    u2_mid: HeatState = field(repr=False)
    terminal: HeatState = field(repr=False)
    terminal_residual: float
    total_cost: float
    u0_norm: float
    c0: float
    lambda_cut: float
    projection_residual: float
    decay_factor: float
    decay_bound: float
    dual: PhaseOneDual = field(repr=False)
    phase3: PhaseThreeInfo = field(repr=False)
    cn_residual: float = np.nan
    events: tuple = ()

    @property
    def relative_residual(self) -> float:
        return self.terminal_residual / self.u0_norm if self.u0_norm > 0 else self.terminal_residual

    @property
    def control(self) -> ControlSequence:
        return ControlSequence([self.f1, self.f3])


def _validate_T(T):
    if not (0 < T <= 1):
        raise ValidationError(f"T must lie in (0, 1], got {T!r}")


def _observation_gram(basis, omega):
    return basis.gram(omega)


# --------------------------------------------------------------------------
# phases
# --------------------------------------------------------------------------
def phase_one_dual(basis: SpectralBasis, omega: Subdomain, c_hat0, T: float, c0: float,
                   B=None) -> PhaseOneDual:
    """Assemble and solve the phase-one moment system for modal data ``c_hat0``."""
    _validate_T(T)
    if not c0 > 0:
        raise ValidationError(f"c0 must be positive, got {c0!r}")
    lam_cut = c0 / T**2
    J = filter_modes(basis, lam_cut)
    m = len(J)
    tau = T / 3.0
    lam = basis.eigenvalues[:m]
    B = _observation_gram(basis, omega) if B is None else B
    G = window_gram(B[:m, :m], lam, lam, tau)
    rhs = np.exp(-lam * tau) * np.asarray(c_hat0, dtype=float)[:m]
    if m == 0:
        return PhaseOneDual(lam_cut, 0, G, rhs, np.zeros(0))
    a, cond, eps = _tikhonov_solve(G, -rhs)
    if eps > 0:
        msg = f"phase-one Gram cond {cond:.3g} > {COND_MAX:g}; Tikhonov shift {eps:.3g}"
        logger.warning(msg)
        warnings.warn(msg, RegularizationWarning, stacklevel=3)
    return PhaseOneDual(lam_cut, m, G, rhs, a, cond, eps)


def phase1_control(basis: SpectralBasis, omega: Subdomain, u0: HeatState, T: float, c0: float,
                   n_knots: int = 64):
    """Minimal-norm control on ``[0, T/3]`` annihilating the ``E_lambda`` projection.

    Returns
    -------
    f1 : ModalControl
        Carries the moment system as ``f1.dual``.
    u1_mid : HeatState
        State at ``T/3``.
    """
    c = basis.to_modal(u0.values)
    dual = phase_one_dual(basis, omega, c, T, c0)
    t0 = u0.time
    f1 = ModalControl(basis, omega, np.arange(dual.dual_dim), dual.coefficients,
                      t0, t0 + T / 3.0, n_knots=n_knots)
    f1.dual = dual
    c1 = evolve_modal(basis, c, t0, f1, T / 3.0)
    return f1, HeatState(t0 + T / 3.0, basis.from_modal(c1))


def phase2_decay(basis: SpectralBasis, u1_mid: HeatState, T: float, c0: float,
                 tol: float = 1e-9, reference_norm: float | None = None) -> HeatState:
    """Free evolution over ``[T/3, 2T/3]`` with the high-mode decay check.

    Raises
    ------
    ControlError
        If the projection of ``u1_mid`` onto ``E_lambda`` exceeds
        ``tol * reference_norm`` or if the high-mode part fails to decay by
        ``exp(-lambda T/3)``.
    """
    _validate_T(T)
    lam_cut = c0 / T**2
    m = len(filter_modes(basis, lam_cut))
    c1 = basis.to_modal(u1_mid.values)
    ref = np.sqrt(np.sum(c1**2)) if reference_norm is None else reference_norm
    proj = float(np.max(np.abs(c1[:m]))) if m else 0.0
    if proj > tol * max(ref, np.finfo(float).tiny):
        raise ControlError(f"phase-two precondition: E_lambda projection {proj:.3g} exceeds {tol:g} x {ref:.3g}")
    tau = T / 3.0
    c2 = evolve_modal(basis, c1, u1_mid.time, None, tau)
    hi1 = np.linalg.norm(c1[m:])
    hi2 = np.linalg.norm(c2[m:])
    bound = np.exp(-lam_cut * tau)
    if hi1 > 0 and hi2 > bound * hi1 * (1 + 1e-12):
        raise ControlError(f"high-mode decay {hi2 / hi1:.3g} exceeds bound {bound:.3g}")
    return HeatState(u1_mid.time + tau, basis.from_modal(c2))


def phase3_nullcontrol(basis: SpectralBasis, omega: Subdomain, u2_mid: HeatState, T: float,
                       n_knots: int = 64, cond_max: float = COND_MAX):
    """HUM null control of the truncated system over ``[2T/3, T]``.

    If the Gramian is too ill-conditioned, only the largest leading block
    with condition ``<= cond_max`` is controlled; the residual left on the
    remaining modes is reported in ``f3.phase3``.

    Returns
    -------
    f3 : ModalControl
    terminal : HeatState
    """
    _validate_T(T)
    tau = T / 3.0
    c2 = basis.to_modal(u2_mid.values)
    x = np.exp(-basis.eigenvalues * tau) * c2
    B = _observation_gram(basis, omega)
    f3, info = _hum(basis, omega, B, x, u2_mid.time, tau, n_knots, cond_max)
    cT = evolve_modal(basis, c2, u2_mid.time, f3, tau)
    m = info.n_controlled
    info = PhaseThreeInfo(m, info.n_modes, info.cond, float(np.linalg.norm(cT[m:])))
    f3.phase3 = info
    return f3, HeatState(u2_mid.time + tau, basis.from_modal(cT))


def _hum(basis, omega, B, x, t_start, tau, n_knots, cond_max):
    """Coefficients of the minimal-norm control cancelling free state ``x``."""
    lam = basis.eigenvalues
    Lg = window_gram(B, lam, lam, tau)
    m, cond = leading_block(Lg, cond_max)
    if m < len(lam):
        msg = f"Gramian cond {_cond(Lg):.3g} > {cond_max:g}; controlling leading {m} of {len(lam)} modes"
        logger.info(msg)
    p = scipy.linalg.solve(Lg[:m, :m], -x[:m], assume_a="pos") if m else np.zeros(0)
    f = ModalControl(basis, omega, np.arange(m), p, t_start, t_start + tau, n_knots=n_knots)
    return f, PhaseThreeInfo(m, len(lam), cond)


def hum_control(basis: SpectralBasis, omega: Subdomain, u0: HeatState, T: float,
                n_knots: int = 64, cond_max: float = COND_MAX):
    """Single-interval minimal-norm null control over ``[0, T]``.

    Returns
    -------
    f : ModalControl
    terminal : HeatState
    """
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T!r}")
    c0 = basis.to_modal(u0.values)
    x = np.exp(-basis.eigenvalues * T) * c0
    f, info = _hum(basis, omega, _observation_gram(basis, omega), x, u0.time, T, n_knots, cond_max)
    cT = evolve_modal(basis, c0, u0.time, f, T)
    f.phase3 = PhaseThreeInfo(info.n_controlled, info.n_modes, info.cond,
                              float(np.linalg.norm(cT[info.n_controlled:])))
    return f, HeatState(u0.time + T, basis.from_modal(cT))


def synthesize(basis: SpectralBasis, omega: Subdomain, u0: HeatState, T: float, c0: float,
               tol: float = 1e-8, op=None, cn_steps: int = 4096, cn_tol: float = 1e-5,
               projection_tol: float = 1e-9, n_knots: int = 64) -> ControlSynthesis:
    """Three-phase null control of ``u0`` on ``[t0, t0 + T]``.

    The phases are composed, then the assembled control is re-simulated
    from ``u0`` with :func:`heat.evolve_spectral`; if ``op`` is given the
    same control is also run through Crank--Nicolson with ``cn_steps``
    steps on the full nodal system.

    Raises
    ------
    ControlError
        If the projection after phase one exceeds ``projection_tol``, the
        spectral terminal residual exceeds ``tol``, or the Crank--Nicolson
        residual exceeds ``cn_tol`` (all relative to ``||u0||_M``).
    """
    _validate_T(T)
    mass = basis.mass
    norm0 = u0.norm(mass)
    c_init = basis.to_modal(u0.values)
    events = []

    f1, u1 = phase1_control(basis, omega, u0, T, c0, n_knots)
    dual = f1.dual
    if dual.regularized:
        events.append(f"phase1_tikhonov cond={dual.cond:.3e} shift={dual.tikhonov:.3e}")
    c1 = basis.to_modal(u1.values)
    m = dual.dual_dim
    proj = float(np.max(np.abs(c1[:m]))) / norm0 if (m and norm0 > 0) else 0.0
    if proj > projection_tol:
        raise ControlError(f"projection after phase one {proj:.3e} exceeds {projection_tol:g}")

    u2 = phase2_decay(basis, u1, T, c0, tol=projection_tol, reference_norm=norm0)
    c2 = basis.to_modal(u2.values)
    hi1, hi2 = np.linalg.norm(c1[m:]), np.linalg.norm(c2[m:])
    decay = hi2 / hi1 if hi1 > 0 else 0.0
    bound = float(np.exp(-dual.lambda_cut * T / 3.0))

    f3, _ = phase3_nullcontrol(basis, omega, u2, T, n_knots)
    info = f3.phase3
    if info.truncated:
        events.append(f"phase3_truncation modes={info.n_controlled}/{info.n_modes} cond={info.cond:.3e}")

    control = ControlSequence([f1, f3])
    cT = evolve_modal(basis, c_init, u0.time, control, T)
    term = HeatState(u0.time + T, basis.from_modal(cT))
    resid = float(np.linalg.norm(cT))
    if resid > tol * norm0:
        raise ControlError(f"terminal residual {resid / max(norm0, 1e-300):.3e} exceeds tol {tol:g}")

    cn_res = np.nan
    if op is not None and cn_steps:
        uT = evolve_cn(op, u0, control, T, cn_steps)
        cn_res = uT.norm(op.mass_diag)
        if cn_res > cn_tol * norm0:
            raise ControlError(f"Crank-Nicolson terminal residual {cn_res / norm0:.3e} exceeds {cn_tol:g}")

    cost = float(np.sqrt(f1.norm_sq + f3.norm_sq))
    return ControlSynthesis(f1, f3, u1, u2, term, resid, cost, norm0, float(c0), dual.lambda_cut,
                            proj, float(decay), bound, dual, info, float(cn_res), tuple(events))


# --------------------------------------------------------------------------
# worst-case costs
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class WorstCase:
    """Worst-case cost over unit data supported in ``D``.

    Attributes
    ----------
    value : float
        ``sqrt`` of the top eigenvalue of the restricted cost form.
    u0 : ndarray
        Maximizing nodal datum (unit mass norm, supported in ``D``).
    cond_gram : float
        Largest condition number among the Grams that were inverted.
    regularized : bool
        True when a Gram was Tikhonov-shifted or truncated.
    events : tuple of str
    """

    value: float
    u0: np.ndarray = field(repr=False)
    cond_gram: float = 1.0
    regularized: bool = False
    events: tuple = ()


def cost_form(basis: SpectralBasis, omega: Subdomain, T: float, c0: float | None = None,
              method: str = THREE_PHASE, B=None, cond_max: float = COND_MAX):
    """Modal quadratic form ``S`` with ``cost(u0)^2 = c^T S c`` (``c`` modal data).

    Returns
    -------
    S : ndarray, shape (N, N)
    cond : float
    events : list of str
    """
    lam = basis.eigenvalues
    B = _observation_gram(basis, omega) if B is None else B
    events = []
    if method == GRAMIAN_OPTIMAL:
        if not T > 0:
            raise ValidationError(f"T must be positive, got {T!r}")
        Lg = window_gram(B, lam, lam, T)
        m, cond = leading_block(Lg, cond_max)
        if m < len(lam):
            events.append(f"gramian_truncation modes={m}/{len(lam)} cond={cond:.3e}")
        P = np.exp(-lam[:m] * T)
        Y = scipy.linalg.solve(Lg[:m, :m], np.diag(P), assume_a="pos")  # Lg^{-1} D
        S = np.zeros((len(lam), len(lam)))
        S[:m, :m] = P[:, None] * Y
        return 0.5 * (S + S.T), cond, events
    if method != THREE_PHASE:
        raise ValidationError(f"unknown method {method!r}")
    _validate_T(T)
    if c0 is None or not c0 > 0:
        raise ValidationError("three-phase cost needs c0 > 0")
    tau = T / 3.0
    N = len(lam)
    m1 = len(filter_modes(basis, c0 / T**2))
    E1 = np.exp(-lam * tau)
    cond1 = 1.0
    U1 = np.diag(E1)
    S = np.zeros((N, N))
    if m1:
        G1 = window_gram(B[:m1, :m1], lam[:m1], lam[:m1], tau)
        R = np.zeros((m1, N))
        R[:, :m1] = np.diag(E1[:m1])
        Ginv_R, cond1, eps = _tikhonov_solve(G1, R)  # (G1 + eps)^{-1} R
        if eps > 0:
            events.append(f"phase1_tikhonov cond={cond1:.3e} shift={eps:.3e}")
        S += Ginv_R.T @ G1 @ Ginv_R
        X = window_gram(B[:, :m1], lam, lam[:m1], tau)
        U1 = U1 - X @ Ginv_R
    L3 = window_gram(B, lam, lam, tau)
    m3, cond3 = leading_block(L3, cond_max)
    if m3 < N:
        events.append(f"phase3_truncation modes={m3}/{N} cond={cond3:.3e}")
    Z = (np.exp(-2 * lam * tau)[:, None] * U1)[:m3]  # state at T, controlled block
    S += Z.T @ scipy.linalg.solve(L3[:m3, :m3], Z, assume_a="pos")
    return 0.5 * (S + S.T), max(cond1, cond3), events


def worst_case(basis: SpectralBasis, omega: Subdomain, D: Subdomain, T: float, c0: float | None = None,
               method: str = THREE_PHASE, form=None) -> WorstCase:
    """Worst-case cost over unit-mass-norm data supported in ``D``."""
    if D.empty:
        raise ValidationError("data support D is empty")
    S, cond, events = cost_form(basis, omega, T, c0, method) if form is None else form
    idx = D.indices
    sw = np.sqrt(basis.mass[idx])
    F = basis.eigenvectors[idx].T * sw  # (N, |D|): modal coefficients of unit data
    Q = F.T @ S @ F
    Q = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Q)
    y = V[:, -1]
    y = y if y[np.argmax(np.abs(y))] > 0 else -y
    u0 = np.zeros(basis.eigenvectors.shape[0])
    u0[idx] = y / sw
    return WorstCase(float(np.sqrt(max(w[-1], 0.0))), u0, cond,
                     any("tikhonov" in e or "truncation" in e for e in events), tuple(events))


def worst_case_cost(basis: SpectralBasis, omega: Subdomain, D: Subdomain, T: float, c0: float | None = None,
                    method: str = THREE_PHASE) -> float:
    """``sup`` of the minimal-norm cost over unit data supported in ``D``."""
    return worst_case(basis, omega, D, T, c0, method).value


def phase3_amplification(basis, omega, T, B=None, cond_max=COND_MAX) -> float:
    """Largest phase-three cost per unit ``||u(2T/3)||``."""
    lam = basis.eigenvalues
    B = _observation_gram(basis, omega) if B is None else B
    tau = T / 3.0
    L3 = window_gram(B, lam, lam, tau)
    m3, _ = leading_block(L3, cond_max)
    e = np.exp(-lam[:m3] * tau)
    Y = scipy.linalg.solve(L3[:m3, :m3], np.diag(e), assume_a="pos")
    w = np.linalg.eigvalsh(0.5 * (e[:, None] * Y + (e[:, None] * Y).T))
    return float(np.sqrt(max(w[-1], 0.0)))


def choose_c0(basis: SpectralBasis, omega: Subdomain, T_coarse: float, c0_init: float = 1.0,
              max_doublings: int = 40):
    """Adaptive choice of ``c0`` by doubling.

    ``c0`` is doubled from ``c0_init`` until (a) the cutoff ``c0/T^2`` on the
    coarsest horizon reaches ``lambda_1`` (phase one is not empty) and (b)
    the phase-three amplification ``A3(T)`` is dominated by the phase-two
    decay, ``A3(T) exp(-c0/(3T)) <= 1``.

    Returns
    -------
    c0 : float
    amplification : float
        ``A3`` on the coarsest horizon.
    """
    _validate_T(T_coarse)
    amp = phase3_amplification(basis, omega, T_coarse)
    c0 = float(c0_init)
    for _ in range(max_doublings):
        if c0 / T_coarse**2 >= basis.eigenvalues[0] and amp * np.exp(-c0 / (3 * T_coarse)) <= 1.0:
            return c0, amp
        c0 *= 2.0
    raise ControlError(f"c0 gate did not settle after {max_doublings} doublings")


# --------------------------------------------------------------------------
# cost curves
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class CostRow:
    T: float
    delta: float  # np.inf denotes the whole domain
    method: str
    cost: float
    c0_used: float
    cond_gram: float
    regularized: bool
    terminal_residual: float

    @property
    def inv_T(self) -> float:
        return 1.0 / self.T


@dataclass(frozen=True)
class CurveFit:
    """``log cost = intercept + slope / T`` by least squares."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_cost_curve(T, cost) -> CurveFit:
    """Regress ``log cost`` on ``1/T``."""
    T = np.asarray(T, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if len(T) < 2:
        raise ValidationError("need at least two horizons to fit a cost curve")
    x = 1.0 / T
    y = np.log(cost)
    X = np.column_stack([np.ones_like(x), x])
    (b0, b1), *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - (b0 + b1 * x)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss if ss > 0 else 1.0
    return CurveFit(float(b1), float(b0), r2, len(T))


@dataclass(frozen=True)
class CostCurve:
    """Rows of worst-case costs and per-(delta, method) fits.

    Attributes
    ----------
    rows : list of CostRow
        Sorted by delta ascending (whole domain last), method, then T
        descending.
    fits : dict
        ``(delta, method) -> CurveFit``.
    c0 : float
    amplification : float
        Phase-three amplification on the coarsest horizon (c0 gate input).
    events : tuple of str
    dominance_violations : tuple
        ``(T, delta)`` rows where the three-phase cost fell below the
        Gramian-optimal cost.
    monotonicity_violations : dict
        ``(delta, method) -> count`` of cost increases with increasing T.
    """

    rows: list = field(repr=False)
    fits: dict
    c0: float
    amplification: float = np.nan
    events: tuple = ()
    dominance_violations: tuple = ()
    monotonicity_violations: dict = field(default_factory=dict)

    def slope(self, delta, method=THREE_PHASE) -> float:
        return self.fits[(delta, method)].slope


def _curve_cell(basis, omega, D, delta, T, c0, method, B):
    form = cost_form(basis, omega, T, c0, method, B=B)
    wc = worst_case(basis, omega, D, T, c0, method, form=form)
    u0 = HeatState(0.0, wc.u0)
    if method == THREE_PHASE:
        syn = synthesize(basis, omega, u0, T, c0, tol=np.inf, op=None)
        resid = syn.relative_residual
        if abs(syn.total_cost - wc.value) > 1e-6 * wc.value + 1e-300:
            logger.warning("synthesized cost %.6g differs from worst-case form %.6g", syn.total_cost, wc.value)
    else:
        _, term = hum_control(basis, omega, u0, T)
        resid = float(np.linalg.norm(basis.to_modal(term.values)))
    return CostRow(float(T), float(delta), method, wc.value, float(c0) if c0 else np.nan,
                   wc.cond_gram, wc.regularized, float(resid)), wc.events


def cost_curve(basis: SpectralBasis, omega: Subdomain, delta_grid, T_grid, c0: float | None = None,
               methods=(THREE_PHASE, GRAMIAN_OPTIMAL), include_omega: bool = True,
               jobs: int = 1) -> CostCurve:
    """Worst-case costs over ``D = omega_delta`` (and the whole domain).

    Parameters
    ----------
    c0 : float, optional
        Fixed cutoff constant; chosen by :func:`choose_c0` on the largest T
        when omitted.
    jobs : int
        Worker threads for the (T, D, method) cells.
    """
    T_grid = sorted((float(t) for t in T_grid), reverse=True)
    delta_grid = sorted(float(d) for d in delta_grid)
    if not T_grid or (not delta_grid and not include_omega):
        raise ValidationError("cost curve needs a nonempty T grid and at least one data region")
    for T in T_grid:
        if not 0 < T < 1:
            raise ValidationError(f"horizons must lie in (0, 1), got {T}")
    for d in delta_grid:
        if d < 0:
            raise ValidationError(f"delta must be >= 0, got {d}")
    amp = np.nan
    if THREE_PHASE in methods and c0 is None:
        c0, amp = choose_c0(basis, omega, T_grid[0])
    regions = [(d, dilate(omega, d)) for d in delta_grid]
    if include_omega:
        regions.append((np.inf, Subdomain.full(basis.domain)))
    B = _observation_gram(basis, omega)
    cells = [(d, D, T, meth) for d, D in regions for meth in methods for T in T_grid]

    def run(cell):
        d, D, T, meth = cell
        return _curve_cell(basis, omega, D, d, T, c0 if meth == THREE_PHASE else None, meth, B)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(run, cells))
    else:
        out = [run(c) for c in cells]
    rows = [r for r, _ in out]
    events = []
    for (d, _, T, meth), (_, ev) in zip(cells, out):
        events.extend(f"T={T:.6g} delta={d:.6g} method={meth}: {e}" for e in ev)

    fits, mono = {}, {}
    for d, _ in regions:
        for meth in methods:
            sub = [r for r in rows if r.delta == d and r.method == meth]
            fits[(d, meth)] = fit_cost_curve([r.T for r in sub], [r.cost for r in sub])
            # T descending: cost must be nondecreasing along the list
            c = np.array([r.cost for r in sub])
            mono[(d, meth)] = int(np.sum(np.diff(c) < -1e-9 * c[:-1]))
    dom = []
    if THREE_PHASE in methods and GRAMIAN_OPTIMAL in methods:
        key = {(r.T, r.delta, r.method): r.cost for r in rows}
        for d, _ in regions:
            for T in T_grid:
                if key[(T, d, THREE_PHASE)] < key[(T, d, GRAMIAN_OPTIMAL)] * (1 - 1e-9):
                    dom.append((T, d))
    return CostCurve(rows, fits, float(c0) if c0 else np.nan, amp, tuple(events), tuple(dom), mono)
