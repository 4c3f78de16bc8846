"""Decay certificates, the stability constant M_s and suboptimality bounds.

Infinite-horizon L2 norms are evaluated exactly: for a stable linear
system ``z' = F z`` and an output ``C z``,
``|C z|^2_{L2(0, inf)} = z0^T W z0`` with ``F^T W + W F + C^T C = 0``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NotStableError, ValidationError
from .linalg import (
    DEFAULT_SETTINGS,
    SolverSettings,
    as_matrix,
    block_diag,
    eigenvalues,
    max_norm,
    operator_norm,
    solve_lyapunov,
)
from .models import ParameterEnsemble, SystemFamily, compress, deviation_norm, extension_apply
from .riccati import RiccatiProblem, solve_are


@dataclass(frozen=True)
class NormEquivalence:
    beta1: float
    beta2: float


def norm_equivalence(pi) -> NormEquivalence:
    """``beta1^2 = min eig(pi)``, ``beta2^2 = max eig(pi)``."""
    pi = as_matrix(pi, "pi")
    if pi.shape[0] != pi.shape[1]:
        raise ValidationError(f"pi must be square, got {pi.shape}")
    if max_norm(pi - pi.T) > 1e-10 * max(max_norm(pi), 1.0):
        raise ValidationError("pi is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (pi + pi.T))
    if lam[0] <= 0:
        raise ValidationError(f"pi is not positive definite (min eigenvalue {lam[0]:.3e})")
    return NormEquivalence(beta1=float(np.sqrt(lam[0])), beta2=float(np.sqrt(lam[-1])))


@dataclass(frozen=True)
class DecayCertificate:
    """Sufficient smallness condition and the resulting exponential rate.

    ``margin`` is ``threshold - deviation`` so near-threshold cases are
    visible; ``lam > 0`` exactly when the condition holds.
    """

    kind: str
    condition_holds: bool
    margin: float
    lam: float
    deviation: float
    threshold: float
    beta1: float | None = None
    beta2: float | None = None

    def envelope(self, t, x0_norm: float) -> np.ndarray:
        """``(beta2/beta1)^2 exp(-lam t) |x0|^2`` (ensemble kind only)."""
        if self.beta1 is None:
            raise ValueError("envelope is only defined for the ensemble certificate")
        t = np.asarray(t, dtype=float)
        return (self.beta2 / self.beta1) ** 2 * np.exp(-self.lam * t) * x0_norm ** 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def ensemble_decay_certificate(family: SystemFamily, ens: ParameterEnsemble, sigma: float,
                               pi_big, alpha: float) -> DecayCertificate:
    """``|A_sigma - A_Sigma| < beta1 / (2 N beta2^3)`` and its decay rate.

    ``alpha`` does not enter the formulas; it is accepted so that callers
    can pass the data a certificate belongs to.
    """
    if not alpha > 0:
        raise ValidationError("alpha must be > 0")
    ne = norm_equivalence(pi_big)
    N = ens.N
    if np.shape(pi_big) != (family.n * N,) * 2:
        raise ValidationError("pi_big does not match the extended system")
    dev = deviation_norm(family, ens, sigma)
    b1, b2 = ne.beta1, ne.beta2
    threshold = b1 / (2 * N * b2 ** 3)
    lam = 1.0 / (N * b2 ** 2) - (2 * b2 / b1) * dev
    return DecayCertificate("ensemble", bool(dev < threshold), threshold - dev, lam, dev,
                            threshold, b1, b2)


def mean_decay_certificate(family: SystemFamily, ens: ParameterEnsemble, sigma: float,
                           alpha: float, settings: SolverSettings = DEFAULT_SETTINGS) -> DecayCertificate:
    """``|A_sigma - A_mean| < 1 / (2 |Pi_mean|)`` with rate ``1 - 2 |Pi_mean| dev``."""
    pi_bar = solve_are(RiccatiProblem.single(family, ens.mean, alpha), settings).pi
    p_norm = operator_norm(pi_bar)
    dev = operator_norm(family.a(sigma) - family.a(ens.mean))
    threshold = 1.0 / (2 * p_norm)
    lam = 1.0 - 2 * p_norm * dev
    return DecayCertificate("mean-parameter", bool(dev < threshold), threshold - dev, lam, dev,
                            threshold)


# ---------------------------------------------------------------------------
# stability constant


def _resolvent_gain(g: np.ndarray, omega: float) -> float:
    n = g.shape[0]
    s = np.linalg.svd(1j * omega * np.eye(n) - g, compute_uv=False)
    return float(1.0 / s[-1])


def _imag_axis_freqs(g: np.ndarray, gamma: float, rel: float = 1e-8) -> np.ndarray:
    n = g.shape[0]
    h = np.block([[g, np.eye(n) / gamma], [-np.eye(n) / gamma, -g.T]])
    lam = np.linalg.eigvals(h)
    scale = max(max_norm(h), 1.0)
    on_axis = lam[np.abs(lam.real) <= rel * scale]
    return np.unique(np.round(np.abs(on_axis.imag), 14))


def estimate_ms(g, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Peak resolvent gain ``sup_w |(i w I - g)^{-1}|`` of a stable matrix.

    ``gamma`` exceeds the peak iff the Hamiltonian
    ``[[g, I/gamma], [-I/gamma, -g^T]]`` has no purely imaginary
    eigenvalue.  The lower bound is always an attained gain; each pass
    evaluates the gain at the midpoints of the imaginary-axis crossings
    (two-step bisection on the frequency axis), which converges
    quadratically.
    """
    g = as_matrix(g, "g")
    if g.shape[0] != g.shape[1]:
        raise ValidationError("g must be square")
    eig = eigenvalues(g)
    if np.max(eig.real) >= 0:
        raise NotStableError(f"g is not stable (max Re eig = {np.max(eig.real):.3e})")
    cands = [0.0] + [abs(z.imag) for z in eig]
    lower = max(_resolvent_gain(g, w) for w in cands)
    for _ in range(max_iter):
        gamma = lower * (1 + 2 * tol)
        freqs = _imag_axis_freqs(g, gamma)
        if freqs.size == 0:
            return float(lower * (1 + tol))
        pts = np.concatenate([freqs, [0.0]]) if freqs.size == 1 else freqs
        pts = np.sort(pts)
        mids = 0.5 * (pts[:-1] + pts[1:]) if pts.size > 1 else pts
        best = max(_resolvent_gain(g, w) for w in np.concatenate([mids, freqs]))
        if best <= lower * (1 + tol):
            return float(lower * (1 + tol))
        lower = best
    return float(lower * (1 + tol))


# ---------------------------------------------------------------------------
# suboptimality


@dataclass(frozen=True)
class SuboptimalityBound:
    sigma: float
    deviation: float
    theta: float
    ms: float
    beta1: float
    beta2: float
    norm_x_sigma: float
    norm_p_sigma: float
    norm_ex_feedback: float
    c_inner: float
    c_main: float
    c_traj: float
    c_final: float
    cost_ensemble: float  # J(x, u_Sigma)
    cost_sigma: float  # J(E x_sigma, u_sigma)
    cost_feedback: float  # J(E x_{Sigma,sigma}, u_{Sigma,sigma})
    # right-hand sides
    lemma_bound: float
    corollary_bound: float
    theorem_bound: float
    robustness_bound: float
    final_bound: float
    final_corollary_bound: float
    # measured left-hand sides
    lemma_measured: float
    gap_measured: float
    robustness_measured: float
    final_measured: float
    feedback_stable: bool
    truncation_gap: float = 0.0

    @property
    def bound_value(self) -> float:
        return self.final_bound

    def sound(self, slack: float = 0.02) -> dict[str, bool]:
        """Measured left-hand sides against the bounds (gaps compared in magnitude:
        the ensemble optimum can cost more than the single-system optimum)."""
        f = 1.0 + slack
        abs_eps = 1e-12 * max(1.0, self.cost_sigma)
        return {
            "lemma": self.lemma_measured <= f * self.lemma_bound + abs_eps,
            "corollary": abs(self.gap_measured) <= f * self.corollary_bound + abs_eps,
            "theorem": abs(self.gap_measured) <= f * self.theorem_bound + abs_eps,
            "robustness": abs(self.robustness_measured) <= f * self.robustness_bound + abs_eps,
            "final": self.final_measured <= f * self.final_bound + abs_eps,
            "final_corollary": self.final_measured <= f * self.final_corollary_bound + abs_eps,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound_value"] = self.bound_value
        d["sound"] = self.sound()
        return d


def _times(dev: float, c: float) -> float:
    # 0 * inf would be nan; a zero deviation means identical problems
    return 0.0 if dev == 0 else dev * c


def _quad(f: np.ndarray, c: np.ndarray, z0: np.ndarray, settings) -> float:
    """``|C z|^2`` over (0, inf) for ``z' = f z``, ``z(0) = z0``."""
    w = solve_lyapunov(f, c.T @ c, settings)
    return float(max(z0 @ w @ z0, 0.0))


def suboptimality_bound(
    family: SystemFamily,
    ens: ParameterEnsemble,
    sigma: float,
    alpha: float,
    x0,
    theta: float | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
    ms_tol: float | None = None,
) -> SuboptimalityBound:
    """Every suboptimality constant and bound for one ``(ensemble, sigma, alpha)``.

    Trajectories involved (all from ``x0``, the ensemble from ``E x0``):
    the ensemble optimum ``(x, u_Sigma)``, the optimum ``(x_sigma, u_sigma)``
    of the single system, and the ensemble feedback applied to the single
    system ``(x_{Sigma,sigma}, u_{Sigma,sigma})``.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n, N = family.n, ens.N
    if x0.shape != (n,):
        raise ValidationError(f"x0 must have length {n}")
    dev = deviation_norm(family, ens, sigma)
    if theta is None:
        theta = 2.0 * dev if dev > 0 else 1.0
    if not theta > dev:
        raise ValidationError(f"theta = {theta} must exceed the deviation {dev}")

    prob_big = RiccatiProblem.extended(family, ens, alpha)
    pi_big = solve_are(prob_big, settings).pi
    prob_s = RiccatiProblem.single(family, sigma, alpha)
    pi_s = solve_are(prob_s, settings).pi
    ne = norm_equivalence(pi_big)
    b2 = ne.beta2
    b, b_big = family.b, prob_big.b

    k_big = -(b_big.T @ pi_big) / alpha  # u_Sigma = k_big x
    k_s = -(b.T @ pi_s) / alpha  # u_sigma = k_s x_sigma
    k_fb = -(b.T @ compress(pi_big, n)) / alpha  # u_{Sigma,sigma}
    g_big = prob_big.a + b_big @ k_big
    f_s = family.a(sigma) + b @ k_s
    f_fb = family.a(sigma) + b @ k_fb
    feedback_stable = bool(np.max(eigenvalues(f_fb).real) < 0)

    ms = estimate_ms(g_big, settings.ms_rel_tol if ms_tol is None else ms_tol)

    # stacked (x, x_sigma)
    dim = n * N
    f_pair = block_diag(g_big, f_s)
    z0 = np.concatenate([extension_apply(x0, N), x0])
    e_op = np.tile(np.eye(n), (N, 1))
    sel_x = np.hstack([np.eye(dim), np.zeros((dim, n))])
    sel_s = np.hstack([np.zeros((n, dim)), np.eye(n)])
    norm_x_sigma = math.sqrt(_quad(f_s, np.eye(n), x0, settings))
    norm_p_sigma = math.sqrt(_quad(f_s, pi_s, x0, settings))
    sum_x = math.sqrt(_quad(f_pair, sel_x + e_op @ sel_s, z0, settings))
    sum_u = math.sqrt(_quad(f_pair, k_big @ sel_x + k_s @ sel_s, z0, settings))
    diff_x2 = _quad(f_pair, sel_x - e_op @ sel_s, z0, settings)
    diff_u2 = _quad(f_pair, k_big @ sel_x - k_s @ sel_s, z0, settings)

    cost_ensemble = 0.5 * float(z0[:dim] @ pi_big @ z0[:dim])
    cost_sigma = 0.5 * float(x0 @ pi_s @ x0)
    if feedback_stable:
        norm_fb2 = _quad(f_fb, np.eye(n), x0, settings)
        cost_feedback = 0.5 * norm_fb2 + 0.5 * alpha * _quad(f_fb, k_fb, x0, settings)
        norm_ex_fb = math.sqrt(N * norm_fb2)
    else:
        norm_ex_fb = cost_feedback = math.inf

    b_norm = operator_norm(b_big)
    c_inner = max(ms * norm_x_sigma + norm_p_sigma, ms * norm_x_sigma * b2 ** 2 * b_norm / alpha)
    c_main = ms * norm_x_sigma * norm_p_sigma + (1 + math.sqrt(alpha * N)) ** 2 * c_inner ** 2
    c_traj = sum_x / math.sqrt(N) + math.sqrt(alpha) * sum_u
    robust_const = b2 ** 2 * norm_ex_fb ** 2
    c_final = max(c_traj * math.sqrt(c_main), robust_const)
    theorem_core = 2.0 / (theta - dev) * (theta ** 2 * c_main + cost_ensemble)

    lemma_measured = 0.5 / N * diff_x2 + 0.5 * alpha * diff_u2
    return SuboptimalityBound(
        sigma=float(sigma),
        deviation=dev,
        theta=float(theta),
        ms=ms,
        beta1=ne.beta1,
        beta2=b2,
        norm_x_sigma=norm_x_sigma,
        norm_p_sigma=norm_p_sigma,
        norm_ex_feedback=norm_ex_fb,
        c_inner=c_inner,
        c_main=c_main,
        c_traj=c_traj,
        c_final=c_final,
        cost_ensemble=cost_ensemble,
        cost_sigma=cost_sigma,
        cost_feedback=cost_feedback,
        lemma_bound=dev ** 2 * c_main,
        corollary_bound=dev * c_traj * math.sqrt(c_main),
        theorem_bound=dev * theorem_core,
        robustness_bound=_times(dev, robust_const),
        final_bound=_times(dev, c_final),
        final_corollary_bound=_times(dev, theorem_core + robust_const),
        lemma_measured=lemma_measured,
        gap_measured=cost_sigma - cost_ensemble,
        robustness_measured=cost_feedback - cost_ensemble,
        final_measured=abs(cost_sigma - cost_feedback),
        feedback_stable=feedback_stable,
    )
