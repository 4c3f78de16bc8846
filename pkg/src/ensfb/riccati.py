"""Algebraic / differential Riccati solvers and the three feedback laws.

The ARE solved throughout is

    A^T P + P A - (1/alpha) P B B^T P + q I = 0,

with ``q = 1/N`` for the extended ensemble problem and ``q = 1`` for a
single parameter.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, NotStableError, SolverError, StabilizabilityError, StepUnderflowError, ValidationError
from .linalg import (
    DEFAULT_SETTINGS,
    SolverSettings,
    as_matrix,
    eigenvalues,
    max_norm,
    solve_lyapunov,
)
from .models import ParameterEnsemble, SystemFamily, compress, extend

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiccatiProblem:
    a: np.ndarray
    b: np.ndarray
    state_weight: float
    alpha: float

    def __post_init__(self):
        a = as_matrix(self.a, "a")
        b = as_matrix(self.b, "b")
        if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0]:
            raise ValidationError(f"inconsistent shapes a {a.shape}, b {b.shape}")
        if not self.alpha > 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if not self.state_weight > 0:
            raise ValidationError(f"state_weight must be > 0, got {self.state_weight}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def g(self) -> np.ndarray:
        """``(1/alpha) B B^T``."""
        return self.b @ self.b.T / self.alpha

    @classmethod
    def extended(cls, family: SystemFamily, ens: ParameterEnsemble, alpha: float) -> "RiccatiProblem":
        ext = extend(family, ens)
        return cls(ext.a_big, ext.b_big, 1.0 / ens.N, alpha)

    @classmethod
    def single(cls, family: SystemFamily, sigma: float, alpha: float) -> "RiccatiProblem":
        return cls(family.a(sigma), family.b, 1.0, alpha)


@dataclass(frozen=True)
class RiccatiSolution:
    pi: np.ndarray
    residual_max: float
    iterations_sign: int
    iterations_newton: int
    closed_loop_eigs: np.ndarray = field(repr=False)
    tol: float = np.inf

    @property
    def converged(self) -> bool:
        return self.residual_max <= self.tol

    @property
    def closed_loop_max_real(self) -> float:
        return float(np.max(self.closed_loop_eigs.real))


class FeedbackKind(str, enum.Enum):
    ENSEMBLE = "ensemble"
    MEAN_PARAMETER = "mean-parameter"
    AVERAGED_RICCATI = "averaged-riccati"


@dataclass(frozen=True)
class FeedbackLaw:
    kind: FeedbackKind
    gain: np.ndarray
    alpha: float
    precursor: np.ndarray

    @classmethod
    def from_precursor(cls, kind, b, precursor, alpha) -> "FeedbackLaw":
        p = 0.5 * (precursor + precursor.T)
        return cls(kind=FeedbackKind(kind), gain=-(b.T @ p) / alpha, alpha=alpha, precursor=p)

    def closed_loop(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b @ self.gain


def riccati_residual(pi, prob: RiccatiProblem) -> float:
    """Max-norm of the ARE left-hand side."""
    pi = np.asarray(pi, dtype=float)
    a = prob.a
    lhs = a.T @ pi + pi @ a - pi @ prob.g @ pi + prob.state_weight * np.eye(prob.n)
    return max_norm(lhs)


def _hamiltonian(prob: RiccatiProblem) -> np.ndarray:
    n = prob.n
    return np.block([
        [prob.a, -prob.g],
        [-prob.state_weight * np.eye(n), -prob.a.T],
    ])


def _sign_iteration(h: np.ndarray, settings: SolverSettings) -> tuple[np.ndarray, int]:
    """Newton iteration for the matrix sign function with determinant scaling."""
    z = h.copy()
    dim = z.shape[0]
    scaled = True
    delta = np.inf
    for k in range(1, settings.sign_max_iter + 1):
        try:
            z_inv = np.linalg.inv(z)
        except np.linalg.LinAlgError as exc:
            raise StabilizabilityError("singular iterate in sign iteration: "
                                       "Hamiltonian eigenvalue on the imaginary axis") from exc
        c = 1.0
        if scaled:
            _, logdet = np.linalg.slogdet(z)
            c = np.exp(logdet / dim)
            if not np.isfinite(c) or c == 0.0:
                c = 1.0
        z_new = 0.5 * (z / c + c * z_inv)
        delta = max_norm(z_new - z) / max(max_norm(z_new), 1.0)
        z = z_new
        if delta <= settings.sign_tol:
            return z, k
        if delta < 1e-2:
            # quadratic phase: scaling only slows the final steps
            scaled = False
    if delta > 1e-6:
        raise ConvergenceError(f"sign iteration did not converge in {settings.sign_max_iter} "
                               f"steps (last relative update {delta:.2e})")
    return z, settings.sign_max_iter


def _newton_kleinman(prob: RiccatiProblem, x0: np.ndarray, tol: float, settings: SolverSettings):
    x = x0
    best = (riccati_residual(x, prob), x)
    stall = 0
    iters = 0
    q = prob.state_weight * np.eye(prob.n)
    for iters in range(1, settings.newton_max_iter + 1):
        if best[0] <= tol:
            iters -= 1
            break
        f = prob.a - prob.g @ x
        try:
            x_new = solve_lyapunov(f, q + x @ prob.g @ x, settings)
        except NotStableError:
            break
        except SolverError:
            break
        res = riccati_residual(x_new, prob)
        x = x_new
        if res < 0.5 * best[0]:
            stall = 0
        else:
            stall += 1
        if res < best[0]:
            best = (res, x_new)
        if stall >= 3:
            break
    return best[1], best[0], iters


def solve_are(prob: RiccatiProblem, settings: SolverSettings = DEFAULT_SETTINGS) -> RiccatiSolution:
    """Stabilizing solution of the ARE: sign function, then Newton-Kleinman."""
    n = prob.n
    h = _hamiltonian(prob)
    h_eigs = eigenvalues(h, settings)
    hnorm = max(max_norm(h), 1.0)
    if np.min(np.abs(h_eigs.real)) < settings.imag_axis_tol * hnorm:
        raise StabilizabilityError(
            "Hamiltonian has an eigenvalue on the imaginary axis; "
            "(A, B/sqrt(alpha)) is probably not stabilizable"
        )
    w, k_sign = _sign_iteration(h, settings)
    lhs = np.vstack([w[:n, n:], w[n:, n:] + np.eye(n)])
    rhs = -np.vstack([w[:n, :n] + np.eye(n), w[n:, :n]])
    x = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    x = 0.5 * (x + x.T)

    tol = settings.are_tol if settings.are_tol is not None else 1e-11 * max(1.0, max_norm(prob.a))
    x, res, k_newton = _newton_kleinman(prob, x, tol, settings)
    x = 0.5 * (x + x.T)

    cl = eigenvalues(prob.a - prob.g @ x, settings)
    if np.max(cl.real) >= 0:
        raise NotStableError(f"Riccati closed loop not stable (max Re = {np.max(cl.real):.3e})")
    try:
        np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise SolverError("Riccati solution is not positive definite") from exc
    if res > tol:
        log.warning("ARE residual %.3e stalled above tolerance %.1e (n = %d)", res, tol, n)
    return RiccatiSolution(pi=x, residual_max=res, iterations_sign=k_sign,
                           iterations_newton=k_newton, closed_loop_eigs=cl, tol=tol)


@dataclass(frozen=True)
class DRESolution:
    pi_at_0: np.ndarray
    times: np.ndarray | None
    path: np.ndarray | None
    dense: object = field(default=None, repr=False)

    def at(self, t: float, horizon: float) -> np.ndarray:
        """Pi^T(t) from the backward dense solution (t in [0, T])."""
        if self.dense is None:
            raise ValueError("solve_dre was called without dense output")
        n = self.pi_at_0.shape[0]
        p = self.dense(horizon - t).reshape(n, n)
        return 0.5 * (p + p.T)


def solve_dre(
    prob: RiccatiProblem,
    horizon: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    n_samples: int = 0,
    dense: bool = False,
) -> DRESolution:
    """Integrate ``-dP/dt = Ric(P)``, ``P(T) = 0`` backward to t = 0.

    Uses the reversed time ``s = T - t`` so the integration runs forward
    (``dP/ds = Ric(P)``, ``P(s=0) = 0``).
    """
    if horizon < 0:
        raise ValidationError("horizon must be >= 0")
    n = prob.n
    if horizon == 0:
        z = np.zeros((n, n))
        return DRESolution(z, np.zeros(1) if n_samples else None, z[None] if n_samples else None)
    a, g, q = prob.a, prob.g, prob.state_weight

    def rhs(_s, y):
        p = y.reshape(n, n)
        p = 0.5 * (p + p.T)
        return (a.T @ p + p @ a - p @ g @ p + q * np.eye(n)).ravel()

    t_eval = None
    if n_samples:
        t_eval = np.linspace(0.0, horizon, n_samples)
    sol = solve_ivp(rhs, (0.0, horizon), np.zeros(n * n), method="RK45", rtol=rtol, atol=atol,
                    t_eval=t_eval, dense_output=dense)
    if not sol.success:
        t_fail = horizon - (sol.t[-1] if sol.t.size else 0.0)
        raise StepUnderflowError(f"DRE integration failed at t = {t_fail:.6g}: {sol.message}")
    p0 = sol.y[:, -1].reshape(n, n)
    p0 = 0.5 * (p0 + p0.T)
    times = path = None
    if n_samples:
        times = horizon - sol.t[::-1]
        path = sol.y[:, ::-1].T.reshape(-1, n, n)
        path = 0.5 * (path + path.transpose(0, 2, 1))
    return DRESolution(p0, times, path, sol.sol if dense else None)


def ensemble_feedback(sol: RiccatiSolution, family: SystemFamily, ens: ParameterEnsemble,
                      alpha: float) -> FeedbackLaw:
    """``-(1/alpha) B^T (E^T Pi_Sigma E)``."""
    if sol.pi.shape != (family.n * ens.N,) * 2:
        raise ValidationError(f"Pi has shape {sol.pi.shape}, expected {(family.n * ens.N,) * 2}")
    return FeedbackLaw.from_precursor(FeedbackKind.ENSEMBLE, family.b, compress(sol.pi, family.n), alpha)


def synthesize_ensemble(family: SystemFamily, ens: ParameterEnsemble, alpha: float,
                        settings: SolverSettings = DEFAULT_SETTINGS) -> tuple[FeedbackLaw, RiccatiSolution]:
    sol = solve_are(RiccatiProblem.extended(family, ens, alpha), settings)
    return ensemble_feedback(sol, family, ens, alpha), sol


def mean_parameter_feedback(family: SystemFamily, ens: ParameterEnsemble, alpha: float,
                            settings: SolverSettings = DEFAULT_SETTINGS) -> FeedbackLaw:
    sol = solve_are(RiccatiProblem.single(family, ens.mean, alpha), settings)
    return FeedbackLaw.from_precursor(FeedbackKind.MEAN_PARAMETER, family.b, sol.pi, alpha)


def averaged_riccati_feedback(family: SystemFamily, ens: ParameterEnsemble, alpha: float,
                              settings: SolverSettings = DEFAULT_SETTINGS) -> FeedbackLaw:
    pis = [solve_are(RiccatiProblem.single(family, s, alpha), settings).pi for s in ens]
    return FeedbackLaw.from_precursor(FeedbackKind.AVERAGED_RICCATI, family.b,
                                      sum(pis) / ens.N, alpha)


def build_law(kind, family: SystemFamily, ens: ParameterEnsemble, alpha: float,
              settings: SolverSettings = DEFAULT_SETTINGS) -> FeedbackLaw:
    kind = FeedbackKind(kind)
    if kind is FeedbackKind.ENSEMBLE:
        return synthesize_ensemble(family, ens, alpha, settings)[0]
    if kind is FeedbackKind.MEAN_PARAMETER:
        return mean_parameter_feedback(family, ens, alpha, settings)
    return averaged_riccati_feedback(family, ens, alpha, settings)
