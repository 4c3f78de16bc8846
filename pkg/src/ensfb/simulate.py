"""Closed-loop / open-loop simulation and quadratic cost bookkeeping.

Costs are accumulated inside the ODE state: the integrated system is

    x' = F x,   c_x' = 1/2 |x|^2,   c_u' = alpha/2 |K x|^2

with ``F = A + B K``.  When ``|x|`` crosses the divergence threshold the
state is renormalized and integration restarts; since the dynamics are
linear the true trajectory is the stored one times ``exp(log_scale)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import SolverError, StepUnderflowError, ValidationError
from .linalg import DEFAULT_SETTINGS, SolverSettings, as_matrix, eigenvalues, operator_norm
from .models import ExtendedSystem, ParameterEnsemble, SystemFamily, extension_apply
from .riccati import (
    FeedbackKind,
    FeedbackLaw,
    RiccatiProblem,
    build_law,
    solve_are,
    solve_dre,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    """Sampled closed-loop run.

    ``states`` and ``controls`` are true values (``inf`` only if they exceed
    the float range); ``log_scale[k]`` is the renormalization exponent that
    was active at sample ``k`` and is non-zero only for diverged runs.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    state_cost_acc: np.ndarray
    control_cost_acc: np.ndarray
    diverged: bool = False
    log_scale: np.ndarray | None = field(default=None, repr=False)
    log_state_cost: float = -np.inf
    log_control_cost: float = -np.inf

    @property
    def state_cost(self) -> float:
        return float(self.state_cost_acc[-1])

    @property
    def control_cost(self) -> float:
        return float(self.control_cost_acc[-1])

    @property
    def state_norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)


def _log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _safe_log(v: float) -> float:
    return float(np.log(v)) if v > 0 else -np.inf


def integrate_closed_loop(
    a,
    b,
    law: FeedbackLaw,
    x0,
    T: float,
    tol: float = 1e-10,
    n_samples: int | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> Trajectory:
    """Simulate ``x' = (a + b K) x`` on ``[0, T]`` with RK45 and running costs."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    x0 = np.asarray(x0, dtype=float).ravel()
    if not T > 0:
        raise ValidationError(f"T must be > 0, got {T}")
    if not tol > 0:
        raise ValidationError(f"tol must be > 0, got {tol}")
    n = a.shape[0]
    if x0.shape != (n,) or b.shape[0] != n or law.gain.shape != (b.shape[1], n):
        raise ValidationError("dimension mismatch between a, b, gain and x0")
    n_samples = settings.n_samples if n_samples is None else int(n_samples)
    if n_samples < 2:
        raise ValidationError("need at least 2 samples")

    k = law.gain
    f = a + b @ k
    kk = k.T @ k
    half_alpha = 0.5 * law.alpha
    threshold = settings.divergence_threshold

    def rhs(_t, y):
        x = y[:n]
        return np.concatenate([f @ x, [0.5 * (x @ x), half_alpha * (x @ kk @ x)]])

    def blow_up(_t, y):
        return np.linalg.norm(y[:n]) - threshold

    blow_up.terminal = True
    blow_up.direction = 1

    grid = np.linspace(0.0, T, n_samples)
    # pieces of (times, scaled samples, log scale, cost offsets in log space)
    t_parts, y_parts, s_parts, off_x, off_u = [], [], [], [], []
    t0, y0, s = 0.0, np.concatenate([x0, [0.0, 0.0]]), 0.0
    log_cx, log_cu = -np.inf, -np.inf
    diverged = False
    while True:
        t_eval = grid[(grid >= t0) & (grid <= T)]
        sol = solve_ivp(rhs, (t0, T), y0, method="RK45", rtol=tol, atol=tol * 1e-2,
                        t_eval=t_eval, events=blow_up)
        if sol.status == -1:
            raise StepUnderflowError(f"closed-loop integration failed at t = {sol.t[-1]:.6g}: "
                                     f"{sol.message}")
        t_parts.append(sol.t)
        y_parts.append(sol.y.T)
        s_parts.append(np.full(sol.t.size, s))
        off_x.append(np.full(sol.t.size, log_cx))
        off_u.append(np.full(sol.t.size, log_cu))
        if sol.status != 1:
            y_end = sol.y[:, -1]
            log_cx = _log_add(log_cx, 2 * s + _safe_log(y_end[n]))
            log_cu = _log_add(log_cu, 2 * s + _safe_log(y_end[n + 1]))
            break
        diverged = True
        t_hit = float(sol.t_events[0][0])
        y_hit = sol.y_events[0][0]
        log_cx = _log_add(log_cx, 2 * s + _safe_log(y_hit[n]))
        log_cu = _log_add(log_cu, 2 * s + _safe_log(y_hit[n + 1]))
        nrm = np.linalg.norm(y_hit[:n])
        s += float(np.log(nrm))
        t0 = t_hit
        y0 = np.concatenate([y_hit[:n] / nrm, [0.0, 0.0]])
        # drop grid points already emitted
        grid = grid[grid > t_hit]
        if grid.size == 0:
            break

    times = np.concatenate(t_parts)
    ys = np.concatenate(y_parts)
    scale = np.concatenate(s_parts)
    with np.errstate(over="ignore"):
        factor = np.exp(scale)
        states = ys[:, :n] * factor[:, None]
        sc = np.exp(np.logaddexp(np.concatenate(off_x),
                                 2 * scale + np.log(np.maximum(ys[:, n], 0.0) + 1e-300)))
        cc = np.exp(np.logaddexp(np.concatenate(off_u),
                                 2 * scale + np.log(np.maximum(ys[:, n + 1], 0.0) + 1e-300)))
        if not diverged:
            sc = ys[:, n].copy()
            cc = ys[:, n + 1].copy()
        controls = states @ k.T
    sc = np.maximum.accumulate(sc)
    cc = np.maximum.accumulate(cc)
    if diverged:
        log.info("closed loop diverged; costs tracked in log space (log cost %.3f)", log_cx)
    return Trajectory(times=times, states=states, controls=controls, state_cost_acc=sc,
                      control_cost_acc=cc, diverged=diverged, log_scale=scale,
                      log_state_cost=log_cx, log_control_cost=log_cu)


@dataclass(frozen=True)
class SigmaCost:
    sigma: float
    control_cost: float
    state_cost: float
    diverged: bool


@dataclass(frozen=True)
class CostReport:
    kind: str
    per_sigma: list[SigmaCost]
    averaged_control_cost: float
    averaged_state_cost: float

    @property
    def any_diverged(self) -> bool:
        return any(c.diverged for c in self.per_sigma)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "averaged_control_cost": self.averaged_control_cost,
            "averaged_state_cost": self.averaged_state_cost,
            "per_sigma": [c.__dict__ for c in self.per_sigma],
        }


def cost_report(
    family: SystemFamily,
    ens_eval: ParameterEnsemble,
    law: FeedbackLaw,
    x0,
    T: float,
    alpha: float | None = None,
    tol: float = 1e-10,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> CostReport:
    """Per-sigma costs of ``law`` and their arithmetic means."""
    if alpha is not None and alpha != law.alpha:
        raise ValidationError(f"law was built for alpha={law.alpha}, not {alpha}")
    rows = []
    for s in ens_eval:
        traj = integrate_closed_loop(family.a(s), family.b, law, x0, T, tol, settings=settings)
        rows.append(SigmaCost(float(s), traj.control_cost, traj.state_cost, traj.diverged))
    return CostReport(
        kind=law.kind.value,
        per_sigma=rows,
        averaged_control_cost=float(np.mean([r.control_cost for r in rows])),
        averaged_state_cost=float(np.mean([r.state_cost for r in rows])),
    )


def closed_loop_max_real(family: SystemFamily, sigma: float, law: FeedbackLaw) -> float:
    return float(np.max(eigenvalues(law.closed_loop(family.a(sigma), family.b)).real))


def max_real_eig_sweep(
    family: SystemFamily,
    sigma: float,
    laws,
    alpha_grid,
    ens: ParameterEnsemble,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> dict[str, np.ndarray]:
    """``max Re eig(A_sigma + B K_alpha)`` for each law kind over ``alpha_grid``."""
    out = {}
    for kind in laws:
        kind = FeedbackKind(kind)
        vals = [closed_loop_max_real(family, sigma, build_law(kind, family, ens, float(al), settings))
                for al in alpha_grid]
        out[kind.value] = np.array(vals)
    return out


# ---------------------------------------------------------------------------
# open-loop optimal control


@dataclass(frozen=True)
class OpenLoopSolution:
    times: np.ndarray
    control: np.ndarray  # (K, m)
    state: np.ndarray  # (K, nN)
    objective: float
    gradient_norm: float
    iterations: int
    converged: bool
    history: list[float] = field(repr=False, default_factory=list)


def _input_propagators(a: np.ndarray, b: np.ndarray, h: float):
    """Exact one-step map for ``x' = a x + b u`` with ``u`` linear on the step.

    Returns ``phi, g0, g1`` with ``x1 = phi x0 + g0 u0 + g1 u1``.
    """
    n, m = b.shape
    big = np.zeros((n + 2 * m, n + 2 * m))
    big[:n, :n] = a * h
    big[:n, n:n + m] = b * h
    big[n:n + m, n + m:] = np.eye(m)
    e = sla.expm(big)
    phi = e[:n, :n]
    c1 = e[:n, n:n + m]  # int_0^1 e^{A h (1-s)} B h ds
    c2 = e[:n, n + m:]  # int_0^1 e^{A h (1-s)} B h s ds
    return phi, c1 - c2, c2


def l2_norm(times, values) -> float:
    """``L2(0, T)`` norm of sampled vector values by the trapezoidal rule."""
    v = np.asarray(values, dtype=float).reshape(len(times), -1)
    return float(np.sqrt(np.trapezoid(np.sum(v * v, axis=1), times)))


def open_loop_solve(
    ext: ExtendedSystem,
    x0,
    T: float,
    alpha: float,
    settings: SolverSettings = DEFAULT_SETTINGS,
    n_grid: int = 2001,
    tol: float = 1e-8,
    max_iter: int = 2000,
) -> OpenLoopSolution:
    """Minimize ``int (1/2N)|x|^2 + (alpha/2)|u|^2`` over ``u`` on ``[0, T]``.

    ``u`` is continuous piecewise linear on a uniform grid; the forward
    system is propagated exactly for such inputs and the adjoint
    ``p' = -A^T p - x/N``, ``p(T) = 0`` is propagated backward with the
    matching discrete scheme, so the gradient ``alpha u + B^T p`` is the
    exact (L2-weighted) gradient of the discretized objective.  Step lengths
    alternate between the two Barzilai-Borwein formulas; a step that raises
    the objective is halved until it does not.

    ``x0`` is the state of a single system; the ensemble starts at ``E x0``.
    """
    if not T > 0:
        raise ValidationError(f"T must be > 0, got {T}")
    if not alpha > 0:
        raise ValidationError(f"alpha must be > 0, got {alpha}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape == (ext.n,):
        x0 = extension_apply(x0, ext.N)
    if x0.shape != (ext.n * ext.N,):
        raise ValidationError(f"x0 must have length {ext.n} or {ext.n * ext.N}")
    a, b = ext.a_big, ext.b_big
    N = ext.N
    dim, m = b.shape
    times = np.linspace(0.0, T, n_grid)
    h = times[1] - times[0]
    w = np.full(n_grid, h)
    w[0] = w[-1] = h / 2
    phi, g0, g1 = _input_propagators(a, b, h)

    def forward(u):
        x = np.empty((n_grid, dim))
        x[0] = x0
        drive = u[:-1] @ g0.T + u[1:] @ g1.T
        for i in range(n_grid - 1):
            x[i + 1] = phi @ x[i] + drive[i]
        return x

    def objective(x, u):
        return float(0.5 / N * w @ np.sum(x * x, axis=1) + 0.5 * alpha * w @ np.sum(u * u, axis=1))

    def gradient(x, u):
        lam = np.empty((n_grid, dim))
        lam[-1] = w[-1] * x[-1] / N
        for i in range(n_grid - 2, -1, -1):
            lam[i] = phi.T @ lam[i + 1] + w[i] * x[i] / N
        grad = alpha * w[:, None] * u
        grad[:-1] += lam[1:] @ g0
        grad[1:] += lam[1:] @ g1
        # Riesz representative in the trapezoidal L2 inner product
        return grad / w[:, None]

    def inner(p, q):
        return float(w @ np.sum(p * q, axis=1))

    u = np.zeros((n_grid, m))
    x = forward(u)
    j = objective(x, u)
    g = gradient(x, u)
    gnorm = np.sqrt(inner(g, g))
    history = [j]
    best = (j, u, x, gnorm)
    growth_cap = 1e6
    if not np.isfinite(j):
        raise SolverError("open-loop objective is not finite for u = 0")
    step = 1.0 / max(alpha + operator_norm(b) ** 2 * T ** 2 / N, 1e-12)
    it = 0
    converged = gnorm <= tol
    u_prev = g_prev = None
    while not converged and it < max_iter:
        it += 1
        if u_prev is not None:
            du, dg = u - u_prev, g - g_prev
            sy = inner(du, dg)
            if sy > 0:
                step = inner(du, du) / sy if it % 2 else sy / inner(dg, dg)
        for _ in range(60):
            u_new = u - step * g
            x_new = forward(u_new)
            j_new = objective(x_new, u_new)
            # nonmonotone safeguard: raw BB steps may climb temporarily
            if np.isfinite(j_new) and j_new <= growth_cap * best[0]:
                break
            step *= 0.5
        else:
            log.warning("open-loop line search failed at iteration %d", it)
            break
        u_prev, g_prev = u, g
        u, x, j = u_new, x_new, j_new
        g = gradient(x, u)
        gnorm = np.sqrt(inner(g, g))
        if j < best[0]:
            best = (j, u, x, gnorm)
            history.append(j)
        converged = gnorm <= tol
    j, u, x, gnorm = best if not converged else (j, u, x, gnorm)
    return OpenLoopSolution(times=times, control=u, state=x, objective=j, gradient_norm=gnorm,
                            iterations=it, converged=bool(converged), history=history)


def finite_horizon_feedback(prob: RiccatiProblem, x0, T: float, n_samples: int = 2001,
                            rtol: float = 1e-10, atol: float = 1e-12):
    """Optimal finite-horizon trajectory via the DRE feedback ``-(1/alpha) B^T P^T(t) x``.

    Returns ``(times, states, controls)`` sampled on a uniform grid.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    dre = solve_dre(prob, T, rtol=rtol, atol=atol, dense=True)
    b = prob.b

    def rhs(t, x):
        p = dre.at(t, T)
        return prob.a @ x - prob.g @ (p @ x)

    times = np.linspace(0.0, T, n_samples)
    sol = solve_ivp(rhs, (0.0, T), x0, method="RK45", rtol=rtol, atol=atol, t_eval=times)
    if not sol.success:
        raise StepUnderflowError(sol.message)
    states = sol.y.T
    controls = np.array([-(b.T @ (dre.at(t, T) @ x)) / prob.alpha for t, x in zip(times, states)])
    return times, states, controls


def horizon_gap(prob: RiccatiProblem, T_grid, rtol: float = 1e-10, atol: float = 1e-12,
                settings: SolverSettings = DEFAULT_SETTINGS) -> list[tuple[float, float]]:
    """``[(T, |P^T(0) - P|)]`` with ``P`` the stabilizing ARE solution.

    The DRE is autonomous, so ``P^T(0)`` is the reversed-time solution after
    time ``T``; a single integration to ``max(T_grid)`` serves every ``T``.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(T_grid < 0):
        raise ValidationError("horizons must be >= 0")
    pi = solve_are(prob, settings).pi
    t_max = float(T_grid.max()) if T_grid.size else 0.0
    out = []
    if t_max == 0:
        return [(float(t), operator_norm(pi)) for t in T_grid]
    dre = solve_dre(prob, t_max, rtol=rtol, atol=atol, dense=True)
    n = prob.n
    for t in T_grid:
        p = dre.dense(float(t)).reshape(n, n) if t > 0 else np.zeros((n, n))
        out.append((float(t), operator_norm(0.5 * (p + p.T) - pi)))
    return out
