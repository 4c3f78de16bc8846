"""Dense linear algebra kernel.

Every matrix is a plain 2-D ``numpy.ndarray`` of float64; eigenvalues are
Python/numpy complex scalars.  Functions are pure and never modify their
arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, NotStableError, SolverError, ValidationError

EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolverSettings:
    """Iteration budgets and tolerances used across the package."""

    schur_sweeps_per_row: int = 100
    lyap_rel_tol: float = 1e-10
    eig_dedup_tol: float = 1e-8
    stab_margin: float = 1e-10
    hautus_rel_floor: float = 1e-10
    sign_max_iter: int = 100
    sign_tol: float = 1e-13
    newton_max_iter: int = 50
    are_tol: float | None = None  # default 1e-11 * max(1, |A|_max)
    imag_axis_tol: float = 1e-9
    ode_rtol: float = 1e-10
    ode_atol: float = 1e-12
    divergence_threshold: float = 1e12
    n_samples: int = 1000
    ms_rel_tol: float = 1e-6


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class SchurForm:
    q: np.ndarray
    t: np.ndarray

    def blocks(self) -> list[tuple[int, int]]:
        """(start, size) of every diagonal block of ``t``."""
        t = self.t
        n = t.shape[0]
        out = []
        i = 0
        while i < n:
            if i + 1 < n and t[i + 1, i] != 0.0:
                out.append((i, 2))
                i += 2
            else:
                out.append((i, 1))
                i += 1
        return out


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.size == 0:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    return arr


def _square(a, name: str = "matrix") -> np.ndarray:
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    return arr


def max_norm(a) -> float:
    return float(np.max(np.abs(np.asarray(a, dtype=float)))) if np.size(a) else 0.0


def operator_norm(a) -> float:
    """Largest singular value, via the symmetric eigenproblem of ``a.T @ a``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    # scale first so that a.T @ a cannot overflow
    s = max_norm(a)
    if s == 0.0:
        return 0.0
    g = (a / s).T @ (a / s) if a.shape[0] >= a.shape[1] else (a / s) @ (a / s).T
    lam = np.linalg.eigvalsh((g + g.T) / 2)[-1]
    return float(s * np.sqrt(max(lam, 0.0)))


def real_schur(a, settings: SolverSettings = DEFAULT_SETTINGS) -> SchurForm:
    """Real Schur decomposition ``a = q t q^T``.

    LAPACK's Hessenberg reduction + Francis double-shift QR; 2x2 diagonal
    blocks of ``t`` carry complex-conjugate pairs.
    """
    a = _square(a, "a")
    n = a.shape[0]
    try:
        t, q = sla.schur(a, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceError(f"Schur iteration failed for {n}x{n} input: {exc}") from exc
    # clean sub-subdiagonal round-off so the block structure is exact
    t = np.triu(t, -1)
    sub = np.diag(t, -1).copy()
    for i in range(n - 1):
        if sub[i] != 0.0 and abs(sub[i]) <= EPS * (abs(t[i, i]) + abs(t[i + 1, i + 1])):
            sub[i] = 0.0
    t[np.arange(1, n), np.arange(n - 1)] = sub
    budget = settings.schur_sweeps_per_row * n
    resid = max_norm(q @ t @ q.T - a)
    if resid > 1e-8 * max(max_norm(a), 1.0) * max(n, 1):
        raise ConvergenceError(
            f"Schur reconstruction residual {resid:.3e} after a budget of {budget} sweeps"
        )
    return SchurForm(q=q, t=t)


def eigenvalues(a, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Eigenvalues read off the diagonal blocks of the real Schur form."""
    sf = real_schur(a, settings)
    t = sf.t
    out: list[complex] = []
    for i, size in sf.blocks():
        if size == 1:
            out.append(complex(t[i, i], 0.0))
            continue
        p, qq, r, s = t[i, i], t[i, i + 1], t[i + 1, i], t[i + 1, i + 1]
        mean = 0.5 * (p + s)
        disc = 0.25 * (p - s) ** 2 + qq * r
        if disc >= 0:
            root = np.sqrt(disc)
            out.extend([complex(mean + root, 0.0), complex(mean - root, 0.0)])
        else:
            root = np.sqrt(-disc)
            out.extend([complex(mean, root), complex(mean, -root)])
    return np.array(out, dtype=complex)


def default_rank_tol(m: np.ndarray) -> float:
    m = np.atleast_2d(m)
    if m.size == 0:
        return 0.0
    colmax = float(np.max(np.linalg.norm(m, axis=0)))
    return max(m.shape) * EPS * colmax


def _pivoted_r_diag(m: np.ndarray) -> np.ndarray:
    if m.size == 0:
        return np.zeros(0)
    r = sla.qr(m, mode="r", pivoting=True)[0]
    k = min(r.shape)
    return np.abs(np.diag(r[:k, :k]))


def rank_real(m, tol: float | None = None) -> int:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0 or not np.any(m):
        return 0
    tol = default_rank_tol(m) if tol is None else tol
    return int(np.sum(_pivoted_r_diag(m) > tol))


def rank_complex_details(m_re, m_im, tol: float | None = None) -> tuple[int, float, float, float]:
    """Rank over C plus the decision data ``(rank, tol, smallest kept, largest dropped)``."""
    m_re = np.atleast_2d(np.asarray(m_re, dtype=float))
    m_im = np.atleast_2d(np.asarray(m_im, dtype=float))
    if m_re.shape != m_im.shape:
        raise ValidationError(f"shape mismatch: {m_re.shape} vs {m_im.shape}")
    emb = np.block([[m_re, -m_im], [m_im, m_re]])
    if tol is None:
        tol = default_rank_tol(emb)
    if not np.any(emb):
        return 0, tol, np.inf, 0.0
    d = _pivoted_r_diag(emb)
    kept = d[d > tol]
    dropped = d[d <= tol]
    # real rank of the embedding is even in exact arithmetic; an odd count
    # means a value sits on the threshold and we round down
    return (
        int(kept.size) // 2,
        float(tol),
        float(kept.min()) if kept.size else np.inf,
        float(dropped.max()) if dropped.size else 0.0,
    )


def rank_complex(m_re, m_im, tol: float | None = None) -> int:
    """Rank over C of ``m_re + 1j*m_im`` from its 2x real embedding."""
    return rank_complex_details(m_re, m_im, tol)[0]


def is_hurwitz(a, margin: float = 0.0) -> bool:
    return bool(np.max(eigenvalues(a).real) < -margin)


def solve_lyapunov(f, w, settings: SolverSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Solve ``f^T x + x f + w = 0`` for symmetric ``x`` (Bartels-Stewart)."""
    f = _square(f, "f")
    w = _square(w, "w")
    if f.shape != w.shape:
        raise ValidationError(f"shape mismatch: f {f.shape}, w {w.shape}")
    eig = eigenvalues(f, settings)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0:
        raise NotStableError(f"f is not stable: eigenvalue {worst:.6g} has Re >= 0")
    w = 0.5 * (w + w.T)
    x = sla.solve_continuous_lyapunov(f.T, -w)
    x = 0.5 * (x + x.T)
    resid = max_norm(f.T @ x + x @ f + w)
    scale = max(max_norm(w), EPS)
    # the relative floor grows with conditioning; 1e-10 * |w| is the target,
    # but accept the rounding floor of the products for stiff f
    floor = 64 * EPS * max_norm(f) * max_norm(x) * f.shape[0]
    if resid > max(settings.lyap_rel_tol * scale, floor):
        raise SolverError(f"Lyapunov residual {resid:.3e} exceeds tolerance")
    return x


def block_diag(*blocks: np.ndarray) -> np.ndarray:
    return sla.block_diag(*blocks)
