"""Parameter ensembles, system families and the extended (stacked) system."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError
from .linalg import as_matrix, block_diag, operator_norm


@dataclass(frozen=True)
class ParameterEnsemble:
    values: tuple[float, ...]
    pairwise_distinct: bool = field(init=False)

    def __init__(self, values):
        vals = tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))
        if len(vals) < 1:
            raise ValidationError("an ensemble needs at least one parameter")
        if not all(np.isfinite(vals)):
            raise ValidationError("ensemble parameters must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "pairwise_distinct", len(set(vals)) == len(vals))

    @classmethod
    def uniform(cls, a: float, b: float, n: int) -> "ParameterEnsemble":
        """Uniform partition ``a + (i-1)(b-a)/(N-1)``, i = 1..N."""
        if n < 1:
            raise ValidationError("N must be positive")
        if n == 1:
            return cls([a])
        return cls([a + (i / (n - 1)) * (b - a) for i in range(n)])

    @property
    def N(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class SystemFamily:
    """``sigma -> A_sigma`` plus the sigma-independent input matrix ``b``."""

    name: str
    a_of: Callable[[float], np.ndarray]
    b: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        b = as_matrix(self.b, "b")
        object.__setattr__(self, "b", b)
        a0 = self.a(0.0)
        if a0.shape != (b.shape[0], b.shape[0]):
            raise ValidationError(f"a_of returns {a0.shape}, expected {(b.shape[0],) * 2}")

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    def a(self, sigma: float) -> np.ndarray:
        a = as_matrix(self.a_of(float(sigma)), "A_sigma")
        if a.shape != (self.n, self.n):
            raise ValidationError(f"A_sigma has shape {a.shape}, expected {(self.n, self.n)}")
        return a


@dataclass(frozen=True)
class ExtendedSystem:
    a_big: np.ndarray
    b_big: np.ndarray
    n: int
    m: int
    N: int

    def blocks(self) -> list[np.ndarray]:
        n = self.n
        return [self.a_big[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(self.N)]


def extend(family: SystemFamily, ens: ParameterEnsemble) -> ExtendedSystem:
    blocks = [family.a(s) for s in ens]
    return ExtendedSystem(
        a_big=block_diag(*blocks),
        b_big=np.tile(family.b, (ens.N, 1)),
        n=family.n,
        m=family.m,
        N=ens.N,
    )


def extension_apply(x, N: int) -> np.ndarray:
    """Stack ``N`` copies of ``x`` (works on vectors and on column blocks)."""
    x = np.asarray(x, dtype=float)
    if N < 1:
        raise ValidationError("N must be positive")
    if x.ndim == 1:
        return np.tile(x, N)
    return np.tile(x, (N, 1))


def compress(m_big, n: int) -> np.ndarray:
    """``E^T M E``: the sum of all n x n blocks of ``m_big``."""
    m_big = np.asarray(m_big, dtype=float)
    if m_big.ndim != 2 or m_big.shape[0] != m_big.shape[1] or m_big.shape[0] % n:
        raise ValidationError(f"cannot compress a {m_big.shape} matrix into {n}x{n} blocks")
    N = m_big.shape[0] // n
    return m_big.reshape(N, n, N, n).sum(axis=(0, 2))


def deviation_norm(family: SystemFamily, ens: ParameterEnsemble, sigma: float) -> float:
    """``|A_Sigma - A_sigma|``; the difference is block diagonal, so take the max block norm."""
    a_s = family.a(sigma)
    return max(operator_norm(family.a(si) - a_s) for si in ens)


# ---------------------------------------------------------------------------
# preset families


def oscillator(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([[0.0, 1.0], [-1.0, -sigma]])
    b = np.array([[0.0], [1.0]])
    return a, b


def _check_rates(rates, strict: bool):
    for r in rates:
        if not np.isfinite(r) or r < 0 or (strict and r == 0):
            raise ValidationError(f"transfer rates must be {'> 0' if strict else '>= 0'}, got {r}")


def catenary_closed(b12, b21, b23, b32, sigma) -> tuple[np.ndarray, np.ndarray]:
    _check_rates((b12, b21, b23, b32), strict=False)
    a = np.array([
        [-b12, b21, 0.0],
        [b12, -(b21 + b23), b32 + sigma],
        [0.0, b23, -b32 - sigma],
    ], dtype=float)
    return a, np.array([[1.0], [0.0], [0.0]])


def catenary_open(b12, b21, b23, b32, sigma) -> tuple[np.ndarray, np.ndarray]:
    _check_rates((b12, b21, b23, b32), strict=True)
    a = np.array([
        [-b12, b21, 0.0],
        [b12, -(b21 + b23), b32],
        [0.0, b23, -b32 - sigma],
    ], dtype=float)
    return a, np.array([[1.0], [0.0], [0.0]])


def cyclic(b12, b23, b32, sigma) -> tuple[np.ndarray, np.ndarray]:
    _check_rates((b12, b23, b32), strict=True)
    a = np.array([
        [-b12, 0.0, sigma],
        [b12, -b23, b32],
        [0.0, b23, -b32],
    ], dtype=float)
    return a, np.array([[0.0], [1.0], [0.0]])


def spectral_heat_b(M: int, omega1: float, omega2: float) -> np.ndarray:
    j = np.arange(1, M + 1, dtype=float)
    return (2.0 / (j * np.pi) * (np.cos(j * omega1 / 2) - np.cos(j * omega2 / 2))).reshape(-1, 1)


def spectral_heat(M: int, sigma, omega1: float, omega2: float) -> tuple[np.ndarray, np.ndarray]:
    """Spectral Galerkin truncation of the 1-D heat equation on (0, 2*pi)."""
    if M < 1:
        raise ValidationError("M must be >= 1")
    if not (0 <= omega1 < omega2 <= 2 * np.pi):
        raise ValidationError("need 0 <= omega1 < omega2 <= 2*pi")
    j = np.arange(1, M + 1, dtype=float)
    return np.diag(sigma - j ** 2 / 4), spectral_heat_b(M, omega1, omega2)


PRESET_DEFAULTS: dict[str, dict] = {
    "oscillator": {},
    "catenary-closed": {"b12": 1.0, "b21": 0.5, "b23": 2.0, "b32": 1.0},
    "catenary-open": {"b12": 1.0, "b21": 0.5, "b23": 2.0, "b32": 1.0},
    "cyclic": {"b12": 1.0, "b23": 2.0, "b32": 1.0},
    "spectral-heat": {"M": 5, "omega1": 1.0, "omega2": 2.0},
}

_BUILDERS = {
    "oscillator": lambda p, s: oscillator(s),
    "catenary-closed": lambda p, s: catenary_closed(p["b12"], p["b21"], p["b23"], p["b32"], s),
    "catenary-open": lambda p, s: catenary_open(p["b12"], p["b21"], p["b23"], p["b32"], s),
    "cyclic": lambda p, s: cyclic(p["b12"], p["b23"], p["b32"], s),
    "spectral-heat": lambda p, s: spectral_heat(int(p["M"]), s, p["omega1"], p["omega2"]),
}


def make_family(name: str, **params) -> SystemFamily:
    """Build a named preset family; unknown keys are rejected."""
    if name not in _BUILDERS:
        raise ValidationError(f"unknown model {name!r}; choose from {sorted(_BUILDERS)}")
    merged = dict(PRESET_DEFAULTS[name])
    unknown = set(params) - set(merged)
    if unknown:
        raise ValidationError(f"unknown parameters for {name}: {sorted(unknown)}")
    merged.update(params)
    build = _BUILDERS[name]
    _, b = build(merged, 0.0)
    return SystemFamily(name=name, a_of=lambda s: build(merged, s)[0], b=b, params=merged)


def family_from_affine(name: str, a0, a1, b) -> SystemFamily:
    """Family ``A_sigma = a0 + sigma * a1`` (used by randomized tests)."""
    a0 = as_matrix(a0, "a0")
    a1 = as_matrix(a1, "a1")
    return SystemFamily(name=name, a_of=lambda s: a0 + s * a1, b=b)
