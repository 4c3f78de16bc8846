"""Controllability and stabilizability verdicts for parameter ensembles."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    DEFAULT_SETTINGS,
    SolverSettings,
    default_rank_tol,
    eigenvalues,
    max_norm,
    operator_norm,
    rank_complex_details,
)
from .models import ExtendedSystem, ParameterEnsemble, SystemFamily, extend, spectral_heat_b

log = logging.getLogger(__name__)

SUBSET_ENUMERATION_CAP = 10**6


@dataclass
class EigenTest:
    eigenvalue: complex
    rank: int
    required: int
    tol: float
    near_tolerance: bool


@dataclass
class HautusReport:
    verdict: bool
    mode: str
    tested_eigenvalues: list[EigenTest] = field(default_factory=list)

    @property
    def witnesses(self) -> list[complex]:
        return [t.eigenvalue for t in self.tested_eigenvalues if t.rank < t.required]

    @property
    def near_tolerance(self) -> bool:
        return any(t.near_tolerance for t in self.tested_eigenvalues)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "mode": self.mode,
            "near_tolerance": self.near_tolerance,
            "tested_eigenvalues": [
                {
                    "re": t.eigenvalue.real,
                    "im": t.eigenvalue.imag,
                    "rank": t.rank,
                    "required": t.required,
                    "near_tolerance": t.near_tolerance,
                }
                for t in self.tested_eigenvalues
            ],
        }


@dataclass
class LemmaConditionReport:
    each_system_stabilizable: list[bool]
    overlap_condition_holds: bool
    pairwise_disjoint_unstable: bool
    sufficient_verdict: bool | None
    necessary_violation: str | None
    subset_regime: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _dedup(eigs, tol: float) -> list[complex]:
    out: list[complex] = []
    for lam in sorted(eigs, key=lambda z: (z.real, z.imag)):
        if not any(abs(lam - mu) <= tol for mu in out):
            out.append(complex(lam))
    return out


def kalman_controllable(ext: ExtendedSystem, tol: float | None = None) -> tuple[bool, int]:
    """Rank of ``[B, AB, ..., A^(nN-1) B]`` via an orthonormal Krylov basis.

    Each new power is orthogonalized (twice) against the basis found so far
    and rescaled, so raw powers never overflow; the basis size is the rank.
    """
    a, b = ext.a_big, ext.b_big
    dim = a.shape[0]
    scale = max(operator_norm(a), 1.0)
    if tol is None:
        tol = 1e-10
    basis = np.zeros((dim, 0))
    block = b / max(np.max(np.linalg.norm(b, axis=0)), np.finfo(float).tiny)
    for _ in range(dim):
        new_cols = []
        for col in block.T:
            v = col.copy()
            ref = np.linalg.norm(v)
            if ref == 0.0:
                continue
            for _ in range(2):
                if basis.shape[1]:
                    v -= basis @ (basis.T @ v)
                for w in new_cols:
                    v -= w * (w @ v)
            nv = np.linalg.norm(v)
            if nv > tol * ref:
                new_cols.append(v / nv)
        if not new_cols:
            break
        fresh = np.column_stack(new_cols)
        basis = np.hstack([basis, fresh])
        if basis.shape[1] >= dim:
            break
        block = a @ fresh / scale
    rank = basis.shape[1]
    return rank == dim, rank


def _pencil_rank(a: np.ndarray, b: np.ndarray, lam: complex, tol: float | None, settings):
    dim = a.shape[0]
    m_re = np.hstack([a - lam.real * np.eye(dim), b])
    m_im = np.hstack([-lam.imag * np.eye(dim), np.zeros_like(b)])
    if tol is None:
        emb = np.block([[m_re, -m_im], [m_im, m_re]])
        tol = max(default_rank_tol(emb), settings.hautus_rel_floor * max(1.0, max_norm(emb)))
    rank, tol, kept_min, dropped_max = rank_complex_details(m_re, m_im, tol)
    near = kept_min < 10 * tol or dropped_max > tol / 10
    return rank, tol, near


def hautus_test(
    ext: ExtendedSystem,
    mode: str = "controllability",
    tol: float | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> HautusReport:
    """Hautus rank test of ``[A_Sigma - lam I, B]`` at the (unstable) eigenvalues."""
    if mode not in ("controllability", "stabilizability"):
        raise ValueError(f"unknown mode {mode!r}")
    eigs = np.concatenate([eigenvalues(blk, settings) for blk in ext.blocks()])
    if mode == "stabilizability":
        eigs = eigs[eigs.real >= -settings.stab_margin]
    tests = []
    dim = ext.a_big.shape[0]
    for lam in _dedup(eigs, settings.eig_dedup_tol):
        rank, used_tol, near = _pencil_rank(ext.a_big, ext.b_big, lam, tol, settings)
        tests.append(EigenTest(lam, rank, dim, used_tol, near))
    verdict = all(t.rank == t.required for t in tests)
    return HautusReport(verdict=verdict, mode=mode, tested_eigenvalues=tests)


def unstable_spectrum(a: np.ndarray, settings: SolverSettings = DEFAULT_SETTINGS) -> list[complex]:
    eigs = eigenvalues(a, settings)
    return _dedup(eigs[eigs.real >= -settings.stab_margin], settings.eig_dedup_tol)


def _shares(s1, s2, tol) -> bool:
    return any(abs(x - y) <= tol for x in s1 for y in s2)


def lemma_conditions(
    family: SystemFamily,
    ens: ParameterEnsemble,
    m: int | None = None,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> LemmaConditionReport:
    """Necessary and sufficient structural conditions for ensemble stabilizability."""
    m = family.m if m is None else m
    tol = settings.eig_dedup_tol
    stabilizable = []
    spectra = []
    for s in ens:
        single = extend(family, ParameterEnsemble([s]))
        stabilizable.append(hautus_test(single, "stabilizability", settings=settings).verdict)
        spectra.append(unstable_spectrum(family.a(s), settings))
    N = ens.N
    pairwise = not any(
        _shares(spectra[i], spectra[j], tol) for i in range(N) for j in range(i + 1, N)
    )

    k = m + 1
    overlap_ok = True
    witness = None
    if N < k:
        regime = "vacuous"
    elif math.comb(N, k) <= SUBSET_ENUMERATION_CAP:
        regime = "enumerated"
        for subset in itertools.combinations(range(N), k):
            common = [lam for lam in spectra[subset[0]]
                      if all(_shares([lam], spectra[j], tol) for j in subset[1:])]
            if common:
                overlap_ok = False
                witness = (subset, common[0])
                break
    else:
        regime = "clustered"
        log.warning("C(%d, %d) subsets exceed the enumeration cap; counting eigenvalue clusters", N, k)
        pool = _dedup([lam for sp in spectra for lam in sp], tol)
        for lam in pool:
            owners = [i for i, sp in enumerate(spectra) if _shares([lam], sp, tol)]
            if len(owners) >= k:
                overlap_ok = False
                witness = (tuple(owners[:k]), lam)
                break

    violation = None
    if not all(stabilizable):
        bad = [ens.values[i] for i, ok in enumerate(stabilizable) if not ok]
        violation = f"systems not stabilizable for sigma in {bad}"
    elif not overlap_ok:
        subset, lam = witness
        violation = (f"eigenvalue {lam:.6g} with Re >= 0 shared by parameters "
                     f"{[ens.values[i] for i in subset]} (m+1 = {k})")
    if all(stabilizable) and pairwise:
        sufficient = True
    elif violation is not None:
        sufficient = False
    else:
        sufficient = None
    return LemmaConditionReport(
        each_system_stabilizable=stabilizable,
        overlap_condition_holds=overlap_ok,
        pairwise_disjoint_unstable=pairwise,
        sufficient_verdict=sufficient,
        necessary_violation=violation,
        subset_regime=regime,
    )


def spectral_heat_ensemble_check(M: int, ens: ParameterEnsemble, omega, tol: float = 1e-10) -> bool:
    """Sufficient test: every input coefficient nonzero and no 4(s_k - s_j) integer."""
    b = spectral_heat_b(M, float(omega[0]), float(omega[1])).ravel()
    if np.any(np.abs(b) <= tol):
        return False
    vals = ens.values
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            d = 4.0 * (vals[i] - vals[j])
            if abs(d - round(d)) <= tol * max(1.0, abs(d)):
                return False
    return True


def analyze(family: SystemFamily, ens: ParameterEnsemble,
            settings: SolverSettings = DEFAULT_SETTINGS) -> dict:
    ext = extend(family, ens)
    ok, rank = kalman_controllable(ext)
    ctrl = hautus_test(ext, "controllability", settings=settings)
    stab = hautus_test(ext, "stabilizability", settings=settings)
    lemma = lemma_conditions(family, ens, settings=settings)
    return {
        "kalman": {"verdict": ok, "rank": rank, "required": ext.a_big.shape[0]},
        "hautus_controllable": ctrl.to_dict(),
        "hautus_stabilizable": stab.to_dict(),
        "lemma_conditions": lemma.to_dict(),
    }
