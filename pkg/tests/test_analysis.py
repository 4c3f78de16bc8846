import numpy as np
import pytest

from ensfb.analysis import (
    analyze,
    hautus_test,
    kalman_controllable,
    lemma_conditions,
    spectral_heat_ensemble_check,
    unstable_spectrum,
)
from ensfb.models import ExtendedSystem, ParameterEnsemble, extend, family_from_affine, make_family


def _ext(a, b):
    a = np.atleast_2d(np.asarray(a, float))
    b = np.asarray(b, float).reshape(a.shape[0], -1)
    return ExtendedSystem(a, b, a.shape[0], b.shape[1], 1)


def _kalman_rank_oracle(a, b):
    # direct Kalman matrix; fine for the tiny, well-scaled cases used here
    blocks = [b]
    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks), tol=1e-9)


def test_double_integrator_controllable():
    ext = _ext([[0, 1], [0, 0]], [0, 1])
    assert kalman_controllable(ext) == (True, 2)
    assert hautus_test(ext).verdict


def test_uncontrollable_stable_mode_is_stabilizable():
    ext = _ext([[-1, 0], [0, 1]], [0, 1])
    ctrl = hautus_test(ext, "controllability")
    stab = hautus_test(ext, "stabilizability")
    assert not ctrl.verdict
    assert ctrl.witnesses == [pytest.approx(-1.0)]
    assert stab.verdict
    assert [t.eigenvalue for t in stab.tested_eigenvalues] == [pytest.approx(1.0)]


def test_uncontrollable_unstable_mode():
    ext = _ext([[2, 0], [0, -1]], [0, 1])
    stab = hautus_test(ext, "stabilizability")
    assert not stab.verdict and stab.witnesses == [pytest.approx(2.0)]


def test_identical_parameters_not_ensemble_controllable(osc):
    ext = extend(osc, ParameterEnsemble([0.3, 0.3]))
    assert not kalman_controllable(ext)[0]
    assert not hautus_test(ext).verdict


def test_kalman_and_hautus_agree_on_random_ensembles():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 4))
        N = int(rng.integers(1, 5))
        a0 = np.round(rng.normal(size=(n, n)), 1)
        a1 = np.zeros((n, n))
        a1[rng.integers(n), rng.integers(n)] = 1.0
        b = np.zeros((n, 1))
        b[rng.integers(n), 0] = 1.0
        fam = family_from_affine("rand", a0, a1, b)
        ens = ParameterEnsemble(np.round(rng.uniform(-2, 2, size=N), 1))
        ext = extend(fam, ens)
        kal, rank = kalman_controllable(ext)
        assert kal == hautus_test(ext).verdict
        assert rank == _kalman_rank_oracle(ext.a_big, ext.b_big)


def test_catenary_closed_not_ensemble_stabilizable():
    fam = make_family("catenary-closed")
    rep = analyze(fam, ParameterEnsemble([0.5, 1.0, 2.0]))
    assert rep["hautus_stabilizable"]["verdict"] is False
    assert rep["kalman"]["verdict"] is False
    assert rep["lemma_conditions"]["sufficient_verdict"] is False
    assert "shared" in rep["lemma_conditions"]["necessary_violation"]


def test_cyclic_distinct_nonzero_is_ensemble_controllable():
    fam = make_family("cyclic")
    for vals in ([-1000, -500, 500, 1000], [0.3, 1.7, -2.2], [5.0]):
        ext = extend(fam, ParameterEnsemble(vals))
        assert kalman_controllable(ext)[0]
        assert hautus_test(ext).verdict


def test_lemma_repeated_unstable_parameter(osc):
    rep = lemma_conditions(osc, ParameterEnsemble([-1.0, -1.0, 0.5]))
    assert rep.each_system_stabilizable == [True, True, True]
    assert not rep.pairwise_disjoint_unstable
    assert not rep.overlap_condition_holds  # m + 1 = 2 systems share an unstable eigenvalue
    assert rep.sufficient_verdict is False
    assert rep.subset_regime == "enumerated"


def test_lemma_sufficient_when_unstable_spectra_disjoint(osc):
    rep = lemma_conditions(osc, ParameterEnsemble([-1.0, -0.5, 0.5]))
    assert rep.pairwise_disjoint_unstable and rep.sufficient_verdict is True


def test_unstable_spectrum():
    spec = unstable_spectrum(np.diag([1.0, -1.0, 0.0]))
    assert sorted(z.real for z in spec) == pytest.approx([0.0, 1.0])


def test_spectral_heat_check():
    om = (1.0, 2.0)
    assert spectral_heat_ensemble_check(5, ParameterEnsemble([0.1, 0.3]), om)
    # the test is only sufficient: 4 * 0.25 = 1 is flagged, yet 1 is no j^2 - l^2
    assert not spectral_heat_ensemble_check(5, ParameterEnsemble([0.25, 0.5]), om)
    fam = make_family("spectral-heat", M=3)
    assert hautus_test(extend(fam, ParameterEnsemble([0.25, 0.5]))).verdict
    # 4 * 0.75 = 3 = 2^2 - 1^2: modes of the two members share an eigenvalue
    assert not spectral_heat_ensemble_check(3, ParameterEnsemble([0.0, 0.75]), om)
    assert not hautus_test(extend(fam, ParameterEnsemble([0.0, 0.75]))).verdict


def test_report_serializable(osc, sig1):
    import json

    json.dumps(analyze(osc, sig1), default=str)
