import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from ensfb.errors import StabilizabilityError, ValidationError
from ensfb.models import ParameterEnsemble, compress, make_family
from ensfb.riccati import (
    FeedbackKind,
    RiccatiProblem,
    averaged_riccati_feedback,
    ensemble_feedback,
    mean_parameter_feedback,
    riccati_residual,
    solve_are,
    solve_dre,
    synthesize_ensemble,
)

from .conftest import OSC_SIG1


def scalar(a, b=1.0, q=1.0, alpha=1.0):
    return RiccatiProblem(np.array([[a]]), np.array([[b]]), q, alpha)


def test_scalar_closed_forms():
    assert solve_are(scalar(0.0)).pi[0, 0] == pytest.approx(1.0, rel=1e-14)
    assert solve_are(scalar(1.0)).pi[0, 0] == pytest.approx(1 + np.sqrt(2), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(0.05, 4), st.floats(0.01, 10))
def test_scalar_quadratic_formula(a, b, q, alpha):
    # 2 a p - p^2 b^2 / alpha + q = 0, positive root
    g = b * b / alpha
    ref = (a + np.sqrt(a * a + g * q)) / g
    assert solve_are(scalar(a, b, q, alpha)).pi[0, 0] == pytest.approx(ref, rel=1e-10)


def test_extended_oscillator_matches_scipy(osc, sig1):
    prob = RiccatiProblem.extended(osc, sig1, 0.1)
    sol = solve_are(prob)
    ref = sla.solve_continuous_are(prob.a, prob.b, np.eye(10) / 5, 0.1 * np.eye(1))
    assert np.allclose(sol.pi, ref, rtol=1e-9, atol=1e-11)
    assert sol.residual_max <= 1e-10
    assert sol.converged
    assert sol.closed_loop_max_real < 0
    assert np.allclose(sol.pi, sol.pi.T, rtol=1e-12)
    np.linalg.cholesky(sol.pi)


def test_random_systems_match_scipy(rng):
    for _ in range(10):
        n, m = 4, 2
        a = rng.normal(size=(n, n))
        b = rng.normal(size=(n, m))
        prob = RiccatiProblem(a, b, 0.7, 0.3)
        ref = sla.solve_continuous_are(a, b, 0.7 * np.eye(n), 0.3 * np.eye(m))
        assert np.allclose(solve_are(prob).pi, ref, rtol=1e-9, atol=1e-10)


def test_n1_big_equals_small(osc):
    big = solve_are(RiccatiProblem.extended(osc, ParameterEnsemble([0.7]), 0.2)).pi
    small = solve_are(RiccatiProblem.single(osc, 0.7, 0.2)).pi
    assert np.allclose(big, small, rtol=1e-12)


def test_alpha_scaling_invariance(osc):
    a, b = osc.a(-0.3), osc.b
    p1 = solve_are(RiccatiProblem(a, b, 1.0, 0.05)).pi
    p2 = solve_are(RiccatiProblem(a, b / np.sqrt(0.05), 1.0, 1.0)).pi
    assert np.allclose(p1, p2, rtol=1e-11)


def test_weight_monotonicity(osc):
    a, b = osc.a(0.2), osc.b
    p1 = solve_are(RiccatiProblem(a, b, 1.0, 0.1)).pi
    p2 = solve_are(RiccatiProblem(a, b, 2.0, 0.1)).pi
    assert np.min(np.linalg.eigvalsh(p2 - p1)) >= -1e-12


def test_residual_perturbation():
    prob = scalar(0.0)
    assert riccati_residual([[1.0]], prob) <= 1e-15
    assert riccati_residual([[1.001]], prob) > riccati_residual([[1.0]], prob)


def test_not_stabilizable_refused():
    # uncontrollable mode on the imaginary axis
    prob = RiccatiProblem(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros((2, 1)), 1.0, 1.0)
    with pytest.raises(StabilizabilityError):
        solve_are(prob)


def test_problem_validation():
    with pytest.raises(ValidationError):
        scalar(0.0, alpha=0.0)
    with pytest.raises(ValidationError):
        scalar(0.0, q=-1.0)
    with pytest.raises(ValidationError):
        RiccatiProblem(np.eye(2), np.ones((3, 1)), 1.0, 1.0)


def test_dre_terminal_and_tanh():
    assert np.array_equal(solve_dre(scalar(0.0), 0.0).pi_at_0, [[0.0]])
    for T in (0.5, 2.0, 6.0):
        assert solve_dre(scalar(0.0), T).pi_at_0[0, 0] == pytest.approx(np.tanh(T), abs=1e-9)


def test_dre_path_matches_closed_form():
    sol = solve_dre(scalar(0.0), 3.0, n_samples=31)
    assert sol.times[0] == 0.0 and sol.times[-1] == pytest.approx(3.0)
    assert sol.path[:, 0, 0] == pytest.approx(np.tanh(3.0 - sol.times), abs=1e-9)


def test_dre_converges_to_are(osc, sig1):
    prob = RiccatiProblem.extended(osc, sig1, 0.1)
    pi = solve_are(prob).pi
    gaps = [np.linalg.norm(solve_dre(prob, T).pi_at_0 - pi, 2) for T in (5, 20, 60)]
    assert gaps[0] > gaps[1] > gaps[2]


def test_dre_derivative_residual(osc):
    prob = RiccatiProblem.single(osc, 0.5, 1.0)
    sol = solve_dre(prob, 4.0, dense=True)
    t, h = 1.3, 1e-4
    p = sol.at(t, 4.0)
    dp = (sol.at(t + h, 4.0) - sol.at(t - h, 4.0)) / (2 * h)
    ric = prob.a.T @ p + p @ prob.a - p @ prob.g @ p + np.eye(2)
    assert np.abs(dp + ric).max() < 1e-6


def test_feedback_laws_structure(osc, sig1):
    law, sol = synthesize_ensemble(osc, sig1, 0.1)
    assert law.kind is FeedbackKind.ENSEMBLE
    assert law.gain.shape == (1, 2)
    assert np.allclose(law.precursor, compress(sol.pi, 2))
    assert np.array_equal(law.gain, -(osc.b.T @ law.precursor) / 0.1)
    mean = mean_parameter_feedback(osc, sig1, 0.1)
    ref = solve_are(RiccatiProblem.single(osc, 0.0, 0.1)).pi
    assert np.allclose(mean.precursor, ref)
    avg = averaged_riccati_feedback(osc, sig1, 0.1)
    pis = [solve_are(RiccatiProblem.single(osc, s, 0.1)).pi for s in OSC_SIG1]
    assert np.allclose(avg.precursor, np.mean(pis, axis=0))


def test_single_member_laws_coincide(osc):
    ens = ParameterEnsemble([0.4])
    laws = [synthesize_ensemble(osc, ens, 0.3)[0], mean_parameter_feedback(osc, ens, 0.3),
            averaged_riccati_feedback(osc, ens, 0.3)]
    for law in laws[1:]:
        assert np.allclose(law.gain, laws[0].gain, rtol=1e-11)


def test_ensemble_feedback_stabilizes_wide_oscillator(osc, sig2):
    law, _ = synthesize_ensemble(osc, sig2, 0.1)
    for s in sig2:
        assert np.max(np.linalg.eigvals(law.closed_loop(osc.a(s), osc.b)).real) < 0
    mean = mean_parameter_feedback(osc, sig2, 0.1)
    assert np.max(np.linalg.eigvals(mean.closed_loop(osc.a(-4.0), osc.b)).real) > 0


def test_ensemble_feedback_dimension_check(osc, sig1):
    _, sol = synthesize_ensemble(osc, sig1, 0.1)
    with pytest.raises(ValidationError):
        ensemble_feedback(sol, osc, ParameterEnsemble([0.0]), 0.1)


def test_heat_and_catenary_open_solves():
    heat = make_family("spectral-heat")
    sol = solve_are(RiccatiProblem.extended(heat, ParameterEnsemble([0.1, 0.3, 0.6]), 0.1))
    assert sol.residual_max < 1e-10
    cat = make_family("catenary-open")
    sol = solve_are(RiccatiProblem.extended(cat, ParameterEnsemble([0.5, 1.0, 2.0]), 0.1))
    assert sol.residual_max < 1e-10
