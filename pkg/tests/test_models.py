import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ensfb.errors import ValidationError
from ensfb.models import (
    ParameterEnsemble,
    compress,
    deviation_norm,
    extend,
    extension_apply,
    make_family,
    spectral_heat,
)


def test_uniform_partition():
    ens = ParameterEnsemble.uniform(-0.5, 0.5, 5)
    assert ens.values == pytest.approx((-0.5, -0.25, 0.0, 0.25, 0.5))
    assert ens.mean == pytest.approx(0.0)
    assert ParameterEnsemble.uniform(2.0, 3.0, 1).values == (2.0,)


def test_pairwise_distinct_flag():
    assert ParameterEnsemble([1, 2, 3]).pairwise_distinct
    assert not ParameterEnsemble([1, 2, 1]).pairwise_distinct


def test_ensemble_validation():
    with pytest.raises(ValidationError):
        ParameterEnsemble([])
    with pytest.raises(ValidationError):
        ParameterEnsemble([0.0, np.inf])


def test_oscillator_matrix(osc):
    assert np.array_equal(osc.a(0.3), [[0, 1], [-1, -0.3]])
    assert np.array_equal(osc.b, [[0], [1]])


def test_extension_and_compress_adjoint(rng):
    # <E x, y> = <x, E^T y> and compress(M) = E^T M E
    n, N = 3, 4
    e = np.tile(np.eye(n), (N, 1))
    x = rng.normal(size=n)
    m = rng.normal(size=(n * N, n * N))
    assert np.allclose(extension_apply(x, N), e @ x)
    assert np.allclose(compress(m, n), e.T @ m @ e)


def test_compress_block_diagonal_sums_blocks():
    blocks = [np.full((2, 2), k) for k in (1.0, 2.0, 3.0)]
    from scipy.linalg import block_diag

    assert np.allclose(compress(block_diag(*blocks), 2), np.full((2, 2), 6.0))


def test_extend_structure(osc, sig1):
    ext = extend(osc, sig1)
    assert ext.a_big.shape == (10, 10)
    assert ext.b_big.shape == (10, 1)
    for blk, s in zip(ext.blocks(), sig1):
        assert np.array_equal(blk, osc.a(s))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6), st.floats(-5, 5))
def test_oscillator_deviation_is_max_sigma_gap(vals, sigma):
    # A_si - A_s has the single nonzero entry s - si
    fam = make_family("oscillator")
    ens = ParameterEnsemble(vals)
    assert deviation_norm(fam, ens, sigma) == pytest.approx(max(abs(v - sigma) for v in vals),
                                                            abs=1e-12)


def test_catenary_and_cyclic_shapes():
    for name in ("catenary-closed", "catenary-open", "cyclic"):
        fam = make_family(name)
        assert fam.n == 3 and fam.m == 1
    cyc = make_family("cyclic")
    assert cyc.a(7.0)[0, 2] == 7.0
    # closed catenary columns sum to zero at sigma = 0 (mass conservation)
    assert np.allclose(make_family("catenary-closed").a(0.0).sum(axis=0), 0.0)


def test_rates_validated():
    with pytest.raises(ValidationError):
        make_family("cyclic", b12=0.0)
    with pytest.raises(ValidationError):
        make_family("catenary-closed", b12=-1.0)
    with pytest.raises(ValidationError):
        make_family("oscillator", bogus=1)
    with pytest.raises(ValidationError):
        make_family("pendulum")


def test_spectral_heat():
    a, b = spectral_heat(4, 0.5, 1.0, 2.0)
    assert np.allclose(np.diag(a), 0.5 - np.arange(1, 5) ** 2 / 4)
    j = 1
    assert b[0, 0] == pytest.approx(2 / (j * np.pi) * (np.cos(0.5) - np.cos(1.0)))
    with pytest.raises(ValidationError):
        spectral_heat(3, 0.0, 2.0, 1.0)
