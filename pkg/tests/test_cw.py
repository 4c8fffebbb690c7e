import numpy as np
import pytest
import scipy.linalg

from hybrid_miqp.cw import (DT, GAMMA_LEO, MASS, CwParams, control_matrix, cw_control_matrix,
                            cw_stm, discretize, flow_exact, propagate)
from hybrid_miqp.errors import FlowDomainError, QuadratureError
from reference import cw_generator, simpson_B

P = CwParams(GAMMA_LEO, MASS, DT)


def test_constants():
    assert (GAMMA_LEO, MASS, DT) == (1.13e-3, 100.0, 300.0)


def test_stm_identity_at_zero():
    assert np.array_equal(cw_stm(P, 0.0), np.eye(6))


def test_stm_inverse():
    err = np.max(np.abs(cw_stm(P, DT) @ cw_stm(P, -DT) - np.eye(6)))
    assert err <= 1e-10


@pytest.mark.parametrize("t", [1.0, 150.0, 300.0, 5000.0])
def test_stm_matches_matrix_exponential(t):
    ref = scipy.linalg.expm(cw_generator(GAMMA_LEO) * t)
    np.testing.assert_allclose(cw_stm(P, t), ref, rtol=1e-10, atol=1e-10)


def test_stm_semigroup():
    np.testing.assert_allclose(cw_stm(P, 100.0) @ cw_stm(P, 200.0), cw_stm(P, 300.0),
                               rtol=1e-12, atol=1e-12)


def test_control_matrix_matches_simpson():
    B = cw_control_matrix(P)
    ref = simpson_B(P)
    rel = np.max(np.abs(B - ref)) / np.max(np.abs(ref))
    assert rel <= 1e-9


def test_control_matrix_matches_augmented_exponential():
    # exp([[A, Bc], [0, 0]] t) carries the input integral in its top-right block
    M = np.zeros((9, 9))
    M[:6, :6] = cw_generator(GAMMA_LEO)
    M[3:6, 6:9] = np.eye(3) / MASS
    ref = scipy.linalg.expm(M * DT)[:6, 6:]
    np.testing.assert_allclose(control_matrix(P, DT), ref, rtol=1e-10, atol=1e-14)


def test_quadrature_self_check_fires_over_many_orbits():
    with pytest.raises(QuadratureError):
        control_matrix(P, 2.0e5)


def test_discretize_pairs_stm_and_input():
    lti = discretize(P)
    np.testing.assert_array_equal(lti.A, cw_stm(P, DT))
    np.testing.assert_array_equal(lti.B, cw_control_matrix(P))


def test_flow_zero_state_zero_input():
    np.testing.assert_array_equal(propagate(P, np.zeros(6), np.zeros(3), DT), np.zeros(6))


def test_flow_composes():
    x = np.array([10.0, -3.0, 2.0, 0.01, -0.02, 0.003])
    u = np.array([0.01, -0.02, 0.005])
    half = propagate(P, x, u, 120.0)
    np.testing.assert_allclose(propagate(P, half, u, 180.0), propagate(P, x, u, 300.0),
                               rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(flow_exact(P, x, u, DT), propagate(P, x, u, DT))


def test_flow_domain():
    with pytest.raises(FlowDomainError):
        propagate(P, np.zeros(6), np.zeros(3), DT + 1.0)
    with pytest.raises(FlowDomainError):
        propagate(P, np.zeros(6), np.zeros(3), -1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        CwParams(gamma=0.0)
    with pytest.raises(ValueError):
        CwParams(mass=-1.0)
