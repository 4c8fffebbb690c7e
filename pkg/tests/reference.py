"""Reference computations shared by the test modules, independent of the package."""

import numpy as np
import scipy.linalg


def cw_generator(g):
    """Continuous-time CW matrix from the linearized relative-motion ODE."""
    A = np.zeros((6, 6))
    A[0:3, 3:6] = np.eye(3)
    A[3, 0] = 3 * g * g
    A[3, 4] = 2 * g
    A[4, 3] = -2 * g
    A[5, 2] = -g * g
    return A


def simpson_B(params, panels=10_000):
    # composite Simpson over expm(A theta) Bc, independent of the closed form
    A = cw_generator(params.gamma)
    Bc = np.vstack([np.zeros((3, 3)), np.eye(3) / params.mass])
    theta = np.linspace(0.0, params.dt, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    acc = sum(wi * scipy.linalg.expm(A * th) for wi, th in zip(w, theta))
    return params.dt / (3 * panels) * acc @ Bc
