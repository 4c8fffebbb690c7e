"""Clohessy-Wiltshire relative dynamics with continuous electric thrust.

State ordering is ``(r_x, r_y, r_z, v_x, v_y, v_z)`` with ``x`` radial, ``y``
along-track and ``z`` cross-track. Thrust (in newtons) is held constant
over a sample and enters the velocity rows scaled by ``1/mass``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FlowDomainError, QuadratureError

GAMMA_LEO = 1.13e-3  # rad/s
MASS = 100.0  # kg
DT = 300.0  # s

_GL_ORDER = 16
_QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class CwParams:
    gamma: float = GAMMA_LEO
    mass: float = MASS
    dt: float = DT

    def __post_init__(self):
        for name in ("gamma", "mass", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class LtiSample:
    A: np.ndarray
    B: np.ndarray


def cw_stm(params: CwParams, t: float) -> np.ndarray:
    """6x6 state-transition matrix over elapsed time ``t`` (any sign)."""
    g = params.gamma
    w = g * t
    wc, ws = np.cos(w), np.sin(w)
    rr = np.array([[4 - 3 * wc, 0, 0],
                   [6 * (ws - w), 1, 0],
                   [0, 0, wc]])
    rv = np.array([[ws, 2 * (1 - wc), 0],
                   [2 * (wc - 1), 4 * ws - 3 * w, 0],
                   [0, 0, ws]]) / g
    vr = g * np.array([[3 * ws, 0, 0],
                       [6 * (wc - 1), 0, 0],
                       [0, 0, -ws]])
    vv = np.array([[wc, 2 * ws, 0],
                   [-2 * ws, 4 * wc - 3, 0],
                   [0, 0, wc]])
    return np.block([[rr, rv], [vr, vv]])


def _input_map(params: CwParams) -> np.ndarray:
    return np.vstack([np.zeros((3, 3)), np.eye(3) / params.mass])


def _gauss_legendre_B(params: CwParams, t: float, order: int) -> np.ndarray:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * t * (nodes + 1.0)
    acc = np.zeros((6, 6))
    for th, wt in zip(theta, weights):
        acc += wt * cw_stm(params, th)
    return 0.5 * t * acc @ _input_map(params)


def control_matrix(params: CwParams, t: float) -> np.ndarray:
    """Integral of the STM times the thrust input map over ``[0, t]``.

    Computed with 16-point Gauss-Legendre and checked against the 32-point
    rule; raises :class:`QuadratureError` if they differ by more than 1e-10
    relative.
    """
    if t == 0:
        return np.zeros((6, 3))
    B = _gauss_legendre_B(params, t, _GL_ORDER)
    B2 = _gauss_legendre_B(params, t, 2 * _GL_ORDER)
    err = np.max(np.abs(B - B2))
    if err > _QUAD_RTOL * np.max(np.abs(B2)):
        raise QuadratureError(f"Gauss-Legendre self-check failed: {err:.3e}")
    return B


def cw_control_matrix(params: CwParams) -> np.ndarray:
    """Discrete 6x3 thrust matrix for one sample ``params.dt``."""
    return control_matrix(params, params.dt)


def discretize(params: CwParams) -> LtiSample:
    return LtiSample(cw_stm(params, params.dt), cw_control_matrix(params))


def flow_exact(params: CwParams, x, u, t: float) -> np.ndarray:
    """Zero-order-hold solution at time ``t`` without a domain check."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return cw_stm(params, t) @ x + control_matrix(params, t) @ u


def propagate(params: CwParams, x, u, t: float) -> np.ndarray:
    """Plant state after flowing ``t`` seconds with thrust ``u`` held.

    ``t`` must lie in ``[0, params.dt]``.
    """
    if not 0.0 <= t <= params.dt:
        raise FlowDomainError(f"t={t} outside [0, {params.dt}]")
    return flow_exact(params, x, u, t)
