"""Closed-form diagnostics: error amplification, stability functions, order fits.

Stability functions use the scalar test problem ``h f(y) = i w y`` with the
linear part split as ``h L_1 = z1``, ``h L_2 = z2`` (``z = z1 + z2``).  They
are evaluated by solving the ``s x s`` complex stage system directly.

For the AMF variants, stage ``i`` is solved with
``P_i = (1 - ahat_ii z1)(1 - ahat_ii z2)`` in place of ``E_i = 1 - ahat_ii z``.
After ``k`` refinements the stage value is ``l_i / T_i`` with::

    T_i = P_i^(k+1) / sum_{j=0..k} P_i^(k-j) (P_i - E_i)^j

(``T_i = P_i`` for ``k = 0``, ``T_i = P_i^2 / (2 P_i - E_i)`` for ``k = 1``).
An explicit first stage has ``ahat_11 = 0`` and hence ``T_1 = 1``.
"""

from __future__ import annotations

import numpy as np

from .tableaus import ImexTableau

__all__ = [
    "amplification_2d",
    "amplification_3d",
    "fourier_stiffness",
    "stability_exact",
    "stability_amf",
    "estimate_order",
]


def _check_stiffness(gamma, *zs):
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if any(z < 0 for z in zs):
        raise ValueError("stiffness arguments must be non-negative")


def amplification_2d(z1: float, z2: float, gamma: float) -> float:
    """Per-mode contraction of one refinement for a two-way diffusion splitting."""
    _check_stiffness(gamma, z1, z2)
    a, b = gamma * z1, gamma * z2
    return (a * b) / ((1.0 + a) * (1.0 + b))


def amplification_3d(z1: float, z2: float, z3: float, gamma: float) -> float:
    """Per-mode contraction of one refinement for a three-way diffusion splitting."""
    _check_stiffness(gamma, z1, z2, z3)
    a, b, c = gamma * z1, gamma * z2, gamma * z3
    return (a * b + a * c + b * c + a * b * c) / ((1.0 + a) * (1.0 + b) * (1.0 + c))


def fourier_stiffness(m: int, M: int, h: float, dx: float) -> float:
    """``z = (h / dx^2) (2 pi m / M)^2`` for the mode ``m`` of an ``M``-point periodic grid."""
    return h / dx**2 * (2.0 * np.pi * m / M) ** 2


def _stability(t: ImexTableau, diag, z, w):
    s = t.s
    strict = np.tril(t.Ahat, -1)
    M = np.diag(np.asarray(diag, dtype=complex)) - z * strict - 1j * w * t.A
    # lower triangular: singular exactly when a diagonal entry vanishes
    if np.any(np.abs(np.diag(M)) <= 1e-14 * np.abs(M).max(axis=1)):
        raise np.linalg.LinAlgError("stage matrix is singular")
    Y = np.linalg.solve(M, np.ones(s, dtype=complex))
    return complex(1.0 + (1j * w * t.b + z * t.bhat) @ Y)


def stability_exact(t: ImexTableau, z: complex, w: float = 0.0) -> complex:
    """``R(z, iw) = 1 + (iw b + z bhat)^T (I - z Ahat - iw A)^{-1} 1``."""
    diag = 1.0 - z * np.diag(t.Ahat)
    return _stability(t, diag, z, w)


def amf_stage_denominators(t: ImexTableau, z1: complex, z2: complex, refinements: int = 0):
    """The ``T_i`` above: effective stage denominators after ``refinements`` corrections."""
    if refinements < 0:
        raise ValueError("refinements must be non-negative")
    a = np.diag(t.Ahat).astype(complex)
    P = (1.0 - a * z1) * (1.0 - a * z2)
    D = P - (1.0 - a * (z1 + z2))
    k = refinements
    denom = sum(P ** (k - j) * D**j for j in range(k + 1))
    return P ** (k + 1) / denom


def stability_amf(t: ImexTableau, z1: complex, z2: complex, w: float = 0.0, refinements: int = 0) -> complex:
    """One-step amplification of LIRK with AMF stages and ``refinements`` corrections."""
    diag = amf_stage_denominators(t, z1, z2, refinements)
    return _stability(t, diag, z1 + z2, w)


def estimate_order(hs, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or hs.size < 3:
        raise ValueError("need at least three (h, error) pairs")
    if np.any(errors <= 0) or np.any(hs <= 0):
        raise ValueError("step sizes and errors must be positive")
    if np.any(np.diff(hs) >= 0):
        raise ValueError("step sizes must be strictly decreasing")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)
