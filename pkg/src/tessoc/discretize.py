"""Exact frozen-in-time discretization of the state-dependent linear system.

Over one step the drift and input matrices are held at their current
values and the linear system is solved exactly: the state transition
matrix is the matrix exponential and the input transition column is its
integral. The integral is obtained from the exponential of the augmented
block matrix [[A, B], [0, 0]], which remains exact when A is singular --
and A always is here, because its rows sum to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError


@dataclass(frozen=True)
class DiscreteStep:
    """One discretization step: x+ = phi @ x + gamma * u over dt seconds.

    For the drift matrices built here (rows of A summing to zero, Metzler
    structure) phi has unit row sums and nonnegative entries; neither is
    assumed by construction, so tests check them.
    """

    phi: np.ndarray
    gamma: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0.0:
            raise InvalidInputError(f"step length must be positive, got {self.dt}")


def matrix_exponential(A: np.ndarray, dt: float) -> np.ndarray:
    """exp(A * dt) via scaling-and-squaring with Pade approximation."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"matrix must be square, got shape {A.shape}")
    if not (np.all(np.isfinite(A)) and np.isfinite(dt)):
        raise InvalidInputError("matrix exponential needs finite entries and step")
    return scipy.linalg.expm(A * dt)


def discretize(A: np.ndarray, B: np.ndarray, dt: float) -> DiscreteStep:
    """Exact one-step discretization of dx/dt = A x + B u with u held constant.

    phi = exp(A dt) and gamma = integral_0^dt exp(A tau) B dtau are read
    off the exponential of the (n+1)x(n+1) augmented matrix, which needs
    no inverse of A.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(B, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"drift matrix must be square, got shape {A.shape}")
    n = A.shape[0]
    if b.shape != (n,):
        raise InvalidInputError(f"input column must have {n} entries, got {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise InvalidInputError("discretization needs finite A and B")
    if not (np.isfinite(dt) and dt > 0.0):
        raise InvalidInputError(f"step length must be positive and finite, got {dt}")
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b
    exp_aug = scipy.linalg.expm(aug * dt)
    return DiscreteStep(phi=exp_aug[:n, :n], gamma=exp_aug[:n, n], dt=float(dt))
