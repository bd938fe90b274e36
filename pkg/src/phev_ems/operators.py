"""Cumulative-sum operator ``Psi`` and the two precomputed linear solves.

``Psi`` is the lower-triangular matrix of ones, so ``Psi x`` is a cumulative
sum and ``Psi^-1 x`` a first difference ``(x0, x1 - x0, ...)``. The solves

* ``(kd D^T D + rho4 I)^-1``            (engine-state copy update)
* ``(rho2 I + rho1 Psi^T Psi)^-1``      (battery-power copy update)

with ``D = Psi^-1`` are either applied as precomputed dense inverses
(one matrix-vector product per call) or, on the banded path, as solves with
a tridiagonal Cholesky factor, using
``rho2 I + rho1 Psi^T Psi = Psi^T (rho2 D^T D + rho1 I) Psi``.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg


def psi(x):
    return np.cumsum(x)


def psi_T(y):
    return np.cumsum(y[::-1])[::-1]


def psi_inv(x):
    return np.diff(x, prepend=0.0)


def psi_inv_T(y):
    out = y.copy()
    out[:-1] -= y[1:]
    return out


def psi_dense(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n)))


def difference_gram_banded(n: int, scale: float, shift: float) -> np.ndarray:
    """Upper banded storage of ``scale * D^T D + shift * I`` for :func:`scipy.linalg.cholesky_banded`."""
    ab = np.empty((2, n))
    ab[0, 0] = 0.0
    ab[0, 1:] = -scale
    ab[1, :] = 2.0 * scale + shift
    ab[1, -1] = scale + shift
    return ab


class _Tridiagonal:
    def __init__(self, n, scale, shift):
        self.n = n
        self.factor = linalg.cholesky_banded(difference_gram_banded(n, scale, shift))

    def solve(self, rhs):
        return linalg.cho_solve_banded((self.factor, False), rhs, check_finite=False)


class LinearSolves:
    """Precomputed solves for a horizon of ``n`` steps.

    Parameters
    ----------
    method : {"dense", "banded"}
        ``"dense"`` stores both inverses explicitly (``O(N^2)`` per
        application); ``"banded"`` uses tridiagonal factors
        (``O(N)`` per application).
    """

    def __init__(self, n, kd, rho1, rho2, rho4, method="dense"):
        if method not in ("dense", "banded"):
            raise ValueError(f"unknown linear solve method {method!r}")
        self.n, self.kd, self.rho1, self.rho2, self.rho4 = n, kd, rho1, rho2, rho4
        self.method = method
        self._k_tri = _Tridiagonal(n, kd, rho4)
        self._z_tri = _Tridiagonal(n, rho2, rho1)
        if method == "dense":
            eye = np.eye(n)
            self.kappa_matrix = rho4 * self._k_tri.solve(eye)
            tinv = self._z_tri.solve(eye)
            # D T^-1 D^T, applied as row then column differences
            self.zeta_matrix = np.diff(np.diff(tinv, axis=0, prepend=0.0), axis=1, prepend=0.0)

    def kappa(self, rhs):
        """Return ``rho4 (kd D^T D + rho4 I)^-1 rhs``."""
        if self.method == "dense":
            return self.kappa_matrix @ rhs
        return self.rho4 * self._k_tri.solve(rhs)

    def zeta(self, rhs):
        """Return ``(rho2 I + rho1 Psi^T Psi)^-1 rhs``."""
        if self.method == "dense":
            return self.zeta_matrix @ rhs
        return psi_inv(self._z_tri.solve(psi_inv_T(rhs)))
