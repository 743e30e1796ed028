"""Dense complex matrix substrate shared by every other module.

Everything is finite-dimensional: the trace-class/bounded-operator duality
reduces to the Hilbert-Schmidt pairing ``<A, B> = Tr(A^dagger B)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

HERMITIAN_TOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10


class DimensionError(ValueError):
    """Raised for non-square or mismatched operands."""


class StateError(ValueError):
    """Raised when a matrix fails the statistical-operator conditions."""


def as_matrix(a: Any) -> np.ndarray:
    """Return ``a`` as a finite 2-D complex array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.size == 0:
        raise DimensionError("empty matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def as_square(a: Any) -> np.ndarray:
    m = as_matrix(a)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hs_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt pairing Tr(A^dagger B)."""
    return complex(np.vdot(a, b))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def anticommutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b + b @ a


def hermiticity_defect(a: np.ndarray) -> float:
    """Relative Frobenius distance ``|A - A^dagger| / max(1, |A|)``."""
    return float(np.linalg.norm(a - dagger(a)) / max(1.0, np.linalg.norm(a)))


def is_hermitian(a: Any, tol: float = HERMITIAN_TOL) -> bool:
    m = as_square(a)
    return hermiticity_defect(m) <= tol


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """A validated Hermitian matrix (observable)."""

    matrix: np.ndarray
    tol_herm: float = HERMITIAN_TOL

    def __post_init__(self):
        m = as_square(self.matrix)
        if hermiticity_defect(m) > self.tol_herm:
            raise ValueError(
                f"matrix is not Hermitian (defect {hermiticity_defect(m):.3e} > {self.tol_herm:g})"
            )
        m = 0.5 * (m + dagger(m))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Statistical operator: Hermitian, positive semidefinite, unit trace."""

    matrix: np.ndarray
    tol_psd: float = PSD_TOL
    tol_trace: float = TRACE_TOL

    def __post_init__(self):
        m = as_square(self.matrix)
        if hermiticity_defect(m) > HERMITIAN_TOL:
            raise StateError("density matrix is not Hermitian")
        m = 0.5 * (m + dagger(m))
        tr = np.trace(m).real
        if abs(tr - 1.0) > self.tol_trace:
            raise StateError(f"trace {tr!r} differs from 1 by more than {self.tol_trace:g}")
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < -self.tol_psd:
            raise StateError(f"density matrix has negative eigenvalue {min_eig:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, psi) -> "DensityMatrix":
        v = np.asarray(psi, dtype=complex).ravel()
        v = v / np.linalg.norm(v)
        return cls(np.outer(v, v.conj()))

    def expect(self, observable) -> complex:
        return complex(np.trace(np.asarray(observable) @ self.matrix))


def _hermitian_array(a) -> np.ndarray:
    if isinstance(a, (HermitianOperator, DensityMatrix)):
        return a.matrix
    return HermitianOperator(a).matrix


def eig_hermitian(a) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and unitary eigenvector matrix of a Hermitian operator."""
    w, u = np.linalg.eigh(_hermitian_array(a))
    return w, u


def is_psd(a, tol: float = PSD_TOL) -> tuple[bool, float]:
    """Return ``(min_eig >= -tol, min_eig)``."""
    min_eig = float(np.linalg.eigvalsh(_hermitian_array(a))[0])
    return min_eig >= -tol, min_eig


# Pade(13) coefficients and the 1-norm threshold from Higham (2005).
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def matrix_exp(a) -> np.ndarray:
    """Matrix exponential by scaling and squaring with the diagonal [13/13] Pade approximant.

    Works for non-normal input, which is the usual case for Lindblad
    superoperators.
    """
    a = as_square(a)
    n = a.shape[0]
    norm1 = np.linalg.norm(a, 1)
    if norm1 == 0:
        return np.eye(n, dtype=complex)
    s = 0
    if norm1 > _THETA13:
        s = int(math.ceil(math.log2(norm1 / _THETA13)))
        a = a / (2.0 ** s)
    b = _PADE13
    ident = np.eye(n, dtype=complex)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


# Matrix JSON codec, normative repo-wide: {"rows", "cols", "data": [[re, im], ...]}.

def matrix_to_json(a) -> dict:
    m = as_matrix(a)
    flat = m.reshape(-1)
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "data": [[float(z.real), float(z.imag)] for z in flat],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    try:
        rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed matrix object: {exc}") from None
    if rows <= 0 or cols <= 0:
        raise ValueError("matrix dimensions must be positive")
    if len(data) != rows * cols:
        raise ValueError(f"matrix has {len(data)} entries, expected {rows * cols}")
    vals = np.empty(rows * cols, dtype=complex)
    for i, entry in enumerate(data):
        if isinstance(entry, (int, float)):
            vals[i] = float(entry)
        else:
            re, im = entry
            vals[i] = complex(float(re), float(im))
    return as_matrix(vals.reshape(rows, cols))
