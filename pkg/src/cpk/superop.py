"""Linear maps on operators, Choi matrices and Kraus decompositions.

Vectorization is column stacking throughout, so ``X -> A X B`` is the
matrix ``kron(B.T, A)``. The Choi matrix is unnormalized,
``C = sum_ij E_ij (x) map(E_ij)``, with the input factor first.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .operators import (
    DimensionError,
    as_matrix,
    as_square,
    dagger,
    hermiticity_defect,
    matrix_from_json,
    matrix_to_json,
)

PICTURES = ("schroedinger", "heisenberg")
CHOI_HERMITIAN_TOL = 1e-10
RANK_TOL = 1e-10


class NotCompletelyPositiveError(ValueError):
    pass


class NotHermiticityPreservingError(ValueError):
    pass


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


@dataclass(frozen=True, eq=False)
class SuperOperator:
    """A d^2 x d^2 matrix acting on column-stacked d x d operators."""

    matrix: np.ndarray
    picture: str = "schroedinger"

    def __post_init__(self):
        m = as_square(self.matrix)
        d = int(round(np.sqrt(m.shape[0])))
        if d * d != m.shape[0]:
            raise DimensionError(f"superoperator size {m.shape[0]} is not a perfect square")
        if self.picture not in PICTURES:
            raise ValueError(f"unknown picture {self.picture!r}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    def compose(self, other: "SuperOperator") -> "SuperOperator":
        """``self`` after ``other``."""
        if other.dim != self.dim:
            raise DimensionError("dimension mismatch in composition")
        return SuperOperator(self.matrix @ other.matrix, self.picture)

    def __add__(self, other: "SuperOperator") -> "SuperOperator":
        return SuperOperator(self.matrix + other.matrix, self.picture)

    def __mul__(self, c) -> "SuperOperator":
        return SuperOperator(c * self.matrix, self.picture)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ChoiMatrix:
    matrix: np.ndarray
    dim: int


@dataclass(frozen=True, eq=False)
class KrausSet:
    """Operators ``A_k`` of an operation, with effect ``F = sum_k A_k^dagger A_k``."""

    operators: tuple
    tol: float = 1e-10

    def __post_init__(self):
        ops = tuple(as_square(a) for a in self.operators)
        if not ops:
            raise ValueError("a Kraus set needs at least one operator")
        d = ops[0].shape[0]
        if any(a.shape != (d, d) for a in ops):
            raise DimensionError("Kraus operators have mismatched dimensions")
        object.__setattr__(self, "operators", ops)
        w = np.linalg.eigvalsh(self.effect)
        if w[0] < -self.tol or w[-1] > 1 + self.tol:
            raise ValueError(
                f"effect spectrum [{w[0]:.3e}, {w[-1]:.6f}] outside [0, 1]: not an operation"
            )

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    @property
    def effect(self) -> np.ndarray:
        f = sum(dagger(a) @ a for a in self.operators)
        return 0.5 * (f + dagger(f))


# ---------------------------------------------------------------------------
# construction helpers

def identity_map(dim: int) -> SuperOperator:
    return SuperOperator(np.eye(dim * dim, dtype=complex))


def from_function(f: Callable[[np.ndarray], np.ndarray], dim: int,
                  picture: str = "schroedinger") -> SuperOperator:
    """Tabulate a linear function on d x d matrices."""
    cols = []
    for j in range(dim * dim):
        e = np.zeros(dim * dim, dtype=complex)
        e[j] = 1.0
        cols.append(vec(f(unvec(e, dim))))
    return SuperOperator(np.array(cols).T, picture)


def conjugation_map(u) -> SuperOperator:
    """X -> U X U^dagger."""
    u = as_square(u)
    return SuperOperator(np.kron(u.conj(), u))


def left_multiplication_map(a) -> SuperOperator:
    a = as_square(a)
    return SuperOperator(np.kron(np.eye(a.shape[0]), a))


def transpose_map(dim: int) -> SuperOperator:
    return from_function(lambda x: x.T, dim)


def tensor_identity(m: SuperOperator, n: int) -> SuperOperator:
    """The map ``m (x) id_n`` on ``C^d (x) C^n`` (kron ordering, system first)."""
    d = m.dim

    def f(x):
        blocks = x.reshape(d, n, d, n)
        out = np.empty_like(blocks)
        for b in range(n):
            for c in range(n):
                out[:, b, :, c] = apply(m, blocks[:, b, :, c])
        return out.reshape(d * n, d * n)

    return from_function(f, d * n, m.picture)


# ---------------------------------------------------------------------------
# operations

def apply(m: SuperOperator, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape != (m.dim, m.dim):
        raise DimensionError(f"operator shape {x.shape} does not match map dimension {m.dim}")
    return unvec(m.matrix @ vec(x), m.dim)


def choi_from_superop(m: SuperOperator) -> ChoiMatrix:
    d = m.dim
    # C[(i,a),(j,b)] = map(E_ij)[a,b] = M[a + b d, i + j d]
    m4 = m.matrix.reshape(d, d, d, d)
    c = m4.transpose(3, 1, 2, 0).reshape(d * d, d * d)
    return ChoiMatrix(c, d)


def superop_from_choi(c: ChoiMatrix, picture: str = "schroedinger") -> SuperOperator:
    d = c.dim
    c4 = np.asarray(c.matrix).reshape(d, d, d, d)
    return SuperOperator(c4.transpose(3, 1, 2, 0).reshape(d * d, d * d), picture)


def choi_hermiticity_defect(m: SuperOperator) -> float:
    return hermiticity_defect(choi_from_superop(m).matrix)


def is_hermiticity_preserving(m: SuperOperator, tol: float = CHOI_HERMITIAN_TOL) -> bool:
    return choi_hermiticity_defect(m) <= tol


def _choi_spectrum(m: SuperOperator, tol: float = CHOI_HERMITIAN_TOL):
    c = choi_from_superop(m).matrix
    if hermiticity_defect(c) > tol:
        raise NotHermiticityPreservingError(
            "map is not Hermiticity-preserving; no CP verdict"
        )
    return np.linalg.eigh(0.5 * (c + dagger(c)))


def min_choi_eigenvalue(m: SuperOperator) -> float:
    return float(_choi_spectrum(m)[0][0])


def is_completely_positive(m: SuperOperator, tol: float = 1e-10) -> tuple[bool, float]:
    """Decide CP from the Choi spectrum.

    Raises :class:`NotHermiticityPreservingError` when the Choi matrix is
    not Hermitian.
    """
    lo = min_choi_eigenvalue(m)
    return lo >= -tol, lo


def adjoint_superop(m: SuperOperator) -> SuperOperator:
    """Hilbert-Schmidt adjoint; toggles the picture flag."""
    other = "heisenberg" if m.picture == "schroedinger" else "schroedinger"
    return SuperOperator(dagger(m.matrix), other)


def _as_heisenberg(m: SuperOperator) -> SuperOperator:
    return m if m.picture == "heisenberg" else adjoint_superop(m)


def eq21_sum(m: SuperOperator, psis: Sequence, bs: Sequence) -> complex:
    """Evaluate ``sum_ij <psi_i| U'(B_i^dagger B_j) |psi_j>`` with the Heisenberg form of ``m``."""
    h = _as_heisenberg(m)
    total = 0j
    for i, (psi_i, b_i) in enumerate(zip(psis, bs)):
        for j, (psi_j, b_j) in enumerate(zip(psis, bs)):
            total += np.vdot(psi_i, apply(h, dagger(b_i) @ b_j) @ psi_j)
    return complex(total)


@dataclass(frozen=True, eq=False)
class Witness:
    psis: list
    bs: list
    value: float

    def to_json(self) -> dict:
        return {
            "n": len(self.psis),
            "value": self.value,
            "psis": [[[float(z.real), float(z.imag)] for z in p] for p in self.psis],
            "Bs": [matrix_to_json(b) for b in self.bs],
        }


def eq21_witness(m: SuperOperator, tol: float = 1e-10) -> Optional[Witness]:
    """Explicit violating instance of the CP inequality, or ``None`` for CP maps.

    Uses the most negative eigenvector of the Heisenberg-picture Choi
    matrix: with ``B_i = |0><i|`` one has ``B_i^dagger B_j = E_ij`` and the
    quadratic form reduces to ``<w|C'|w>`` with ``psi_i`` the blocks of ``w``.
    """
    h = _as_heisenberg(m)
    w, v = _choi_spectrum(h)
    if w[0] >= -tol:
        return None
    d = m.dim
    vec_min = v[:, 0]
    psis = [vec_min[i * d:(i + 1) * d].copy() for i in range(d)]
    bs = []
    for i in range(d):
        b = np.zeros((d, d), dtype=complex)
        b[0, i] = 1.0
        bs.append(b)
    value = eq21_sum(m, psis, bs).real
    return Witness(psis, bs, value)


def kraus_from_choi(c: ChoiMatrix, rank_tol: float = RANK_TOL) -> KrausSet:
    """Kraus operators ``sqrt(lambda_k) unvec(v_k)`` from the Choi eigendecomposition."""
    cm = np.asarray(c.matrix)
    if hermiticity_defect(cm) > CHOI_HERMITIAN_TOL:
        raise NotHermiticityPreservingError("Choi matrix is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (cm + dagger(cm)))
    if w[0] < -rank_tol:
        raise NotCompletelyPositiveError(f"Choi matrix has eigenvalue {w[0]:.3e}")
    d = c.dim
    ops = [np.sqrt(lam) * v[:, k].reshape(d, d).T for k, lam in enumerate(w) if lam > rank_tol]
    if not ops:
        ops = [np.zeros((d, d), dtype=complex)]
    return KrausSet(tuple(ops))


def superop_from_kraus(k: KrausSet, picture: str = "schroedinger") -> SuperOperator:
    """Schroedinger: X -> sum A X A^dagger. Heisenberg: B -> sum A^dagger B A."""
    if picture == "schroedinger":
        mat = sum(np.kron(a.conj(), a) for a in k.operators)
    elif picture == "heisenberg":
        mat = sum(np.kron(a.T, dagger(a)) for a in k.operators)
    else:
        raise ValueError(f"unknown picture {picture!r}")
    return SuperOperator(mat, picture)


def is_trace_preserving(m: SuperOperator, tol: float = 1e-10) -> bool:
    """Choi partial trace over the output equals the identity."""
    if m.picture != "schroedinger":
        m = adjoint_superop(m)
    d = m.dim
    c = choi_from_superop(m).matrix.reshape(d, d, d, d)
    reduced = np.einsum("iaja->ij", c)
    return bool(np.linalg.norm(reduced - np.eye(d)) <= tol)


def haar_random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def positivity_sample(m: SuperOperator, n_samples: int = 1000,
                      rng: Optional[np.random.Generator] = None) -> float:
    """Smallest eigenvalue of ``map(|psi><psi|)`` over Haar-random pure states.

    Heuristic only: a non-negative result does not prove positivity.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if m.picture != "schroedinger":
        m = adjoint_superop(m)
    d = m.dim
    lowest = np.inf
    for _ in range(n_samples):
        psi = haar_random_state(d, rng)
        out = apply(m, np.outer(psi, psi.conj()))
        lowest = min(lowest, float(np.linalg.eigvalsh(0.5 * (out + dagger(out)))[0]))
    return lowest


# ---------------------------------------------------------------------------
# random maps and JSON

def random_kraus_map(dim: int, n_kraus: int, rng: np.random.Generator,
                     trace_preserving: bool = True) -> KrausSet:
    """Random operation: Gaussian operators, normalized through the effect."""
    g = rng.standard_normal((n_kraus * dim, dim)) + 1j * rng.standard_normal((n_kraus * dim, dim))
    if trace_preserving:
        q, r = np.linalg.qr(g)
        q = q * (np.diag(r) / np.abs(np.diag(r)))
    else:
        q = g / (np.linalg.norm(g, 2) * 1.05)
    return KrausSet(tuple(q[k * dim:(k + 1) * dim] for k in range(n_kraus)))


def cp_report(m: SuperOperator, tol: float = 1e-10) -> dict:
    flag, lo = is_completely_positive(m, tol)
    witness = None if flag else eq21_witness(m, tol)
    return {
        "is_cp": bool(flag),
        "min_choi_eig": lo,
        "trace_preserving": is_trace_preserving(m, tol),
        "witness": None if witness is None else witness.to_json(),
    }


def map_to_json(m, picture: Optional[str] = None) -> dict:
    if isinstance(m, KrausSet):
        return {
            "kind": "kraus",
            "dim": m.dim,
            "picture": picture or "schroedinger",
            "operators": [matrix_to_json(a) for a in m.operators],
        }
    return {"kind": "superop", "dim": m.dim, "picture": m.picture,
            "matrix": matrix_to_json(m.matrix)}


def map_from_json(obj: dict) -> SuperOperator:
    """Parse map JSON of kind ``superop`` or ``kraus`` into a superoperator."""
    if not isinstance(obj, dict):
        raise ValueError("map JSON must be an object")
    kind = obj.get("kind", "superop")
    picture = obj.get("picture", "schroedinger")
    if kind == "superop":
        m = SuperOperator(matrix_from_json(obj["matrix"]), picture)
    elif kind == "kraus":
        ops = [matrix_from_json(o) for o in obj.get("operators", [])]
        m = superop_from_kraus(KrausSet(tuple(ops)), picture)
    else:
        raise ValueError(f"unknown map kind {kind!r}")
    if "dim" in obj and int(obj["dim"]) != m.dim:
        raise DimensionError(f"declared dim {obj['dim']} but matrices have dim {m.dim}")
    return m


def kraus_set_from_map(m: SuperOperator, rank_tol: float = RANK_TOL) -> KrausSet:
    if m.picture != "schroedinger":
        m = adjoint_superop(m)
    return kraus_from_choi(choi_from_superop(m), rank_tol)


def frobenius_distance(a: SuperOperator, b: SuperOperator) -> float:
    return float(np.linalg.norm(a.matrix - b.matrix))


def mixture(maps: Iterable[SuperOperator], weights: Iterable[float]) -> SuperOperator:
    maps = list(maps)
    return SuperOperator(sum(w * m.matrix for m, w in zip(maps, weights)), maps[0].picture)
