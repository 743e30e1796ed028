"""GKSL generators and the quantum dynamical semigroups they generate."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .operators import (
    DimensionError,
    HermitianOperator,
    as_square,
    dagger,
    matrix_exp,
    matrix_from_json,
    matrix_to_json,
)
from .superop import SuperOperator, adjoint_superop, min_choi_eigenvalue

CONVENTIONS = ("standard", "paper_literal")
EXACT_EXP_LIMIT = 4096  # largest d^2 for which the superoperator is exponentiated


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Hamiltonian, jump operators and anticommutator convention.

    ``standard`` puts ``sum V^dagger V`` in the anticommutator of the
    Heisenberg generator; ``paper_literal`` uses ``sum V V^dagger``. The two
    agree iff the jump operators satisfy ``sum V^dagger V = sum V V^dagger``.
    """

    hamiltonian: np.ndarray
    jump_ops: tuple = ()
    hbar: float = 1.0
    convention: str = "standard"

    def __post_init__(self):
        h = HermitianOperator(self.hamiltonian).matrix
        d = h.shape[0]
        ops = tuple(as_square(v) for v in self.jump_ops)
        if any(v.shape != (d, d) for v in ops):
            raise DimensionError("jump operators do not match the Hamiltonian dimension")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "jump_ops", ops)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def loss_operator(self) -> np.ndarray:
        d = self.dim
        if self.convention == "standard":
            return sum((dagger(v) @ v for v in self.jump_ops), np.zeros((d, d), complex))
        return sum((v @ dagger(v) for v in self.jump_ops), np.zeros((d, d), complex))

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "hbar": self.hbar,
            "hamiltonian": matrix_to_json(self.hamiltonian),
            "jump_ops": [matrix_to_json(v) for v in self.jump_ops],
            "convention": self.convention,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LindbladSpec":
        spec = cls(
            matrix_from_json(obj["hamiltonian"]),
            tuple(matrix_from_json(v) for v in obj.get("jump_ops", [])),
            float(obj.get("hbar", 1.0)),
            obj.get("convention", "standard"),
        )
        if "dim" in obj and int(obj["dim"]) != spec.dim:
            raise DimensionError(f"declared dim {obj['dim']} but Hamiltonian has dim {spec.dim}")
        return spec


def _spre(a):
    return np.kron(np.eye(a.shape[0]), a)


def _spost(a):
    return np.kron(a.T, np.eye(a.shape[0]))


def hamiltonian_part(spec: LindbladSpec) -> SuperOperator:
    """Heisenberg ``B -> (i/hbar)[H, B]``."""
    h = spec.hamiltonian
    return SuperOperator(1j / spec.hbar * (_spre(h) - _spost(h)), "heisenberg")


def dissipator_part(spec: LindbladSpec) -> SuperOperator:
    """Heisenberg ``B -> -1/2 {G, B} + sum V^dagger B V`` with ``G`` set by the convention."""
    d = spec.dim
    g = spec.loss_operator()
    mat = -0.5 * (_spre(g) + _spost(g))
    for v in spec.jump_ops:
        mat = mat + np.kron(v.T, dagger(v))
    return SuperOperator(np.asarray(mat, dtype=complex).reshape(d * d, d * d), "heisenberg")


def generator_heisenberg(spec: LindbladSpec) -> SuperOperator:
    return hamiltonian_part(spec) + dissipator_part(spec)


def generator_schroedinger(spec: LindbladSpec) -> SuperOperator:
    return adjoint_superop(generator_heisenberg(spec))


def evolve(spec: LindbladSpec, t: float, picture: str = "schroedinger") -> SuperOperator:
    """Semigroup snapshot ``exp(t L)``; ``t`` must be non-negative."""
    if t < 0:
        raise ValueError("semigroup is only defined for t >= 0")
    if spec.dim ** 2 > EXACT_EXP_LIMIT:
        raise ValueError("superoperator too large to exponentiate; use evolve_state")
    if picture == "schroedinger":
        gen = generator_schroedinger(spec)
    elif picture == "heisenberg":
        gen = generator_heisenberg(spec)
    else:
        raise ValueError(f"unknown picture {picture!r}")
    return SuperOperator(matrix_exp(t * gen.matrix), picture)


def evolve_superop(gen: SuperOperator, t: float) -> SuperOperator:
    if t < 0:
        raise ValueError("semigroup is only defined for t >= 0")
    return SuperOperator(matrix_exp(t * gen.matrix), gen.picture)


def cp_along_trajectory(spec: LindbladSpec, t_grid: Sequence[float]) -> list[tuple[float, float]]:
    return [(float(t), min_choi_eigenvalue(evolve(spec, t))) for t in t_grid]


def schroedinger_rhs(spec: LindbladSpec) -> Callable[[np.ndarray], np.ndarray]:
    """Matrix-form right-hand side ``rho -> L(rho)``."""
    h, hb = spec.hamiltonian, spec.hbar
    g = spec.loss_operator()
    ops = spec.jump_ops

    def rhs(rho):
        out = -1j / hb * (h @ rho - rho @ h) - 0.5 * (g @ rho + rho @ g)
        for v in ops:
            out = out + v @ rho @ dagger(v)
        return out

    return rhs


class IntegrationError(RuntimeError):
    pass


def rk4_trajectory(rhs: Callable[[np.ndarray], np.ndarray], rho0: np.ndarray,
                   t_grid: Sequence[float], max_step: float,
                   trace_tol: Optional[float] = 1e-9, max_halvings: int = 8) -> list[np.ndarray]:
    """Fixed-step RK4 through ``t_grid``.

    The whole run is repeated with half the step whenever the trace drifts
    by more than ``trace_tol`` or the state norm blows up (instability).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    tr0 = np.trace(rho0)
    norm_cap = 2.0 * max(1.0, float(np.linalg.norm(rho0)))
    step = max_step
    for _ in range(max_halvings + 1):
        states = [np.array(rho0, dtype=complex)]
        rho = states[0]
        ok = True
        for t_prev, t_next in zip(t_grid[:-1], t_grid[1:]):
            span = t_next - t_prev
            n = max(1, int(np.ceil(span / step - 1e-12)))
            h = span / n
            for _ in range(n):
                k1 = rhs(rho)
                k2 = rhs(rho + 0.5 * h * k1)
                k3 = rhs(rho + 0.5 * h * k2)
                k4 = rhs(rho + h * k3)
                rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            drift = abs(np.trace(rho) - tr0)
            if (not np.all(np.isfinite(rho)) or np.linalg.norm(rho) > norm_cap
                    or (trace_tol is not None and drift > trace_tol)):
                ok = False
                break
            states.append(rho)
        if ok:
            return states
        step /= 2
    raise IntegrationError("trace drift exceeded tolerance after repeated step halving")


def evolve_state(spec: LindbladSpec, rho0, t_grid: Sequence[float],
                 max_step: Optional[float] = None) -> list[np.ndarray]:
    """Schroedinger-picture states on ``t_grid`` (non-decreasing, starting at >= 0)."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        return []
    if t_grid[0] < 0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("time grid must be non-negative and non-decreasing")
    rho0 = as_square(rho0)
    d = spec.dim
    if d * d <= EXACT_EXP_LIMIT:
        gen = generator_schroedinger(spec).matrix
        v = matrix_exp(t_grid[0] * gen) @ rho0.reshape(-1, order="F")
        out = [v.reshape(d, d, order="F")]
        step, prop = None, None
        for dt in np.diff(t_grid):
            if dt != step:
                step, prop = dt, matrix_exp(dt * gen)
            v = prop @ v
            out.append(v.reshape(d, d, order="F"))
        return out
    if max_step is None:
        bound = 2 * np.linalg.norm(spec.hamiltonian, 2) / spec.hbar + 2 * np.linalg.norm(
            spec.loss_operator(), 2)
        max_step = 1.0 / max(bound, 1e-12)
    grid = np.concatenate([[0.0], t_grid]) if t_grid[0] > 0 else t_grid
    tol = 1e-9 if spec.convention == "standard" else None
    states = rk4_trajectory(schroedinger_rhs(spec), rho0, grid, max_step, trace_tol=tol)
    return states[1:] if t_grid[0] > 0 else states


def trajectory_csv(t_grid: Sequence[float], states: Sequence[np.ndarray],
                   observables: Sequence[np.ndarray], names: Optional[Sequence[str]] = None) -> str:
    """CSV with header ``t,observable_1,...,trace``."""
    names = list(names) if names else [f"observable_{i + 1}" for i in range(len(observables))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *names, "trace"])
    for t, rho in zip(t_grid, states):
        vals = [np.trace(o @ rho).real for o in observables]
        w.writerow([repr(float(t)), *(repr(float(x)) for x in vals), repr(float(np.trace(rho).real))])
    return buf.getvalue()


def random_spec(dim: int, n_jumps: int, rng: np.random.Generator,
                scale: float = 1.0, convention: str = "standard") -> LindbladSpec:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = 0.5 * (g + dagger(g))
    jumps = tuple(
        scale * (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2 * dim)
        for _ in range(n_jumps)
    )
    return LindbladSpec(h, jumps, 1.0, convention)
