"""Truncated Fock spaces and the generator on field bilinears ``a_h^dagger a_k``.

One-particle operators are promoted to the Fock space as bilinears,
``O -> sum_fg O_fg a_f^dagger a_g``, and the channel operators as
``R_{h lambda} = sum_k (R_lambda)_{hk} a_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .lindblad import LindbladSpec
from .operators import (
    DensityMatrix,
    DimensionError,
    as_square,
    dagger,
    hermiticity_defect,
    matrix_from_json,
    matrix_to_json,
)

MAX_FOCK_DIM = 4096
STATISTICS = ("fermionic", "bosonic")


@dataclass(frozen=True, eq=False)
class ModeSystem:
    """``modes`` single-particle levels with their energies and occupation cutoffs.

    Basis states are Kronecker products of per-mode occupation states with
    mode 0 as the leftmost factor, so index 0 is the vacuum.
    """

    modes: int
    statistics: str = "fermionic"
    cutoff: Optional[Sequence[int]] = None
    energies: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("need at least one mode")
        if self.statistics not in STATISTICS:
            raise ValueError(f"unknown statistics {self.statistics!r}")
        if self.statistics == "fermionic":
            cut = (1,) * self.modes
        elif self.cutoff is None:
            raise ValueError("bosonic modes need an occupation cutoff")
        elif np.isscalar(self.cutoff):
            cut = (int(self.cutoff),) * self.modes
        else:
            cut = tuple(int(c) for c in self.cutoff)
        if len(cut) != self.modes or min(cut) < 1:
            raise ValueError("cutoff must give a positive maximum occupation per mode")
        energies = np.zeros(self.modes) if self.energies is None else np.asarray(self.energies, float)
        if energies.shape != (self.modes,):
            raise ValueError("one energy per mode required")
        object.__setattr__(self, "cutoff", cut)
        object.__setattr__(self, "energies", energies)
        if self.dim > MAX_FOCK_DIM:
            raise ValueError(f"Fock dimension {self.dim} exceeds {MAX_FOCK_DIM}")

    @property
    def dim(self) -> int:
        return int(np.prod([c + 1 for c in self.cutoff]))

    @cached_property
    def annihilators(self) -> tuple:
        ops = []
        for f in range(self.modes):
            factors = []
            for g, c in enumerate(self.cutoff):
                if g < f and self.statistics == "fermionic":
                    factors.append(np.diag([1, -1]))
                elif g == f:
                    if self.statistics == "fermionic":
                        factors.append(np.array([[0, 1], [0, 0]]))
                    else:
                        factors.append(np.diag(np.sqrt(np.arange(1, c + 1)), 1))
                else:
                    factors.append(np.eye(c + 1, dtype=int))
            op = factors[0]
            for fac in factors[1:]:
                op = np.kron(op, fac)
            op = np.asarray(op, dtype=complex)
            op.setflags(write=False)
            ops.append(op)
        return tuple(ops)

    def bilinear(self, coeffs) -> np.ndarray:
        """``sum_fg coeffs[f, g] a_f^dagger a_g``."""
        c = np.asarray(coeffs, dtype=complex)
        a = self.annihilators
        out = np.zeros((self.dim, self.dim), dtype=complex)
        for f in range(self.modes):
            for g in range(self.modes):
                if c[f, g] != 0:
                    out += c[f, g] * (dagger(a[f]) @ a[g])
        return out

    def number_operator(self) -> np.ndarray:
        return self.bilinear(np.eye(self.modes))

    def interior_projector(self) -> np.ndarray:
        """Projector onto states with every occupation below its cutoff (bosonic CCR holds there)."""
        occ = np.array(np.unravel_index(np.arange(self.dim), [c + 1 for c in self.cutoff]))
        keep = np.all(occ < np.array(self.cutoff)[:, None], axis=0)
        return np.diag(keep.astype(complex))


def ladder(ms: ModeSystem, f: int) -> tuple[np.ndarray, np.ndarray]:
    """``(a_f, a_f^dagger)`` as Fock-space matrices."""
    if not 0 <= f < ms.modes:
        raise IndexError(f"mode index {f} out of range for {ms.modes} modes")
    a = ms.annihilators[f]
    return a, dagger(a)


# ---------------------------------------------------------------------------
# quasi-diagonality

class SeparationError(ValueError):
    """The coarse-graining time does not dominate the interaction time."""


@dataclass(frozen=True)
class QuasiDiagonalConfig:
    t: float
    tau0: float
    separation_factor: float = 10.0

    def __post_init__(self):
        if self.separation_factor < 1:
            raise ValueError("separation factor must be >= 1")
        if self.t < self.separation_factor * self.tau0:
            raise SeparationError(
                f"t = {self.t:g} is not >= {self.separation_factor:g} * tau0 = "
                f"{self.separation_factor * self.tau0:g}"
            )


def quasi_diagonal_pairs(energies, config: QuasiDiagonalConfig, hbar: float = 1.0) -> set:
    """Index pairs with ``|E_h - E_k| <= hbar / t``."""
    if config.t < config.separation_factor * config.tau0:
        raise SeparationError("time-scale separation violated")
    e = np.asarray(energies, dtype=float)
    bound = hbar / config.t
    n = len(e)
    return {(h, k) for h in range(n) for k in range(n) if h == k or abs(e[h] - e[k]) <= bound}


# ---------------------------------------------------------------------------
# the bilinear generator

@dataclass(frozen=True, eq=False)
class BilinearGeneratorSpec:
    mode_system: ModeSystem
    hbar: float = 1.0
    V: Optional[np.ndarray] = None
    Gamma: Optional[np.ndarray] = None
    R_ops: tuple = ()

    def __post_init__(self):
        m = self.mode_system.modes
        zero = np.zeros((m, m), dtype=complex)
        v = zero if self.V is None else as_square(self.V)
        g = zero if self.Gamma is None else as_square(self.Gamma)
        rs = tuple(as_square(r) for r in self.R_ops)
        if v.shape != (m, m) or g.shape != (m, m) or any(r.shape != (m, m) for r in rs):
            raise DimensionError(f"V, Gamma and R_ops must be {m}x{m}")
        if hermiticity_defect(v) > 1e-12:
            raise ValueError("V must be Hermitian")
        if hermiticity_defect(g) > 1e-12:
            raise ValueError("Gamma must be Hermitian")
        if np.linalg.eigvalsh(0.5 * (g + dagger(g)))[0] < -1e-12:
            raise ValueError("Gamma must be positive semidefinite")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")
        object.__setattr__(self, "V", v)
        object.__setattr__(self, "Gamma", g)
        object.__setattr__(self, "R_ops", rs)

    @property
    def gain_matrix(self) -> np.ndarray:
        m = self.mode_system.modes
        return sum((dagger(r) @ r for r in self.R_ops), np.zeros((m, m), dtype=complex))

    @property
    def number_conserving(self) -> bool:
        return bool(np.linalg.norm(self.Gamma - 0.5 * self.gain_matrix) <= 1e-12)

    @cached_property
    def _fock(self):
        ms = self.mode_system
        k = ms.bilinear(np.diag(ms.energies)) + ms.bilinear(self.V)
        gam = ms.bilinear(self.Gamma)
        a = ms.annihilators
        # channel operators R_{h lambda} = sum_k (R_lambda)_{hk} a_k
        r = [[sum(rl[h, j] * a[j] for j in range(ms.modes)) for h in range(ms.modes)]
             for rl in self.R_ops]
        return k, gam, r

    def to_json(self) -> dict:
        ms = self.mode_system
        return {
            "modes": ms.modes,
            "statistics": ms.statistics,
            "cutoff": list(ms.cutoff),
            "energies": [float(e) for e in ms.energies],
            "hbar": self.hbar,
            "V": matrix_to_json(self.V),
            "Gamma": matrix_to_json(self.Gamma),
            "R_ops": [matrix_to_json(r) for r in self.R_ops],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BilinearGeneratorSpec":
        ms = ModeSystem(int(obj["modes"]), obj.get("statistics", "fermionic"),
                        obj.get("cutoff"), obj.get("energies"))
        return cls(
            ms,
            float(obj.get("hbar", 1.0)),
            matrix_from_json(obj["V"]) if "V" in obj else None,
            matrix_from_json(obj["Gamma"]) if "Gamma" in obj else None,
            tuple(matrix_from_json(r) for r in obj.get("R_ops", [])),
        )


def _check_index(spec: BilinearGeneratorSpec, *idx):
    m = spec.mode_system.modes
    for i in idx:
        if not 0 <= i < m:
            raise IndexError(f"mode index {i} out of range for {m} modes")


def bilinear_generator_apply(spec: BilinearGeneratorSpec, h: int, k: int) -> np.ndarray:
    """Heisenberg generator acting on ``a_h^dagger a_k``:

    ``(i/hbar)[H0 + V, a_h^+ a_k] - (1/hbar)([G, a_h^+] a_k - a_h^+ [G, a_k])
    + (1/hbar) sum_lambda R_{h lambda}^+ R_{k lambda}``.
    """
    _check_index(spec, h, k)
    kin, gam, r = spec._fock
    a = spec.mode_system.annihilators
    ad_h, a_k = dagger(a[h]), a[k]
    x = ad_h @ a_k
    hb = spec.hbar
    out = 1j / hb * (kin @ x - x @ kin)
    out -= ((gam @ ad_h - ad_h @ gam) @ a_k - ad_h @ (gam @ a_k - a_k @ gam)) / hb
    for rl in r:
        out += dagger(rl[h]) @ rl[k] / hb
    return out


def generator_on_bilinear(spec: BilinearGeneratorSpec, coeffs) -> np.ndarray:
    """Linear extension: ``L'(sum_hk M_hk a_h^+ a_k)``."""
    c = np.asarray(coeffs, dtype=complex)
    m = spec.mode_system.modes
    d = spec.mode_system.dim
    out = np.zeros((d, d), dtype=complex)
    for h in range(m):
        for k in range(m):
            if c[h, k] != 0:
                out += c[h, k] * bilinear_generator_apply(spec, h, k)
    return out


class DecompositionResidual(NamedTuple):
    first_order: float
    full: float


def _drift_term(spec: BilinearGeneratorSpec, f: int, literal_sign: bool) -> np.ndarray:
    kin, gam, _ = spec._fock
    a = spec.mode_system.annihilators[f]
    sign = -1.0 if literal_sign else 1.0
    return 1j / spec.hbar * (kin @ a - a @ kin) + sign / spec.hbar * (gam @ a - a @ gam)


def decomposition_check(spec: BilinearGeneratorSpec, h: int, k: int, dt: float,
                        literal_sign: bool = False) -> DecompositionResidual:
    """Compare ``a_h^+ a_k + dt L'(a_h^+ a_k)`` with ``b_h^+ b_k + (dt/hbar) sum R^+ R``.

    ``b_f = a_f + dt c_f`` with ``c_f = (i/hbar)[H0 + V, a_f] + (1/hbar)[G, a_f]``.
    The ``[G, a_f]`` term carries a plus sign: that is the sign for which
    the first-order part reproduces the generator's loss term. With
    ``literal_sign=True`` the opposite sign is used and the first-order
    residual is nonzero whenever ``G`` acts.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    _check_index(spec, h, k)
    _, _, r = spec._fock
    a = spec.mode_system.annihilators
    c_h = _drift_term(spec, h, literal_sign)
    c_k = _drift_term(spec, k, literal_sign)
    gain = sum((dagger(rl[h]) @ rl[k] for rl in r), np.zeros_like(c_h)) / spec.hbar
    gen = bilinear_generator_apply(spec, h, k)
    first = gen - (dagger(c_h) @ a[k] + dagger(a[h]) @ c_k) - gain
    b_h, b_k = a[h] + dt * c_h, a[k] + dt * c_k
    lhs = dagger(a[h]) @ a[k] + dt * gen
    rhs = dagger(b_h) @ b_k + dt * gain
    return DecompositionResidual(float(np.linalg.norm(first)), float(np.linalg.norm(lhs - rhs)))


def number_conservation_check(spec: BilinearGeneratorSpec) -> float:
    """Frobenius norm of ``L'(N)``."""
    return float(np.linalg.norm(generator_on_bilinear(spec, np.eye(spec.mode_system.modes))))


def _evolved_bilinears(spec: BilinearGeneratorSpec, dt: float) -> np.ndarray:
    ms = spec.mode_system
    a = ms.annihilators
    t = np.empty((ms.modes, ms.modes, ms.dim, ms.dim), dtype=complex)
    for h in range(ms.modes):
        for k in range(ms.modes):
            t[h, k] = dagger(a[h]) @ a[k] + dt * bilinear_generator_apply(spec, h, k)
    return t


def _restricted_blocks(t: np.ndarray, bs: Sequence[np.ndarray]) -> np.ndarray:
    n = len(bs)
    d = t.shape[-1]
    blocks = np.empty((n, n, d, d), dtype=complex)
    for i in range(n):
        for j in range(n):
            coeff = dagger(bs[i]) @ bs[j]
            blocks[i, j] = np.einsum("hk,hkab->ab", coeff, t)
    return blocks


def restricted_cp_check(spec: BilinearGeneratorSpec, dt: float, trials: int,
                        rng: Optional[np.random.Generator] = None, max_n: int = 4,
                        adversarial: bool = False) -> float:
    """Minimum of ``sum_ij <psi_i|(1 + dt L')(sum_hk a_h^+ (B_i^+ B_j)_hk a_k)|psi_j>``.

    Each trial draws ``n <= max_n`` random one-particle matrices ``B_i`` and
    random Fock vectors ``psi_i`` (jointly normalized). With
    ``adversarial=True`` the vectors are instead chosen to minimize the form,
    i.e. the lowest eigenvalue of the block matrix is returned; that exposes
    the O(dt^2) defect of the first-order map.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    ms = spec.mode_system
    t = _evolved_bilinears(spec, dt)
    lowest = np.inf
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        bs = [rng.standard_normal((ms.modes, ms.modes)) + 1j * rng.standard_normal((ms.modes, ms.modes))
              for _ in range(n)]
        blocks = _restricted_blocks(t, bs)
        big = blocks.transpose(0, 2, 1, 3).reshape(n * ms.dim, n * ms.dim)
        if adversarial:
            value = float(np.linalg.eigvalsh(0.5 * (big + dagger(big)))[0])
        else:
            psi = rng.standard_normal(n * ms.dim) + 1j * rng.standard_normal(n * ms.dim)
            psi /= np.linalg.norm(psi)
            value = float(np.vdot(psi, big @ psi).real)
        lowest = min(lowest, value)
    return lowest


# ---------------------------------------------------------------------------
# one-particle reduction

def reduce_to_one_particle(rho1, rho_m, a1, statistics: str = "fermionic") -> tuple[float, float]:
    """Both sides of ``Tr(A rho) = Tr(A1 rho1)`` on the one-particle sector times matter.

    ``rho = sum_gf rho1_gf a_g^+ |0><0| a_f (x) rho_m`` and
    ``A = sum_hk (A1)_hk a_h^+ a_k (x) 1``.
    """
    r1 = rho1.matrix if isinstance(rho1, DensityMatrix) else DensityMatrix(rho1).matrix
    rm = rho_m.matrix if isinstance(rho_m, DensityMatrix) else DensityMatrix(rho_m).matrix
    a1 = as_square(a1)
    m = r1.shape[0]
    if a1.shape != (m, m):
        raise DimensionError("A1 must match the one-particle dimension")
    ms = ModeSystem(m, statistics, cutoff=1 if statistics == "bosonic" else None)
    a = ms.annihilators
    vac = np.zeros((ms.dim, ms.dim), dtype=complex)
    vac[0, 0] = 1.0
    field_state = sum(r1[g, f] * (dagger(a[g]) @ vac @ a[f]) for g in range(m) for f in range(m))
    rho = np.kron(field_state, rm)
    big_a = np.kron(ms.bilinear(a1), np.eye(rm.shape[0]))
    lhs = np.trace(big_a @ rho)
    rhs = np.trace(a1 @ r1)
    return float(lhs.real), float(rhs.real)


def one_particle_master_generator(h0, v, l_ops: Sequence, hbar: float = 1.0) -> LindbladSpec:
    """Lindblad spec for ``drho/dt = -(i/hbar)[H0+V, rho] - (1/hbar){G, rho} + (1/hbar) sum L rho L^+``
    with ``G = 1/2 sum L^+ L``; the jump operators are ``L / sqrt(hbar)``."""
    h = as_square(h0) + as_square(v)
    jumps = tuple(as_square(l) / np.sqrt(hbar) for l in l_ops)
    return LindbladSpec(h, jumps, hbar, "standard")


def random_number_conserving_spec(m: int, rng: np.random.Generator, n_channels: int = 2,
                                  scale: float = 0.5, hbar: float = 1.0) -> BilinearGeneratorSpec:
    """Random fermionic spec with ``Gamma = 1/2 sum R^+ R``."""
    energies = rng.uniform(-1, 1, m)
    g = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    v = scale * 0.5 * (g + dagger(g))
    rs = tuple(scale * (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))) / np.sqrt(2 * m)
               for _ in range(n_channels))
    gamma = 0.5 * sum(dagger(r) @ r for r in rs)
    return BilinearGeneratorSpec(ModeSystem(m, "fermionic", energies=energies), hbar, v, gamma, rs)
