"""Quantum Brownian motion master equation on a truncated oscillator basis.

Single axis only: the three-dimensional equation is a sum of identical,
commuting one-axis generators. All certifications use the *interior*:
operators supported on the lowest ``N - 2`` levels, where ``[x, p] = i hbar``
holds exactly for the truncated matrices.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize, sparse

from .lindblad import rk4_trajectory
from .operators import as_square, dagger, matrix_exp
from .superop import SuperOperator, choi_from_superop

EDGE = 2  # levels excluded from every certification
LEAK_TOL = 1e-6
DENSE_LIMIT = 900  # largest N^2 propagated by dense exponentiation


class TruncationError(RuntimeError):
    """The state has leaked into the top levels of the oscillator basis."""


@dataclass(frozen=True)
class QbmParams:
    M: float
    T: float
    D_pp: float
    hbar: float = 1.0
    k_B: float = 1.0
    beta_coeff: Optional[float] = None

    def __post_init__(self):
        if min(self.M, self.T, self.hbar, self.k_B) <= 0:
            raise ValueError("M, T, hbar and k_B must be positive")
        if self.D_pp < 0:
            raise ValueError("D_pp must be non-negative")

    @property
    def mkt(self) -> float:
        return self.M * self.k_B * self.T

    @property
    def D_qq(self) -> float:
        return (1.0 / (4.0 * self.mkt)) ** 2 * self.D_pp

    @property
    def D_qp(self) -> float:
        return self.D_pp / (2.0 * self.mkt)

    @property
    def beta(self) -> float:
        """Coefficient of ``p`` in the jump operator ``x + i beta p``."""
        return self.hbar / (2.0 * self.mkt) if self.beta_coeff is None else self.beta_coeff

    @property
    def dissipator_prefactor(self) -> float:
        return 2.0 * self.D_pp / self.hbar ** 2

    def to_json(self) -> dict:
        out = {"M": self.M, "T": self.T, "D_pp": self.D_pp, "hbar": self.hbar, "k_B": self.k_B}
        if self.beta_coeff is not None:
            out["beta_coeff"] = self.beta_coeff
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "QbmParams":
        beta = obj.get("beta_coeff")
        return cls(float(obj["M"]), float(obj["T"]), float(obj["D_pp"]),
                   float(obj.get("hbar", 1.0)), float(obj.get("k_B", 1.0)),
                   None if beta is None else float(beta))


@dataclass(frozen=True, eq=False)
class OscillatorBasis:
    """Number basis of a reference oscillator with frequency ``omega`` and mass ``M``."""

    levels: int = 30
    omega: float = 1.0
    M: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.levels < EDGE + 2:
            raise ValueError(f"need at least {EDGE + 2} levels")
        a = np.diag(np.sqrt(np.arange(1, self.levels)), 1).astype(complex)
        x = np.sqrt(self.hbar / (2 * self.M * self.omega)) * (a + a.T)
        p = 1j * np.sqrt(self.hbar * self.M * self.omega / 2) * (a.T - a)
        for name, val in (("a", a), ("x_matrix", x), ("p_matrix", p)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def interior(self) -> int:
        return self.levels - EDGE

    def harmonic_potential(self, omega: Optional[float] = None) -> np.ndarray:
        w = self.omega if omega is None else omega
        return 0.5 * self.M * w ** 2 * (self.x_matrix @ self.x_matrix)

    def coherent_state(self, alpha: complex) -> np.ndarray:
        """Normalized truncated coherent state as a density matrix."""
        n = np.arange(self.levels)
        logfact = np.array([np.sum(np.log(np.arange(1, k + 1))) for k in n])
        amp = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * logfact) * np.power(complex(alpha), n)
        amp /= np.linalg.norm(amp)
        return np.outer(amp, amp.conj())


def _spre(a):
    return np.kron(np.eye(a.shape[0]), a)


def _spost(a):
    return np.kron(a.T, np.eye(a.shape[0]))


def _comm(a):
    return _spre(a) - _spost(a)


def _acomm(a):
    return _spre(a) + _spost(a)


def _hamiltonian(params: QbmParams, basis: OscillatorBasis, h_extra) -> np.ndarray:
    p = basis.p_matrix
    h = p @ p / (2 * params.M)
    if h_extra is not None:
        h_extra = as_square(h_extra)
        if h_extra.shape != h.shape:
            raise ValueError("H_extra does not match the basis dimension")
        h = h + h_extra
    return h


def qbm_generator(params: QbmParams, basis: OscillatorBasis, h_extra=None,
                  D_qq: Optional[float] = None) -> SuperOperator:
    """Schroedinger superoperator of the Fokker-Planck-type master equation.

    ``-(i/hbar)[H, .] - (D_pp/hbar^2)[x,[x,.]] - D_qq[p,[p,.]] - (i/hbar) D_qp [x,{p,.}]``
    with ``H = p^2/2M + h_extra``. Pass ``D_qq=0`` for the Caldeira-Leggett variant.
    """
    hb = params.hbar
    x, p = basis.x_matrix, basis.p_matrix
    dqq = params.D_qq if D_qq is None else D_qq
    cx, cp = _comm(x), _comm(p)
    mat = (-1j / hb * _comm(_hamiltonian(params, basis, h_extra))
           - params.D_pp / hb ** 2 * cx @ cx
           - dqq * cp @ cp
           - 1j / hb * params.D_qp * cx @ _acomm(p))
    return SuperOperator(mat)


def _lindblad_pieces(params: QbmParams, basis: OscillatorBasis, h_extra=None):
    """Fixed part and the beta-polynomial coefficients of the dissipator.

    With ``L = x + i beta p`` the dissipator ``L . L^+ - 1/2{L^+ L, .}`` is
    exactly ``A0 + beta A1 + beta^2 A2`` for the truncated matrices.
    """
    hb = params.hbar
    x, p = basis.x_matrix, basis.p_matrix
    fixed = (-1j / hb * _comm(_hamiltonian(params, basis, h_extra))
             - 1j / hb * params.D_pp / (4 * params.mkt) * _comm(x @ p + p @ x))
    a0 = np.kron(x.conj(), x) - 0.5 * _acomm(x @ x)
    # i(p . x - x . p) - (i/2){xp - px, .}
    a1 = 1j * (np.kron(x.conj(), p) - np.kron(p.conj(), x)) - 0.5j * _acomm(x @ p - p @ x)
    a2 = np.kron(p.conj(), p) - 0.5 * _acomm(p @ p)
    return fixed, (a0, a1, a2)


def qbm_lindblad_form(params: QbmParams, basis: OscillatorBasis, h_extra=None,
                      beta: Optional[float] = None, prefactor: Optional[float] = None) -> SuperOperator:
    """Lindblad rewriting with ``L = x + i beta p`` and dissipator weight ``prefactor``.

    Defaults are ``params.beta`` and ``2 D_pp / hbar^2``; ``L`` is assembled
    from the truncated matrices as written, without using ``[x, p] = i hbar``.
    """
    beta = params.beta if beta is None else beta
    prefactor = params.dissipator_prefactor if prefactor is None else prefactor
    hb = params.hbar
    x, p = basis.x_matrix, basis.p_matrix
    l_op = x + 1j * beta * p
    ldl = dagger(l_op) @ l_op
    diss = np.kron(l_op.conj(), l_op) - 0.5 * _acomm(ldl)
    mat = (-1j / hb * _comm(_hamiltonian(params, basis, h_extra))
           - 1j / hb * params.D_pp / (4 * params.mkt) * _comm(x @ p + p @ x)
           + prefactor * diss)
    return SuperOperator(mat)


def interior_indices(basis: OscillatorBasis) -> np.ndarray:
    n, k = basis.levels, basis.interior
    return np.array([i + j * n for j in range(k) for i in range(k)])


def interior_block(m: SuperOperator, basis: OscillatorBasis) -> np.ndarray:
    idx = interior_indices(basis)
    return m.matrix[np.ix_(idx, idx)]


class EquivalenceFit(NamedTuple):
    residual: float
    relative_residual: float
    beta: float
    prefactor: float


def equivalence_residual(params: QbmParams, basis: OscillatorBasis,
                         calibrate: bool = True) -> EquivalenceFit:
    """Interior Frobenius distance between the master equation and its Lindblad form.

    With ``calibrate`` the jump coefficient ``beta`` and the dissipator
    weight are fitted by least squares; otherwise ``params.beta`` and
    ``2 D_pp / hbar^2`` are used as given.
    """
    idx = interior_indices(basis)
    sub = np.ix_(idx, idx)
    target = qbm_generator(params, basis).matrix[sub]
    scale = np.linalg.norm(target)
    fixed, pieces = _lindblad_pieces(params, basis)
    fixed = fixed[sub]
    a0, a1, a2 = (a[sub] for a in pieces)
    if not calibrate or params.D_pp == 0:
        beta, pref = params.beta, params.dissipator_prefactor
    else:
        # linear least squares in (c, c beta, c beta^2), then polish the two scalars
        rhs = (target - fixed).ravel()
        design = np.stack([a0.ravel(), a1.ravel(), a2.ravel()], axis=1)
        design_r = np.concatenate([design.real, design.imag])
        rhs_r = np.concatenate([rhs.real, rhs.imag])
        u, *_ = np.linalg.lstsq(design_r, rhs_r, rcond=None)
        pref0 = u[0]
        beta0 = u[1] / u[0] if u[0] != 0 else params.beta

        def resid(theta):
            b, c = theta
            r = rhs - c * (a0 + b * a1 + b * b * a2).ravel()
            return np.concatenate([r.real, r.imag]) / scale

        fit = optimize.least_squares(resid, [beta0, pref0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
        beta, pref = float(fit.x[0]), float(fit.x[1])
    model = fixed + pref * (a0 + beta * a1 + beta * beta * a2)
    res = float(np.linalg.norm(target - model))
    rel = res / scale if scale > 0 else res
    return EquivalenceFit(float(res), float(rel), float(beta), float(pref))


def equivalence_report(params: QbmParams, basis: OscillatorBasis) -> dict:
    literal = equivalence_residual(params, basis, calibrate=False)
    fitted = equivalence_residual(params, basis, calibrate=True)
    return {
        "residual_literal": literal.relative_residual,
        "residual_calibrated": fitted.relative_residual,
        "beta_literal": literal.beta,
        "beta_fitted": fitted.beta,
        "prefactor_literal": literal.prefactor,
        "prefactor_fitted": fitted.prefactor,
    }


def cp_small_time(params: QbmParams, basis: OscillatorBasis, dt: float, h_extra=None,
                  D_qq: Optional[float] = None, method: str = "euler") -> float:
    """Minimum Choi eigenvalue of the interior-projected short-time map.

    ``method="euler"`` uses ``1 + dt L`` (projected ``L``). ``method="exp"``
    uses the interior compression of ``exp(dt L)``, which is exactly CP for
    a Lindblad generator; ``1 + dt L`` is not, its Choi matrix always has an
    O(dt^2) negative direction.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    gen = qbm_generator(params, basis, h_extra, D_qq)
    k = basis.interior
    if method == "euler":
        block = np.eye(k * k) + dt * interior_block(gen, basis)
    elif method == "exp":
        block = interior_block(SuperOperator(matrix_exp(dt * gen.matrix)), basis)
    else:
        raise ValueError(f"unknown method {method!r}")
    c = choi_from_superop(SuperOperator(block)).matrix
    return float(np.linalg.eigvalsh(0.5 * (c + dagger(c)))[0])


def sparse_generator(params: QbmParams, basis: OscillatorBasis, h_extra=None,
                     D_qq: Optional[float] = None) -> sparse.csr_matrix:
    """Same operator as :func:`qbm_generator`, assembled in sparse form."""
    hb = params.hbar
    dqq = params.D_qq if D_qq is None else D_qq
    eye = sparse.identity(basis.levels, dtype=complex, format="csr")

    def comm(a):
        a = sparse.csr_matrix(a)
        return sparse.kron(eye, a) - sparse.kron(a.T, eye)

    def acomm(a):
        a = sparse.csr_matrix(a)
        return sparse.kron(eye, a) + sparse.kron(a.T, eye)

    cx, cp = comm(basis.x_matrix), comm(basis.p_matrix)
    h = _hamiltonian(params, basis, h_extra)
    h[np.abs(h) < 1e-14 * max(1.0, np.abs(h).max())] = 0.0
    mat = (-1j / hb * comm(h)
           - params.D_pp / hb ** 2 * (cx @ cx)
           - dqq * (cp @ cp)
           - 1j / hb * params.D_qp * (cx @ acomm(basis.p_matrix)))
    return sparse.csr_matrix(mat)


def _stable_step(gen: sparse.csr_matrix, rng_seed: int = 0) -> float:
    """RK4 step from a power-iteration estimate of the spectral radius."""
    rng = np.random.default_rng(rng_seed)
    v = rng.standard_normal(gen.shape[0]) + 1j * rng.standard_normal(gen.shape[0])
    radius = 0.0
    for _ in range(30):
        w = gen @ v
        radius = np.linalg.norm(w) / np.linalg.norm(v)
        v = w / np.linalg.norm(w)
    return 2.5 / (1.2 * radius)


MOMENT_COLUMNS = ("t", "x", "p", "x2", "p2", "xp_sym", "trace", "min_eig")


def moment_trajectory(params: QbmParams, basis: OscillatorBasis, h_extra, rho0,
                      t_grid: Sequence[float], D_qq: Optional[float] = None,
                      max_step: Optional[float] = None) -> list[tuple]:
    """Rows ``(t, <x>, <p>, <x^2>, <p^2>, <{x,p}>/2, Tr rho, min eig rho)``.

    Exact exponentiation for ``N^2 <= 900``, fixed-step RK4 otherwise.
    Raises :class:`TruncationError` when the top two levels hold more than
    ``1e-6`` of the population.
    """
    rho0 = as_square(rho0)
    n = basis.levels
    if np.trace(rho0[n - 4:, n - 4:]).real > LEAK_TOL:
        raise TruncationError("initial state is not supported below level N-4")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        return []
    if t_grid[0] < 0 or np.any(np.diff(t_grid) < 0):
        raise ValueError("time grid must be non-negative and non-decreasing")
    if n * n <= DENSE_LIMIT:
        gen = qbm_generator(params, basis, h_extra, D_qq).matrix
        v = matrix_exp(t_grid[0] * gen) @ rho0.reshape(-1, order="F")
        states = [v.reshape(n, n, order="F")]
        step, prop = None, None
        for dt in np.diff(t_grid):
            if dt != step:
                step, prop = dt, matrix_exp(dt * gen)
            v = prop @ v
            states.append(v.reshape(n, n, order="F"))
    else:
        gen = sparse_generator(params, basis, h_extra, D_qq)
        if max_step is None:
            max_step = _stable_step(gen)

        def rhs(rho):
            return (gen @ rho.reshape(-1, order="F")).reshape(n, n, order="F")

        grid = np.concatenate([[0.0], t_grid]) if t_grid[0] > 0 else t_grid
        states = rk4_trajectory(rhs, rho0, grid, max_step)
        if t_grid[0] > 0:
            states = states[1:]
    x, p = basis.x_matrix, basis.p_matrix
    rows = []
    for t, rho in zip(t_grid, states):
        leak = np.trace(rho[n - EDGE:, n - EDGE:]).real
        if leak > LEAK_TOL:
            raise TruncationError(f"population {leak:.2e} in the top {EDGE} levels at t={t:g}")
        herm = 0.5 * (rho + dagger(rho))
        rows.append((
            float(t),
            np.trace(x @ rho).real,
            np.trace(p @ rho).real,
            np.trace(x @ x @ rho).real,
            np.trace(p @ p @ rho).real,
            0.5 * np.trace((x @ p + p @ x) @ rho).real,
            np.trace(rho).real,
            float(np.linalg.eigvalsh(herm)[0]),
        ))
    return rows


def moments_csv(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MOMENT_COLUMNS)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
