"""Neutron-optics observables: refractive index, complex optical potential, attenuation.

SI units throughout. The angular integral of the static structure
function uses elastic kinematics, ``|q| = 2 k0 sin(theta/2)`` with
``k0 = p0 / hbar``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import constants, integrate

HBAR = constants.hbar
NEUTRON_MASS = constants.m_n
QUAD_RTOL = 1e-6


class ExtrapolationError(ValueError):
    """A tabulated structure function does not cover the requested momentum transfer."""


@dataclass(frozen=True)
class MediumSpec:
    b: float
    n_o: float
    m_n: float = NEUTRON_MASS
    name: str = ""

    def __post_init__(self):
        if self.n_o <= 0 or self.m_n <= 0:
            raise ValueError("number density and probe mass must be positive")

    @classmethod
    def from_json(cls, obj: dict) -> "MediumSpec":
        return cls(float(obj["b"]), float(obj["n_o"]), float(obj.get("m_n", NEUTRON_MASS)),
                   str(obj.get("name", "")))


@dataclass(frozen=True, eq=False)
class StructureFunction:
    """Static structure function ``S(q)``.

    ``kind`` is ``isotropic_constant`` (``params["value"]``),
    ``ideal_gas_gaussian`` (``params["temperature"]``, ``params["mass"]``;
    static value 1) or ``tabulated`` (``q`` and ``S`` arrays, linear
    interpolation, no extrapolation).
    """

    kind: str
    params: dict = field(default_factory=dict)
    q: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "isotropic_constant":
            if self.params.get("value", 1.0) < 0:
                raise ValueError("S must be non-negative")
        elif self.kind == "ideal_gas_gaussian":
            if self.params["temperature"] <= 0 or self.params["mass"] <= 0:
                raise ValueError("temperature and mass must be positive")
        elif self.kind == "tabulated":
            q = np.asarray(self.q, dtype=float)
            s = np.asarray(self.S, dtype=float)
            if q.ndim != 1 or q.shape != s.shape or q.size < 2:
                raise ValueError("tabulated S needs matching 1-D q and S arrays")
            if np.any(np.diff(q) <= 0):
                raise ValueError("tabulated q must be strictly increasing")
            if np.any(s < 0):
                raise ValueError("S must be non-negative")
            object.__setattr__(self, "q", q)
            object.__setattr__(self, "S", s)
        else:
            raise ValueError(f"unknown structure-function kind {self.kind!r}")

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if self.kind == "isotropic_constant":
            return np.full(q.shape, float(self.params.get("value", 1.0)))
        if self.kind == "ideal_gas_gaussian":
            return np.ones(q.shape)
        lo, hi = self.q[0], self.q[-1]
        if np.any(q < lo * (1 - 1e-12)) or np.any(q > hi * (1 + 1e-12)):
            raise ExtrapolationError(
                f"q range [{q.min():.4e}, {q.max():.4e}] exceeds table [{lo:.4e}, {hi:.4e}]"
            )
        return np.interp(q, self.q, self.S)

    def dynamic(self, q: float, omega) -> np.ndarray:
        """Gaussian ``S(q, omega)`` of the ideal classical gas (only for ``ideal_gas_gaussian``)."""
        if self.kind != "ideal_gas_gaussian":
            raise ValueError("dynamic S(q, omega) is only modelled for the ideal gas")
        return ideal_gas_dynamic(q, omega, self.params["temperature"], self.params["mass"])

    @classmethod
    def isotropic(cls, value: float = 1.0) -> "StructureFunction":
        return cls("isotropic_constant", {"value": value})

    @classmethod
    def tabulated(cls, q, s) -> "StructureFunction":
        return cls("tabulated", {}, np.asarray(q, float), np.asarray(s, float))


def ideal_gas_dynamic(q: float, omega, temperature: float, mass: float) -> np.ndarray:
    """``S(q, w) = sqrt(m / 2 pi kT q^2) exp(-m (w - hbar q^2/2m)^2 / (2 kT q^2))``."""
    kt = constants.k * temperature
    omega = np.asarray(omega, dtype=float)
    recoil = HBAR * q * q / (2 * mass)
    var = kt * q * q / mass
    return np.exp(-((omega - recoil) ** 2) / (2 * var)) / np.sqrt(2 * np.pi * var)


def ideal_gas_structure_function(temperature: float, particle_mass: float) -> StructureFunction:
    return StructureFunction("ideal_gas_gaussian", {"temperature": temperature, "mass": particle_mass})


def ideal_gas_normalization(q: float, temperature: float, mass: float) -> float:
    """``int d omega S(q, omega)`` by adaptive quadrature over +-40 standard deviations."""
    recoil = HBAR * q * q / (2 * mass)
    sigma = math.sqrt(constants.k * temperature / mass) * q
    val, _ = integrate.quad(lambda w: float(ideal_gas_dynamic(q, w, temperature, mass)),
                            recoil - 40 * sigma, recoil + 40 * sigma,
                            points=[recoil], epsabs=0.0, epsrel=1e-12, limit=200)
    return val


def refractive_index(medium: MediumSpec, wavelength: float) -> float:
    """``n = 1 - (lambda^2 / 2 pi) b n_o``."""
    if wavelength <= 0:
        raise ValueError("wavelength must be positive")
    return 1.0 - wavelength ** 2 / (2 * math.pi) * medium.b * medium.n_o


def _angular_integral_gl(s: StructureFunction, k0: float, nodes: int) -> float:
    mu, w = np.polynomial.legendre.leggauss(nodes)
    q = 2 * k0 * np.sqrt(np.clip((1 - mu) / 2, 0.0, None))
    return float(2 * math.pi * np.sum(w * s(q)))


def solid_angle_integral(s: StructureFunction, k0: float, nodes: int = 64,
                         rtol: float = QUAD_RTOL, max_nodes: int = 1 << 14) -> float:
    """``int dOmega S(2 k0 sin(theta/2))`` by Gauss-Legendre in ``cos(theta)``.

    The node count is doubled until two successive rules agree to ``rtol``.
    """
    coarse = _angular_integral_gl(s, k0, nodes)
    while True:
        nodes *= 2
        fine = _angular_integral_gl(s, k0, nodes)
        if abs(fine - coarse) <= rtol * max(abs(fine), 1e-300) or nodes >= max_nodes:
            if abs(fine - coarse) > rtol * max(abs(fine), 1e-300):
                raise ArithmeticError("angular quadrature did not converge")
            return fine
        coarse = fine


def optical_potential(medium: MediumSpec, p0: float, s: Optional[StructureFunction]) -> complex:
    """``U = (2 pi hbar^2 / m) n_o [b - i (b^2 / 4 pi)(p0/hbar) int dOmega S]`` in joules.

    ``s=None`` drops the diffuse-scattering term.
    """
    if p0 <= 0:
        raise ValueError("incident momentum must be positive")
    pref = 2 * math.pi * HBAR ** 2 / medium.m_n * medium.n_o
    if s is None or medium.b == 0:
        return complex(pref * medium.b, 0.0)
    k0 = p0 / HBAR
    integral = solid_angle_integral(s, k0)
    return complex(pref * medium.b, -pref * medium.b ** 2 / (4 * math.pi) * k0 * integral)


def attenuation_length(u_imag: float, p0: float, m_n: float = NEUTRON_MASS) -> float:
    """``l = (p0/m) hbar / (2 |Im U|)``; infinite for a real potential."""
    if u_imag > 0:
        raise ValueError("positive imaginary potential (gain) is unphysical here")
    if u_imag == 0:
        return math.inf
    return (p0 / m_n) * HBAR / (2 * abs(u_imag))


def momentum_from_wavelength(wavelength: float) -> float:
    return 2 * math.pi * HBAR / wavelength


def optics_report(medium: MediumSpec, wavelength: float, s: Optional[StructureFunction]) -> dict:
    p0 = momentum_from_wavelength(wavelength)
    u = optical_potential(medium, p0, s)
    ell = attenuation_length(u.imag, p0, medium.m_n)
    return {
        "n": refractive_index(medium, wavelength),
        "U_re_J": u.real,
        "U_im_J": u.imag,
        "attenuation_length_m": None if math.isinf(ell) else ell,
    }


def read_structure_csv(path) -> StructureFunction:
    """Two-column CSV ``q,S`` with a header row, SI units."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["q", "S"]:
            raise ValueError(f"{path}: expected header 'q,S'")
        qs, ss = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                qs.append(float(row[0]))
                ss.append(float(row[1]))
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from None
    return StructureFunction.tabulated(qs, ss)


def write_structure_csv(s: StructureFunction, path) -> None:
    if s.kind != "tabulated":
        raise ValueError("only tabulated structure functions can be written")
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["q", "S"])
        for q, v in zip(s.q, s.S):
            w.writerow([repr(float(q)), repr(float(v))])
