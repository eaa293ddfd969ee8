"""
Collision-operator numerics on the circle of velocities

K averages a velocity function over hard-disk scattering outcomes. It is
diagonal in Fourier modes, so it is applied spectrally with multipliers
obtained by Gauss-Legendre quadrature of the scattering kernel. The
linearized operator is L = 2 mu (K - I); its inverse on zero-mean
functions is the Neumann series -(1/2mu) sum K^n.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import eigh

from .config import SlabConfig
from .debug import get_logger
from .estimators import angle_nodes

logger = get_logger(__name__)

DEFAULT_M = 256
DEFAULT_K_MAX = 64
QUADRATURE_NODES = 64
MEAN_TOL = 1e-10
NEUMANN_TOL = 1e-12
GRAZING_V1 = 1e-6


class ModeRangeError(ValueError):
    """Fourier mode outside the supported range"""


class SolvabilityError(ValueError):
    """Equation L h = g has no bounded solution for this g"""


class AngularFunction:
    """
    Function on the velocity circle, sampled at M uniform angles

    Grid node j sits at phi_j = -pi + 2 pi j / M. Fourier coefficients
    c_k = (1/M) sum_j f(phi_j) exp(-i k phi_j) are computed on demand.
    """

    __slots__ = ("values",)
    # numpy scalars defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, values):
        values = np.array(values, dtype=float)
        if values.ndim != 1 or values.size < 2 or values.size % 2:
            raise ValueError(f"an angular grid needs an even number of nodes, got shape {values.shape}")
        values.setflags(write=False)
        self.values = values

    @classmethod
    def from_callable(cls, func: Callable[[np.ndarray], np.ndarray], m: int = DEFAULT_M) -> "AngularFunction":
        phis = angle_nodes(m)
        return cls(np.broadcast_to(np.asarray(func(phis), dtype=float), phis.shape))

    @classmethod
    def constant(cls, value: float, m: int = DEFAULT_M) -> "AngularFunction":
        return cls(np.full(m, float(value)))

    @classmethod
    def cos_mode(cls, k: int = 1, amplitude: float = 1.0, m: int = DEFAULT_M) -> "AngularFunction":
        return cls.from_callable(lambda phi: amplitude * np.cos(k * phi), m)

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def phis(self) -> np.ndarray:
        return angle_nodes(self.m)

    # Fourier representation

    def rfft_coefficients(self) -> np.ndarray:
        """c_k for k = 0..M/2; the (-1)^k undoes the grid starting at -pi"""
        k = np.arange(self.m // 2 + 1)
        return np.where(k % 2, -1.0, 1.0) * np.fft.rfft(self.values) / self.m

    def fourier(self, k_max: int = DEFAULT_K_MAX) -> np.ndarray:
        if not 0 <= k_max <= self.m // 2:
            raise ModeRangeError(f"k_max={k_max} outside [0, {self.m // 2}] for M={self.m}")
        return self.rfft_coefficients()[: k_max + 1]

    @classmethod
    def from_fourier(cls, coeffs: np.ndarray, m: int = DEFAULT_M) -> "AngularFunction":
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.size - 1 >= m // 2:
            raise ModeRangeError(f"{coeffs.size - 1} modes do not fit strictly below Nyquist for M={m}")
        full = np.zeros(m // 2 + 1, dtype=complex)
        full[: coeffs.size] = coeffs
        k = np.arange(full.size)
        return cls(np.fft.irfft(np.where(k % 2, -1.0, 1.0) * full * m, n=m))

    def cos_sin(self, k_max: int = DEFAULT_K_MAX) -> Tuple[np.ndarray, np.ndarray]:
        """Real coefficients: f = a_0 + sum_k a_k cos k phi + b_k sin k phi"""
        c = self.fourier(k_max)
        a = 2.0 * c.real
        b = -2.0 * c.imag
        a[0] = c[0].real
        b[0] = 0.0
        return a, b

    @classmethod
    def from_cos_sin(cls, a: np.ndarray, b: np.ndarray, m: int = DEFAULT_M) -> "AngularFunction":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        c = 0.5 * (a - 1j * b)
        c[0] = a[0]
        return cls.from_fourier(c, m)

    # Reductions and algebra

    def mean(self) -> float:
        """Normalized integral dphi / 2pi (trapezoid rule on the periodic grid)"""
        return float(self.values.mean())

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def inner(self, other: "AngularFunction") -> float:
        return float(np.mean(self.values * _values(other, self.m)))

    def reflected(self) -> "AngularFunction":
        """g(-v)"""
        return AngularFunction(np.roll(self.values, self.m // 2))

    def allclose(self, other: "AngularFunction", tol: float) -> bool:
        return float(np.abs(self.values - _values(other, self.m)).max()) <= tol

    def __add__(self, other):
        return AngularFunction(self.values + _values(other, self.m))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return AngularFunction(self.values - _values(other, self.m))

    def __mul__(self, other):
        return AngularFunction(self.values * _values(other, self.m))

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return AngularFunction(self.values / float(scalar))

    def __neg__(self):
        return AngularFunction(-self.values)

    def __repr__(self) -> str:
        return f"AngularFunction(m={self.m}, mean={self.mean():.3g}, sup={self.sup():.3g})"

    # Serialization

    def to_csv(self, path: Union[str, Path]) -> None:
        pd.DataFrame({"angle": self.phis, "value": self.values}).to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "AngularFunction":
        df = pd.read_csv(path, float_precision="round_trip")
        values = df["value"].to_numpy(dtype=float)
        if not np.allclose(df["angle"].to_numpy(dtype=float), angle_nodes(values.size), atol=1e-12, rtol=0):
            raise ValueError(f"{path}: angles are not the uniform grid of {values.size} nodes")
        return cls(values)

    def to_json(self, k_max: int = DEFAULT_K_MAX) -> str:
        a, b = self.cos_sin(min(k_max, self.m // 2 - 1))
        return json.dumps({"m": self.m, "k_max": int(a.size - 1), "cos": a.tolist(), "sin": b.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "AngularFunction":
        data = json.loads(text)
        return cls.from_cos_sin(np.array(data["cos"]), np.array(data["sin"]), int(data["m"]))


def _values(other, m: int):
    if isinstance(other, AngularFunction):
        if other.m != m:
            raise ValueError(f"grid size mismatch: {other.m} vs {m}")
        return other.values
    return float(other)


# K operator

def _quadrature_multiplier(k: int, nodes: int) -> float:
    x, w = np.polynomial.legendre.leggauss(nodes)
    alpha = 0.5 * np.pi * x
    # 1/2 int cos(a) exp(ik(pi + 2a)) da; the sine part is odd in a
    return float(0.5 * 0.5 * np.pi * np.sum(w * np.cos(alpha) * np.cos(k * (np.pi + 2.0 * alpha))))


@lru_cache(maxsize=None)
def _multiplier(k: int) -> float:
    return _quadrature_multiplier(k, max(QUADRATURE_NODES, 2 * k + 32))


@lru_cache(maxsize=16)
def _multipliers(m: int) -> np.ndarray:
    out = np.array([_multiplier(k) for k in range(m // 2 + 1)])
    out.setflags(write=False)
    return out


def k_apply(g: AngularFunction) -> AngularFunction:
    """(Kg)(v) = 1/2 int cos(a) g(R_{pi+2a} v) da over a in (-pi/2, pi/2)"""
    return AngularFunction(np.fft.irfft(np.fft.rfft(g.values) * _multipliers(g.m), n=g.m))


def k_mode_eigenvalue(k: int, k_max: int = DEFAULT_K_MAX) -> float:
    """Multiplier of Fourier mode k under K, by quadrature"""
    if not 0 <= k <= k_max:
        raise ModeRangeError(f"mode {k} outside [0, {k_max}]")
    return _multiplier(int(k))


def k_mode_closed_form(k: int) -> float:
    return 1.0 if k == 0 else -1.0 / (4.0 * k * k - 1.0)


def minus_l_mode_value(k: int, mu: float) -> float:
    """Eigenvalue of -L on mode k: 2 mu (1 + 1/(4k^2 - 1)) for k >= 1"""
    return 2.0 * mu * (1.0 - k_mode_closed_form(k))


def k_grid_matrix(m: int = DEFAULT_M) -> np.ndarray:
    """K as an M x M matrix acting on grid values"""
    eye = np.eye(m)
    return np.column_stack([k_apply(AngularFunction(eye[:, j])).values for j in range(m)])


def l_apply(g: AngularFunction, mu: float) -> AngularFunction:
    return 2.0 * mu * (k_apply(g) - g)


def l_inverse(g: AngularFunction, mu: float, tol: float = NEUMANN_TOL, max_terms: int = 10_000) -> AngularFunction:
    """
    Solve L h = g for zero-mean g by the Neumann series -(1/2mu) sum_n K^n g

    Raises:
        SolvabilityError: g has non-zero mean, or mu = 0
    """
    if mu <= 0:
        raise SolvabilityError("L = 2 mu (K - I) is not invertible at mu <= 0")
    mean = g.mean()
    if abs(mean) >= MEAN_TOL:
        raise SolvabilityError(f"right-hand side has mean {mean:.3e}; L h = g needs mean(g) = 0")

    scale = -1.0 / (2.0 * mu)
    term = g - mean
    total = term
    n = 0
    while abs(scale) * term.sup() >= tol:
        n += 1
        if n > max_terms:
            raise SolvabilityError(f"Neumann series did not converge in {max_terms} terms")
        term = k_apply(term)
        total = total + term

    logger.debug("l_inverse: %d Neumann terms (mu=%g)", n, mu)
    result = scale * total
    return result - result.mean()


@dataclass(frozen=True)
class GreenKubo:
    D: float
    matrix: np.ndarray


def green_kubo_d(mu: float, m: int = DEFAULT_M) -> GreenKubo:
    """D_ij = <v_i (-L)^-1 v_j> (normalized measure); D = trace / 2"""
    v = [AngularFunction.from_callable(np.cos, m), AngularFunction.from_callable(np.sin, m)]
    chi = [-l_inverse(vj, mu) for vj in v]
    matrix = np.array([[v[i].inner(chi[j]) for j in range(2)] for i in range(2)])
    return GreenKubo(D=0.5 * float(np.trace(matrix)), matrix=matrix)


# Real Fourier basis

def real_basis(k_max: int = DEFAULT_K_MAX, m: int = DEFAULT_M) -> np.ndarray:
    """Columns [1, cos phi, sin phi, ..., cos K phi, sin K phi] on the grid"""
    phis = angle_nodes(m)
    cols = [np.ones(m)]
    for k in range(1, k_max + 1):
        cols += [np.cos(k * phis), np.sin(k * phis)]
    return np.column_stack(cols)


def l_matrix(mu: float, k_max: int = DEFAULT_K_MAX, m: int = DEFAULT_M) -> np.ndarray:
    """L on the real Fourier basis up to mode k_max"""
    if not 0 <= k_max < m // 2:
        raise ModeRangeError(f"k_max={k_max} must lie below M/2={m // 2}")
    basis = real_basis(k_max, m)
    images = np.column_stack([l_apply(AngularFunction(basis[:, j]), mu).values for j in range(basis.shape[1])])
    norms = np.einsum("ij,ij->j", basis, basis)
    return (basis.T @ images) / norms[:, None]


def spectral_gap(mu: float, k_max: int = DEFAULT_K_MAX, m: int = DEFAULT_M) -> float:
    """Smallest positive eigenvalue of -L on modes up to k_max"""
    lmat = l_matrix(mu, k_max, m)
    vals = np.linalg.eigvalsh(-0.5 * (lmat + lmat.T))
    positive = vals[vals > 1e-9 * max(1.0, mu)]
    return float(positive.min())


# Stationary Hilbert expansion

@dataclass(frozen=True)
class HilbertStationary:
    """h = h0 + h1 / eta + O(remainder); second order vanishes identically"""

    rho1: float
    rho2: float
    L: float
    mu: float
    eta: float
    h1: AngularFunction
    h2_zero: bool = True

    def h0(self, x1):
        return (self.rho1 * (self.L - np.asarray(x1)) + self.rho2 * np.asarray(x1)) / self.L

    def value(self, x1: float) -> AngularFunction:
        return self.h1 / self.eta + float(self.h0(x1))

    @property
    def cos_coefficient(self) -> float:
        """Coefficient of cos(phi) in h1 / eta"""
        return 2.0 * self.h1.inner(AngularFunction.from_callable(np.cos, self.h1.m)) / self.eta

    @property
    def flux(self) -> float:
        """eta <v1 h> with the normalized measure"""
        return self.h1.inner(AngularFunction.from_callable(np.cos, self.h1.m))


def hilbert_stationary(config: SlabConfig, m: int = DEFAULT_M) -> HilbertStationary:
    gradient = config.gradient
    if gradient == 0:
        h1 = AngularFunction.constant(0.0, m)
    else:
        h1 = gradient * l_inverse(AngularFunction.from_callable(np.cos, m), config.mu)
    return HilbertStationary(config.rho1, config.rho2, config.L, config.mu, config.eta, h1)


@dataclass
class RemainderReport:
    x1: float
    v_sign: int
    values: AngularFunction
    l2_norm: float
    excluded_measure: float
    boundary_term: float
    eta: float
    k_max: int
    meta: dict = field(default_factory=dict)


def _interpolate_grazing(values: np.ndarray, grazing: np.ndarray) -> np.ndarray:
    out = values.copy()
    for j in np.flatnonzero(grazing):
        out[j] = 0.5 * (values[j - 1] + values[(j + 1) % values.size])
    return out


def real_coefficients(g: AngularFunction, k_max: int = DEFAULT_K_MAX) -> np.ndarray:
    """Coordinates of g in the real_basis ordering"""
    a, b = g.cos_sin(k_max)
    coef = np.empty(2 * k_max + 1)
    coef[0] = a[0]
    coef[1::2] = a[1:]
    coef[2::2] = b[1:]
    return coef


@dataclass(frozen=True)
class _ModalData:
    """exp(s L) h1 = sum_m exp(s lam_m) modal_m q_m on the active eigenmodes"""

    lam: np.ndarray
    grid_modes: np.ndarray  # eigenfunctions on the angle grid, one column per mode
    modal: np.ndarray
    v1: np.ndarray
    grazing: np.ndarray


def _modal_data(hs: HilbertStationary, k_max: int) -> _ModalData:
    m = hs.h1.m
    v1 = np.cos(angle_nodes(m))
    grazing = np.abs(v1) < GRAZING_V1
    coef = real_coefficients(hs.h1, k_max)
    if np.abs(coef).max() == 0:
        return _ModalData(np.empty(0), np.empty((m, 0)), np.empty(0), v1, grazing)

    lmat = l_matrix(hs.mu, k_max, m)
    lam, q = eigh(0.5 * (lmat + lmat.T))
    modal = q.T @ coef
    active = np.abs(modal) > 1e-14 * np.abs(modal).max()
    return _ModalData(
        lam=np.minimum(lam[active], 0.0),
        grid_modes=real_basis(k_max, m) @ q[:, active],
        modal=modal[active],
        v1=v1,
        grazing=grazing,
    )


def _remainder_values(hs: HilbertStationary, x1: float, k_max: int) -> Tuple[np.ndarray, np.ndarray]:
    md = _modal_data(hs, k_max)
    values = np.zeros(md.v1.size)
    if md.modal.size:
        for j in np.flatnonzero(~md.grazing):
            depth = x1 if md.v1[j] > 0 else hs.L - x1
            s = hs.eta * depth / abs(md.v1[j])
            values[j] = -md.grid_modes[j] @ (np.exp(s * md.lam) * md.modal)
    return _interpolate_grazing(values, md.grazing), md.grazing


def _remainder_l2(hs: HilbertStationary, k_max: int) -> float:
    """||R||_2 over (0, L) x S1; the x-integral of each exponential pair is done exactly"""
    md = _modal_data(hs, k_max)
    if not md.modal.size:
        return 0.0

    per_node = np.zeros(md.v1.size)
    for j in np.flatnonzero(~md.grazing):
        amp = md.grid_modes[j] * md.modal
        rates = -md.lam * hs.eta / abs(md.v1[j])
        total = rates[:, None] + rates[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            integral = np.where(total * hs.L < 1e-300, hs.L, -np.expm1(-total * hs.L) / total)
        per_node[j] = amp @ integral @ amp
    per_node = _interpolate_grazing(per_node, md.grazing)
    return math.sqrt(max(per_node.mean(), 0.0))


def remainder_boundary_term(config: SlabConfig, m: int = DEFAULT_M, k_max: int = DEFAULT_K_MAX) -> float:
    """1/2 (<v1 R(0)^2> - <v1 R(L)^2>): incoming minus outgoing boundary energy"""
    hs = hilbert_stationary(config, m)
    v1 = np.cos(angle_nodes(m))
    r0, _ = _remainder_values(hs, 0.0, k_max)
    rl, _ = _remainder_values(hs, config.L, k_max)
    return 0.5 * float(np.mean(v1 * r0**2) - np.mean(v1 * rl**2))


def stationary_remainder(
    config: SlabConfig,
    x1: float,
    v_sign: int = 0,
    m: int = DEFAULT_M,
    k_max: int = DEFAULT_K_MAX,
) -> RemainderReport:
    """
    Explicit stationary remainder R(x1, v) = -exp((eta x1 / v1) L) h1 for v1 > 0,
    mirrored with L - x1 for v1 < 0

    Args:
        v_sign: +1 or -1 keeps only that half of the circle (zero elsewhere),
            0 keeps both
    """
    if not 0.0 <= x1 <= config.L:
        raise ValueError(f"x1={x1} outside [0, {config.L}]")
    if v_sign not in (-1, 0, 1):
        raise ValueError("v_sign must be -1, 0 or 1")

    hs = hilbert_stationary(config, m)
    values, grazing = _remainder_values(hs, x1, k_max)
    if v_sign:
        v1 = np.cos(angle_nodes(m))
        values = np.where((np.sign(v1) == v_sign) & ~grazing, values, 0.0)

    report = RemainderReport(
        x1=float(x1),
        v_sign=v_sign,
        values=AngularFunction(values),
        l2_norm=_remainder_l2(hs, k_max),
        excluded_measure=float(np.count_nonzero(grazing)) / m,
        boundary_term=remainder_boundary_term(config, m, k_max),
        eta=config.eta,
        k_max=k_max,
    )
    logger.debug("Remainder at x1=%g: ||R||_2=%.4g, excluded measure %.4g", x1, report.l2_norm, report.excluded_measure)
    return report
