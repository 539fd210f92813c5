import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from ..errors import InvalidInput, TabulatedProfileUnsupported
from ..models.schemas import ModeConfig
from .geometry import CfwpGeometry, ExprProfile


@dataclass(frozen=True)
class ModeIndex:
    """模式指标；k 直接存放有效的辅助丛幂次"""

    k: int
    l: int
    epsilon: int
    lam: float

    @classmethod
    def from_config(cls, config: ModeConfig) -> "ModeIndex":
        return cls(k=config.k, l=config.l, epsilon=config.epsilon, lam=config.lam)

    def to_config(self) -> ModeConfig:
        return ModeConfig(k=self.k, l=self.l, epsilon=self.epsilon, lam=self.lam)

    def validate(self, m: int) -> "ModeIndex":
        if self.epsilon not in (-1, 1):
            raise InvalidInput(f"epsilon must be +1 or -1, got {self.epsilon}")
        if not 0 <= self.l <= m - 1:
            raise InvalidInput(f"l must lie in [0, {m - 1}], got {self.l}")
        if not math.isfinite(self.lam):
            raise InvalidInput("lambda must be finite")
        return self

    @property
    def parity(self) -> int:
        return -1 if self.l % 2 else 1

    @property
    def chirality_sign(self) -> int:
        return self.epsilon * self.parity

    def surviving_case(self, m: int) -> bool:
        return self.k == 0 and m == 2 * self.l + 1 and self.parity == -self.epsilon


class CoefficientField:
    """对称 2×2 系数场 [[ρ, σ], [σ, τ]]，可直接作为 ODE 右端 f(t, y)"""

    weight = None

    def matrix_at(self, t):
        raise NotImplementedError

    def rho(self, t):
        return self.matrix_at(t)[0]

    def sigma(self, t):
        return self.matrix_at(t)[1]

    def tau(self, t):
        return self.matrix_at(t)[2]

    def matrix(self, t: float) -> np.ndarray:
        r, s, q = self.matrix_at(t)
        return np.array([[r, s], [s, q]], dtype=float)

    def __call__(self, t, y):
        r, s, q = self.matrix_at(t)
        u, w = y
        return np.array([r * u + s * w, s * u + q * w])


class SubstitutionWeight:
    """w(t) = β^{1/2}·α^m"""

    def __init__(self, geometry: CfwpGeometry):
        self.geometry = geometry

    def __call__(self, t):
        return np.sqrt(self.geometry.beta(t)) * self.geometry.alpha(t) ** self.geometry.m

    def log_derivative(self, t):
        geom = self.geometry
        if not geom.symbolic:
            raise TabulatedProfileUnsupported("log-derivative of the weight needs symbolic profiles")
        return (geom.beta.derivative()(t) / (2.0 * geom.beta(t))
                + geom.m * geom.alpha.derivative()(t) / geom.alpha(t))


class RadialCoeffs(CoefficientField):
    def __init__(self, geometry: CfwpGeometry, mode: ModeIndex):
        self.geometry = geometry
        self.mode = mode.validate(geometry.m)
        self.weight = SubstitutionWeight(geometry)
        # ρ = c_ρ·β/α² + k_ρ/β，τ = c_τ·β/α² − k_ρ/β，σ = (−1)^l λ/α
        s, m = mode.chirality_sign, geometry.m
        self._alpha, self._beta = geometry.alpha, geometry.beta
        self._c_rho = s * (2 * mode.l - m) / 4.0
        self._c_tau = s * (m - 2 * (mode.l + 1)) / 4.0
        self._k_rho = s * mode.k / 2.0
        self._lam = mode.parity * mode.lam

    def matrix_at(self, t):
        a, b = self._alpha(t), self._beta(t)
        shape = b / (a * a)
        coupling = self._k_rho / b
        return self._c_rho * shape + coupling, self._lam / a, self._c_tau * shape - coupling

    def trace_target(self, t):
        """恒等式 ρ + τ = −ε(−1)^l β/(2α²) 的右端"""
        a, b = self.geometry.alpha(t), self.geometry.beta(t)
        return -self.mode.chirality_sign * b / (2.0 * a * a)

    def ine_residual(self, t):
        rho, _, tau = self.matrix_at(t)
        target = self.trace_target(t)
        scale = np.maximum(np.maximum(np.abs(rho), np.abs(tau)), np.abs(target))
        return np.abs(rho + tau - target) / scale


class RawCoeffs(CoefficientField):
    """代换前 (u, w) 系统，含 α′、β′"""

    def __init__(self, geometry: CfwpGeometry, mode: ModeIndex):
        if not geometry.symbolic:
            raise TabulatedProfileUnsupported("raw system requires symbolic alpha and beta")
        self.geometry = geometry
        self.mode = mode.validate(geometry.m)
        self.alpha_prime = geometry.alpha.derivative()
        self.beta_prime = geometry.beta.derivative()
        self.weight = SubstitutionWeight(geometry)

    def matrix_at(self, t):
        geom, mode = self.geometry, self.mode
        a, b = geom.alpha(t), geom.beta(t)
        da, db = self.alpha_prime(t), self.beta_prime(t)
        m, s = geom.m, mode.chirality_sign
        a2 = a * a
        denom = 4.0 * b * a2
        shared = -2.0 * a2 * db - 4.0 * m * a * da * b
        u_diag = (s * (2 * mode.l - m) * b * b + s * 2.0 * a2 * mode.k + shared) / denom
        w_diag = (s * (m - 2 * (mode.l + 1)) * b * b - s * 2.0 * a2 * mode.k + shared) / denom
        off = mode.parity * mode.lam / a
        return u_diag, off, w_diag


class SyntheticCoeffs(CoefficientField):
    """直接给定 ρ, σ, τ 和权函数的测试系统"""

    def __init__(self, rho: ExprProfile, sigma: ExprProfile, tau: ExprProfile, weight: ExprProfile,
                 label: str = "synthetic"):
        self._rho, self._sigma, self._tau = rho, sigma, tau
        self.weight = weight
        self.label = label

    @classmethod
    def from_text(cls, rho: str = "0", sigma: str = "0", tau: str = "0", weight: str = "t",
                  params: Optional[Mapping[str, float]] = None, label: str = "synthetic") -> "SyntheticCoeffs":
        build = lambda text: ExprProfile.from_text(text, params)
        return cls(build(rho), build(sigma), build(tau), build(weight), label)

    @classmethod
    def planted(cls, kappa: float = 1.0, mu: float = 2.0) -> "SyntheticCoeffs":
        """ρ=τ=0, σ=κ−μ/t：D=U−W 满足 D′=(μ/t−κ)D，D=t^μ e^{−κt} 是 L² 解"""
        return cls.from_text(rho="0", sigma="kappa - mu/t", tau="0", weight="t",
                             params={"kappa": kappa, "mu": mu}, label="planted")

    def matrix_at(self, t):
        return self._rho(t), self._sigma(t), self._tau(t)


def coefficients(geom: CfwpGeometry, mode: ModeIndex) -> RadialCoeffs:
    return RadialCoeffs(geom, mode)


def raw_system(geom: CfwpGeometry, mode: ModeIndex) -> RawCoeffs:
    return RawCoeffs(geom, mode)


def substitution_weight(geom: CfwpGeometry) -> SubstitutionWeight:
    return SubstitutionWeight(geom)


def _sign_label(values: np.ndarray, scale: np.ndarray) -> str:
    zero = np.abs(values) <= 1e-12 * scale
    positive = (values > 0) & ~zero
    negative = (values < 0) & ~zero
    if positive.any() and negative.any():
        return "mixed"
    if positive.any():
        return "positive"
    if negative.any():
        return "negative"
    return "zero"


def coefficient_signs(coeffs: RadialCoeffs, grid: np.ndarray) -> Dict[str, str]:
    """ρ、τ 在网格上的符号结构"""
    geom, mode = coeffs.geometry, coeffs.mode
    a, b = geom.alpha(grid), geom.beta(grid)
    rho, _, tau = coeffs.matrix_at(grid)
    scale = (abs(2 * mode.l - geom.m) * b * b + abs(geom.m - 2 * (mode.l + 1)) * b * b
             + 2.0 * a * a * abs(mode.k)) / (4.0 * b * a * a)
    return {"rho": _sign_label(np.asarray(rho), scale), "tau": _sign_label(np.asarray(tau), scale)}
