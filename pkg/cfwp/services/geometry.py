import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from ..errors import (
    DomainError,
    IntConditionFailed,
    InvalidInput,
    InvalidParams,
    LimitDiverges,
    QuadratureFailure,
    TabulatedProfileUnsupported,
)
from ..models.schemas import AsymptoticHint, GeometryConfig, HypothesisReport
from ..settings import DEFAULT_WINDOW
from .exprfn import (
    WarpExpr,
    broadcast_like,
    check_binding,
    cumulative_integral,
    differentiate,
    gauss_legendre_cumulative,
    integrate_adaptive,
    parse,
)

logger = logging.getLogger(__name__)

NO_HINT = AsymptoticHint()
PROBE_POINTS = 4096
NODES_PER_DECADE = 2048
SQRT2 = math.sqrt(2.0)
UNDERFLOW_EDGE = 1e-250

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def log_probe_grid(window: Tuple[float, float], n: int = PROBE_POINTS, phase: float = 0.0) -> np.ndarray:
    """对数均匀探测网格；phase 以步长为单位平移"""
    lo, hi = math.log10(window[0]), math.log10(window[1])
    step = (hi - lo) / (n - 1)
    exponents = lo + (np.arange(n) + phase) * step
    return 10.0 ** exponents[exponents <= hi + 1e-12]


def positivity_violations(values: np.ndarray) -> np.ndarray:
    """非有限、负值，以及不属于两端下溢的零值"""
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values) | (values < 0)
    positive = np.flatnonzero(values > 0)
    zero = values == 0
    if not positive.size:
        return bad | zero
    first, last = positive[0], positive[-1]
    index = np.arange(len(values))
    # 零值只允许出现在正值段之外，且紧邻的正值已经小到下溢边缘
    head_ok = values[first] < UNDERFLOW_EDGE
    tail_ok = values[last] < UNDERFLOW_EDGE
    tolerated = ((index < first) & head_ok) | ((index > last) & tail_ok)
    return bad | (zero & ~tolerated)


def _gl_segment(f: Callable, a, b) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    half = 0.5 * (b - a)
    points = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
    return half * (np.asarray(f(points), dtype=float) @ _GL_W)


# 剖面
class ExprProfile:
    """符号剖面：表达式 + 参数绑定 + 渐近提示"""

    symbolic = True

    def __init__(self, expr: WarpExpr, binding: Optional[Mapping[str, float]] = None,
                 hint: Optional[AsymptoticHint] = None):
        self.expr = expr
        self.env = check_binding(expr, binding or {})
        self.hint = hint or NO_HINT

    @classmethod
    def from_text(cls, text: str, params: Optional[Mapping[str, float]] = None,
                  hint: Optional[AsymptoticHint] = None) -> "ExprProfile":
        params = dict(params or {})
        return cls(parse(text, list(params)), params, hint)

    def __call__(self, t):
        return broadcast_like(self.expr.root.eval(t, self.env), t)

    def derivative(self) -> "ExprProfile":
        return ExprProfile(differentiate(self.expr), self.env)

    def describe(self) -> str:
        return self.expr.serialize()


class TabulatedProfile:
    """对数-对数空间的单调三次插值剖面"""

    symbolic = False

    def __init__(self, nodes: np.ndarray, values: np.ndarray, hint: Optional[AsymptoticHint] = None):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or len(nodes) < 2:
            raise InvalidInput("tabulated profile needs matching 1-d node and value arrays")
        if np.any(values <= 0) or np.any(nodes <= 0):
            raise InvalidInput("tabulated profile must be positive on positive nodes")
        self.hint = hint or NO_HINT
        self.n_nodes = len(nodes)
        self._interp = PchipInterpolator(np.log(nodes), np.log(values), extrapolate=True)
        # 标量求值直接走分段多项式系数
        self._breaks = self._interp.x.tolist()
        self._coef = self._interp.c.T.tolist()

    def __call__(self, s):
        if isinstance(s, np.ndarray):
            return np.exp(self._interp(np.log(s)))
        u = math.log(s)
        i = min(max(bisect_right(self._breaks, u) - 1, 0), len(self._coef) - 1)
        dx = u - self._breaks[i]
        c3, c2, c1, c0 = self._coef[i]
        return math.exp(((c3 * dx + c2) * dx + c1) * dx + c0)

    def derivative(self):
        raise TabulatedProfileUnsupported("tabulated profiles have no symbolic derivative")

    def describe(self) -> str:
        return f"tabulated({self.n_nodes} nodes)"


class ComposedProfile:
    """f(t(s))，t(s) 来自一次重参数化"""

    symbolic = False

    def __init__(self, outer, inner: Callable, hint: Optional[AsymptoticHint] = None):
        self.outer = outer
        self.inner = inner
        self.hint = hint or NO_HINT

    def __call__(self, s):
        return self.outer(self.inner(s))

    def describe(self) -> str:
        return f"({self.outer.describe()}) o t(s)"


# 几何
@dataclass(frozen=True, eq=False)
class CfwpGeometry:
    m: int
    alpha: object
    beta: object
    gamma: Optional[object] = None
    name: str = "custom"
    window: Tuple[float, float] = DEFAULT_WINDOW
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 1:
            raise InvalidParams(f"m must be a positive integer, got {self.m!r}")
        lo, hi = self.window
        if not (0.0 < lo < hi):
            raise InvalidParams(f"window must satisfy 0 < tmin < tmax, got {self.window}")
        grid = self.probe_grid()
        for label in ("alpha", "beta", "gamma"):
            profile = getattr(self, label)
            if profile is None:
                continue
            try:
                values = np.asarray(profile(grid), dtype=float)
            except DomainError as exc:
                raise InvalidParams(f"{label} is not evaluable on the working window: {exc.detail}")
            bad = positivity_violations(values)
            if bad.any():
                raise InvalidParams(f"{label} must be positive on the working window "
                                    f"(violated at t={grid[bad][0]:.6g})", profile=label)

    @property
    def symbolic(self) -> bool:
        return bool(getattr(self.alpha, "symbolic", False) and getattr(self.beta, "symbolic", False))

    def probe_grid(self, n: int = PROBE_POINTS, phase: float = 0.0) -> np.ndarray:
        return log_probe_grid(self.window, n, phase)

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "m": self.m,
            "alpha": self.alpha.describe(),
            "beta": self.beta.describe(),
            "gamma": self.gamma.describe() if self.gamma is not None else None,
            "params": dict(self.params),
            "window": list(self.window),
        }


class CompletionLimits(NamedTuple):
    alpha_limit: float
    beta_limit: float
    smooth: bool


@dataclass(frozen=True, eq=False)
class ReparamResult:
    """s = ∫₀ᵗ γ 的数值表以及 s 变量下的几何"""

    geometry: CfwpGeometry
    source: CfwpGeometry
    t_nodes: np.ndarray
    s_nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_inverse", PchipInterpolator(np.log(self.s_nodes), np.log(self.t_nodes)))
        object.__setattr__(self, "_t_list", self.t_nodes.tolist())
        object.__setattr__(self, "_s_list", self.s_nodes.tolist())

    @property
    def gamma(self):
        return self.source.gamma

    def _s_scalar(self, t: float) -> float:
        tn = self._t_list
        if t <= tn[0]:
            return integrate_adaptive(self.gamma, 0.0, t, 1e-12).value
        if t >= tn[-1]:
            if t == tn[-1]:
                return self._s_list[-1]
            return self._s_list[-1] + integrate_adaptive(self.gamma, tn[-1], t, 1e-12).value
        i = bisect_right(tn, t) - 1
        return self._s_list[i] + float(_gl_segment(self.gamma, tn[i], t)[0])

    def s_of_t(self, t):
        if not isinstance(t, np.ndarray):
            return self._s_scalar(float(t))
        flat = t.ravel()
        out = np.empty_like(flat, dtype=float)
        inside = (flat > self.t_nodes[0]) & (flat < self.t_nodes[-1])
        idx = np.searchsorted(self.t_nodes, flat[inside], side="right") - 1
        out[inside] = self.s_nodes[idx] + _gl_segment(self.gamma, self.t_nodes[idx], flat[inside])
        for j in np.flatnonzero(~inside):
            out[j] = self._s_scalar(float(flat[j]))
        return out.reshape(t.shape)

    def _t_scalar(self, s: float) -> float:
        sn, tn = self._s_list, self._t_list
        if sn[0] <= s <= sn[-1]:
            i = bisect_right(sn, s) - 1
            if sn[i] == s:
                return tn[i]
            lo, hi = tn[i], tn[i + 1]
        elif s < sn[0]:
            hi, lo = tn[0], tn[0] / 10.0
            for _ in range(80):
                if self._s_scalar(lo) <= s:
                    break
                hi, lo = lo, lo / 10.0
            else:
                raise QuadratureFailure(f"s={s:.6g} lies below the reachable range")
        else:
            lo, hi = tn[-1], tn[-1] * 10.0
            for _ in range(80):
                if self._s_scalar(hi) >= s:
                    break
                lo, hi = hi, hi * 10.0
            else:
                raise QuadratureFailure(f"s={s:.6g} lies above the reachable range")
        return brentq(lambda t: self._s_scalar(t) - s, lo, hi, xtol=1e-14 * lo, rtol=1e-13)

    def t_of_s(self, s):
        if not isinstance(s, np.ndarray):
            return self._t_scalar(float(s))
        flat = s.ravel()
        out = np.exp(self._inverse(np.log(flat)))
        inside = (flat >= self.s_nodes[0]) & (flat <= self.s_nodes[-1])
        if inside.any():
            target = flat[inside]
            idx = np.clip(np.searchsorted(self.s_nodes, target, side="right") - 1, 0, len(self.s_nodes) - 2)
            lo, hi = self.t_nodes[idx], self.t_nodes[idx + 1]
            t = np.clip(out[inside], lo, hi)
            # 区间内带保护的 Newton 迭代，ds/dt = γ
            for _ in range(4):
                s_t = self.s_nodes[idx] + _gl_segment(self.gamma, lo, t)
                t = np.clip(t - (s_t - target) / self.gamma(t), lo, hi)
            out[inside] = t
        for j in np.flatnonzero(~inside):
            out[j] = self._t_scalar(float(flat[j]))
        return out.reshape(s.shape)

    def pullback(self, profile, hint: Optional[AsymptoticHint] = None) -> ComposedProfile:
        """把 t 变量下的剖面拉回到 s 变量"""
        if hint is None and profile.hint.kind == "bounded-below":
            hint = profile.hint
        return ComposedProfile(profile, self.t_of_s, hint)

    def table(self, samples: int = 512) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.geometry.probe_grid(samples)
        return s, self.geometry.alpha(s), self.geometry.beta(s)


# 预设几何
PRESETS: Dict[str, dict] = {
    "euclidean": {
        "alpha": "t/sqrt(2)",
        "beta": "t",
        "gamma": None,
        "required": (),
        "ambient_m": None,
    },
    "taub-nut": {
        "alpha": "sqrt(2)*t",
        "beta": "2*t/(1+b*t)",
        "gamma": "sqrt((a+b*t)/t)",
        "required": ("a", "b"),
        "ambient_m": 1,
    },
    "iwai-katayama": {
        "alpha": "sqrt(2)*t",
        "beta": "2*t/sqrt(1+c*t+d*t^2)",
        "gamma": "sqrt((a+b*t)/t)",
        "required": ("a", "b", "c", "d"),
        "ambient_m": 1,
    },
}


def _preset_hints(name: str, params: Mapping[str, float]) -> Dict[str, AsymptoticHint]:
    if name == "euclidean":
        return {"alpha": AsymptoticHint(kind="power", p=1.0, c=1.0 / SQRT2),
                "beta": AsymptoticHint(kind="power", p=1.0, c=1.0)}
    hints = {"alpha": AsymptoticHint(kind="power", p=1.0, c=SQRT2),
             "gamma": AsymptoticHint(kind="bounded-below", c=math.sqrt(params["b"]))}
    far_beta = 2.0 / params["b"] if name == "taub-nut" else 2.0 / math.sqrt(params["d"])
    hints["beta"] = AsymptoticHint(kind="power", p=0.0, c=far_beta)
    return hints


class GeometryService:
    """几何构造、重参数化与完备化检查"""

    @staticmethod
    def from_config(config: GeometryConfig, window: Optional[Tuple[float, float]] = None,
                    name: Optional[str] = None) -> CfwpGeometry:
        params = dict(config.params)
        names = list(params)
        hints = config.hints

        def build(label: str, text: str) -> ExprProfile:
            return ExprProfile(parse(text, names), params, hints.get(label))

        return CfwpGeometry(
            m=config.m,
            alpha=build("alpha", config.alpha),
            beta=build("beta", config.beta),
            gamma=build("gamma", config.gamma) if config.gamma is not None else None,
            name=name or config.name,
            window=tuple(window) if window else DEFAULT_WINDOW,
            params=params,
        )

    @staticmethod
    def preset_config(name: str, params: Optional[Mapping[str, float]] = None, m: int = 1) -> GeometryConfig:
        if name not in PRESETS:
            raise InvalidInput(f"unknown preset '{name}' (known: {', '.join(PRESETS)})")
        spec = PRESETS[name]
        params = {k: float(v) for k, v in (params or {}).items()}
        if m < 1:
            raise InvalidParams("m must be >= 1")
        if spec["ambient_m"] is not None and m != spec["ambient_m"]:
            raise InvalidParams(f"preset '{name}' lives on R^4 and requires m = 1, got m = {m}")
        for key in spec["required"]:
            if key not in params:
                raise InvalidParams(f"preset '{name}' requires parameter '{key}'")
            if not (math.isfinite(params[key]) and params[key] > 0):
                raise InvalidParams(f"preset '{name}' requires {key} > 0, got {params[key]}")
        used = {k: params[k] for k in spec["required"]}
        return GeometryConfig(name=name, m=m, alpha=spec["alpha"], beta=spec["beta"], gamma=spec["gamma"],
                              params=used, hints=_preset_hints(name, used))

    @staticmethod
    def preset(name: str, params: Optional[Mapping[str, float]] = None, m: int = 1,
               window: Optional[Tuple[float, float]] = None) -> CfwpGeometry:
        """按名称构造预设几何"""
        config = GeometryService.preset_config(name, params, m)
        return GeometryService.from_config(config, window, name=name)

    @staticmethod
    def reparametrize(geom: CfwpGeometry) -> ReparamResult:
        """共形重参数化 s = ∫₀ᵗ γ"""
        if geom.gamma is None:
            raise InvalidInput("reparametrization needs a conformal factor gamma")
        report = GeometryService.check_int_condition(geom)
        if report.status != "holds":
            raise IntConditionFailed(f"condition (int) is {report.status}: {report.narrative}")
        gamma = geom.gamma
        s_lo, s_hi = geom.window

        # 下端：按十进制向下扩展直到 s(t_lo) 落到窗口下界以下
        t_lo = s_lo
        head = GeometryService._head_integral(gamma, t_lo)
        for _ in range(80):
            if head <= s_lo * (1.0 + 1e-9):
                break
            t_lo /= 10.0
            head = GeometryService._head_integral(gamma, t_lo)
        else:
            raise QuadratureFailure("could not reach the lower end of the window in s")

        # 上端：逐个十进制区间累积，直到覆盖窗口上界
        t_chunks: List[np.ndarray] = [np.array([t_lo])]
        s_chunks: List[np.ndarray] = [np.array([head])]
        start, s_start = t_lo, head
        for _ in range(80):
            nodes = np.geomspace(start, start * 10.0, NODES_PER_DECADE + 1)
            cumulative = s_start + gauss_legendre_cumulative(gamma, nodes)
            t_chunks.append(nodes[1:])
            s_chunks.append(cumulative[1:])
            start, s_start = nodes[-1], cumulative[-1]
            if s_start >= s_hi:
                break
        else:
            raise QuadratureFailure("s(t) does not reach the upper end of the window")

        t_nodes = np.concatenate(t_chunks)
        s_nodes = np.concatenate(s_chunks)
        if not (np.all(np.isfinite(s_nodes)) and np.all(np.diff(s_nodes) > 0)):
            raise QuadratureFailure("s(t) table is not strictly increasing")
        g = gamma(t_nodes)
        alpha_tilde = TabulatedProfile(s_nodes, g * geom.alpha(t_nodes))
        beta_tilde = TabulatedProfile(s_nodes, g * geom.beta(t_nodes))
        logger.info("reparametrized %s: %d nodes, t in [%.3g, %.3g]", geom.name, len(t_nodes), t_nodes[0], t_nodes[-1])
        target = CfwpGeometry(m=geom.m, alpha=alpha_tilde, beta=beta_tilde, gamma=None,
                              name=f"{geom.name}[s]", window=geom.window, params=dict(geom.params))
        return ReparamResult(geometry=target, source=geom, t_nodes=t_nodes, s_nodes=s_nodes)

    @staticmethod
    def _head_integral(gamma, t: float) -> float:
        try:
            result = integrate_adaptive(gamma, 0.0, t, 1e-11)
        except DomainError as exc:
            raise QuadratureFailure(f"gamma is not evaluable near t=0: {exc.detail}")
        if not result.converged:
            raise QuadratureFailure(f"integral of gamma over [0, {t:.3g}] did not converge")
        return result.value

    @staticmethod
    def completion_limits(geom: CfwpGeometry, probes: Sequence[float] = (1e-4, 1e-5, 1e-6)) -> CompletionLimits:
        """Richardson 外推 α/t, β/t 在 0 处的极限"""

        def limit(profile, label: str) -> float:
            values = [float(profile(t)) / t for t in probes]
            if not all(math.isfinite(v) for v in values):
                raise LimitDiverges(f"{label}(t)/t is not finite near 0", values=values)
            mags = [abs(v) for v in values]
            if all(mags[i + 1] >= 2.0 * mags[i] for i in range(len(mags) - 1)):
                raise LimitDiverges(f"{label}(t)/t grows without bound near 0", values=values)
            return values[-1] + (values[-1] - values[-2]) / 9.0

        a_lim = limit(geom.alpha, "alpha")
        b_lim = limit(geom.beta, "beta")
        smooth = abs(a_lim - 1.0 / SQRT2) <= 1e-4 and abs(b_lim - 1.0) <= 1e-4
        return CompletionLimits(a_lim, b_lim, smooth)

    @staticmethod
    def check_int_condition(geom: CfwpGeometry) -> HypothesisReport:
        """条件 (int)：∫₀¹γ 有限且 ∫₀^∞γ 发散"""
        if geom.gamma is None:
            raise InvalidInput("condition (int) needs a conformal factor gamma")
        gamma = geom.gamma
        evidence: List[Tuple[float, Optional[float]]] = []
        head, head_total, head_note = GeometryService._head_status(gamma, evidence)
        tail, tail_note = GeometryService._tail_status(gamma, head_total, evidence)
        if head == "finite" and tail == "infinite":
            status = "holds"
        elif head == "infinite" or tail == "finite":
            status = "fails"
        else:
            status = "inconclusive"
        narrative = f"near 0: {head_note}; at infinity: {tail_note}"
        if status == "inconclusive":
            logger.warning("condition (int) inconclusive for %s: %s", geom.name, narrative)
        return HypothesisReport(condition="int", status=status, evidence=evidence, narrative=narrative)

    @staticmethod
    def _head_status(gamma, evidence) -> Tuple[str, float, str]:
        eps = (1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
        pieces = []
        try:
            for hi, lo in zip(eps[:-1], eps[1:]):
                pieces.append(integrate_adaptive(gamma, lo, hi, 1e-10).value)
        except DomainError as exc:
            return "inconclusive", 0.0, f"gamma not evaluable near 0 ({exc.detail})"
        running = 0.0
        for lo, piece in zip(eps[1:], pieces):
            running += piece
            evidence.append((lo, _finite_or_none(running)))
        if not all(math.isfinite(p) for p in pieces):
            return "infinite", math.inf, "partial integrals overflow"
        ratios = [pieces[i + 1] / pieces[i] if pieces[i] > 0 else math.inf for i in range(len(pieces) - 1)]
        if all(r >= 1.0 - 1e-6 for r in ratios[-2:]):
            return "infinite", math.inf, "decade increments do not shrink"
        if all(r <= 0.5 for r in ratios[-3:]):
            try:
                total = integrate_adaptive(gamma, 0.0, 1.0, 1e-10)
            except DomainError:
                total = None
            if total is not None and total.converged:
                evidence.append((0.0, total.value))
                return "finite", total.value, f"integral over [0,1] = {total.value:.6g}"
        return "inconclusive", running, "decade increments neither shrink nor stall"

    @staticmethod
    def _tail_status(gamma, head_total: float, evidence) -> Tuple[str, str]:
        hint = gamma.hint
        if hint.kind == "bounded-below":
            return "infinite", f"gamma bounded below by {hint.c:g}"
        if hint.kind == "power":
            return ("infinite", f"gamma ~ t^{hint.p:g}") if hint.p >= -1.0 else ("finite", f"gamma ~ t^{hint.p:g}")
        horizons = (1.0, 10.0, 1e2, 1e3, 1e4)
        offset = head_total if math.isfinite(head_total) else 0.0
        partial, _ = cumulative_integral(gamma, horizons, 1e-10)
        totals = [offset + v for v in partial[1:]]
        for T, value in zip(horizons[1:], totals):
            evidence.append((T, _finite_or_none(value)))
        diffs = [totals[i + 1] - totals[i] for i in range(len(totals) - 1)]
        if totals[-1] > 1e3 and all(diffs[i + 1] > diffs[i] for i in range(len(diffs) - 1)):
            return "infinite", "partial integrals grow with positive second differences"
        rel = [diffs[i] / totals[i + 1] if totals[i + 1] > 0 else 0.0 for i in range(len(diffs))]
        if all(abs(r) < 1e-10 for r in rel[-2:]):
            return "finite", f"partial integrals saturate at {totals[-1]:.6g}"
        return "inconclusive", "growth of partial integrals is undecided without a hint"


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None
