import logging
import math
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import InvalidInput
from ..models.schemas import AsymptoticHint, HypothesisReport, Status
from .exprfn import integrate_adaptive
from .geometry import NO_HINT, CfwpGeometry, GeometryService

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
LIMIT_PROBES = tuple(10.0 ** -j for j in range(3, 17))
TIE = 1e-12
NEAR_EQUALITY = 1e-6
MAX_REFINEMENTS = 64


def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


def _report(condition: str, status: Status, evidence, narrative: str) -> HypothesisReport:
    if status == "inconclusive":
        logger.warning("condition (%s) inconclusive: %s", condition, narrative)
    return HypothesisReport(condition=condition, status=status, evidence=evidence, narrative=narrative)


class HypothesisService:
    """主定理条件 (a)(b)(c) 以及带共形因子的 (int)(a')(b')(c')"""

    @staticmethod
    def check_a(alpha, x: float = 1.0, hint: Optional[AsymptoticHint] = None, weight=None,
                weight_hint: Optional[AsymptoticHint] = None, condition: str = "a") -> HypothesisReport:
        """条件 (a)：∫ₓ^∞ w(t)·exp(−∫ₓᵗ 1/(√2α)) dt = ∞，w 缺省为 1"""
        if not x > 0:
            raise InvalidInput("x must be positive")
        hint = hint if hint is not None else getattr(alpha, "hint", NO_HINT)
        if weight is not None and weight_hint is None:
            weight_hint = getattr(weight, "hint", NO_HINT)
        closed = HypothesisService._check_a_closed_form(hint, weight is not None, weight_hint)
        if closed is not None:
            status, narrative, power = closed
            return _report(condition, status, [(x, power)], narrative)
        return HypothesisService._check_a_numeric(alpha, x, weight, weight_hint, condition)

    @staticmethod
    def _check_a_closed_form(hint: AsymptoticHint, weighted: bool,
                             weight_hint: Optional[AsymptoticHint]) -> Optional[Tuple[Status, str, Optional[float]]]:
        """返回 (状态, 说明, 被积函数在无穷远处的幂次)；幂次未知时为 None"""
        if hint.kind != "power" or hint.p is None:
            return None
        wkind = weight_hint.kind if weighted and weight_hint is not None else ("none" if weighted else "unit")
        p = hint.p
        if p > 1.0 + 1e-12:
            # 指数积分收敛，被积函数有正下界
            if wkind in ("unit", "bounded-below"):
                return ("holds", f"alpha ~ t^{p:g}: exponent integral converges, integrand bounded below",
                        0.0 if wkind == "unit" else None)
            if wkind == "power":
                q = weight_hint.p
                status = "holds" if q >= -1.0 else "fails"
                return status, f"exponent integral converges; weight ~ t^{q:g}", float(q)
            return None
        if p < 1.0 - 1e-12:
            if wkind in ("unit", "power"):
                return "fails", f"alpha ~ t^{p:g}: exp(-E) decays faster than any power", None
            return None
        if hint.c is None:
            return None
        exponent = 1.0 / (SQRT2 * hint.c)
        if wkind == "unit":
            q = 0.0
        elif wkind == "power":
            q = weight_hint.p
        elif wkind == "bounded-below":
            if exponent <= 1.0 + 1e-12:
                return "holds", f"integrand >= c*(x/t)^{exponent:.6g} with exponent <= 1", -exponent
            return None
        else:
            return None
        status = "holds" if q - exponent >= -1.0 - 1e-12 else "fails"
        return status, f"integrand ~ t^{q - exponent:.6g} at infinity", q - exponent

    @staticmethod
    def _check_a_numeric(alpha, x: float, weight, weight_hint, condition: str) -> HypothesisReport:
        edges = [x * 10.0 ** j for j in range(6)]
        inv = lambda t: 1.0 / (SQRT2 * alpha(t))
        pieces = [integrate_adaptive(inv, a, b, 1e-10).value for a, b in zip(edges[:-1], edges[1:])]
        exponent = np.concatenate(([0.0], np.cumsum(pieces)))
        evidence: List[Tuple[float, Optional[float]]] = [(t, _finite_or_none(e)) for t, e in zip(edges[1:], exponent[1:])]

        ratios = [pieces[i + 1] / pieces[i] if pieces[i] > 0 else 0.0 for i in range(len(pieces) - 1)]
        saturating = (exponent[-1] > 0 and pieces[-1] / exponent[-1] < 1e-10) or all(r <= 0.5 for r in ratios[-3:])
        if saturating:
            if weight is None:
                return _report(condition, "holds", evidence, "exponent integral converges; integrand bounded below")
            if weight_hint is not None and (weight_hint.kind == "bounded-below" or
                                            (weight_hint.kind == "power" and weight_hint.p >= -1.0)):
                return _report(condition, "holds", evidence,
                               "exponent integral converges; weight has divergent integral")

        def outer_piece(j: int) -> float:
            a, b = edges[j], edges[j + 1]
            base = exponent[j]

            def integrand(t: float) -> float:
                e = base + (integrate_adaptive(inv, a, t, 1e-10).value if t > a else 0.0)
                value = math.exp(-e)
                return value * weight(t) if weight is not None else value

            return integrate_adaptive(integrand, a, b, 1e-8).value

        outer = [outer_piece(j) for j in range(len(edges) - 1)]
        partial = np.cumsum(outer)
        for t, value in zip(edges[2:], partial[1:]):
            evidence.append((t, _finite_or_none(value)))
        out_ratios = []
        for prev, nxt in zip(outer[:-1], outer[1:]):
            out_ratios.append(0.0 if prev == 0 and nxt == 0 else (nxt / prev if prev > 0 else math.inf))
        tail = out_ratios[-3:]
        if all(r >= 1.0 - 1e-6 for r in tail):
            return _report(condition, "holds", evidence, "decade increments of the outer integral do not shrink")
        if all(r <= 0.5 for r in tail):
            return _report(condition, "fails", evidence, "decade increments of the outer integral shrink geometrically")
        return _report(condition, "inconclusive", evidence,
                       f"decade ratios {', '.join(f'{r:.4g}' for r in tail)} are undecided")

    @staticmethod
    def _limit_at_zero(values: List[float], probes, condition: str, label: str) -> HypothesisReport:
        evidence = [(t, _finite_or_none(v)) for t, v in zip(probes, values)]
        decreasing = all(b <= a for a, b in zip(values[:-1], values[1:]))
        if decreasing and values[-1] < 1e-6:
            return _report(condition, "holds", evidence, f"{label} decreases to {values[-1]:.3g} at t={probes[-1]:g}")
        if min(values) >= 1e-3:
            return _report(condition, "fails", evidence, f"{label} stays above 1e-3 near 0")
        return _report(condition, "inconclusive", evidence, f"{label} is neither monotone to 0 nor bounded away")

    @staticmethod
    def check_b(geom: CfwpGeometry) -> HypothesisReport:
        """条件 (b)：α(t) → 0"""
        values = [float(geom.alpha(t)) for t in LIMIT_PROBES]
        return HypothesisService._limit_at_zero(values, LIMIT_PROBES, "b", "alpha")

    @staticmethod
    def check_b_prime(geom: CfwpGeometry) -> HypothesisReport:
        """条件 (b')：γ(t)α(t) → 0"""
        if geom.gamma is None:
            raise InvalidInput("condition (b') needs a conformal factor gamma")
        values = [float(geom.gamma(t) * geom.alpha(t)) for t in LIMIT_PROBES]
        return HypothesisService._limit_at_zero(values, LIMIT_PROBES, "b'", "gamma*alpha")

    @staticmethod
    def check_c(geom: CfwpGeometry, condition: str = "c", phase: float = 0.0) -> HypothesisReport:
        """条件 (c)：2α² ≥ β² > ((m−1)/m)·2α²"""
        q = (geom.m - 1) / geom.m

        def margins(t):
            a, b = geom.alpha(t), geom.beta(t)
            two_a2, b2 = 2.0 * a * a, b * b
            rhs = q * two_a2
            left = (two_a2 - b2) / np.maximum(two_a2, b2)
            right = (b2 - rhs) / np.maximum(b2, rhs)
            return left, right

        grid = geom.probe_grid(phase=phase)
        left, right = margins(grid)
        left, right = np.asarray(left, dtype=float), np.asarray(right, dtype=float)
        worst = {"left": (float(left.min()), float(grid[left.argmin()])),
                 "right": (float(right.min()), float(grid[right.argmin()]))}

        # 近似相等处做局部加密
        refinements = 0
        log_grid = np.log(grid)
        for side, values in (("left", left), ("right", right)):
            interior = np.arange(1, len(values) - 1)
            candidates = interior[(values[interior] <= values[interior - 1]) &
                                  (values[interior] <= values[interior + 1]) &
                                  (values[interior] > TIE) & (values[interior] <= NEAR_EQUALITY)]
            index = 0 if side == "left" else 1
            for i in candidates:
                if refinements >= MAX_REFINEMENTS:
                    break
                refinements += 1
                res = minimize_scalar(lambda u: float(margins(math.exp(u))[index]),
                                      bounds=(log_grid[i - 1], log_grid[i + 1]), method="bounded",
                                      options={"xatol": 1e-10})
                if res.fun < worst[side][0]:
                    worst[side] = (float(res.fun), math.exp(res.x))

        evidence = [(worst["left"][1], worst["left"][0]), (worst["right"][1], worst["right"][0])]
        if worst["left"][0] < -TIE:
            return _report(condition, "fails", evidence,
                           f"2*alpha^2 < beta^2 at t={worst['left'][1]:.6g}")
        if worst["right"][0] < -TIE:
            return _report(condition, "fails", evidence,
                           f"beta^2 <= ((m-1)/m)*2*alpha^2 at t={worst['right'][1]:.6g}")
        if worst["right"][0] <= TIE:
            return _report(condition, "inconclusive", evidence,
                           f"strict inequality ties at t={worst['right'][1]:.6g}")
        narrative = "both inequalities hold on the probe grid"
        if worst["left"][0] <= TIE:
            narrative += " (left side attains equality)"
        return _report(condition, "holds", evidence, narrative)

    @staticmethod
    def check_all(geom: CfwpGeometry, x: float = 1.0, phase: float = 0.0) -> List[HypothesisReport]:
        """按几何是否带共形因子运行全部条件"""
        if geom.gamma is None:
            return [
                HypothesisService.check_a(geom.alpha, x, geom.alpha.hint, condition="a"),
                HypothesisService.check_b(geom),
                HypothesisService.check_c(geom, "c", phase),
            ]
        return [
            GeometryService.check_int_condition(geom),
            HypothesisService.check_a(geom.alpha, x, geom.alpha.hint, weight=geom.gamma,
                                      weight_hint=geom.gamma.hint, condition="a'"),
            HypothesisService.check_b_prime(geom),
            HypothesisService.check_c(geom, "c'", phase),
        ]

    @staticmethod
    def aggregate(reports: Iterable[HypothesisReport]) -> Status:
        statuses = [r.status for r in reports]
        if statuses and all(s == "holds" for s in statuses):
            return "holds"
        if any(s == "fails" for s in statuses):
            return "fails"
        return "inconclusive"
