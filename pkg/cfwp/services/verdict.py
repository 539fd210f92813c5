import logging
import math
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import CfwpError, InvalidInput, ResourceLimit
from ..models.schemas import (GeometryConfig, HypothesisReport, IdentityCheck, IdentityReport, ModeConfig,
                              ModeVerdict, SolverOptions, SweepConfig, SweepReport, SweepSummary, VerdictLabel)
from .exprfn import gauss_legendre_cumulative, integrate_adaptive
from .geometry import CfwpGeometry, GeometryService
from .hypotheses import HypothesisService
from .integrator import indicial, integrate, match_residuals, solve_bounded
from .modes import CoefficientField, ModeIndex, RadialCoeffs, coefficient_signs, raw_system

logger = logging.getLogger(__name__)

RESIDUAL_FLOOR = 1e-3
CANDIDATE_CEILING = 1e-6
LAMBDA_BRANCH = 2.0 ** -1.5
MAX_K_VALUES = 64
MAX_LAMBDA_VALUES = 1024
IDENTITY_SEED = 20240229


def l2_behaviour(partials: Sequence[Optional[float]], blowup: bool = False) -> Tuple[str, List[Optional[float]]]:
    """部分 L² 积分的增量判定：divergent / convergent / inconclusive"""
    if blowup or any(p is None for p in partials):
        increments = [None] * len(partials)
        previous = 0.0
        for i, p in enumerate(partials):
            if p is None:
                break
            increments[i] = p - previous
            previous = p
        return "divergent", increments
    increments = [partials[0]] + [b - a for a, b in zip(partials[:-1], partials[1:])]
    ratios = []
    for prev, nxt in zip(increments[:-1], increments[1:]):
        if prev <= 0:
            ratios.append(0.0 if nxt <= 0 else math.inf)
        else:
            ratios.append(nxt / prev)
    if ratios[-1] >= 0.5:
        return "divergent", increments
    if all(r <= 0.1 for r in ratios):
        return "convergent", increments
    return "inconclusive", increments


def assemble_verdict(bounded_dim: int, behaviours: Sequence[str], residual: Optional[float]) -> VerdictLabel:
    if bounded_dim == 0:
        return "no-L2"
    if residual is None:
        return "inconclusive"
    if residual < CANDIDATE_CEILING:
        return "candidate-L2"
    if all(b == "divergent" for b in behaviours) and residual > RESIDUAL_FLOOR:
        return "no-L2"
    return "inconclusive"


def blowup_count(verdicts: Sequence[ModeVerdict]) -> int:
    return sum(1 for v in verdicts for stats in v.evidence.get("trajectories", []) if stats.get("blowup"))


class VerdictService:
    """模式判定、参数扫描与恒等式检查"""

    def __init__(self, options: Optional[SolverOptions] = None):
        self.options = options or SolverOptions()

    # 几何准备
    @staticmethod
    def analysis_geometry(geom: CfwpGeometry) -> CfwpGeometry:
        """带共形因子时换到 s 变量"""
        if geom.gamma is None:
            return geom
        return GeometryService.reparametrize(geom).geometry

    @staticmethod
    def hypotheses(geom: CfwpGeometry) -> Tuple[List[HypothesisReport], List[str]]:
        try:
            return HypothesisService.check_all(geom), []
        except CfwpError as exc:
            logger.warning("hypothesis checks failed for %s: %s", geom.name, exc.detail)
            return [], [f"hypotheses: {exc.detail}"]

    # 单个模式
    def classify_system(self, coeffs: CoefficientField, mode: Optional[ModeConfig] = None,
                        hypotheses_ok: bool = False, evidence: Optional[Dict[str, Any]] = None,
                        keep: Optional[list] = None) -> ModeVerdict:
        """indicial → solve_bounded → 部分 L² 积分 → 匹配"""
        opts = self.options
        evidence = dict(evidence or {})
        errors: List[str] = list(evidence.pop("errors", []))

        def finish(bounded_dim, behaviours, residual, increments, verdict=None) -> ModeVerdict:
            label = verdict or assemble_verdict(bounded_dim, behaviours, residual)
            evidence["errors"] = errors
            return ModeVerdict(mode=mode, hypotheses_ok=hypotheses_ok, bounded_dim=bounded_dim,
                               l2_divergent=[b == "divergent" for b in behaviours],
                               matching_residual=residual, verdict=label,
                               p_increments=increments, evidence=evidence)

        try:
            data = indicial(coeffs)
        except CfwpError as exc:
            errors.append(f"indicial: {exc.detail}")
            return finish(0, [], None, [], verdict="inconclusive")
        evidence["indicial"] = data.summary()
        bounded_dim = len(data.admissible)
        if bounded_dim == 0:
            return finish(0, [], None, [])

        try:
            trajectories = solve_bounded(coeffs, opts, data)
        except CfwpError as exc:
            errors.append(f"integration: {exc.detail}")
            return finish(bounded_dim, [], None, [], verdict="inconclusive")
        if keep is not None:
            keep.extend(trajectories)

        behaviours, increments, stats = [], [], []
        for traj in trajectories:
            label, incs = l2_behaviour(traj.partial_l2(opts.horizons), traj.blowup)
            behaviours.append(label)
            increments.append(incs)
            stats.append({**traj.stats, "blowup": traj.blowup, "t_blowup": traj.t_blowup, "l2": label})
            if traj.blowup:
                logger.debug("bounded trajectory blew up at t=%.6g", traj.t_blowup)
        evidence["trajectories"] = stats

        residual = None
        try:
            matches = match_residuals(coeffs, trajectories, opts.t_mid, opts)
            evidence["residuals"] = {f"{m.t_mid:g}": m.residual for m in matches}
            residual = max(m.residual for m in matches)
        except CfwpError as exc:
            logger.warning("matching at infinity failed: %s", exc.detail)
            errors.append(f"matching: {exc.detail}")
        return finish(bounded_dim, behaviours, residual, increments)

    def classify_mode(self, geom: CfwpGeometry, mode: ModeConfig,
                      hypotheses: Optional[List[HypothesisReport]] = None,
                      analysis: Optional[CfwpGeometry] = None, keep: Optional[list] = None) -> ModeVerdict:
        errors: List[str] = []
        if hypotheses is None:
            hypotheses, errors = self.hypotheses(geom)
        hypotheses_ok = bool(hypotheses) and HypothesisService.aggregate(hypotheses) == "holds"
        index = ModeIndex.from_config(mode)
        evidence: Dict[str, Any] = {
            "hypotheses": {r.condition: r.status for r in hypotheses},
            "lambda_branch": self._lambda_branch(mode.lam),
            "surviving_case": index.surviving_case(geom.m),
            "errors": errors,
        }
        try:
            analysis = analysis if analysis is not None else self.analysis_geometry(geom)
            coeffs = RadialCoeffs(analysis, index)
        except CfwpError as exc:
            evidence["errors"] = errors + [f"setup: {exc.detail}"]
            return ModeVerdict(mode=mode, hypotheses_ok=hypotheses_ok, bounded_dim=0,
                               verdict="inconclusive", evidence=evidence)
        verdict = self.classify_system(coeffs, mode, hypotheses_ok, evidence, keep)
        logger.debug("mode k=%d l=%d eps=%+d lambda=%g -> %s", mode.k, mode.l, mode.epsilon, mode.lam,
                     verdict.verdict)
        return verdict

    @staticmethod
    def _lambda_branch(lam: float) -> str:
        gap = abs(lam) - LAMBDA_BRANCH
        if abs(gap) <= 1e-12:
            return "at"
        return "below" if gap < 0 else "above"

    # 扫描
    @staticmethod
    def grid_modes(grid: SweepConfig) -> List[ModeConfig]:
        if not grid.lambda_grid or not grid.l_values or not grid.epsilon_values:
            raise InvalidInput("sweep grids must be nonempty")
        k_lo, k_hi = grid.k_range
        if k_hi - k_lo + 1 > MAX_K_VALUES:
            raise ResourceLimit(f"k range holds {k_hi - k_lo + 1} values (limit {MAX_K_VALUES})")
        if len(grid.lambda_grid) > MAX_LAMBDA_VALUES:
            raise ResourceLimit(f"lambda grid holds {len(grid.lambda_grid)} values (limit {MAX_LAMBDA_VALUES})")
        return [ModeConfig(k=k, l=l, epsilon=eps, lam=lam)
                for k in range(k_lo, k_hi + 1)
                for l in grid.l_values
                for eps in grid.epsilon_values
                for lam in grid.lambda_grid]

    def sweep(self, geometry: GeometryConfig, grid: SweepConfig,
              window: Optional[Tuple[float, float]] = None, jobs: int = 1) -> SweepReport:
        modes = self.grid_modes(grid)
        geom = GeometryService.from_config(geometry, window)
        hypotheses, errors = self.hypotheses(geom)
        logger.info("sweeping %d modes on %s with %d job(s)", len(modes), geom.name, jobs)

        results: List[Optional[ModeVerdict]] = [None] * len(modes)
        payload = (geometry.model_dump(), window, self.options.model_dump(),
                   [r.model_dump() for r in hypotheses])
        if jobs <= 1:
            _init_worker(*payload)
            for i, mode in enumerate(modes):
                results[i] = _classify_worker((i, mode.model_dump(by_alias=True)))[1]
        else:
            with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=payload) as pool:
                for i, doc in pool.map(_classify_worker, [(i, m.model_dump(by_alias=True))
                                                          for i, m in enumerate(modes)]):
                    results[i] = doc
        grid_verdicts = [ModeVerdict.model_validate(doc) for doc in results]
        for verdict in grid_verdicts:
            verdict.evidence.setdefault("errors", []).extend(errors)
        blowups = blowup_count(grid_verdicts)
        if blowups:
            logger.warning("%d bounded trajectories blew up across %d modes", blowups, len(grid_verdicts))

        summary = self.summarize(grid_verdicts, hypotheses)
        logger.info("sweep finished: %s", ", ".join(f"{k}: {v}" for k, v in summary.fractions.items()))
        return SweepReport(geometry=geom.descriptor(), hypotheses=hypotheses, grid=grid_verdicts,
                           summary=summary, generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @staticmethod
    def summarize(grid: List[ModeVerdict], hypotheses: List[HypothesisReport]) -> SweepSummary:
        total = len(grid)
        counts = {label: 0 for label in ("no-L2", "candidate-L2", "inconclusive")}
        for verdict in grid:
            counts[verdict.verdict] += 1
        fractions = {label: f"{100.0 * n / total:g}%" for label, n in counts.items()}
        kernel_empty = counts["candidate-L2"] == 0
        worst = None
        scored = [v for v in grid if v.matching_residual is not None]
        if scored:
            v = min(scored, key=lambda item: item.matching_residual)
            worst = {"mode": v.mode.model_dump(by_alias=True) if v.mode else None,
                     "residual": v.matching_residual, "verdict": v.verdict}
        return SweepSummary(
            total=total,
            counts=counts,
            fractions=fractions,
            kernel_empty=kernel_empty,
            l2_index=0 if counts["no-L2"] == total else None,
            worst_mode=worst,
            hypotheses_ok=bool(hypotheses) and HypothesisService.aggregate(hypotheses) == "holds",
        )

    # 恒等式检查
    def verify_identities(self, geom: CfwpGeometry, mode: ModeConfig) -> IdentityReport:
        index = ModeIndex.from_config(mode).validate(geom.m)
        analysis = self.analysis_geometry(geom)
        coeffs = RadialCoeffs(analysis, index)
        checks = [
            self._check_ine(coeffs),
            self._check_determinant(coeffs),
            *self._check_uw(coeffs),
            self._check_difference(coeffs),
            self._check_decoupled(coeffs),
            self._check_transport(geom, index),
            self._check_signs(coeffs),
        ]
        return IdentityReport(geometry=geom.descriptor(), mode=mode, checks=checks,
                              all_passed=all(c.status != "fail" for c in checks))

    @staticmethod
    def _judge(name: str, residual: float, threshold: float, detail: str = "") -> IdentityCheck:
        status = "pass" if math.isfinite(residual) and residual <= threshold else "fail"
        if status == "fail":
            logger.warning("identity check %s failed: residual %.3g > %.3g", name, residual, threshold)
        return IdentityCheck(name=name, status=status, residual=residual if math.isfinite(residual) else None,
                             threshold=threshold, detail=detail)

    @staticmethod
    def _safely(name: str, threshold: float, run) -> IdentityCheck:
        try:
            return run()
        except CfwpError as exc:
            return IdentityCheck(name=name, status="fail", threshold=threshold, detail=exc.detail)

    def _check_ine(self, coeffs: RadialCoeffs) -> IdentityCheck:
        lo, hi = coeffs.geometry.window
        rng = np.random.default_rng(IDENTITY_SEED)
        points = np.exp(rng.uniform(math.log(lo), math.log(hi), 512))
        residual = float(np.max(coeffs.ine_residual(points)))
        return self._judge("ine", residual, 1e-12, "rho + tau = -eps(-1)^l beta/(2 alpha^2) at 512 points")

    def _check_determinant(self, coeffs: RadialCoeffs) -> IdentityCheck:
        def run():
            t0, t1 = 1.0, 2.0
            columns = [integrate(coeffs, t0, t1, e, 1e-12).states[-1] for e in ((1.0, 0.0), (0.0, 1.0))]
            det = columns[0][0] * columns[1][1] - columns[1][0] * columns[0][1]
            expected = math.exp(integrate_adaptive(coeffs.trace_target, t0, t1, 1e-13).value)
            return self._judge("determinant", abs(det - expected) / abs(expected), 1e-8,
                               "det of the fundamental matrix over [1, 2]")
        return self._safely("determinant", 1e-8, run)

    def _check_uw(self, coeffs: RadialCoeffs) -> List[IdentityCheck]:
        """(UW)′ 下界与最大区间上的指数下界，按 σ 的符号定向"""
        opts = self.options
        alpha = coeffs.geometry.alpha
        sign = -1.0 if coeffs.mode.parity * coeffs.mode.lam < 0 else 1.0
        t0, t1 = 1e-2, 1e2

        def run_pointwise():
            worst = 0.0
            for init in ((1.0, 0.5 * sign), (1.0, -0.5 * sign)):
                traj = integrate(coeffs, t0, t1, init, opts.rel_tol)
                t, (u, w) = traj.nodes, traj.states.T
                rho, sigma, tau = coeffs.matrix_at(t)
                p, q = sign * u * w, u * u + w * w
                dp = (rho + tau) * p + np.abs(sigma) * q
                lhs = dp + p / (math.sqrt(2.0) * alpha(t))
                mask = p > 0
                if mask.any():
                    worst = max(worst, float(np.max(np.maximum(0.0, -lhs[mask] / q[mask]))))
            return self._judge("in", worst, 1e-9, "(UW)' + UW/(sqrt(2) alpha) >= 0 where UW > 0")

        def run_interval():
            worst = 0.0
            inv = lambda t: 1.0 / (math.sqrt(2.0) * alpha(t))
            for init in ((1.0, 0.5 * sign), (1.0, -0.5 * sign)):
                traj = integrate(coeffs, t0, t1, init, opts.rel_tol)
                t, (u, w) = traj.nodes, traj.states.T
                p = sign * u * w
                scale = float(np.max(np.abs(p)))
                exponent = gauss_legendre_cumulative(inv, t)
                positive = p > 0
                starts = np.flatnonzero(positive & ~np.concatenate(([False], positive[:-1])))
                for start in starts:
                    stop = start
                    while stop + 1 < len(p) and positive[stop + 1]:
                        stop += 1
                    seg = slice(start, stop + 1)
                    bound = p[start] * np.exp(-(exponent[seg] - exponent[start]))
                    worst = max(worst, float(np.max(bound - p[seg])) / scale)
            return self._judge("uwnega", max(worst, 0.0), 1e-9, "UW(t) >= UW(x) exp(-int 1/(sqrt(2) alpha))")

        return [self._safely("in", 1e-9, run_pointwise), self._safely("uwnega", 1e-9, run_interval)]

    def _check_difference(self, coeffs: RadialCoeffs) -> IdentityCheck:
        geom, mode = coeffs.geometry, coeffs.mode
        if not mode.surviving_case(geom.m):
            return IdentityCheck(name="difference", status="skipped", threshold=1e-8,
                                 detail="needs k=0, m=2l+1, (-1)^l=-eps")

        def run():
            g = -1.0 if mode.parity * mode.lam < 0 else 1.0
            t0, t1 = 1.0, 4.0
            end = integrate(coeffs, t0, t1, (1.0, -g), 1e-12).states[-1]
            d_end = end[0] - g * end[1]
            rate = lambda t: geom.beta(t) / (4.0 * geom.alpha(t) ** 2) - abs(mode.lam) / geom.alpha(t)
            expected = 2.0 * math.exp(integrate_adaptive(rate, t0, t1, 1e-13).value)
            return self._judge("difference", abs(d_end - expected) / abs(expected), 1e-8,
                               "D = U - sgn(sigma) W against its closed form over [1, 4]")
        return self._safely("difference", 1e-8, run)

    def _check_decoupled(self, coeffs: RadialCoeffs) -> IdentityCheck:
        if coeffs.mode.lam != 0:
            return IdentityCheck(name="decoupled", status="skipped", threshold=1e-8, detail="needs lambda = 0")

        def run():
            t0, t1 = 1.0, 4.0
            end = integrate(coeffs, t0, t1, (1.0, 1.0), 1e-12).states[-1]
            u = math.exp(integrate_adaptive(coeffs.rho, t0, t1, 1e-13).value)
            w = math.exp(integrate_adaptive(coeffs.tau, t0, t1, 1e-13).value)
            residual = max(abs(end[0] - u) / u, abs(end[1] - w) / w)
            return self._judge("decoupled", residual, 1e-8, "U, W against exp(int rho), exp(int tau)")
        return self._safely("decoupled", 1e-8, run)

    def _check_transport(self, geom: CfwpGeometry, index: ModeIndex) -> IdentityCheck:
        if geom.gamma is not None:
            return IdentityCheck(name="transport", status="skipped", threshold=1e-6,
                                 detail="geometry carries a conformal factor")

        def run():
            coeffs = RadialCoeffs(geom, index)
            raw = raw_system(geom, index)
            t0, t1 = 1.0, 4.0
            init = np.array([1.0, 0.5])
            w0, w1 = coeffs.weight(t0), coeffs.weight(t1)
            substituted = integrate(coeffs, t0, t1, init, 1e-12).states[-1]
            direct = integrate(raw, t0, t1, init / w0, 1e-12).states[-1] * w1
            residual = float(np.linalg.norm(direct - substituted) / np.linalg.norm(substituted))
            return self._judge("transport", residual, 1e-6, "(u, w) system against (U, W) = w(t)(u, w)")
        return self._safely("transport", 1e-6, run)

    @staticmethod
    def _check_signs(coeffs: RadialCoeffs) -> IdentityCheck:
        geom, mode = coeffs.geometry, coeffs.mode
        signs = coefficient_signs(coeffs, geom.probe_grid(1024))
        constant = all(s != "mixed" for s in signs.values())
        both_positive = signs["rho"] == "positive" and signs["tau"] == "positive"
        ok = constant and (not both_positive or mode.surviving_case(geom.m))
        detail = f"rho {signs['rho']}, tau {signs['tau']}"
        return IdentityCheck(name="sign-structure", status="pass" if ok else "fail", threshold=0.0, detail=detail)


# 进程池 worker
_WORKER: Dict[str, Any] = {}


def _init_worker(geometry_doc: dict, window, options_doc: dict, hypothesis_docs: List[dict]) -> None:
    service = VerdictService(SolverOptions.model_validate(options_doc))
    geom = GeometryService.from_config(GeometryConfig.model_validate(geometry_doc), window)
    hypotheses = [HypothesisReport.model_validate(doc) for doc in hypothesis_docs]
    try:
        analysis = service.analysis_geometry(geom)
    except CfwpError as exc:
        logger.warning("cannot prepare %s for mode analysis: %s", geom.name, exc.detail)
        analysis = None
    _WORKER.update(service=service, geom=geom, analysis=analysis, hypotheses=hypotheses)


def _classify_worker(item: Tuple[int, dict]) -> Tuple[int, dict]:
    index, mode_doc = item
    mode = ModeConfig.model_validate(mode_doc)
    service: VerdictService = _WORKER["service"]
    if _WORKER["analysis"] is None:
        verdict = ModeVerdict(mode=mode, hypotheses_ok=False, bounded_dim=0, verdict="inconclusive",
                              evidence={"errors": ["setup: analysis geometry unavailable"]})
    else:
        verdict = service.classify_mode(_WORKER["geom"], mode, _WORKER["hypotheses"], _WORKER["analysis"])
    return index, verdict.model_dump(by_alias=True)
