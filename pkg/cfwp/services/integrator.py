"""Indicial analysis at t=0 and adaptive integration of the radial 2x2 system.

All trajectories are produced by the Fortran DOP853 behind ``scipy.integrate.ode``,
stopped on a log-spaced output grid. Integration proceeds decade by decade; the
absolute tolerance of each chunk is tied to the state norm at the chunk start so
that error control is relative to the solution and the map ``init -> trajectory``
stays linear.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import ode

from ..errors import DegenerateDirection, InvalidInput, IrregularSingularity, PreconditionError, StepUnderflow
from ..models.schemas import SolverOptions
from .export import format_number
from .modes import CoefficientField

logger = logging.getLogger(__name__)

INDICIAL_PROBES = (1e-4, 1e-5, 1e-6)
MAX_DRIFT = 1e-3
ADMISSIBLE_SLACK = 1e-9
BLOWUP_NORM = 1e300
MAX_STEPS = 100000
MAX_RESUMES = 1000
COARSE_FACTOR = 10.0


@dataclass(frozen=True)
class IndicialData:
    residue_matrix: np.ndarray
    exponents: np.ndarray
    directions: np.ndarray
    threshold: float
    admissible: Tuple[int, ...]
    drift: float

    def admissible_pairs(self) -> List[Tuple[float, np.ndarray]]:
        return [(float(self.exponents[i]), self.directions[:, i]) for i in self.admissible]

    def summary(self) -> dict:
        return {
            "residue_matrix": self.residue_matrix.tolist(),
            "exponents": self.exponents.tolist(),
            "directions": self.directions.T.tolist(),
            "threshold": self.threshold,
            "admissible": len(self.admissible),
            "drift": self.drift,
        }


def indicial(coeffs: CoefficientField, probes: Sequence[float] = INDICIAL_PROBES) -> IndicialData:
    """留数矩阵 A₀ = lim t·M(t) 及其特征分解"""
    mats = [t * coeffs.matrix(t) for t in probes]
    if not all(np.all(np.isfinite(a)) for a in mats):
        raise IrregularSingularity("t*M(t) is not finite near 0")
    scale = max(1.0, float(np.linalg.norm(mats[-1])))
    drift = float(np.linalg.norm(mats[-2] - mats[-1])) / scale
    if drift >= MAX_DRIFT:
        raise IrregularSingularity(f"t*M(t) drifts by {drift:.3g} between the last probes", drift=drift)
    a0 = mats[-1] + (mats[-1] - mats[-2]) / 9.0
    a0 = 0.5 * (a0 + a0.T)
    values, vectors = np.linalg.eigh(a0)
    for j in range(2):
        column = vectors[:, j]
        lead = column[np.argmax(np.abs(column) > 1e-14)]
        if lead < 0:
            vectors[:, j] = -column

    ts = np.geomspace(1e-6, 1e-4, 21)
    weights = np.asarray(coeffs.weight(ts), dtype=float)
    threshold = float(np.polyfit(np.log(ts), np.log(weights), 1)[0])
    admissible = tuple(j for j in range(2) if values[j] >= threshold - ADMISSIBLE_SLACK)
    return IndicialData(a0, values, vectors, threshold, admissible, drift)


class _StepMonitor:
    """solout 回调：统计接受步数，状态越界时返回 -1 终止积分"""

    def __init__(self, limit: float = math.inf):
        self.limit = limit
        self.steps = 0
        self.last = None

    def __call__(self, t, y):
        if t != self.last:
            self.steps += 1
            self.last = t
        return -1 if abs(y[0]) > self.limit or abs(y[-1]) > self.limit else 0


def _dop853(fun, t0: float, y0, rel_tol: float, atol: float, monitor: _StepMonitor) -> ode:
    solver = ode(fun).set_integrator("dop853", rtol=rel_tol, atol=atol, nsteps=MAX_STEPS)
    solver.set_solout(monitor)
    monitor.last = t0
    return solver.set_initial_value(y0, t0)


def _advance(solver: ode, target: float) -> bool:
    """推进到 target；返回 False 表示被 solout 中断"""
    for _ in range(MAX_RESUMES):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            solver.integrate(target)
        code = solver.get_return_code()
        if code == 1:
            return True
        if code == 2:
            return False
        if code not in (-2, -4):
            raise StepUnderflow(f"DOP853 stopped near t={solver.t:.6g} (return code {code})", t=float(solver.t))
        # 步数上限或刚性检测只中断本次调用，从中断点继续
    raise StepUnderflow(f"integration did not reach t={target:.6g}", t=float(solver.t))


def _chunk_tol(rel_tol: float, y: np.ndarray) -> float:
    return max(rel_tol * 1e-3 * float(np.max(np.abs(y))), 1e-300)


@dataclass
class Trajectory:
    nodes: np.ndarray
    states: np.ndarray
    rel_tol: float
    stats: Dict[str, float]
    blowup: bool = False
    t_blowup: Optional[float] = None
    coeffs: Optional[CoefficientField] = field(default=None, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    def state_at(self, t: float) -> np.ndarray:
        """节点处直接取值，节点之间从起点一侧最近的节点补积分"""
        if not self.nodes[0] <= t <= self.nodes[-1]:
            raise InvalidInput(f"t={t:g} lies outside the trajectory [{self.nodes[0]:g}, {self.nodes[-1]:g}]")
        i = int(np.searchsorted(self.nodes, t))
        if self.nodes[i] == t:
            return self.states[i].copy()
        if self.coeffs is None:
            raise PreconditionError("trajectory carries no coefficient field to resume from")
        j = i - 1 if self.stats["direction"] > 0 else i
        y = self.states[j]
        solver = _dop853(self.coeffs, float(self.nodes[j]), y, self.rel_tol, _chunk_tol(self.rel_tol, y),
                         _StepMonitor())
        _advance(solver, float(t))
        return np.array(solver.y, dtype=float)

    def cumulative_l2(self) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            q = np.sum(self.states ** 2, axis=1)
            pieces = 0.5 * (q[1:] + q[:-1]) * np.diff(self.nodes)
            return np.concatenate(([0.0], np.cumsum(pieces)))

    def partial_l2(self, horizons: Sequence[float]) -> List[Optional[float]]:
        """P(T) = ∫(U²+W²) 从起点到各 T，越过终点或非有限时为 None"""
        cumulative = self.cumulative_l2()
        values = []
        for T in horizons:
            if T > self.nodes[-1] * (1 + 1e-12) or T < self.nodes[0]:
                values.append(None)
                continue
            value = float(np.interp(T, self.nodes, cumulative))
            values.append(value if math.isfinite(value) else None)
        return values

    def log_slope(self, lo: float, hi: float) -> float:
        mask = (self.nodes >= lo) & (self.nodes <= hi)
        norms = np.linalg.norm(self.states[mask], axis=1)
        return float(np.polyfit(np.log(self.nodes[mask]), np.log(norms), 1)[0])

    def csv_rows(self) -> List[List[str]]:
        return [[format_number(t), format_number(u), format_number(w)]
                for t, (u, w) in zip(self.nodes, self.states)]


def _chunk_edges(t0: float, t1: float) -> List[float]:
    lo, hi = sorted((t0, t1))
    inner = [10.0 ** k for k in range(math.floor(math.log10(lo)) + 1, math.ceil(math.log10(hi)))
             if lo < 10.0 ** k < hi]
    edges = [lo] + inner + [hi]
    return edges if t1 > t0 else edges[::-1]


def _sweep_nodes(coeffs: CoefficientField, t0: float, t1: float, y: np.ndarray, rel_tol: float,
                 min_nodes: int, extra_nodes: Sequence[float], max_norm: float) -> Trajectory:
    edges = _chunk_edges(t0, t1)
    decades = abs(math.log10(t1 / t0))
    per_decade = max(32, math.ceil(min_nodes / max(decades, 1e-3)))
    extras = np.asarray([t for t in extra_nodes if min(t0, t1) <= t <= max(t0, t1)], dtype=float)
    monitor = _StepMonitor(max_norm)

    nodes: List[float] = [t0]
    states: List[np.ndarray] = [y.copy()]
    n_chunks = 0
    blowup, t_blowup = False, None
    for ta, tb in zip(edges[:-1], edges[1:]):
        n_chunks += 1
        lo, hi = min(ta, tb), max(ta, tb)
        count = max(2, math.ceil(per_decade * math.log10(hi / lo)) + 1)
        sample = np.unique(np.concatenate((np.geomspace(lo, hi, count), extras[(extras > lo) & (extras < hi)])))
        if tb < ta:
            sample = sample[::-1]
        solver = _dop853(coeffs, ta, y, rel_tol, _chunk_tol(rel_tol, y), monitor)
        for t in sample[1:]:
            if _advance(solver, float(t)):
                nodes.append(float(t))
                states.append(np.array(solver.y, dtype=float))
                continue
            blowup, t_blowup = True, float(solver.t)
            nodes.append(t_blowup)
            states.append(np.array(solver.y, dtype=float))
            break
        if blowup:
            logger.debug("integration blew up at t=%.6g", t_blowup)
            break
        y = states[-1]

    all_nodes = np.asarray(nodes)
    all_states = np.asarray(states)
    finite = np.all(np.isfinite(all_states), axis=1)
    all_nodes, index = np.unique(all_nodes[finite], return_index=True)
    all_states = all_states[finite][index]
    stats = {"n_steps": monitor.steps, "n_chunks": n_chunks, "direction": 1 if t1 > t0 else -1}
    return Trajectory(all_nodes, all_states, rel_tol, stats, blowup, t_blowup, coeffs)


def _error_estimate(fine: Trajectory, coarse: Trajectory) -> Dict[str, float]:
    """两档容差在最远公共节点上的差，按容差比例折算到细档"""
    common = np.intersect1d(fine.nodes, coarse.nodes)
    t = float(common[-1] if fine.stats["direction"] > 0 else common[0])
    a = fine.states[np.searchsorted(fine.nodes, t)]
    b = coarse.states[np.searchsorted(coarse.nodes, t)]
    ratio = coarse.rel_tol / fine.rel_tol
    return {"error_estimate": float(np.linalg.norm(a - b)) / (ratio - 1.0), "error_node": t}


def integrate(coeffs: CoefficientField, t0: float, t1: float, init, rel_tol: float = 1e-10,
              min_nodes: int = 256, extra_nodes: Sequence[float] = (),
              max_norm: float = BLOWUP_NORM, estimate_error: bool = False) -> Trajectory:
    """自适应积分 (U, W)，前向或后向"""
    y = np.asarray(init, dtype=float)
    if not (t0 > 0 and t1 > 0) or t0 == t1:
        raise InvalidInput(f"integration needs distinct positive endpoints, got {t0}, {t1}")
    if y.shape != (2,) or not np.all(np.isfinite(y)) or not np.any(y):
        raise InvalidInput("initial state must be a finite nonzero 2-vector")
    traj = _sweep_nodes(coeffs, t0, t1, y, rel_tol, min_nodes, extra_nodes, max_norm)
    if estimate_error:
        coarse = _sweep_nodes(coeffs, t0, t1, y, rel_tol * COARSE_FACTOR, min_nodes, extra_nodes, max_norm)
        traj.stats.update(_error_estimate(traj, coarse))
    return traj


def solve_bounded(coeffs: CoefficientField, opts: Optional[SolverOptions] = None,
                  data: Optional[IndicialData] = None) -> List[Trajectory]:
    """从每个可容许的指标方向出发向前积分"""
    opts = opts or SolverOptions()
    data = data or indicial(coeffs)
    trajectories = []
    for mu, direction in data.admissible_pairs():
        scale = opts.t_init ** mu
        rescaled = not (1e-250 < scale < 1e250)
        init = direction * (1.0 if rescaled else scale)
        traj = integrate(coeffs, opts.t_init, opts.t_max, init, opts.rel_tol, opts.min_nodes,
                         extra_nodes=list(opts.horizons) + list(opts.t_mid))
        traj.stats["exponent"] = mu
        traj.stats["rescaled"] = rescaled
        trajectories.append(traj)
    return trajectories


@dataclass(frozen=True)
class MatchResult:
    t_mid: float
    residual: float
    recessive_angle: float
    bounded_angles: Tuple[float, ...]


def _prufer(coeffs: CoefficientField):
    def rhs(t, theta):
        r, s, q = coeffs.matrix_at(t)
        two = 2.0 * theta[0]
        return [s * math.cos(two) + 0.5 * (q - r) * math.sin(two)]
    return rhs


def _angles(coeffs: CoefficientField, theta0: float, t_from: float, targets: Sequence[float],
            rel_tol: float) -> List[float]:
    """角度方程从 t_from 依次积分到各 target，target 须单调远离 t_from"""
    solver = _dop853(_prufer(coeffs), t_from, [theta0], rel_tol, rel_tol, _StepMonitor())
    angles = []
    for t in targets:
        _advance(solver, float(t))
        angles.append(float(solver.y[0]))
    return angles


def recessive_direction(coeffs: CoefficientField, t_max: float) -> np.ndarray:
    """M(T_max) 较小特征值对应的特征向量"""
    values, vectors = np.linalg.eigh(coeffs.matrix(t_max))
    gap = values[1] - values[0]
    if gap <= 1e-10 * max(1.0, float(np.max(np.abs(values)))):
        raise DegenerateDirection(f"eigenvalues of M({t_max:g}) coincide (gap {gap:.3g})", gap=float(gap))
    return vectors[:, 0]


def _bounded_angle(coeffs: CoefficientField, traj: Trajectory, t_mid: float, rel_tol: float) -> float:
    if t_mid <= traj.t_end:
        u, w = traj.state_at(t_mid)
        if math.isfinite(u) and math.isfinite(w) and (u or w):
            return math.atan2(w, u)
    # 轨道在 t_mid 之前爆破时改用角度方程
    u0, w0 = traj.states[0]
    return _angles(coeffs, math.atan2(w0, u0), float(traj.nodes[0]), [t_mid], rel_tol)[0]


def match_residuals(coeffs: CoefficientField, bounded: Sequence[Trajectory], t_mids: Sequence[float],
                    opts: Optional[SolverOptions] = None) -> List[MatchResult]:
    """一次后向打靶，在多个 t_mid 处给出匹配残差"""
    opts = opts or SolverOptions()
    if not bounded:
        raise PreconditionError("matching needs at least one bounded trajectory")
    v = recessive_direction(coeffs, opts.t_max)
    order = sorted(set(t_mids), reverse=True)
    far = dict(zip(order, _angles(coeffs, math.atan2(v[1], v[0]), opts.t_max, order, opts.rel_tol)))
    results = []
    for t_mid in t_mids:
        theta_far = far[t_mid]
        angles = tuple(_bounded_angle(coeffs, traj, t_mid, opts.rel_tol) for traj in bounded)
        if len(angles) == 2 and abs(math.sin(angles[0] - angles[1])) > 1e-8:
            residual = 0.0
        else:
            residual = abs(math.sin(angles[0] - theta_far))
        results.append(MatchResult(t_mid, residual, theta_far, angles))
    return results


def match_infinity(coeffs: CoefficientField, bounded: Sequence[Trajectory], t_mid: float,
                   opts: Optional[SolverOptions] = None) -> float:
    """|det[V₀ | V∞]| / (|V₀||V∞|) at t_mid"""
    return match_residuals(coeffs, bounded, [t_mid], opts)[0].residual
