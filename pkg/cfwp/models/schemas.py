from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Status = Literal["holds", "fails", "inconclusive"]
Condition = Literal["a", "b", "c", "a'", "b'", "c'", "int"]
VerdictLabel = Literal["no-L2", "candidate-L2", "inconclusive"]


# 几何相关模型
class AsymptoticHint(BaseModel):
    """剖面在 ∞ 处的渐近提示：power(p) 即 f ~ c·t^p，bounded-below(c) 即 f ≥ c > 0"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["power", "bounded-below", "none"] = "none"
    p: Optional[float] = None
    c: Optional[float] = None

    @model_validator(mode="after")
    def _check_fields(self) -> "AsymptoticHint":
        if self.kind == "power":
            if self.p is None:
                raise ValueError("power hint requires p")
            if self.c is not None and self.c <= 0:
                raise ValueError("power hint constant c must be positive")
        if self.kind == "bounded-below" and (self.c is None or self.c <= 0):
            raise ValueError("bounded-below hint requires c > 0")
        return self


class GeometryConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    m: int = Field(ge=1)
    alpha: str
    beta: str
    gamma: Optional[str] = None
    params: Dict[str, float] = Field(default_factory=dict)
    hints: Dict[Literal["alpha", "beta", "gamma"], AsymptoticHint] = Field(default_factory=dict)


class ModeConfig(BaseModel):
    """模式指标 (k, l, ε, λ)"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    k: int
    l: int = Field(ge=0)
    epsilon: Literal[-1, 1]
    lam: float = Field(alias="lambda")


class SweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k_range: Tuple[int, int]
    l_values: List[int] = Field(default_factory=lambda: [0])
    epsilon_values: List[Literal[-1, 1]] = Field(default_factory=lambda: [-1, 1])
    lambda_grid: List[float]

    @field_validator("k_range")
    @classmethod
    def _ordered(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] > value[1]:
            raise ValueError("k_range must be [lo, hi] with lo <= hi")
        return value


class SolverOptions(BaseModel):
    """积分与判定参数"""

    model_config = ConfigDict(extra="forbid")

    t_init: float = Field(default=1e-6, gt=0)
    t_max: float = Field(default=1e4, gt=0)
    rel_tol: float = Field(default=1e-10, gt=0, lt=1e-2)
    t_mid: List[float] = Field(default_factory=lambda: [1.0, 10.0])
    horizons: List[float] = Field(default_factory=lambda: [10.0, 1e2, 1e3, 1e4])
    min_nodes: int = Field(default=256, ge=2)
    probe_x: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _check_ranges(self) -> "SolverOptions":
        if self.t_init >= self.t_max:
            raise ValueError("t_init must be smaller than t_max")
        if not self.t_mid or any(not (self.t_init < t < self.t_max) for t in self.t_mid):
            raise ValueError("t_mid points must lie strictly inside (t_init, t_max)")
        if len(self.horizons) < 3 or sorted(self.horizons) != list(self.horizons):
            raise ValueError("horizons must be at least three increasing values")
        if self.horizons[-1] > self.t_max * (1 + 1e-12):
            raise ValueError("last horizon must not exceed t_max")
        return self


class ReparamOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    samples: int = Field(default=512, ge=2, le=200000)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out: Optional[str] = None
    csv_dir: Optional[str] = None


class RunConfig(BaseModel):
    """单文件运行配置"""

    model_config = ConfigDict(extra="forbid")

    geometry: GeometryConfig
    mode: Optional[ModeConfig] = None
    sweep: Optional[SweepConfig] = None
    solver: SolverOptions = Field(default_factory=SolverOptions)
    window: Optional[Tuple[float, float]] = None
    reparam: ReparamOptions = Field(default_factory=ReparamOptions)
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        m = self.geometry.m
        if self.mode is not None and self.mode.l > m - 1:
            raise ValueError(f"mode.l must lie in [0, {m - 1}]")
        if self.sweep is not None and any(l < 0 or l > m - 1 for l in self.sweep.l_values):
            raise ValueError(f"sweep.l_values must lie in [0, {m - 1}]")
        if self.window is not None and not (0.0 < self.window[0] < self.window[1]):
            raise ValueError("window must satisfy 0 < tmin < tmax")
        return self


# 报告相关模型
class HypothesisReport(BaseModel):
    condition: Condition
    status: Status
    evidence: List[Tuple[float, Optional[float]]] = Field(default_factory=list)
    narrative: str = ""


class ModeVerdict(BaseModel):
    mode: Optional[ModeConfig] = None
    hypotheses_ok: bool
    bounded_dim: int = Field(ge=0, le=2)
    l2_divergent: List[bool] = Field(default_factory=list)
    matching_residual: Optional[float] = None
    verdict: VerdictLabel
    p_increments: List[List[Optional[float]]] = Field(default_factory=list)
    evidence: Dict[str, Any] = Field(default_factory=dict)

    def grid_entry(self) -> Dict[str, Any]:
        return {
            "mode": self.mode.model_dump(by_alias=True) if self.mode is not None else None,
            "verdict": self.verdict,
            "residual": self.matching_residual,
            "boundedDim": self.bounded_dim,
            "p_increments": self.p_increments,
        }


class SweepSummary(BaseModel):
    total: int
    counts: Dict[str, int]
    fractions: Dict[str, str]
    kernel_empty: bool
    l2_index: Optional[int] = None
    worst_mode: Optional[Dict[str, Any]] = None
    hypotheses_ok: bool


class SweepReport(BaseModel):
    geometry: Dict[str, Any]
    hypotheses: List[HypothesisReport]
    grid: List[ModeVerdict]
    summary: SweepSummary
    generated_at: str

    def to_document(self) -> Dict[str, Any]:
        return {
            "geometry": self.geometry,
            "hypotheses": [r.model_dump() for r in self.hypotheses],
            "grid": [v.grid_entry() for v in self.grid],
            "summary": self.summary.model_dump(),
            "generated_at": self.generated_at,
        }


class IdentityCheck(BaseModel):
    name: str
    status: Literal["pass", "fail", "skipped"]
    residual: Optional[float] = None
    threshold: float
    detail: str = ""


class IdentityReport(BaseModel):
    geometry: Dict[str, Any]
    mode: ModeConfig
    checks: List[IdentityCheck]
    all_passed: bool


class ReparamTable(BaseModel):
    s: List[float]
    alpha: List[float]
    beta: List[float]
