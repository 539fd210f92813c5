import logging
from typing import Any, Dict

from fastapi import APIRouter, Depends, HTTPException

from ..errors import CfwpError
from ..models.schemas import IdentityReport, ModeVerdict, ReparamTable, RunConfig
from ..services.geometry import PRESETS, GeometryService
from ..services.hypotheses import HypothesisService
from ..services.verdict import VerdictService
from ..settings import DEFAULT_WINDOW, Settings, get_settings

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/analysis", tags=["analysis"])


def _window(config: RunConfig, settings: Settings):
    if settings.window_overridden():
        return settings.window_bounds
    return tuple(config.window) if config.window is not None else DEFAULT_WINDOW


def _service(config: RunConfig, settings: Settings) -> VerdictService:
    solver = config.solver
    if "rel_tol" not in solver.model_fields_set:
        solver = solver.model_copy(update={"rel_tol": settings.rel_tol})
    return VerdictService(solver)


def _fail(exc: CfwpError):
    logger.warning("analysis request rejected: %s", exc.detail)
    raise HTTPException(status_code=exc.status_code, detail=exc.to_dict())


@router.get("/presets")
def list_presets() -> Dict[str, Any]:
    """预设几何及其所需参数"""
    return {
        name: {
            "alpha": spec["alpha"],
            "beta": spec["beta"],
            "gamma": spec["gamma"],
            "required": list(spec["required"]),
        }
        for name, spec in PRESETS.items()
    }


@router.post("/check")
def check_hypotheses(config: RunConfig, settings: Settings = Depends(get_settings)):
    """检查消失定理的几何条件"""
    try:
        geom = GeometryService.from_config(config.geometry, _window(config, settings))
        reports = HypothesisService.check_all(geom, config.solver.probe_x)
    except CfwpError as exc:
        _fail(exc)
    return {"geometry": geom.descriptor(), "hypotheses": reports,
            "aggregate": HypothesisService.aggregate(reports)}


@router.post("/solve-mode", response_model=ModeVerdict)
def solve_mode(config: RunConfig, settings: Settings = Depends(get_settings)):
    """单个模式的判定"""
    if config.mode is None:
        raise HTTPException(status_code=422, detail="请求缺少 mode 字段")
    try:
        geom = GeometryService.from_config(config.geometry, _window(config, settings))
        return _service(config, settings).classify_mode(geom, config.mode)
    except CfwpError as exc:
        _fail(exc)


@router.post("/lemmas", response_model=IdentityReport)
def verify_identities(config: RunConfig, settings: Settings = Depends(get_settings)):
    """恒等式检查"""
    if config.mode is None:
        raise HTTPException(status_code=422, detail="请求缺少 mode 字段")
    try:
        geom = GeometryService.from_config(config.geometry, _window(config, settings))
        return _service(config, settings).verify_identities(geom, config.mode)
    except CfwpError as exc:
        _fail(exc)


@router.post("/reparam", response_model=ReparamTable)
def reparametrize(config: RunConfig, settings: Settings = Depends(get_settings)):
    try:
        geom = GeometryService.from_config(config.geometry, _window(config, settings))
        s, alpha, beta = GeometryService.reparametrize(geom).table(config.reparam.samples)
    except CfwpError as exc:
        _fail(exc)
    return ReparamTable(s=s.tolist(), alpha=alpha.tolist(), beta=beta.tolist())


@router.post("/sweep")
def sweep_modes(config: RunConfig, settings: Settings = Depends(get_settings)):
    """模式网格扫描（在请求线程内顺序执行）"""
    if config.sweep is None:
        raise HTTPException(status_code=422, detail="请求缺少 sweep 字段")
    try:
        report = _service(config, settings).sweep(config.geometry, config.sweep, _window(config, settings), jobs=1)
    except CfwpError as exc:
        _fail(exc)
    return report.to_document()
