from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .routers import analysis
from .settings import configure_logging, get_settings

configure_logging(get_settings().log_level)

# 创建FastAPI应用
app = FastAPI(
    title="CFWP Dirac API",
    description="CFWP 度量上 Dirac 算子径向模式的 L² 分析",
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc",
)

# 配置CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# 注册路由
app.include_router(analysis.router)


@app.get("/health")
async def health_check():
    """健康检查"""
    return {"status": "healthy", "version": __version__}
