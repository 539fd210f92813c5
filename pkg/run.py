#!/usr/bin/env python3
"""
CFWP Dirac API 启动脚本
"""

import os
import sys
import uvicorn
from pathlib import Path

# 添加项目根目录到Python路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

def main():
    """启动应用"""
    # 设置环境变量
    os.environ.setdefault("CFWP_DEBUG", "true")
    os.environ.setdefault("CFWP_PORT", "8000")
    os.environ.setdefault("CFWP_LOG_LEVEL", "INFO")

    from cfwp.settings import get_settings
    settings = get_settings()

    # 开发环境配置
    if settings.debug:
        print("🚀 启动开发服务器...")
        uvicorn.run(
            "cfwp.main:app",
            host=settings.host,
            port=settings.port,
            reload=True,
            reload_dirs=[str(project_root / "cfwp")]
        )
    else:
        print("🚀 启动生产服务器...")
        uvicorn.run(
            "cfwp.main:app",
            host=settings.host,
            port=settings.port,
            workers=4
        )

if __name__ == "__main__":
    main()
