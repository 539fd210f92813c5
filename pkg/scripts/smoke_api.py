#!/usr/bin/env python3
"""
API冒烟测试脚本
对运行中的服务依次调用各个分析接口
"""

import json
import sys
from pathlib import Path

import httpx

BASE_URL = "http://localhost:8000"
CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def load(name):
    return json.loads((CONFIG_DIR / name).read_text(encoding="utf-8"))


def test_health(client):
    """测试健康检查接口"""
    print("🔍 测试健康检查接口...")
    response = client.get("/health")
    if response.status_code == 200:
        print("✅ 健康检查通过")
        return True
    print(f"❌ 健康检查失败: {response.status_code}")
    return False


def test_check(client):
    """测试几何条件检查"""
    print("\n📐 测试几何条件检查...")
    response = client.post("/analysis/check", json=load("iwai-katayama.json"))
    if response.status_code == 200:
        print(f"✅ 条件检查完成: {response.json()['aggregate']}")
        return True
    print(f"❌ 条件检查失败: {response.status_code} - {response.text}")
    return False


def test_solve_mode(client):
    """测试单模式判定"""
    print("\n🧮 测试单模式判定...")
    response = client.post("/analysis/solve-mode", json=load("euclidean.json"))
    if response.status_code == 200:
        body = response.json()
        print(f"✅ 判定结果: {body['verdict']} (残差 {body['matching_residual']})")
        return True
    print(f"❌ 判定失败: {response.status_code} - {response.text}")
    return False


def test_lemmas(client):
    """测试恒等式检查"""
    print("\n🧪 测试恒等式检查...")
    response = client.post("/analysis/lemmas", json=load("euclidean.json"))
    if response.status_code == 200:
        body = response.json()
        for check in body["checks"]:
            print(f"   {check['name']}: {check['status']} ({check['residual']})")
        print("✅ 全部通过" if body["all_passed"] else "❌ 存在失败项")
        return body["all_passed"]
    print(f"❌ 恒等式检查失败: {response.status_code} - {response.text}")
    return False


def main():
    print("🚀 开始API冒烟测试...")
    try:
        with httpx.Client(base_url=BASE_URL, timeout=120.0) as client:
            results = [test_health(client), test_check(client), test_solve_mode(client), test_lemmas(client)]
    except httpx.HTTPError as e:
        print(f"❌ 连接失败: {str(e)}")
        return 1
    print(f"\n📊 {sum(results)}/{len(results)} 项通过")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
