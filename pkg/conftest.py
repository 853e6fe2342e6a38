"""
测试公共配置：注册slow标记，提供常用参数点
"""

import numpy as np
import pytest

from model_core import ModelParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 大规模验收实验，运行时间以分钟计")


@pytest.fixture
def rng():
    """固定种子的Philox随机数生成器"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(12345)))


@pytest.fixture
def regular_params():
    return ModelParams(p=2, q=2, beta=0.5, h=0.0)


@pytest.fixture
def critical_params():
    # h=0且β>β_c=1，两个对称极大值点
    return ModelParams(p=2, q=2, beta=1.5, h=0.0)


@pytest.fixture
def cache_dir(tmp_path, monkeypatch):
    """把精确分布缓存指向临时目录"""
    monkeypatch.setenv("POTTS_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path / "cache"
