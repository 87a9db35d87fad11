import numpy as np
import pytest

from depth_router_lab.depth import DepthMap
from depth_router_lab.env import AgentEnv, PreparedSample
from depth_router_lab.experts import ErrorParams, ExpertProfile, Family, default_pool
from depth_router_lab.scenes import CameraDomain, Scene, SceneSpec, generate_scene

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def record_criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def const_map(value, h=4, w=5):
    return DepthMap.constant(value, h, w)


def make_sample(domain=CameraDomain.PERSPECTIVE, scene=Scene.INDOOR, seed=7, w=16, h=12, **kw):
    return generate_scene(SceneSpec(domain, scene, seed, w, h), **kw)


def flat_expert(eid, family=Family.PERSPECTIVE, bias=0.0, sigma=0.0, cycles=2.0, outliers=0.0, rho=0.4):
    p = ErrorParams(bias, sigma, cycles, outliers)
    return ExpertProfile(eid, family, {d: p for d in CameraDomain}, rho)


@pytest.fixture(scope="session")
def pool():
    return default_pool()


@pytest.fixture(scope="session")
def env(pool):
    return AgentEnv(pool)


@pytest.fixture
def prepared(pool):
    return PreparedSample(make_sample(), pool)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
