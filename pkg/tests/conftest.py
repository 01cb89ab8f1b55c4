import json
from pathlib import Path

import numpy as np
import pytest

from lcvx import rocket
from lcvx.ocp import CostSpec, InputChannel, RunningTerm, SemiContinuousOCP, relax

ROOT = Path(__file__).resolve().parents[1]

# filled by the acceptance tests, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def record(criterion: int, ok: bool, detail: str) -> str:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def double_integrator(x0=(0.0, 0.0), target=(0.0, 0.0), zeta=1, rho=(1.0, 2.0), K=1,
                      channels=None):
    """1-D double integrator, one upward-only channel unless given."""
    if channels is None:
        channels = [InputChannel(rho[0], rho[1], np.array([[-1.0]]))]
    return SemiContinuousOCP(
        A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]], w=[0.0, 0.0], channels=channels,
        K=K, x0=list(x0), E=np.eye(2), target=list(target), cost=CostSpec(zeta=zeta))


def reach_toy():
    """x' = u, u in {0} U [1, 2] and u >= 0, reach x = 3 in 2 s, cost int(sigma + |x|)."""
    return SemiContinuousOCP(
        A=[[0.0]], B=[[1.0]], w=[0.0], channels=[InputChannel(1.0, 2.0, [[-1.0]])], K=1,
        x0=[0.0], E=[[1.0]], target=[3.0],
        cost=CostSpec(zeta=1, running=[RunningTerm(1.0, [1.0])]))


@pytest.fixture
def at_target():
    return double_integrator()


@pytest.fixture
def at_target_relaxed(at_target):
    return relax(at_target)


@pytest.fixture(scope="session")
def rocket_cfg():
    return rocket.RocketConfig.from_dict(json.loads((ROOT / "configs" / "rocket_default.json")
                                                    .read_text()))


_CASES: dict = {}


def cached_case(cfg):
    """run_case memoized over the session; reference cases are shared across files."""
    key = (cfg.h0, cfg.zeta, cfg.N, cfg.K)
    if key not in _CASES:
        _CASES[key] = rocket.run_case(cfg)
    return _CASES[key]


@pytest.fixture(scope="session")
def case_800_zeta0(rocket_cfg):
    return cached_case(rocket_cfg.replace(h0=800.0, zeta=0))


@pytest.fixture(scope="session")
def rocket_800_fixed(rocket_cfg):
    """h0 = 800, zeta = 0 solved at the published final time (single solve)."""
    from lcvx.driver import solve_fixed_tf
    from lcvx.transcription import transcribe

    relaxed = relax(rocket.build_rocket_ocp(rocket_cfg))
    sol = solve_fixed_tf(relaxed, rocket_cfg.N, 46.93)
    return relaxed, transcribe(relaxed, rocket_cfg.N, 46.93), sol
