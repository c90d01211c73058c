import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nlmcflow.events_io import EventVolume, normalize_window
from nlmcflow.synth_eval import SceneSpec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# 64 firing edge rows; 50k signal events per window
EDGE_DENSITY = 50_000 / 64
# 150 texture dots; 50k signal events per window
TEXTURE_DENSITY = 50_000 / 150


def edge_spec(seed: int = 0, noise: float = 0.0, vx: float = 10.0, vy: float = 0.0) -> SceneSpec:
    return SceneSpec(pattern="edge", vx=vx, vy=vy, density=EDGE_DENSITY, noise=noise, seed=seed)


def rotation_spec(seed: int = 0, omega: float = 0.3) -> SceneSpec:
    return SceneSpec(pattern="random_texture", omega=omega, density=TEXTURE_DENSITY, seed=seed)


def random_volume(rng: np.random.Generator, n: int, width: int = 32, height: int = 24) -> EventVolume:
    """Normalized volume of uniformly scattered events."""
    return normalize_window(EventVolume.from_arrays(
        rng.integers(0, width, n), rng.integers(0, height, n), rng.integers(0, 10_000, n),
        rng.choice([-1, 1], n), width, height, 0, 10_000))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, description), filled by test_acceptance.py
ACCEPTANCE = {}


def report(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), f"{title}: {detail}")
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, text = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d}. {text}")
