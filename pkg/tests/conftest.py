import numpy as np
import pytest

from fmtss.framing import build_alphabet, encode
from fmtss.waveform import WaveformConfig, build_contiguous_plan, build_prototype, optimize_gains, place_subcarriers


def make_plan(u: int, placement: str = "segmented-random", seed: int = 0, K: int = 32, optimize: bool = True):
    cfg = WaveformConfig(K=K, u=u)
    plan = build_contiguous_plan(cfg) if u == 1 else place_subcarriers(cfg, placement, seed)
    return optimize_gains(plan) if optimize else plan


def random_frame(K: int = 32, n_bits: int = 128, seed: int = 0, Z: int = 16, M_d: int = 4):
    bits = np.random.default_rng(seed).integers(0, 2, n_bits)
    return encode(bits, build_alphabet(K, M_d), Z)


@pytest.fixture(scope="session")
def protos():
    """Prototype filters by ``u`` for K=32."""
    return {u: build_prototype(WaveformConfig(u=u)) for u in (1, 2, 4, 8)}


# one (number, title, passed, detail) entry per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
    ACCEPTANCE.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE):
        terminalreporter.write_line(line)
