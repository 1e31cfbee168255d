import numpy as np
import pytest
from hypothesis import settings

from prada import presets
from prada.link import FerTable, SettingTable, active_mask
from prada.simulator import LinkSystem

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref_settings():
    return presets.settings()


@pytest.fixture(scope="session")
def ref_fer():
    return presets.fer_table()


@pytest.fixture(scope="session")
def ref_channel():
    return presets.channel(4.0)


@pytest.fixture(scope="session")
def ref_system(ref_settings, ref_fer):
    return LinkSystem(ref_settings, ref_fer, active_mask(7, presets.SILENT_STATES))


def random_stochastic(rng, n):
    P = rng.random((n, n)) + 0.05
    return P / P.sum(axis=1, keepdims=True)


def toy_settings(rates):
    return SettingTable.from_records(
        {"label": f"t{r}", "frame_symbols": 100, "data_bits_per_frame": k} for r, k in enumerate(rates)
    )


def toy_fer(rng, R, N):
    """Random FER table that is non-increasing down the setting axis."""
    return FerTable(np.sort(rng.random((R, N)), axis=0)[::-1].copy())


def toy_channel(P):
    """Channel wrapper around an arbitrary stochastic matrix (partition is nominal)."""
    from prada.channel import FsmcChannel, SnrPartition

    P = np.array(P, dtype=float)
    n = P.shape[0]
    w, v = np.linalg.eig(P.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    pi = pi / pi.sum()
    part = SnrPartition((0.0, *np.arange(1.0, n), np.inf))
    return FsmcChannel(part, 1.0, 1.0, 1.0, pi, P)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion."""

    def record(label: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
