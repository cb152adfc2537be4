from __future__ import annotations

import warnings

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_rank_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*rank.*truncating.*")
        yield


def match_up_to_sign(A: np.ndarray, B: np.ndarray) -> float:
    """Largest columnwise deviation between A and +/-B."""
    return float(np.min([np.abs(A - B).max(axis=0), np.abs(A + B).max(axis=0)], axis=0).max())


_acceptance: dict[int, tuple[str, str, float]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when != "call" and report.passed:
        return
    n = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
    detail = dict(report.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = report.longreprtext.strip().splitlines()[-1][:160] if report.longreprtext else ""
    _acceptance[n] = ("PASS" if report.passed else "FAIL", detail, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        status, detail, dur = _acceptance[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  ({dur:.2f} s)  {detail}")
