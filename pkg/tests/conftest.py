import functools

import numpy as np
import pytest

from latentdepth import synth
from latentdepth.codec import encode


@functools.lru_cache(maxsize=None)
def suite_scene(suite, h=48, w=64, seed=0):
    return synth.make_suite(suite, (h, w), seed)


@functools.lru_cache(maxsize=None)
def suite_views(suite, h=48, w=64, seed=0):
    return synth.views(suite_scene(suite, h, w, seed))


def gt_alpha(depths):
    return np.array([d.d[d.valid].mean() for d in depths])


def gt_rho(depths):
    return [encode(d, a).rho for d, a in zip(depths, gt_alpha(depths))]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def record_acceptance(number, ok, detail):
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
