import numpy as np
import pytest

from occrobnet.config import RunConfig
from occrobnet.gradcheck import (GROUPS, TARGET, TOLERANCE, format_report, group_of, relative_error,
                                 run_gradcheck)
from occrobnet.model import OccRobNet

TINY = RunConfig(channels=8, d_model=32, ffn_dim=32, enc_layers=1, dec_layers=1)


@pytest.fixture(scope="module")
def results():
    return run_gradcheck(TINY, samples=3)


def test_every_parameter_belongs_to_a_group():
    names = [n for n, _ in OccRobNet(TINY).named_parameters()]
    assert all(group_of(n) is not None for n in names)
    assert {group_of(n) for n in names} == {g for g, _ in GROUPS}


def test_tiny_model_passes_at_target(results):
    assert [r.group for r in results] == [g for g, _ in GROUPS]
    for r in results:
        assert r.n_checked == 4
        assert r.max_rel_error <= TARGET, r


def test_corrupted_gradient_is_caught():
    def corrupt(name, grad):
        if name.startswith("ciet_object."):
            grad *= 1.5

    results = {r.group: r for r in run_gradcheck(TINY, samples=2, corrupt=corrupt)}
    assert not results["ciet_object"].passed
    assert results["ciet_object"].max_rel_error > TOLERANCE
    assert results["backbone"].passed


def test_relative_error_floor():
    assert relative_error(1e-9, 0.0) == pytest.approx(1e-7)
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert np.all(relative_error(np.ones(3), np.ones(3)) == 0)


def test_report_format(results):
    lines = format_report(results).splitlines()
    assert lines[0].startswith("group,") and len(lines) == len(results) + 1
    assert all(line.endswith(",pass") for line in lines[1:])
