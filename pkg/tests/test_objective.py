import sys

import numpy as np
import pytest

from nuqsearch.mtgp import TaskSet
from nuqsearch.objective import (
    ExternalObjective, ObjectiveRequest, ObjectiveResult, Status, SurrogateObjective, SyntheticObjective,
    parse_response,
)

TASKS = TaskSet.from_epochs([0, 1, 2, 15])


def req(bits=(4, 4), w=(0.5,), task=4, seed=0):
    return ObjectiveRequest(tuple(bits), tuple(w), task, TASKS.epochs[task - 1], seed)


class TestSynthetic:
    def test_optimum_on_target(self):
        obj = SyntheticObjective(TASKS, w_opt=[0.7])
        assert obj(req(w=(0.7,))).accuracy == pytest.approx(0.9)
        assert obj(req(w=(0.2,))).accuracy == pytest.approx(0.9 - 0.5 * 0.25)

    def test_lower_fidelity_offset_and_shared_argmax(self):
        obj = SyntheticObjective(TASKS, w_opt=[0.7])
        grid = np.linspace(0, 1, 101)
        for task in range(1, 5):
            vals = [obj.mean([w], task) for w in grid]
            assert grid[int(np.argmax(vals))] == pytest.approx(0.7)
        assert obj.mean([0.7], 1) == pytest.approx(0.9 - 3 * 0.02)

    def test_noise_is_keyed_on_request(self):
        obj = SyntheticObjective(TaskSet.from_epochs([0, 1], noise=1e-3), w_opt=[0.5])
        r = ObjectiveRequest((4,), (0.3,), 1, 0, 7)
        assert obj(r).accuracy == obj(r).accuracy
        assert obj(r).accuracy != obj(ObjectiveRequest((4,), (0.3,), 1, 0, 8)).accuracy


class TestSurrogate:
    def test_monotone_in_bits(self):
        rng = np.random.default_rng(0)
        layers = [rng.standard_normal((8, 64, 3, 3)) for _ in range(3)]
        obj = SurrogateObjective(TASKS, layers)
        acc = [obj(req(bits=(b,) * 3)).accuracy for b in range(1, 9)]
        assert all(a < b for a, b in zip(acc, acc[1:]))

    def test_wrong_layer_count_fails(self):
        obj = SurrogateObjective(TASKS, [np.ones((2, 32))])
        res = obj(req(bits=(4, 4)))
        assert res.status is Status.FAILED and res.accuracy is None


STUB_OK = "import sys, json; r = json.loads(sys.stdin.readline()); print('log line'); " \
          "print(json.dumps({'accuracy': 0.5 + 0.01 * sum(r['bits']), 'cost_seconds': 1.5}))"


class TestExternal:
    def test_echo(self):
        res = ExternalObjective([sys.executable, "-c", STUB_OK])(req(bits=(4, 4)))
        assert res.ok and res.accuracy == pytest.approx(0.58) and res.cost_actual == 1.5

    def test_nonzero_exit(self):
        res = ExternalObjective([sys.executable, "-c", "import sys; sys.exit(1)"])(req())
        assert res.status is Status.FAILED and "exit code 1" in res.message

    def test_timeout(self):
        res = ExternalObjective([sys.executable, "-c", "import time; time.sleep(5)"], timeout=0.3)(req())
        assert res.status is Status.TIMEOUT

    def test_missing_command(self):
        assert ExternalObjective(["/nonexistent/trainer"])(req()).status is Status.FAILED

    @pytest.mark.parametrize("out", ["", "not json", '{"acc": 1}', '{"accuracy": 1.5}', '{"accuracy": NaN}'])
    def test_bad_responses(self, out):
        assert parse_response(out).status is Status.FAILED


class TestResult:
    def test_consistency(self):
        with pytest.raises(ValueError):
            ObjectiveResult(None, 0.0, Status.OK)
        with pytest.raises(ValueError):
            ObjectiveResult(0.5, 0.0, Status.FAILED)
        with pytest.raises(ValueError):
            ObjectiveResult(1.2)
