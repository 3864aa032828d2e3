
import numpy as np
import pytest

from nuqsearch.explorer import (
    MAX_GAIN, Budget, CandidatePool, SearchConfig, info_gain, information_gains, read_history, run_search,
    score_table, select_action,
)
from nuqsearch.mtgp import GPModel, TaskSet
from nuqsearch.objective import ObjectiveResult, Status, SyntheticObjective

from oracles import gaussian_entropy


def random_scenario(rng, m=3, d=2, n=6, pool=5):
    L = np.tril(rng.normal(size=(m, m)))
    L[np.diag_indices(m)] = np.abs(L[np.diag_indices(m)]) + 0.2
    X = rng.uniform(size=(n, d))
    model = GPModel(rng.uniform(0.1, 1.0, d), L, rng.uniform(1e-4, 0.1, m), X=X,
                    tasks=rng.integers(1, m + 1, n), y=rng.normal(size=n))
    return model, CandidatePool(rng.uniform(size=(pool, d)))


def dense_gain(model, x, task, pool):
    """I(y; f_m(pool)) = H(y) + H(f) - H(y, f) from one joint Gaussian."""
    P = pool.points
    pts = np.vstack([np.atleast_2d(x), P])
    tq = np.concatenate([[task], np.full(len(P), model.m)])
    _, joint = model.latent_posterior(pts, tq, full_cov=True)
    joint[0, 0] += model.noise_normalized[task - 1]
    return gaussian_entropy(joint[:1, :1]) + gaussian_entropy(joint[1:, 1:]) - gaussian_entropy(joint)


class TestInformationGain:
    def test_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            model, pool = random_scenario(rng)
            g = information_gains(model, rng.uniform(size=(5, 2)), rng.integers(1, 4, 5), pool)
            assert np.all(g >= 0)

    def test_matches_dense_entropy(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            model, _ = random_scenario(rng, pool=4)
            pool = CandidatePool(np.array([[0.1, 0.1], [0.1, 0.9], [0.9, 0.1], [0.9, 0.9]]))
            x, task = rng.uniform(size=2), int(rng.integers(1, 4))
            assert info_gain(model, x, task, pool) == pytest.approx(dense_gain(model, x, task, pool), abs=1e-8)

    def test_independent_tasks(self):
        rng = np.random.default_rng(2)
        model = GPModel([0.3, 0.3], np.diag([1.0, 0.7, 1.2]), [0.01, 0.01, 0.01], X=rng.uniform(size=(5, 2)),
                        tasks=[1, 2, 3, 1, 3], y=rng.normal(size=5))
        pool = CandidatePool(rng.uniform(size=(16, 2)))
        for task in (1, 2):
            assert np.max(information_gains(model, rng.uniform(size=(10, 2)), task, pool)) <= 1e-8

    def test_noise_free_target_hit_is_capped(self):
        model = GPModel([0.3], [[1.0]], [0.0])
        pool = CandidatePool(np.array([[0.2], [0.8]]))
        assert info_gain(model, [0.2], 1, pool) == pytest.approx(MAX_GAIN)

    def test_observed_point_has_less_gain(self):
        model = GPModel([0.3], [[1.0]], [1e-2], X=[[0.5]], tasks=[1], y=[1.0])
        pool = CandidatePool.build(1, 33)
        assert info_gain(model, [0.5], 1, pool) < info_gain(model, [0.0], 1, pool)


class TestSelection:
    def test_brute_force_argmax(self):
        rng = np.random.default_rng(3)
        tasks = TaskSet.from_epochs([0, 1, 5])
        for _ in range(5):
            model, pool = random_scenario(rng, pool=12)
            best = max(((info_gain(model, x, l, pool) / tasks.costs[l - 1], l, tuple(x))
                        for x in pool.points for l in (1, 2, 3)), key=lambda k: (k[0], k[1]))
            choice = select_action(model, pool, tasks)
            assert choice.score == pytest.approx(best[0], rel=1e-9)
            assert choice.task == best[1]

    def test_cheaper_equal_information_wins(self):
        # fully correlated tasks with equal noise: same gain, so cost decides
        model = GPModel([0.3], [[1.0, 0.0], [1.0, 1e-3]], [1e-3, 1e-3])
        tasks = TaskSet((0, 1), (1.0, 10.0), (1e-3, 1e-3))
        choice = select_action(model, CandidatePool.build(1, 17), tasks)
        assert choice.task == 1

    def test_unaffordable_tasks_excluded(self):
        model = GPModel([0.3], [[1.0, 0.0], [0.1, 1.0]], [1e-3, 1e-3])
        tasks = TaskSet((0, 1), (1.0, 10.0), (1e-3, 1e-3))
        choice = select_action(model, CandidatePool.build(1, 17), tasks, Budget(5.0))
        assert choice.task == 1

    def test_tie_prefers_higher_task_then_smaller_x(self):
        # identical tasks, mirror-image pool: every action carries the same information
        model = GPModel([0.3], [[1.0, 0.0], [1.0, 0.0]], [1e-3, 1e-3])
        tasks = TaskSet((0, 1), (1.0, 1.0), (1e-3, 1e-3))
        pool = CandidatePool(np.array([[0.9], [0.1]]))
        gains, _ = score_table(model, pool, tasks)
        assert np.all(gains == gains[0, 0])
        choice = select_action(model, pool, tasks)
        assert choice.task == 2 and choice.x == (0.1,)


class TestPool:
    def test_grid_in_one_dimension(self):
        assert np.allclose(CandidatePool.build(1, 5).points[:, 0], [0, 0.25, 0.5, 0.75, 1])

    def test_sobol_covers_cube(self):
        pool = CandidatePool.build(3, 1024, seed=1)
        counts = np.histogramdd(pool.points, bins=(4, 4, 4), range=[(0, 1)] * 3)[0]
        assert counts.min() >= 8

    def test_maximin_starts_central_and_spreads(self):
        pool = CandidatePool.build(1, 11)
        idx = pool.maximin_subset(3)
        assert sorted(pool.points[idx, 0].tolist()) == [0.0, 0.5, 1.0]


def _demo_setup(seed_noise=1e-4):
    tasks = TaskSet((0, 1, 2, 15), (1.0, 1.0, 2.0, 15.0), (seed_noise,) * 4)
    return tasks, SyntheticObjective(tasks, w_opt=[0.7]), CandidatePool.build(1, 256)


class TestSearch:
    def test_budget_accounting(self):
        tasks, obj, pool = _demo_setup()
        res = run_search(obj, tasks, pool, Budget(30.0), seed=0, config=SearchConfig(n_layers=8))
        assert sum(h["cost"] for h in res.history) == pytest.approx(res.budget.spent)
        assert res.budget.spent <= 30.0
        assert res.history[-1]["cumulative_cost"] == res.budget.spent

    def test_zero_budget_keeps_initial_design(self):
        tasks, obj, pool = _demo_setup()
        res = run_search(obj, tasks, pool, Budget(0.0), seed=0)
        assert [h["phase"] for h in res.history] == ["init"] * 3
        assert res.model.n_train == 3

    def test_max_evaluations(self):
        tasks, obj, pool = _demo_setup()
        res = run_search(obj, tasks, pool, Budget(100.0, max_evaluations=6), seed=0)
        assert len(res.history) == 6

    def test_deterministic_history(self, tmp_path):
        tasks, obj, pool = _demo_setup()
        for name in ("a", "b"):
            run_search(obj, tasks, pool, Budget(20.0), seed=5,
                       config=SearchConfig(history_path=tmp_path / f"{name}.jsonl"))
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_resume_matches_uninterrupted(self, tmp_path):
        tasks, obj, pool = _demo_setup()
        full = tmp_path / "full.jsonl"
        run_search(obj, tasks, pool, Budget(25.0), seed=2, config=SearchConfig(history_path=full))
        part = tmp_path / "part.jsonl"
        lines = full.read_text().splitlines(keepends=True)
        part.write_text("".join(lines[:9]))
        _, records = read_history(part)
        run_search(obj, tasks, pool, Budget(25.0), seed=2, config=SearchConfig(history_path=part), resume=records)
        assert part.read_bytes() == full.read_bytes()

    def test_failures_are_charged_not_observed(self):
        tasks, obj, pool = _demo_setup()
        calls = []

        def flaky(req):
            calls.append(req)
            if len(calls) % 4 == 0:
                return ObjectiveResult(None, 0.0, Status.FAILED, "diverged")
            return obj(req)

        res = run_search(flaky, tasks, pool, Budget(20.0), seed=0)
        failed = [h for h in res.history if h["status"] == "FAILED"]
        assert failed and all(h["y"] is None and h["message"] == "diverged" for h in failed)
        assert len(res.observations) == len(res.history) - len(failed)
        assert res.budget.spent == pytest.approx(sum(h["cost"] for h in res.history))

    def test_newer_history_refused(self, tmp_path):
        p = tmp_path / "h.jsonl"
        p.write_text('{"schema": "nuqsearch.history", "schema_version": "2.0"}\n')
        with pytest.raises(ValueError, match="newer"):
            read_history(p)

    def test_finds_optimum(self):
        tasks, obj, pool = _demo_setup()
        res = run_search(obj, tasks, pool, Budget(30.0), seed=1)
        mean = res.model.predict(pool.points, tasks.target).mean
        assert abs(pool.points[int(np.argmax(mean)), 0] - 0.7) <= 0.05
