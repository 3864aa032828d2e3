import json
import math

import numpy as np
import pytest
from scipy.optimize import approx_fprime

from nuqsearch.mtgp import (
    FitConfig, GPModel, Observation, TaskSet, _Packing, _neg_lml_and_grad, _per_dim_sq_diff,
    build_train_covariance, fit,
)

from oracles import dense_gp_posterior, se_kernel


def random_model(rng, m=3, d=2, n=12, noise=None, jitter_rel=0.0):
    L = np.tril(rng.normal(size=(m, m)))
    L[np.diag_indices(m)] = np.abs(L[np.diag_indices(m)]) + 0.3
    noise = rng.uniform(0.01, 0.1, m) if noise is None else np.full(m, noise)
    X = rng.uniform(size=(n, d))
    t = rng.integers(1, m + 1, n)
    y = rng.normal(size=n)
    return GPModel(rng.uniform(0.2, 1.0, d), L, noise, X=X, tasks=t, y=y, normalize=False, jitter_rel=jitter_rel)


class TestKernel:
    def test_entry(self):
        model = GPModel([0.5], [[1.0, 0.0], [0.6, 0.8]], [0.0, 0.0])
        # Kf[0,1] = 0.6; r^2 = (0.3/0.5)^2
        assert model.kernel_entry([0.1], 1, [0.4], 2) == pytest.approx(0.6 * math.exp(-0.5 * 0.36), abs=1e-15)

    def test_task_covariance_psd_from_factor(self):
        model = random_model(np.random.default_rng(0))
        assert np.all(np.linalg.eigvalsh(model.task_covariance) > 0)

    def test_dimension_mismatch(self):
        model = GPModel([0.5, 0.5], [[1.0]], [0.0])
        with pytest.raises(ValueError):
            model.kernel_entry([0.1], 1, [0.2, 0.3], 1)

    def test_complete_grid_is_kronecker(self):
        rng = np.random.default_rng(1)
        m, d, n = 3, 2, 5
        L = np.tril(rng.normal(size=(m, m))) + 2 * np.eye(m)
        noise = np.array([0.01, 0.02, 0.05])
        Xg = rng.uniform(size=(n, d))
        ell = np.array([0.4, 0.7])
        obs = [Observation(tuple(x), l, 0.0) for l in range(1, m + 1) for x in Xg]
        model = GPModel(ell, L, noise)
        K = build_train_covariance(obs, model, jitter=0.0)
        ref = np.kron(L @ L.T, se_kernel(Xg, Xg, ell)) + np.kron(np.diag(noise), np.eye(n))
        assert np.max(np.abs(K - ref)) <= 1e-12


class TestPosterior:
    def test_two_point_closed_form(self):
        # one task, k(x, x') = exp(-r^2/2); posterior mean at x* from two observations
        model = GPModel([1.0], [[1.0]], [0.0], X=[[0.0], [1.0]], tasks=[1, 1], y=[1.0, -1.0],
                        normalize=False, jitter_rel=0.0)
        k = math.exp(-0.5)
        K = np.array([[1, k], [k, 1]])
        ks = np.array([math.exp(-0.5 * 0.25), math.exp(-0.5 * 0.25)])
        post = model.predict([[0.5]], 1)
        assert post.mean[0] == pytest.approx(ks @ np.linalg.solve(K, [1.0, -1.0]), abs=1e-12)
        assert post.var[0] == pytest.approx(1 - ks @ np.linalg.solve(K, ks), abs=1e-12)

    def test_single_task_matches_dense_reference(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            d = 1 + seed % 3
            n = 8 + seed % 7
            ell = rng.uniform(0.2, 1.0, d)
            a = rng.uniform(0.5, 2.0)
            nz = rng.uniform(1e-3, 1e-1)
            X, Xq = rng.uniform(size=(n, d)), rng.uniform(size=(6, d))
            y = rng.normal(size=n)
            model = GPModel(ell, [[a]], [nz], X=X, tasks=np.ones(n), y=y, normalize=False, jitter_rel=0.0)
            post = model.predict(Xq, 1, full_cov=True)
            mean, cov = dense_gp_posterior(a * a * se_kernel(X, X, ell), a * a * se_kernel(X, Xq, ell),
                                           a * a * se_kernel(Xq, Xq, ell), y, np.full(n, nz))
            assert np.max(np.abs(post.mean - mean)) <= 1e-10
            assert np.max(np.abs(post.cov - cov)) <= 1e-10

    def test_independent_tasks_decouple(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(10, 1))
        t = np.array([1, 2] * 5)
        y = rng.normal(size=10)
        joint = GPModel([0.4], np.diag([1.0, 1.5]), [0.01, 0.02], X=X, tasks=t, y=y, normalize=False, jitter_rel=0.0)
        alone = GPModel([0.4], [[1.5]], [0.02], X=X[t == 2], tasks=np.ones(5), y=y[t == 2], normalize=False,
                        jitter_rel=0.0)
        Xq = np.linspace(0, 1, 7)[:, None]
        assert np.allclose(joint.predict(Xq, 2).mean, alone.predict(Xq, 1).mean, atol=1e-12)
        assert np.allclose(joint.predict(Xq, 2).var, alone.predict(Xq, 1).var, atol=1e-12)

    def test_noise_free_interpolation(self):
        rng = np.random.default_rng(3)
        X = np.linspace(0, 1, 8)[:, None]
        t = rng.integers(1, 3, 8)
        y = np.sin(6 * X[:, 0]) + 0.1 * t
        model = GPModel([0.3], [[1.0, 0.0], [0.9, 0.4]], [0.0, 0.0], X=X, tasks=t, y=y)
        assert np.max(np.abs(model.predict(X, t).mean - y)) <= 1e-6

    def test_reverts_to_prior_far_away(self):
        model = GPModel([0.1], [[1.0]], [1e-4], X=[[0.0], [0.05]], tasks=[1, 1], y=[0.9, 0.8])
        post = model.predict([[1.0]], 1)
        assert post.mean[0] == pytest.approx(model.y_mean, abs=1e-9)
        assert post.var[0] == pytest.approx(model.y_scale**2, rel=1e-9)

    def test_variance_shrinks_with_data(self):
        rng = np.random.default_rng(4)
        model = random_model(rng, n=0)
        Xq = rng.uniform(size=(20, 2))
        prev = model.predict(Xq, 3).var
        X, t, y = np.zeros((0, 2)), np.zeros(0, int), np.zeros(0)
        for _ in range(6):
            X = np.vstack([X, rng.uniform(size=(1, 2))])
            t = np.append(t, rng.integers(1, 4))
            y = np.append(y, rng.normal())
            var = model.condition(X, t, y).predict(Xq, 3).var
            assert np.all(var <= prev + 1e-12)
            prev = var

    def test_duplicate_inputs(self):
        model = GPModel([0.3], [[1.0]], [0.0], X=[[0.2], [0.2], [0.7]], tasks=[1, 1, 1], y=[0.5, 0.5, 0.1])
        assert np.all(np.isfinite(model.predict([[0.2], [0.5]], 1).mean))
        assert model.jitter > 0

    def test_constant_targets(self):
        obs = [Observation((x,), 1, 0.42) for x in (0.1, 0.4, 0.9)]
        model = fit(obs, TaskSet.from_epochs([0]), FitConfig(restarts=2))
        assert np.allclose(model.predict([[0.3], [0.6]], 1).mean, 0.42)

    def test_task_out_of_range(self):
        with pytest.raises(ValueError):
            random_model(np.random.default_rng(5)).predict([[0.1, 0.1]], 4)


class TestFit:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        X = rng.uniform(size=(9, 2))
        t0 = rng.integers(0, 3, 9)
        yn = rng.normal(size=9)
        for learn_noise in (False, True):
            pk = _Packing(2, 3, learn_noise)
            theta = rng.normal(scale=0.3, size=pk.size)
            args = (pk, X, t0, yn, np.full(3, 0.05), _per_dim_sq_diff(X, X), 0.0)
            _, g = _neg_lml_and_grad(theta, *args)
            fd = approx_fprime(theta, lambda th: _neg_lml_and_grad(th, *args)[0], 1e-7)
            assert np.allclose(g, fd, rtol=1e-4, atol=1e-5)

    def test_restarts_never_lose_likelihood(self):
        rng = np.random.default_rng(7)
        obs = [Observation((x,), int(l), float(np.sin(5 * x) + 0.2 * l))
               for x, l in zip(rng.uniform(size=15), rng.integers(1, 3, 15))]
        model = fit(obs, TaskSet.from_epochs([0, 5], noise=1e-3), FitConfig(restarts=5, seed=1))
        assert len(model.fit_info["restarts"]) == 5
        for r in model.fit_info["restarts"]:
            assert r["final_lml"] >= r["init_lml"] - 1e-9
        assert model.fit_info["lml"] == pytest.approx(max(r["final_lml"] for r in model.fit_info["restarts"]),
                                                      abs=1e-6)

    def test_recovers_lengthscale(self):
        rng = np.random.default_rng(8)
        X = np.sort(rng.uniform(size=60))[:, None]
        K = se_kernel(X, X, [0.3]) + 1e-4 * np.eye(60)
        y = np.linalg.cholesky(K) @ rng.normal(size=60)
        obs = [Observation(tuple(x), 1, float(v)) for x, v in zip(X, y)]
        model = fit(obs, TaskSet.from_epochs([1], noise=1e-4 * float(np.var(y))), FitConfig(restarts=5))
        assert 0.2 <= model.lengthscales[0] <= 0.45

    def test_learns_task_correlation(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(size=20)
        obs = [Observation((v,), 1, float(np.sin(4 * v))) for v in x[:10]]
        obs += [Observation((v,), 2, float(np.sin(4 * v) + 0.1)) for v in x[10:]]
        model = fit(obs, TaskSet.from_epochs([0, 1], noise=1e-4), FitConfig(restarts=3))
        kf = model.task_covariance
        assert kf[0, 1] / math.sqrt(kf[0, 0] * kf[1, 1]) > 0.9

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        obs = [Observation((a, b), 1, a - b) for a, b in rng.uniform(size=(8, 2))]
        tasks = TaskSet.from_epochs([3], noise=1e-4)
        a, b = fit(obs, tasks, FitConfig(seed=4)), fit(obs, tasks, FitConfig(seed=4))
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_needs_data(self):
        with pytest.raises(ValueError):
            fit([], TaskSet.from_epochs([1]))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = random_model(np.random.default_rng(11), jitter_rel=1e-6)
        model.save(tmp_path / "m.json", extra={"run": {"basis": "bezier"}})
        back = GPModel.load(tmp_path / "m.json")
        Xq = np.random.default_rng(12).uniform(size=(5, 2))
        assert np.array_equal(model.predict(Xq, 2).mean, back.predict(Xq, 2).mean)

    def test_newer_major_refused(self, tmp_path):
        d = random_model(np.random.default_rng(13)).to_dict()
        d["schema_version"] = "2.0"
        with pytest.raises(ValueError, match="newer"):
            GPModel.from_dict(d)

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ValueError, match="corrupt"):
            GPModel.load(tmp_path / "bad.json")


class TestTaskSet:
    def test_default_costs(self):
        assert TaskSet.from_epochs([0, 1, 2, 15]).costs == (1, 1, 2, 15)

    def test_increasing_epochs(self):
        with pytest.raises(ValueError):
            TaskSet.from_epochs([2, 1])
