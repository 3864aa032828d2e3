"""Multi-task Gaussian process with an intrinsic correlation (ICM) kernel.

The covariance between task ``l`` at ``x`` and task ``l'`` at ``x'`` is::

    k((x, l), (x', l')) = Kf[l, l'] * s2 * exp(-0.5 * sum_j ((x_j - x'_j) / ell_j)**2)

with ``Kf = L @ L.T`` a learned task covariance. Observations of task ``l``
carry independent Gaussian noise of variance ``noise[l]``. On a complete
``(x, task)`` grid ordered task-major the training covariance is
``kron(Kf, Kx) + kron(D, I)``.

Tasks are numbered from 1; task ``m`` (the last) is the target fidelity.
Targets are normalised to zero mean and unit variance before fitting and
predictions are returned in the original units.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.optimize import minimize

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "nuqsearch.gpmodel"
CHECKPOINT_VERSION = "1.0"

JITTER_REL = 1e-6
JITTER_REL_MAX = 1e-2

LENGTHSCALE_BOUNDS = (1e-2, 1e1)
TASK_DIAG_BOUNDS = (1e-4, 1e1)
TASK_OFFDIAG_BOUNDS = (-1e1, 1e1)
NOISE_BOUNDS = (1e-8, 1e1)


@dataclass(frozen=True)
class TaskSet:
    """Fidelity ladder: training epochs, evaluation cost and noise per task."""

    epochs: tuple[int, ...]
    costs: tuple[float, ...]
    noise: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(int(e) for e in self.epochs))
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        object.__setattr__(self, "noise", tuple(float(s) for s in self.noise))
        m = len(self.epochs)
        if m < 1:
            raise ValueError("need at least one task")
        if len(self.costs) != m or len(self.noise) != m:
            raise ValueError("epochs, costs and noise must have one entry per task")
        if any(b <= a for a, b in zip(self.epochs, self.epochs[1:])):
            raise ValueError("epochs must be strictly increasing")
        if any(c <= 0 for c in self.costs):
            raise ValueError("task costs must be positive")
        if any(s < 0 for s in self.noise):
            raise ValueError("noise variances must be non-negative")

    @classmethod
    def from_epochs(cls, epochs: Sequence[int], noise: float | Sequence[float] = 0.0,
                    costs: Sequence[float] | None = None) -> "TaskSet":
        """Costs default to ``max(epochs, 1)`` so the zero-epoch task costs one unit."""
        if costs is None:
            costs = [max(int(e), 1) for e in epochs]
        if np.ndim(noise) == 0:
            noise = [float(noise)] * len(epochs)
        return cls(tuple(epochs), tuple(costs), tuple(noise))

    @property
    def m(self) -> int:
        return len(self.epochs)

    @property
    def target(self) -> int:
        return self.m

    def to_dict(self) -> dict:
        return {"epochs": list(self.epochs), "costs": list(self.costs), "noise": list(self.noise)}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSet":
        return cls(tuple(d["epochs"]), tuple(d["costs"]), tuple(d["noise"]))


@dataclass(frozen=True)
class Observation:
    x: tuple[float, ...]
    task: int
    y: float
    cost_spent: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        if self.task < 1:
            raise ValueError("tasks are numbered from 1")


def observations_to_arrays(obs: Iterable[Observation]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    obs = list(obs)
    if not obs:
        return np.zeros((0, 0)), np.zeros(0, dtype=int), np.zeros(0)
    X = np.array([o.x for o in obs], dtype=float)
    t = np.array([o.task for o in obs], dtype=int)
    y = np.array([o.y for o in obs], dtype=float)
    return X, t, y


@dataclass
class Posterior:
    mean: np.ndarray
    var: np.ndarray
    cov: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)


def _sq_dist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    a = X1 / lengthscales
    b = X2 / lengthscales
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _per_dim_sq_diff(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    return (X1[:, None, :] - X2[None, :, :]) ** 2


class GPModel:
    """Fitted (or hand-specified) ICM Gaussian process.

    Parameters
    ----------
    lengthscales : array of shape (d,)
        Per-dimension lengthscales of the squared exponential input kernel.
    task_factor : array of shape (m, m)
        Lower-triangular factor ``L`` with ``Kf = L @ L.T``.
    noise : array of shape (m,)
        Observation noise variance per task, in the units of ``y``.
    signal_variance : float
        Amplitude ``s2`` of the input kernel (normalised units).
    X, tasks, y : training data, optional
        Inputs ``(N, d)``, task numbers in ``1..m`` and targets.
    normalize : bool
        Standardise ``y`` before conditioning. With ``False`` the data are
        used as given (zero prior mean).

    The instance is treated as immutable; :meth:`condition` returns a new
    model with the same hyperparameters and new data.
    """

    def __init__(self, lengthscales, task_factor, noise, signal_variance: float = 1.0,
                 X=None, tasks=None, y=None, normalize: bool = True,
                 y_mean: float | None = None, y_scale: float | None = None,
                 jitter_rel: float = JITTER_REL):
        self.lengthscales = np.atleast_1d(np.asarray(lengthscales, dtype=float))
        self.task_factor = np.tril(np.atleast_2d(np.asarray(task_factor, dtype=float)))
        self.noise = np.atleast_1d(np.asarray(noise, dtype=float))
        self.signal_variance = float(signal_variance)
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be positive")
        m = self.task_factor.shape[0]
        if self.task_factor.shape != (m, m) or self.noise.shape != (m,):
            raise ValueError("task_factor must be (m, m) and noise (m,)")
        if np.any(self.noise < 0):
            raise ValueError("noise variances must be non-negative")

        d = self.lengthscales.size
        self.X = np.zeros((0, d)) if X is None else np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, d)
        self.tasks = np.zeros(0, dtype=int) if tasks is None else np.asarray(tasks, dtype=int).reshape(-1)
        self.y = np.zeros(0) if y is None else np.asarray(y, dtype=float).reshape(-1)
        if not (len(self.X) == len(self.tasks) == len(self.y)):
            raise ValueError("X, tasks and y must have the same length")
        if len(self.tasks) and (self.tasks.min() < 1 or self.tasks.max() > m):
            raise ValueError(f"task numbers must lie in 1..{m}")

        if y_mean is not None and y_scale is not None:
            self.y_mean, self.y_scale = float(y_mean), float(y_scale)
        elif normalize and len(self.y):
            self.y_mean, self.y_scale = normalization(self.y)
        else:
            self.y_mean, self.y_scale = 0.0, 1.0

        self.jitter_rel = float(jitter_rel)
        self.jitter = 0.0
        self.fit_info: dict = {}
        self._chol = None
        self._alpha = None
        if len(self.y):
            self._factorize()

    # -- basic quantities ------------------------------------------------------

    @property
    def m(self) -> int:
        return self.task_factor.shape[0]

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @property
    def n_train(self) -> int:
        return len(self.y)

    @property
    def task_covariance(self) -> np.ndarray:
        return self.task_factor @ self.task_factor.T

    @property
    def noise_normalized(self) -> np.ndarray:
        return self.noise / self.y_scale**2

    @property
    def y_normalized(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_scale

    def input_kernel(self, X1, X2) -> np.ndarray:
        X1 = np.atleast_2d(np.asarray(X1, dtype=float))
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        if X1.shape[1] != self.dim or X2.shape[1] != self.dim:
            raise ValueError(f"inputs must have dimension {self.dim}")
        return self.signal_variance * np.exp(-0.5 * _sq_dist(X1, X2, self.lengthscales))

    def kernel(self, X1, t1, X2, t2) -> np.ndarray:
        """Cross covariance (normalised units) between ``(X1, t1)`` and ``(X2, t2)``."""
        kf = self.task_covariance
        t1 = np.asarray(t1, dtype=int).reshape(-1) - 1
        t2 = np.asarray(t2, dtype=int).reshape(-1) - 1
        return kf[np.ix_(t1, t2)] * self.input_kernel(X1, X2)

    def kernel_entry(self, x, l: int, x2, l2: int) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if x.shape != x2.shape:
            raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
        return float(self.kernel(x[None, :], [l], x2[None, :], [l2])[0, 0])

    def train_covariance(self, jitter: float | None = None) -> np.ndarray:
        """``K + diag(noise)`` plus ``jitter`` on the diagonal (default: the jitter in use)."""
        K = self.kernel(self.X, self.tasks, self.X, self.tasks)
        K[np.diag_indices_from(K)] += self.noise_normalized[self.tasks - 1]
        K[np.diag_indices_from(K)] += self.jitter if jitter is None else jitter
        return K

    def _factorize(self) -> None:
        base = self.train_covariance(jitter=0.0)
        self._chol, self.jitter = _robust_cholesky(base, self.jitter_rel)
        self._alpha = linalg.cho_solve((self._chol, True), self.y_normalized)

    # -- inference ---------------------------------------------------------------

    def log_marginal_likelihood(self) -> float:
        """Log evidence of the normalised targets."""
        if not self.n_train:
            return 0.0
        yn = self.y_normalized
        return float(-0.5 * yn @ self._alpha - np.log(np.diag(self._chol)).sum()
                     - 0.5 * len(yn) * math.log(2.0 * math.pi))

    def _solve_cross(self, Xq, tq) -> tuple[np.ndarray, np.ndarray]:
        Ks = self.kernel(self.X, self.tasks, Xq, tq)
        V = linalg.solve_triangular(self._chol, Ks, lower=True)
        return Ks, V

    def latent_posterior(self, Xq, tq, full_cov: bool = False):
        """Posterior of the latent functions in normalised units: ``(mean, var or cov)``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        tq = np.broadcast_to(np.asarray(tq, dtype=int), (len(Xq),))
        if full_cov:
            prior = self.kernel(Xq, tq, Xq, tq)
        else:
            prior = self.task_covariance[tq - 1, tq - 1] * self.signal_variance
        if not self.n_train:
            return np.zeros(len(Xq)), prior
        Ks, V = self._solve_cross(Xq, tq)
        mean = Ks.T @ self._alpha
        if full_cov:
            return mean, prior - V.T @ V
        return mean, np.maximum(prior - np.einsum("ij,ij->j", V, V), 0.0)

    def latent_cross_cov(self, X1, t1, X2, t2) -> np.ndarray:
        """Posterior covariance (normalised units) between two query sets."""
        prior = self.kernel(X1, t1, X2, t2)
        if not self.n_train:
            return prior
        _, V1 = self._solve_cross(X1, t1)
        _, V2 = self._solve_cross(X2, t2)
        return prior - V1.T @ V2

    def predict(self, Xq, tasks, full_cov: bool = False, include_noise: bool = False) -> Posterior:
        """Predictive distribution in the units of ``y``.

        ``tasks`` may be a single task number or one per query.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        tq = np.broadcast_to(np.asarray(tasks, dtype=int), (len(Xq),)).copy()
        if tq.min() < 1 or tq.max() > self.m:
            raise ValueError(f"task numbers must lie in 1..{self.m}")
        mean_n, cov_n = self.latent_posterior(Xq, tq, full_cov=full_cov)
        s2 = self.y_scale**2
        if full_cov:
            cov = cov_n * s2
            if include_noise:
                cov[np.diag_indices_from(cov)] += self.noise[tq - 1]
            var = np.maximum(np.diag(cov).copy(), 0.0)
        else:
            cov = None
            var = cov_n * s2 + (self.noise[tq - 1] if include_noise else 0.0)
        return Posterior(mean=self.y_mean + self.y_scale * mean_n, var=var, cov=cov)

    def condition(self, X, tasks, y) -> "GPModel":
        """Same hyperparameters and normalisation, new training data."""
        return GPModel(self.lengthscales, self.task_factor, self.noise, self.signal_variance,
                       X, tasks, y, y_mean=self.y_mean, y_scale=self.y_scale, jitter_rel=self.jitter_rel)

    def with_data(self, X, tasks, y) -> "GPModel":
        """Same hyperparameters, new data with freshly computed normalisation."""
        return GPModel(self.lengthscales, self.task_factor, self.noise, self.signal_variance,
                       X, tasks, y, normalize=True, jitter_rel=self.jitter_rel)

    # -- serialisation -------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "schema_version": CHECKPOINT_VERSION,
            "lengthscales": self.lengthscales.tolist(),
            "signal_variance": self.signal_variance,
            "task_factor": self.task_factor.tolist(),
            "noise": self.noise.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "jitter_rel": self.jitter_rel,
            "data": {"x": self.X.tolist(), "task": self.tasks.tolist(), "y": self.y.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        if d.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError("not a GP model checkpoint")
        _check_version(d.get("schema_version", "0"), CHECKPOINT_VERSION)
        data = d["data"]
        dim = len(d["lengthscales"])
        X = np.asarray(data["x"], dtype=float).reshape(-1, dim)
        return cls(d["lengthscales"], d["task_factor"], d["noise"], d["signal_variance"],
                   X, data["task"], data["y"], y_mean=d["y_mean"], y_scale=d["y_scale"],
                   jitter_rel=d.get("jitter_rel", JITTER_REL))

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(d, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GPModel":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: corrupt checkpoint ({exc})") from None
        return cls.from_dict(d)


def normalization(y) -> tuple[float, float]:
    """Mean and scale used to standardise targets; scale falls back to 1 for constant data."""
    y = np.asarray(y, dtype=float)
    mean = float(np.mean(y))
    sd = float(np.std(y))
    return mean, (sd if sd > 1e-12 * max(1.0, abs(mean)) else 1.0)


def _check_version(found: str, supported: str) -> None:
    try:
        major = int(str(found).split(".")[0])
    except ValueError:
        raise ValueError(f"unreadable schema version {found!r}") from None
    if major > int(supported.split(".")[0]):
        raise ValueError(f"schema version {found} is newer than supported {supported}")


def _robust_cholesky(A: np.ndarray, jitter_rel: float = JITTER_REL) -> tuple[np.ndarray, float]:
    """Cholesky of ``A``, adding diagonal jitter only when needed.

    Without jitter the factor is accepted when every squared pivot (the
    variance of a point given the ones before it) stays above
    ``jitter_rel`` times the mean diagonal. Otherwise jitter starts at that
    level and doubles until the factorisation succeeds.
    """
    scale = float(np.mean(np.diag(A))) if A.size else 1.0
    if not math.isfinite(scale) or scale <= 0:
        scale = 1.0
    floor = max(jitter_rel, 0.0) * scale
    try:
        L = linalg.cholesky(A, lower=True, check_finite=True)
        if not A.size or float(np.min(np.diag(L))) ** 2 >= floor:
            return L, 0.0
    except (linalg.LinAlgError, ValueError):
        pass
    rel = max(jitter_rel, JITTER_REL)
    while True:
        jitter = rel * scale
        try:
            return linalg.cholesky(A + jitter * np.eye(len(A)), lower=True, check_finite=True), jitter
        except (linalg.LinAlgError, ValueError):
            if rel >= JITTER_REL_MAX:
                raise linalg.LinAlgError("covariance is not positive definite even with maximal jitter")
            rel = min(rel * 2.0, JITTER_REL_MAX)


def build_train_covariance(observations: Sequence[Observation], model: GPModel,
                           jitter: float | None = None) -> np.ndarray:
    """Training covariance of ``observations`` under ``model``'s hyperparameters.

    Noise is taken from ``model.noise`` in normalised units. ``jitter=None``
    adds whatever jitter the model's factorisation would need.
    """
    X, t, y = observations_to_arrays(observations)
    if not len(y):
        raise ValueError("need at least one observation")
    K = model.kernel(X, t, X, t)
    K[np.diag_indices_from(K)] += model.noise_normalized[t - 1]
    if jitter is None:
        _, jitter = _robust_cholesky(K, model.jitter_rel)
    K[np.diag_indices_from(K)] += jitter
    return K


# --- hyperparameter fitting ----------------------------------------------------


@dataclass
class FitConfig:
    restarts: int = 5
    seed: int = 0
    learn_noise: bool = False
    maxiter: int = 200
    init: GPModel | None = None
    init_task_correlation: float = 0.8
    init_lengthscale: float = 0.5


class _Packing:
    """Maps between the flat optimisation vector and model hyperparameters."""

    def __init__(self, d: int, m: int, learn_noise: bool):
        self.d, self.m, self.learn_noise = d, m, learn_noise
        self.tril = np.tril_indices(m)
        self.diag_mask = self.tril[0] == self.tril[1]
        self.n_tri = len(self.tril[0])

    @property
    def size(self) -> int:
        return self.d + self.n_tri + (self.m if self.learn_noise else 0)

    def pack(self, lengthscales, L, noise_n) -> np.ndarray:
        tri = L[self.tril].copy()
        tri[self.diag_mask] = np.log(np.maximum(np.abs(tri[self.diag_mask]), TASK_DIAG_BOUNDS[0]))
        parts = [np.log(lengthscales), tri]
        if self.learn_noise:
            parts.append(np.log(np.maximum(noise_n, NOISE_BOUNDS[0])))
        return np.concatenate(parts)

    def unpack(self, theta: np.ndarray, noise_n_fixed: np.ndarray):
        ell = np.exp(theta[: self.d])
        tri = theta[self.d: self.d + self.n_tri].copy()
        tri[self.diag_mask] = np.exp(tri[self.diag_mask])
        L = np.zeros((self.m, self.m))
        L[self.tril] = tri
        noise_n = np.exp(theta[self.d + self.n_tri:]) if self.learn_noise else noise_n_fixed
        return ell, L, noise_n

    def bounds(self) -> list[tuple[float, float]]:
        b = [tuple(np.log(LENGTHSCALE_BOUNDS))] * self.d
        for is_diag in self.diag_mask:
            b.append(tuple(np.log(TASK_DIAG_BOUNDS)) if is_diag else TASK_OFFDIAG_BOUNDS)
        if self.learn_noise:
            b += [tuple(np.log(NOISE_BOUNDS))] * self.m
        return [(float(lo), float(hi)) for lo, hi in b]


def _neg_lml_and_grad(theta, pk: _Packing, X, t0, yn, noise_fixed, sqd, jitter_rel):
    """Negative log marginal likelihood and its gradient (normalised units)."""
    ell, L, noise_n = pk.unpack(theta, noise_fixed)
    kf = L @ L.T
    r2 = sqd / ell**2  # (N, N, d)
    kx = np.exp(-0.5 * r2.sum(-1))
    signal = kf[np.ix_(t0, t0)] * kx
    K = signal.copy()
    K[np.diag_indices_from(K)] += noise_n[t0]
    try:
        C, _ = _robust_cholesky(K, jitter_rel)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve((C, True), yn)
    n = len(yn)
    lml = -0.5 * yn @ alpha - np.log(np.diag(C)).sum() - 0.5 * n * math.log(2 * math.pi)
    Kinv = linalg.cho_solve((C, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv

    grad = np.empty_like(theta)
    grad[: pk.d] = 0.5 * np.einsum("ij,ijk->k", W * signal, r2)

    E = np.zeros((n, pk.m))
    E[np.arange(n), t0] = 1.0
    G = E.T @ (W * kx) @ E
    gL = G @ L  # d lml / d L, using symmetry of G
    g_tri = gL[pk.tril]
    g_tri[pk.diag_mask] *= L[pk.tril][pk.diag_mask]
    grad[pk.d: pk.d + pk.n_tri] = g_tri
    if pk.learn_noise:
        wdiag = np.diag(W)
        grad[pk.d + pk.n_tri:] = 0.5 * noise_n * np.bincount(t0, weights=wdiag, minlength=pk.m)
    if not np.isfinite(lml) or not np.all(np.isfinite(grad)):
        return 1e25, np.zeros_like(theta)
    return -lml, -grad


def _initial_thetas(pk: _Packing, cfg: FitConfig, noise_n: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    bounds = np.array(pk.bounds())
    thetas = []
    if cfg.init is not None and cfg.init.dim == pk.d and cfg.init.m == pk.m:
        init_noise = cfg.init.noise_normalized if pk.learn_noise else noise_n
        thetas.append(pk.pack(cfg.init.lengthscales, cfg.init.task_factor * np.sqrt(cfg.init.signal_variance),
                              init_noise))
    rho = cfg.init_task_correlation
    kf0 = (1 - rho) * np.eye(pk.m) + rho * np.ones((pk.m, pk.m))
    thetas.append(pk.pack(np.full(pk.d, cfg.init_lengthscale), np.linalg.cholesky(kf0),
                          np.maximum(noise_n, 1e-4)))
    while len(thetas) < max(cfg.restarts, 1):
        ell = np.exp(rng.uniform(np.log(0.05), np.log(2.0), pk.d))
        L = np.tril(rng.normal(0.0, 0.7, (pk.m, pk.m)))
        L[np.diag_indices(pk.m)] = np.exp(rng.uniform(np.log(0.1), np.log(1.5), pk.m))
        nz = np.exp(rng.uniform(np.log(1e-4), np.log(1e-1), pk.m)) if pk.learn_noise else noise_n
        thetas.append(pk.pack(ell, L, nz))
    return [np.clip(th, bounds[:, 0], bounds[:, 1]) for th in thetas[: max(cfg.restarts, 1)]]


def fit(observations: Sequence[Observation], tasks: TaskSet, config: FitConfig | None = None) -> GPModel:
    """Maximise the log marginal likelihood over lengthscales, ``L`` and (optionally) noise.

    Runs ``config.restarts`` L-BFGS-B optimisations from deterministic
    (seeded) starting points and keeps the best. The signal variance is
    fixed at 1 because ``Kf`` already carries the amplitude.
    """
    cfg = config or FitConfig()
    X, t, y = observations_to_arrays(observations)
    if not len(y):
        raise ValueError("cannot fit a GP without observations")
    if t.max() > tasks.m:
        raise ValueError(f"observation task {t.max()} exceeds task count {tasks.m}")
    d = X.shape[1]
    y_mean, y_scale = normalization(y)
    yn = (y - y_mean) / y_scale
    noise_n = np.asarray(tasks.noise) / y_scale**2
    if cfg.init is not None and not cfg.learn_noise:
        noise_n = cfg.init.noise / y_scale**2

    pk = _Packing(d, tasks.m, cfg.learn_noise)
    sqd = _per_dim_sq_diff(X, X)
    t0 = t - 1
    rng = np.random.default_rng(cfg.seed)
    args = (pk, X, t0, yn, noise_n, sqd, JITTER_REL)

    best_theta, best_f = None, math.inf
    restarts = []
    for theta0 in _initial_thetas(pk, cfg, noise_n, rng):
        f0, _ = _neg_lml_and_grad(theta0, *args)
        theta, f = theta0, f0
        try:
            res = minimize(_neg_lml_and_grad, theta0, args=args, jac=True, method="L-BFGS-B",
                           bounds=pk.bounds(), options={"maxiter": cfg.maxiter})
            if np.all(np.isfinite(res.x)) and math.isfinite(res.fun) and res.fun <= f0:
                theta, f = res.x, float(res.fun)
        except (ValueError, linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            log.warning("GP restart failed: %s", exc)
        restarts.append({"init_lml": -f0, "final_lml": -f})
        if f < best_f:
            best_theta, best_f = theta, f

    if best_theta is None or best_f >= 1e25:
        log.warning("all GP restarts diverged; keeping the first initialisation")
        best_theta = _initial_thetas(pk, cfg, noise_n, np.random.default_rng(cfg.seed))[0]

    ell, L, nz = pk.unpack(best_theta, noise_n)
    model = GPModel(ell, L, nz * y_scale**2, 1.0, X, t, y, y_mean=y_mean, y_scale=y_scale)
    model.fit_info = {"restarts": restarts, "lml": model.log_marginal_likelihood()}
    return model
