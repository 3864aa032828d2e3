"""Budgeted multi-fidelity exploration.

Each step picks the ``(x, task)`` pair whose observation carries the most
information about the target-task function per unit cost::

    I(y_(x,l); f_m | y) = H(y_(x,l) | y) - H(y_(x,l) | y, f_m)

``f_m`` is represented by its values on a finite candidate pool, which makes
both entropies Gaussian and the gain ``0.5 * ln(var / var_given_f_m)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from .curves import Basis, CurveParams, LayerGrid, bits_for_layers
from .mtgp import FitConfig, GPModel, Observation, TaskSet, fit, observations_to_arrays
from .objective import Objective, ObjectiveRequest, ObjectiveResult, Status

log = logging.getLogger(__name__)

HISTORY_SCHEMA = "nuqsearch.history"
HISTORY_VERSION = "1.0"

# Conditional variance is floored at this fraction of the unconditional one,
# which caps a single gain at 0.5 * ln(1e8) ~= 9.21 nats.
GAIN_VAR_FLOOR = 1e-8
MAX_GAIN = 0.5 * math.log(1.0 / GAIN_VAR_FLOOR)
# Pool-covariance eigenvalues below this fraction of the largest are dropped.
EIG_CUTOFF = 1e-12


@dataclass
class Budget:
    total: float
    spent: float = 0.0
    max_evaluations: int | None = None
    evaluations: int = 0

    def __post_init__(self):
        if self.total < 0:
            raise ValueError("budget must be non-negative")

    @property
    def remaining(self) -> float:
        return self.total - self.spent

    def affordable(self, cost: float) -> bool:
        if self.max_evaluations is not None and self.evaluations >= self.max_evaluations:
            return False
        return self.spent + cost <= self.total + 1e-9 * max(1.0, self.total)

    def charge(self, cost: float) -> None:
        self.spent += cost
        self.evaluations += 1


def default_pool_size(dim: int) -> int:
    if dim <= 2:
        return 256
    if dim <= 4:
        return 1024
    return 2048


@dataclass(frozen=True)
class CandidatePool:
    """Finite set of curve weight vectors in ``[0, 1]^d``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if len(pts) < 1:
            raise ValueError("candidate pool is empty")
        if np.any(pts < 0) or np.any(pts > 1):
            raise ValueError("pool coordinates must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def build(cls, dim: int, size: int | None = None, seed: int = 0) -> "CandidatePool":
        """Uniform grid for one dimension, scrambled Sobol points otherwise."""
        size = size or default_pool_size(dim)
        if size < 2:
            raise ValueError("pool needs at least two points")
        if dim == 1:
            return cls(np.linspace(0.0, 1.0, size)[:, None])
        sobol = qmc.Sobol(dim, scramble=True, seed=seed)
        pts = sobol.random_base2(int(math.ceil(math.log2(size))))[:size]
        return cls(pts)

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)

    def index_of(self, x) -> int:
        hits = np.flatnonzero(np.all(self.points == np.asarray(x, dtype=float), axis=1))
        return int(hits[0]) if len(hits) else -1

    def maximin_subset(self, k: int) -> list[int]:
        """Greedy space-filling subset: start nearest the centre, then farthest point first."""
        pts = self.points
        first = int(np.argmin(np.sum((pts - 0.5) ** 2, axis=1)))
        chosen = [first]
        dmin = np.sum((pts - pts[first]) ** 2, axis=1)
        while len(chosen) < min(k, len(pts)):
            nxt = int(np.argmax(dmin))
            chosen.append(nxt)
            dmin = np.minimum(dmin, np.sum((pts - pts[nxt]) ** 2, axis=1))
        return chosen


@dataclass(frozen=True)
class ActionChoice:
    x: tuple[float, ...]
    task: int
    info_gain: float
    cost: float
    score: float


# --- information gain ------------------------------------------------------------


def information_gains(model: GPModel, X_actions, tasks_actions, pool: CandidatePool) -> np.ndarray:
    """Information (nats) each action's observation carries about ``f_m`` on the pool.

    Vectorised over actions. Values are clipped to ``[0, MAX_GAIN]``.
    """
    Xa = np.atleast_2d(np.asarray(X_actions, dtype=float))
    ta = np.broadcast_to(np.asarray(tasks_actions, dtype=int), (len(Xa),))
    m = model.m
    P = pool.points
    tp = np.full(len(P), m)

    _, S = model.latent_posterior(P, tp, full_cov=True)
    S = 0.5 * (S + S.T)
    evals, evecs = np.linalg.eigh(S)
    top = max(float(evals[-1]), 0.0)
    keep = evals > EIG_CUTOFF * top if top > 0 else np.zeros_like(evals, dtype=bool)

    _, var_f = model.latent_posterior(Xa, ta)
    var_y = var_f + model.noise_normalized[ta - 1]
    if np.any(keep):
        C = model.latent_cross_cov(Xa, ta, P, tp)
        proj = (C @ evecs[:, keep]) / np.sqrt(evals[keep])
        explained = np.einsum("ij,ij->i", proj, proj)
    else:
        explained = np.zeros(len(Xa))

    gains = np.zeros(len(Xa))
    live = var_y > 1e-14
    if not np.all(live):
        log.debug("%d actions have no predictive variance; gain set to 0", int((~live).sum()))
    var_cond = np.maximum(var_y - explained, GAIN_VAR_FLOOR * var_y)
    gains[live] = 0.5 * np.log(var_y[live] / var_cond[live])
    return np.clip(gains, 0.0, MAX_GAIN)


def info_gain(model: GPModel, x, task: int, pool: CandidatePool) -> float:
    return float(information_gains(model, np.atleast_2d(x), [task], pool)[0])


def score_table(model: GPModel, pool: CandidatePool, tasks: TaskSet) -> tuple[np.ndarray, np.ndarray]:
    """Gains and scores for every ``(pool point, task)``; both shaped ``(P, m)``."""
    P = len(pool)
    Xa = np.repeat(pool.points, tasks.m, axis=0)
    ta = np.tile(np.arange(1, tasks.m + 1), P)
    gains = information_gains(model, Xa, ta, pool).reshape(P, tasks.m)
    return gains, gains / np.asarray(tasks.costs)[None, :]


def select_action(model: GPModel, pool: CandidatePool, tasks: TaskSet, budget: Budget | None = None) -> ActionChoice:
    """Best affordable ``(x, task)`` by gain per unit cost.

    Ties go to the higher task, then the lexicographically smallest ``x``.
    """
    if len(pool) == 0:
        raise ValueError("candidate pool is empty")
    gains, scores = score_table(model, pool, tasks)
    allowed = [l for l in range(1, tasks.m + 1) if budget is None or budget.affordable(tasks.costs[l - 1])]
    if not allowed:
        raise ValueError("no task is affordable with the remaining budget")
    best_key, best = None, None
    for l in allowed:
        col = scores[:, l - 1]
        top = col.max()
        for i in np.flatnonzero(col == top):
            key = (-float(top), -l, tuple(pool.points[i]))
            if best_key is None or key < best_key:
                best_key, best = key, (i, l)
    i, l = best
    return ActionChoice(tuple(float(v) for v in pool.points[i]), l, float(gains[i, l - 1]),
                        tasks.costs[l - 1], float(scores[i, l - 1]))


# --- search loop -----------------------------------------------------------------


@dataclass
class SearchConfig:
    basis: Basis = Basis.BEZIER
    n_layers: int = 8
    grid: LayerGrid = LayerGrid.ENDPOINTS
    refit_every: int = 5
    restarts: int = 5
    learn_noise: bool = False
    history_path: str | os.PathLike | None = None


@dataclass
class SearchResult:
    model: GPModel
    history: list[dict]
    observations: list[Observation]
    budget: Budget


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def history_header(seed: int, tasks: TaskSet, config: SearchConfig, budget: Budget) -> dict:
    return {
        "schema": HISTORY_SCHEMA,
        "schema_version": HISTORY_VERSION,
        "seed": seed,
        "basis": Basis(config.basis).value,
        "n_layers": config.n_layers,
        "tasks": tasks.to_dict(),
        "budget": budget.total,
    }


def read_history(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty history log")
    header = json.loads(lines[0])
    if header.get("schema") != HISTORY_SCHEMA:
        raise ValueError(f"{path}: not a history log")
    major = int(str(header.get("schema_version", "0")).split(".")[0])
    if major > int(HISTORY_VERSION.split(".")[0]):
        raise ValueError(f"{path}: history schema {header['schema_version']} is newer than supported")
    return header, [json.loads(ln) for ln in lines[1:]]


class _HistoryWriter:
    def __init__(self, path, header: dict, append: bool):
        self.fh = None
        if path is not None:
            self.fh = open(path, "a" if append else "w", encoding="utf-8")
            if not append:
                self._write(header)

    def _write(self, record: dict) -> None:
        self.fh.write(json.dumps(record) + "\n")
        self.fh.flush()

    def write(self, record: dict) -> None:
        if self.fh is not None:
            self._write(record)

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def run_search(objective: Objective, tasks: TaskSet, pool: CandidatePool, budget: Budget, seed: int,
               config: SearchConfig | None = None, resume: Sequence[dict] | None = None) -> SearchResult:
    """Explore until the budget (or evaluation cap) is exhausted.

    The initial design evaluates ``d + 1`` space-filling pool points on the
    cheapest task plus the most central one on the target task; its cost is
    charged to the budget. Hyperparameters are refit every
    ``config.refit_every`` observations and the posterior is updated in
    between. Failed evaluations are charged but add no observation.

    ``resume`` replays records of an earlier history log with the same
    settings; the continued run then matches an uninterrupted one.
    """
    cfg = config or SearchConfig()
    d = pool.dim
    basis = Basis(cfg.basis)
    history: list[dict] = []
    observations: list[Observation] = []

    writer = _HistoryWriter(cfg.history_path, history_header(seed, tasks, cfg, budget), append=bool(resume))

    def bits_of(x) -> tuple[int, ...]:
        return bits_for_layers(CurveParams(basis, tuple(x)), cfg.n_layers, cfg.grid).bits

    def evaluate(step: int, phase: str, x, task: int, gain=None, score=None) -> None:
        cost = tasks.costs[task - 1]
        bits = bits_of(x)
        request = ObjectiveRequest(bits, tuple(float(v) for v in x), task, tasks.epochs[task - 1],
                                   _derive_seed(seed, step))
        try:
            result = objective(request)
        except Exception as exc:  # objective failures never abort the search
            result = ObjectiveResult(None, 0.0, Status.FAILED, f"{type(exc).__name__}: {exc}")
        budget.charge(cost)
        if result.ok:
            observations.append(Observation(tuple(x), task, result.accuracy, cost))
        record = {
            "step": step,
            "phase": phase,
            "x": [float(v) for v in x],
            "task": task,
            "epochs": tasks.epochs[task - 1],
            "bits": list(bits),
            "y": result.accuracy,
            "status": result.status.value,
            "cost": cost,
            "cumulative_cost": budget.spent,
            "gain": gain,
            "score": score,
        }
        if result.message:
            record["message"] = result.message
        history.append(record)
        writer.write(record)

    replayed = list(resume or [])
    for rec in replayed:
        budget.charge(float(rec["cost"]))
        if rec.get("status", "OK") == "OK" and rec.get("y") is not None:
            observations.append(Observation(tuple(rec["x"]), int(rec["task"]), float(rec["y"]), float(rec["cost"])))
        history.append(dict(rec))

    try:
        cheapest = min(range(1, tasks.m + 1), key=lambda l: (tasks.costs[l - 1], l))
        init_idx = pool.maximin_subset(d + 1)
        plan = [(pool.points[i], cheapest) for i in init_idx]
        plan.append((pool.points[init_idx[0]], tasks.target))
        for step, (x, task) in enumerate(plan):
            if step >= len(replayed):
                evaluate(step, "init", x, task)
        n0 = sum(1 for rec in history[: len(plan)] if rec["status"] == "OK")
        if n0 == 0:
            raise RuntimeError("every initial evaluation failed; cannot fit a model")

        model, fitted_at = None, None
        step = len(history)
        while True:
            n = len(observations)
            due = n0 + ((n - n0) // cfg.refit_every) * cfg.refit_every
            if fitted_at != due:
                model = fit(observations[:due], tasks, FitConfig(restarts=cfg.restarts, seed=_derive_seed(seed, due),
                                                                 learn_noise=cfg.learn_noise))
                fitted_at = due
            if model.n_train != n:
                X, t, y = observations_to_arrays(observations)
                model = model.condition(X, t, y)

            if not any(budget.affordable(c) for c in tasks.costs):
                break
            choice = select_action(model, pool, tasks, budget)
            evaluate(step, "explore", choice.x, choice.task, choice.info_gain, choice.score)
            step += 1
    finally:
        writer.close()

    return SearchResult(model, history, observations, budget)

