"""Accuracy oracles queried by the explorer.

Three kinds are provided:

``SyntheticObjective``
    Closed-form multi-fidelity test function with a known optimum.
``SurrogateObjective``
    Quantizes real weight tensors at the requested bit widths and maps the
    mean reconstruction SNR to a pseudo-accuracy.
``ExternalObjective``
    Runs a user command that trains/evaluates the network. One JSON request
    line ``{"bits": [...], "epochs": E, "seed": S}`` goes to its stdin and one
    JSON response line ``{"accuracy": A, "cost_seconds": C}`` is read back.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import shlex
import subprocess
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import qtns
from .dsconv import DEFAULT_BLOCK_SIZE, quantize_weights, reconstruction_snr
from .mtgp import TaskSet


class Status(str, enum.Enum):
    OK = "OK"
    FAILED = "FAILED"
    TIMEOUT = "TIMEOUT"


@dataclass(frozen=True)
class ObjectiveRequest:
    bits: tuple[int, ...]
    weights: tuple[float, ...]
    task: int
    epochs: int
    seed: int


@dataclass(frozen=True)
class ObjectiveResult:
    accuracy: float | None
    cost_actual: float = 0.0
    status: Status = Status.OK
    message: str = ""

    def __post_init__(self):
        if (self.accuracy is not None) != (self.status is Status.OK):
            raise ValueError("accuracy must be present exactly when status is OK")
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy!r} outside [0, 1]")

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


Objective = Callable[[ObjectiveRequest], ObjectiveResult]


def request_rng(request: ObjectiveRequest) -> np.random.Generator:
    """Generator keyed on the full request, so equal requests draw equal noise."""
    key = json.dumps([request.seed, request.task, request.epochs, list(request.bits),
                      [float(w).hex() for w in request.weights]])
    digest = hashlib.sha256(key.encode()).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint32))


@dataclass
class SyntheticObjective:
    """Quadratic bowl on the target task, degraded copies on cheaper tasks.

    Target task ``m``::

        f_m(w) = a0 - c * ||w - w_opt||^2

    Task ``l``::

        f_l(w) = f_m(w) - delta * (m - l) - gamma * (m - l) * ||w - w_opt||^2 + noise

    so lower fidelities share the optimiser but are offset and more sensitive
    to leaving it. Noise has variance ``tasks.noise[l]``. Results are clipped
    to ``[0, 1]``.
    """

    tasks: TaskSet
    w_opt: Sequence[float]
    a0: float = 0.9
    c: float = 0.5
    delta: float = 0.02
    gamma: float = 0.2

    def mean(self, weights, task: int) -> float:
        w = np.asarray(weights, dtype=float)
        dist2 = float(np.sum((w - np.asarray(self.w_opt, dtype=float)) ** 2))
        gap = self.tasks.m - task
        return self.a0 - self.c * dist2 - self.delta * gap - self.gamma * gap * dist2

    def __call__(self, request: ObjectiveRequest) -> ObjectiveResult:
        value = self.mean(request.weights, request.task)
        var = self.tasks.noise[request.task - 1]
        if var > 0:
            value += math.sqrt(var) * float(request_rng(request).standard_normal())
        return ObjectiveResult(accuracy=float(np.clip(value, 0.0, 1.0)), cost_actual=self.tasks.costs[request.task - 1])


SNR_CAP_DB = 60.0


@dataclass
class SurrogateObjective:
    """Pseudo-accuracy from the quantization SNR of real weight tensors.

    ``acc = ceiling * (1 - exp(-snr / snr_scale))`` with ``snr`` the mean
    per-layer SNR in dB (each capped at ``SNR_CAP_DB`` so exact layers count
    as the cap). Lower tasks are offset by ``delta * (m - l)`` and get noise
    of variance ``tasks.noise[l]``.
    """

    tasks: TaskSet
    layers: Sequence[np.ndarray]
    ceiling: float = 0.95
    snr_scale: float = 8.0
    delta: float = 0.02
    block_size: int = DEFAULT_BLOCK_SIZE

    @classmethod
    def from_files(cls, tasks: TaskSet, paths: Sequence[str | os.PathLike], **kw) -> "SurrogateObjective":
        return cls(tasks, [qtns.read(p) for p in paths], **kw)

    def layer_snr(self, bits: Sequence[int]) -> np.ndarray:
        if len(bits) != len(self.layers):
            raise ValueError(f"got {len(bits)} bit widths for {len(self.layers)} snapshot layers")
        out = []
        for w, b in zip(self.layers, bits):
            snr = reconstruction_snr(w, quantize_weights(w, int(b), self.block_size))
            out.append(SNR_CAP_DB if math.isnan(snr) else min(max(snr, 0.0), SNR_CAP_DB))
        return np.asarray(out)

    def pseudo_accuracy(self, bits: Sequence[int]) -> float:
        snr = float(np.mean(self.layer_snr(bits)))
        return self.ceiling * (1.0 - math.exp(-snr / self.snr_scale))

    def __call__(self, request: ObjectiveRequest) -> ObjectiveResult:
        try:
            value = self.pseudo_accuracy(request.bits)
        except ValueError as exc:
            return ObjectiveResult(None, 0.0, Status.FAILED, str(exc))
        value -= self.delta * (self.tasks.m - request.task)
        var = self.tasks.noise[request.task - 1]
        if var > 0:
            value += math.sqrt(var) * float(request_rng(request).standard_normal())
        return ObjectiveResult(float(np.clip(value, 0.0, 1.0)), self.tasks.costs[request.task - 1])


@dataclass
class ExternalObjective:
    """Delegate evaluation to an external trainer process.

    ``command`` is a list of arguments or a shell-style string. The process is
    started once per request.
    """

    command: Sequence[str] | str
    timeout: float = 3600.0
    env: dict | None = None
    cwd: str | None = None

    def _argv(self) -> list[str]:
        return shlex.split(self.command) if isinstance(self.command, str) else list(self.command)

    def __call__(self, request: ObjectiveRequest) -> ObjectiveResult:
        payload = json.dumps({"bits": list(request.bits), "epochs": request.epochs, "seed": request.seed}) + "\n"
        env = None if self.env is None else {**os.environ, **self.env}
        try:
            proc = subprocess.run(self._argv(), input=payload, capture_output=True, text=True,
                                  encoding="utf-8", timeout=self.timeout, env=env, cwd=self.cwd)
        except subprocess.TimeoutExpired:
            return ObjectiveResult(None, self.timeout, Status.TIMEOUT, f"no response within {self.timeout} s")
        except OSError as exc:
            return ObjectiveResult(None, 0.0, Status.FAILED, f"could not start trainer: {exc}")
        if proc.returncode != 0:
            tail = proc.stderr.strip().splitlines()[-1:] if proc.stderr else []
            return ObjectiveResult(None, 0.0, Status.FAILED, f"exit code {proc.returncode}: {' '.join(tail)}")
        return parse_response(proc.stdout)


def parse_response(stdout: str) -> ObjectiveResult:
    lines = [ln for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        return ObjectiveResult(None, 0.0, Status.FAILED, "empty response")
    try:
        data = json.loads(lines[-1])
        acc = float(data["accuracy"])
        cost = float(data.get("cost_seconds", 0.0))
    except (ValueError, KeyError, TypeError) as exc:
        return ObjectiveResult(None, 0.0, Status.FAILED, f"malformed response {lines[-1]!r}: {exc}")
    if not (math.isfinite(acc) and 0.0 <= acc <= 1.0):
        return ObjectiveResult(None, cost, Status.FAILED, f"accuracy {acc!r} outside [0, 1]")
    return ObjectiveResult(acc, cost, Status.OK)
