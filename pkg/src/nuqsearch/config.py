"""Run configuration: a single YAML file.

Keys (defaults in brackets)::

    schema_version  "1.0"
    seed            int, required
    basis           bezier | chebyshev
    degree          bezier degree (weights = degree + 1) or Chebyshev order (weights = degree)
    grid            endpoints | fractional  [endpoints]
    network         bundled name (vgg16, resnet18, ...) or path to a network spec file
    tasks.epochs    strictly increasing list of ints
    tasks.costs     positive list [max(epoch, 1)]
    tasks.noise     scalar or list of variances [0]
    budget          total evaluation cost, >= 0
    max_evaluations int or null
    pool_size       int or null [256 for d <= 2, 1024 for d <= 4]
    refit_every     int [5]
    restarts        int [5]
    learn_noise     bool [false]
    k               effective-accuracy penalty [100]
    beta            pessimism for ranking [0]
    top_k           rows in the ranked table [20]
    block_size      quantization block [32]
    out             output directory [runs/<config stem>]; NUQSEARCH_OUT overrides
    objective       mapping with ``kind`` = synthetic | surrogate | external

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .curves import Basis, LayerGrid
from .mtgp import TaskSet
from .networks import BUILDERS, NetworkSpec, load_network_spec

CONFIG_VERSION = "1.0"
OUT_ENV = "NUQSEARCH_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    path: Path
    seed: int
    basis: Basis
    degree: int
    network_ref: str
    network: NetworkSpec
    tasks: TaskSet
    budget: float
    objective: dict
    grid: LayerGrid = LayerGrid.ENDPOINTS
    max_evaluations: int | None = None
    pool_size: int | None = None
    refit_every: int = 5
    restarts: int = 5
    learn_noise: bool = False
    k: float = 100.0
    beta: float = 0.0
    top_k: int = 20
    block_size: int = 32
    out: Path = field(default_factory=lambda: Path("runs"))

    @property
    def dim(self) -> int:
        return self.degree + 1 if self.basis is Basis.BEZIER else self.degree

    @property
    def n_layers(self) -> int:
        return self.network.n_conv


def _key_lines(text: str) -> dict[tuple, int]:
    """1-based line of every mapping key, addressed by its path."""
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = path + (k.value,)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                lines[path + (i,)] = v.start_mark.line + 1
                walk(v, path + (i,))

    try:
        walk(yaml.compose(text), ())
    except yaml.YAMLError:
        pass
    return lines


class _Reader:
    def __init__(self, path: Path, data: dict, lines: dict[tuple, int]):
        self.path, self.data, self.lines = path, data, lines

    def error(self, key: tuple | str, msg: str) -> ConfigError:
        key = (key,) if isinstance(key, str) else key
        line = None
        for n in range(len(key), 0, -1):
            line = self.lines.get(key[:n])
            if line:
                break
        where = f"{self.path}:{line}" if line else str(self.path)
        return ConfigError(f"{where}: {'.'.join(map(str, key))}: {msg}")

    def get(self, *key, default: Any = ..., kind=None, check=None, msg: str = "invalid value"):
        node: Any = self.data
        for part in key:
            if not isinstance(node, dict) or part not in node:
                if default is ...:
                    raise self.error(key, "required key is missing")
                return default
            node = node[part]
        if node is None and default is not ... and default is None:
            return None
        if kind is not None:
            try:
                if kind is int and (isinstance(node, bool) or float(node) != int(node)):
                    raise ValueError
                if kind is bool and not isinstance(node, bool):
                    raise ValueError
                node = kind(node)
            except (TypeError, ValueError):
                raise self.error(key, f"expected {kind.__name__}, got {node!r}") from None
        if check is not None and not check(node):
            raise self.error(key, msg)
        return node


def _positive(v) -> bool:
    return v > 0


def _resolve(base: Path, p: str) -> str:
    q = Path(os.path.expanduser(p))
    return str(q if q.is_absolute() else (base / q))


def load_config(path: str | os.PathLike, seed: int | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}{line}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    r = _Reader(path, data, _key_lines(text))
    base = path.parent

    version = str(r.get("schema_version", default=CONFIG_VERSION))
    try:
        major = int(version.split(".")[0])
    except ValueError:
        raise r.error("schema_version", f"unreadable version {version!r}") from None
    if major > int(CONFIG_VERSION.split(".")[0]):
        raise r.error("schema_version", f"version {version} is newer than supported {CONFIG_VERSION}")

    seed_v = seed if seed is not None else r.get("seed", kind=int)

    basis_s = r.get("basis", default="bezier", kind=str)
    try:
        basis = Basis(basis_s.lower())
    except ValueError:
        raise r.error("basis", f"unknown basis {basis_s!r}; use bezier or chebyshev") from None
    degree = r.get("degree", default=1, kind=int, check=lambda v: v >= (0 if basis is Basis.BEZIER else 1),
                   msg="degree too small for this basis")
    grid_s = r.get("grid", default="endpoints", kind=str)
    try:
        grid = LayerGrid(grid_s.lower())
    except ValueError:
        raise r.error("grid", f"unknown grid {grid_s!r}; use endpoints or fractional") from None

    net_ref = r.get("network", kind=str)
    if net_ref.lower() in BUILDERS or net_ref.startswith("builtin:"):
        resolved = net_ref
    else:
        resolved = _resolve(base, net_ref)
        if not os.path.exists(resolved):
            raise r.error("network", f"network spec file not found: {resolved}")
    try:
        network = load_network_spec(resolved)
    except (ValueError, OSError, yaml.YAMLError) as exc:
        raise r.error("network", str(exc)) from None

    epochs = r.get("tasks", "epochs", check=lambda v: isinstance(v, list) and len(v) >= 1,
                   msg="must be a non-empty list")
    costs = r.get("tasks", "costs", default=None)
    noise = r.get("tasks", "noise", default=0.0)
    try:
        tasks = TaskSet.from_epochs(epochs, noise=noise, costs=costs)
    except (TypeError, ValueError) as exc:
        raise r.error("tasks", str(exc)) from None

    objective = r.get("objective", check=lambda v: isinstance(v, dict) and "kind" in v,
                      msg="must be a mapping with a 'kind'")
    objective = dict(objective)
    kind = str(objective["kind"]).lower()
    if kind not in ("synthetic", "surrogate", "external"):
        raise r.error(("objective", "kind"), f"unknown objective kind {kind!r}")
    objective["kind"] = kind
    if kind == "surrogate":
        snaps = objective.get("snapshot")
        if not isinstance(snaps, list) or not snaps:
            raise r.error(("objective", "snapshot"), "list of QTNS files required")
        snaps = [_resolve(base, s) for s in snaps]
        for i, s in enumerate(snaps):
            if not os.path.exists(s):
                raise r.error(("objective", "snapshot", i), f"snapshot file not found: {s}")
        if len(snaps) != network.n_conv:
            raise r.error(("objective", "snapshot"),
                          f"{len(snaps)} snapshot files for {network.n_conv} conv layers")
        objective["snapshot"] = snaps
    elif kind == "external":
        if not objective.get("command"):
            raise r.error(("objective", "command"), "external objective needs a command")
        if "cwd" in objective:
            objective["cwd"] = _resolve(base, objective["cwd"])
    elif kind == "synthetic":
        dim = degree + 1 if basis is Basis.BEZIER else degree
        w_opt = objective.get("w_opt", [0.5] * dim)
        if not isinstance(w_opt, list) or len(w_opt) != dim:
            raise r.error(("objective", "w_opt"), f"expected a list of {dim} values")

    # command line and environment paths are relative to the working directory
    if out or os.environ.get(OUT_ENV):
        out_path = Path(os.path.expanduser(out or os.environ[OUT_ENV])).absolute()
    else:
        cfg_out = r.get("out", default=None, kind=str)
        out_path = Path(_resolve(base, cfg_out)) if cfg_out else base / "runs" / path.stem

    return RunConfig(
        path=path,
        seed=seed_v,
        basis=basis,
        degree=degree,
        network_ref=resolved,
        network=network,
        tasks=tasks,
        budget=r.get("budget", kind=float, check=lambda v: v >= 0, msg="must be >= 0"),
        objective=objective,
        grid=grid,
        max_evaluations=r.get("max_evaluations", default=None, kind=int, check=_positive, msg="must be positive"),
        pool_size=r.get("pool_size", default=None, kind=int, check=lambda v: v >= 2, msg="must be >= 2"),
        refit_every=r.get("refit_every", default=5, kind=int, check=_positive, msg="must be positive"),
        restarts=r.get("restarts", default=5, kind=int, check=_positive, msg="must be positive"),
        learn_noise=r.get("learn_noise", default=False, kind=bool),
        k=r.get("k", default=100.0, kind=float, check=_positive, msg="must be positive"),
        beta=r.get("beta", default=0.0, kind=float, check=lambda v: v >= 0, msg="must be >= 0"),
        top_k=r.get("top_k", default=20, kind=int, check=_positive, msg="must be positive"),
        block_size=r.get("block_size", default=32, kind=int, check=_positive, msg="must be positive"),
        out=out_path,
    )
