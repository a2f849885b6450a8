"""Experiment configuration: flat ``key = value`` files plus overrides."""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

from ..errors import ConfigError
from ..framework import UrlParams
from ..lock import LockSpec
from ..ulo import UloConfig

ALGORITHMS = ("url", "oracleq-lat", "oracleq-obs", "qlearning-lat", "qlearning-obs")


@dataclass(frozen=True)
class ExperimentConfig:
    # environment
    env: str = "bernoulli"
    H: int = 5
    alpha: float = 0.0
    sigma: float = 0.1
    seed: int = 0
    relabel: str = "per-state"
    level1_states: int = 1
    # algorithm
    algorithm: str = "url"
    ulo: str = "kmeans"
    pooled: bool = True
    use_pca: bool = False
    pca_dims: int | None = None
    ulo_restarts: int = 5
    ulo_max_iters: int = 100
    ulo_tol: float = 1e-6
    variance_floor: float = 1e-4
    mode: str = "practical"
    B: int = 5
    J: int | None = None
    eps_thresh: float = 0.01
    delta1: float = 0.1
    stability: float = 0.01
    holdout: int = 200
    warm_start: bool = True
    novelty_factor: float | None = 2.0
    # learners
    c: float = 0.02
    iota: float = 1.0
    cap: float = 1.0
    lr: float = 0.1
    epsilon: float = 0.3
    # protocol
    budget: int = 100_000
    eval_every: int | None = None
    eval_episodes: int = 1000
    replicates: int = 10
    workers: int = 1
    record_time: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if self.env not in ("bernoulli", "gaussian"):
            raise ConfigError(f"unknown env {self.env!r}")
        if self.algorithm.endswith("-obs") and self.env == "gaussian":
            raise ConfigError(
                f"{self.algorithm} needs a finite observation space; gaussian emissions are continuous"
            )
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be at least 1")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.algorithm == "url" and self.pooled and self.mode == "theoretical":
            raise ConfigError("theoretical mode needs per-level decoders (pooled = false)")
        # surface component-level errors at config time
        self.lock_spec(0)
        if self.algorithm == "url":
            self.ulo_config()
            self.url_params()

    @property
    def cadence(self) -> int:
        return self.eval_every if self.eval_every is not None else max(1, self.budget // 20)

    def lock_spec(self, label_seed: int) -> LockSpec:
        try:
            return LockSpec(
                H=self.H, alpha=self.alpha, emission=self.env, sigma=self.sigma,
                seed=label_seed, relabel=self.relabel, level1_states=self.level1_states,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def ulo_config(self) -> UloConfig:
        try:
            return UloConfig(
                method=self.ulo,
                clusters_per_level=self.lock_spec(0).states_per_level,
                use_pca=self.use_pca,
                pca_dims=self.pca_dims,
                max_iters=self.ulo_max_iters,
                tol=self.ulo_tol,
                restarts=self.ulo_restarts,
                variance_floor=self.variance_floor,
                pooled=self.pooled,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def url_params(self) -> UrlParams:
        return UrlParams(
            batch_size=self.B,
            eps_thresh=self.eps_thresh,
            delta1=self.delta1,
            mode=self.mode,
            iterations=self.J,
            stability_threshold=self.stability,
            holdout_size=self.holdout,
            warm_start=self.warm_start,
            novelty_factor=self.novelty_factor,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = str(_TYPES[key])
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("none", ""):
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def parse_assignments(lines: Iterable[str]) -> dict:
    """Parse ``key = value`` (or ``key=value``) lines; ``#`` starts a comment."""
    out = {}
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_assignments(text.splitlines()))
    values.update(parse_assignments(overrides))
    return ExperimentConfig(**values)


def expand_grid(text: str) -> list[dict]:
    """Cartesian product of ``key = v1, v2, ...`` lines, in file order."""
    axes = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = v1, v2, ... got {line!r}")
        key, values = (part.strip() for part in line.split("=", 1))
        axes.append([(key, _coerce(key, v)) for v in values.split(",")])
    return [dict(combo) for combo in itertools.product(*axes)]
