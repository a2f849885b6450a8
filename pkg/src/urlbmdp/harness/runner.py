"""Seeded replicates of one experiment configuration, emitted as learning curves."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..framework import UrlRun, evaluate_policy
from ..latent import ObsPolicy, TabularPolicy
from ..learners import EpsGreedyQ, OracleQ, TabularLearner
from ..lock import LockEnv
from .config import ExperimentConfig


@dataclass(frozen=True)
class LearningCurveRecord:
    replicate: int
    trajectories: int
    mean_reward: float
    seconds: float = 0.0


def replicate_streams(base_seed: int, replicate: int) -> dict[str, np.random.Generator | int]:
    """Independent streams for replicate ``i``, all derived from (base seed, i).

    ``labels`` seeds the action relabeling of the lock; ``train`` drives the
    environment and learner during training; ``learner`` feeds the
    exploration coin of epsilon-greedy; ``eval`` drives evaluation rollouts.
    """
    labels, train, learner, evaluation = np.random.SeedSequence([base_seed, replicate]).spawn(4)
    return {
        "labels": int(labels.generate_state(1)[0]),
        "train": np.random.default_rng(train),
        "learner": np.random.default_rng(learner),
        "eval": np.random.default_rng(evaluation),
    }


class ObservationTable:
    """Exact-observation tabularization for one level.

    Each distinct observation bit-pattern gets the next free index; index 0
    is reserved for observations never seen during training.
    """

    def __init__(self, level: int):
        self.level = level
        self._index: dict[bytes, int] = {}

    @property
    def n_states(self) -> int:
        return len(self._index) + 1

    def register(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.int64)
        for i, row in enumerate(np.ascontiguousarray(X, dtype=float)):
            key = row.tobytes()
            idx = self._index.get(key)
            if idx is None:
                idx = self._index[key] = len(self._index) + 1
            out[i] = idx
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(X, dtype=float)
        return np.array([self._index.get(row.tobytes(), 0) for row in keys], dtype=np.int64)


class _RegisteringPolicy:
    """Training-time observation policy that grows the tables and the learner.

    States first seen during the episode take the action the current
    proposal assigns to the unseen-state row.
    """

    def __init__(self, pi: TabularPolicy, tables: list[ObservationTable], learner: TabularLearner):
        self.pi, self.tables, self.learner = pi, tables, learner

    @property
    def horizon(self) -> int:
        return self.pi.horizon

    def decode(self, h: int, X: np.ndarray) -> np.ndarray:
        s = self.tables[h - 1].register(X)
        self.learner.ensure_states(h, self.tables[h - 1].n_states)
        return s

    def act(self, h: int, X: np.ndarray):
        s = self.decode(h, X)
        row = self.pi.actions[h - 1]
        known = s < len(row)
        return s, np.where(known, row[np.where(known, s, 0)], row[0])


def make_learner(cfg: ExperimentConfig, sizes, rng) -> TabularLearner:
    if cfg.algorithm.startswith("qlearning"):
        return EpsGreedyQ(cfg.H, sizes, lr=cfg.lr, epsilon=cfg.epsilon, rng=rng)
    return OracleQ(cfg.H, sizes, c=cfg.c, iota=cfg.iota, cap=cfg.cap)


class _Agent:
    """Uniform episode/evaluate interface over the five algorithms."""

    def __init__(self, cfg: ExperimentConfig, env: LockEnv, streams):
        self.cfg, self.env = cfg, env
        self.rng = streams["train"]
        kind = cfg.algorithm
        if kind == "url":
            ulo = cfg.ulo_config()
            learner = make_learner(cfg, ulo.decoded_sizes(), streams["learner"])
            self.run = UrlRun(env, ulo, learner, cfg.url_params(), self.rng)
        elif kind.endswith("-lat"):
            self.learner = make_learner(cfg, env.mdp.states_per_level, streams["learner"])
        else:
            self.tables = [ObservationTable(h) for h in range(1, cfg.H + 2)]
            self.learner = make_learner(cfg, [1] * (cfg.H + 1), streams["learner"])

    def episode(self) -> None:
        kind = self.cfg.algorithm
        if kind == "url":
            self.run.episode()
            return
        pi = self.learner.propose()
        if kind.endswith("-lat"):
            traj = self.env.rollout_latent(pi, 1, self.rng)[0]
        else:
            traj = self.env.rollout(_RegisteringPolicy(pi, self.tables, self.learner), 1, self.rng)[0]
        self.learner.update(traj)

    def policy(self):
        kind = self.cfg.algorithm
        if kind == "url":
            return self.run.current_policy()
        if kind.endswith("-lat"):
            return self.learner.greedy_policy()
        return ObsPolicy(self.learner.greedy_policy(), tuple(self.tables))


def run_replicate(cfg: ExperimentConfig, replicate: int) -> list[LearningCurveRecord]:
    """Train one seeded replicate, evaluating every ``cfg.cadence`` trajectories.

    ``trajectories`` counts every episode the training environment ran
    (all TSR batches included for URL); a record is written the first time
    the count reaches each multiple of the cadence, and once more at the
    end if the budget is not a multiple of it.
    """
    streams = replicate_streams(cfg.seed, replicate)
    spec = cfg.lock_spec(streams["labels"])
    env = LockEnv(spec, diagnostics=cfg.algorithm.endswith("-lat"))
    eval_env = env.fork(diagnostics=cfg.algorithm.endswith("-lat"))
    agent = _Agent(cfg, env, streams)
    cadence = cfg.cadence
    records: list[LearningCurveRecord] = []
    start = time.perf_counter()
    next_mark = cadence

    def record():
        value = evaluate_policy(eval_env, agent.policy(), cfg.eval_episodes, streams["eval"])
        seconds = round(time.perf_counter() - start, 3) if cfg.record_time else 0.0
        records.append(LearningCurveRecord(replicate, env.episodes, value, seconds))

    while env.episodes < cfg.budget:
        agent.episode()
        if env.episodes >= next_mark:
            record()
            next_mark = (env.episodes // cadence + 1) * cadence
    if not records or records[-1].trajectories != env.episodes:
        record()
    return records


def _run_one(args) -> list[LearningCurveRecord]:
    return run_replicate(*args)


def run_experiment(cfg: ExperimentConfig) -> Iterator[LearningCurveRecord]:
    """Yield the records of every replicate, ordered by replicate id.

    With ``workers > 1`` replicates run in a process pool; since each
    replicate owns its streams the output does not depend on scheduling.
    """
    jobs = [(cfg, i) for i in range(cfg.replicates)]
    if cfg.workers == 1:
        for job in jobs:
            yield from _run_one(job)
        return
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        for records in pool.map(_run_one, jobs):
            yield from records
