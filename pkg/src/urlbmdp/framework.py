"""Decoder-driven exploration: trajectory sampling, label matching and the outer loop.

A tabular learner proposes latent-space policies; the trajectory sampling
routine (TSR) refits decoders on observation data until one rollout of the
proposed policy can be handed back to the learner as a decoded-state
trajectory.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError
from .latent import ObsPolicy, TabularPolicy, Trajectory, compose_policy
from .learners import TabularLearner
from .ulo import ConstantDecoder, UloConfig, best_alignment, fit_ulo

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UrlParams:
    """Budgets and confidence parameters of the framework.

    ``eps_thresh``/``delta1`` drive label confirmation inside TSR; ``epsilon``
    and ``delta`` set the restart count N and the selection rollouts L unless
    overridden. ``iterations`` overrides J.

    Practical mode only: ``warm_start`` seeds each refit with the previous
    fit's parameters (the first fit and every fit after an unfreeze start
    cold). ``novelty_factor`` re-opens frozen decoders when an observation
    of the returned trajectory scores more than that factor times the
    ``novelty_quantile`` of the training scores at freeze time; ``None``
    keeps frozen decoders forever.
    """

    batch_size: int = 5
    episodes: int = 10
    epsilon: float = 0.1
    delta: float = 0.1
    eps_thresh: float = 0.01
    delta1: float = 0.1
    mode: str = "theoretical"
    n_restarts: int | None = None
    eval_episodes: int | None = None
    iterations: int | None = None
    stability_threshold: float = 0.01
    holdout_size: int = 200
    warm_start: bool = True
    novelty_factor: float | None = 2.0
    novelty_quantile: float = 0.99

    def __post_init__(self):
        if self.mode not in ("theoretical", "practical"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.episodes < 0:
            raise ConfigError("batch_size must be positive and episodes non-negative")
        for name in ("epsilon", "delta", "eps_thresh", "delta1"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.novelty_factor is not None and self.novelty_factor <= 1:
            raise ConfigError("novelty_factor must exceed 1 (or be None)")
        if not 0 < self.novelty_quantile <= 1:
            raise ConfigError("novelty_quantile must lie in (0, 1]")
        guard = self.eps_thresh * math.log(1 / self.delta1)
        if not 0 < guard <= 0.1:
            raise ConfigError(f"eps_thresh * ln(1/delta1) = {guard:.4f} must lie in (0, 0.1]")

    @property
    def restarts(self) -> int:
        if self.n_restarts is not None:
            return self.n_restarts
        return math.ceil(math.log(2 / self.delta) / 2)

    def selection_episodes(self, H: int) -> int:
        if self.eval_episodes is not None:
            return self.eval_episodes
        return math.ceil(9 * H ** 2 / (2 * self.epsilon ** 2) * math.log(2 * self.restarts / self.delta))

    def tsr_iterations(self, H: int, n_states: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return (H + 1) * n_states + 1

    @property
    def label_threshold(self) -> float:
        return 3 * self.eps_thresh * self.batch_size * math.log(1 / self.delta1)


class LabelBank:
    """Confirmed observation samples per (level, label), in insertion order."""

    def __init__(self, n_levels: int):
        self._levels: list[dict[int, np.ndarray]] = [{} for _ in range(n_levels)]

    def __contains__(self, key) -> bool:
        h, s = key
        return s in self._levels[h - 1]

    def insert(self, h: int, s: int, X: np.ndarray) -> None:
        if s in self._levels[h - 1]:
            raise ValueError(f"label {s} already confirmed at level {h}")
        X = np.array(X, dtype=float)
        X.setflags(write=False)
        self._levels[h - 1][s] = X

    def items(self, h: int) -> list[tuple[int, np.ndarray]]:
        return list(self._levels[h - 1].items())

    def size(self, h: int) -> int:
        return len(self._levels[h - 1])

    @property
    def n_levels(self) -> int:
        return len(self._levels)


def fix_label(decoders: Sequence, bank: LabelBank) -> tuple:
    """Swap decoder outputs so confirmed samples keep their labels.

    For each stored sample ``D`` of label ``s`` (insertion order), if more
    than 3/5 of ``D`` decodes to some other label ``s'``, the outputs ``s``
    and ``s'`` are exchanged. Fitted parameters are untouched.
    """
    out = []
    for h, dec in enumerate(decoders, start=1):
        for s, D in bank.items(h):
            if s >= dec.n_states or len(D) == 0:
                continue
            counts = np.bincount(dec.predict(D), minlength=dec.n_states)
            for t in np.flatnonzero(5 * counts > 3 * len(D)):
                if t != s:
                    dec = dec.swapped(s, int(t))
        out.append(dec)
    return tuple(out)


def update_label_bank(bank: LabelBank, test_obs: Sequence[np.ndarray], decoders: Sequence,
                      params: UrlParams) -> list[tuple[int, int]]:
    """Confirm labels whose test-batch share reaches the count threshold.

    Returns the newly confirmed (level, label) pairs.
    """
    threshold = params.label_threshold
    added = []
    for h, (X, dec) in enumerate(zip(test_obs, decoders), start=1):
        if len(X) == 0:
            continue
        labels = dec.predict(X)
        for s in range(dec.n_states):
            members = X[labels == s]
            if (h, s) not in bank and len(members) > 0 and len(members) >= threshold:
                bank.insert(h, s, members)
                added.append((h, s))
    return added


@dataclass
class TsrMemory:
    """State carried by TSR across episodes of one restart."""

    decoders: tuple
    bank: LabelBank
    policies: list = field(default_factory=list)
    data: list = field(default_factory=list)
    frozen: bool = False
    fits: int = 0
    cold: bool = True
    novelty_limits: tuple | None = None
    unfreezes: int = 0

    @classmethod
    def initial(cls, cfg: UloConfig) -> "TsrMemory":
        sizes = cfg.decoded_sizes()
        decoders = tuple(ConstantDecoder(h, m) for h, m in enumerate(sizes, start=1))
        return cls(decoders, LabelBank(len(sizes)), data=[[] for _ in sizes])

    def training_sets(self) -> list[np.ndarray]:
        return [np.concatenate(chunks) for chunks in self.data]


def _rollout_mixture(env, policies: Sequence[ObsPolicy], n: int, rng) -> np.ndarray:
    """Observations of ``n`` episodes, each run by a policy drawn uniformly."""
    picks = np.bincount(rng.integers(len(policies), size=n), minlength=len(policies))
    chunks = [env.rollout(policies[j], int(c), rng).observations for j, c in enumerate(picks) if c]
    return np.concatenate(chunks)


def _per_level(obs: np.ndarray) -> list[np.ndarray]:
    return [obs[:, h] for h in range(obs.shape[1])]


def _stability_change(new: Sequence, old: Sequence, probes: Sequence[np.ndarray]) -> tuple:
    """Align ``new`` to ``old`` on the probe sets; return (aligned, worst change)."""
    aligned, worst = [], 0.0
    for dec_new, dec_old, X in zip(new, old, probes):
        ref = dec_old.predict(X)
        dec = dec_new.with_permutation(best_alignment(dec_new.predict(X), ref, dec_new.n_states))
        worst = max(worst, float(np.mean(dec.predict(X) != ref)))
        aligned.append(dec)
    return tuple(aligned), worst


def tsr(env, cfg: UloConfig, pi: TabularPolicy, k: int, params: UrlParams, mem: TsrMemory,
        rng: np.random.Generator) -> tuple[Trajectory, tuple]:
    """Trajectory sampling routine for episode ``k`` (1-based).

    Returns a decoded-state trajectory of ``pi`` and the decoders used for it;
    ``mem`` is updated in place.
    """
    J = params.tsr_iterations(env.horizon, max(cfg.decoded_sizes()))
    B = params.batch_size
    f = mem.decoders
    if params.mode == "theoretical":
        if cfg.pooled:
            raise ConfigError("label matching requires per-level decoders; use practical mode")
        for i in range(1, J + 1):
            mem.policies.append(compose_policy(pi, f))
            train = _rollout_mixture(env, mem.policies, ((k - 1) * J + i) * B, rng)
            test = env.rollout(compose_policy(pi, f), B, rng)
            f = fix_label(fit_ulo(_per_level(train), cfg, rng), mem.bank)
            update_label_bank(mem.bank, _per_level(test.observations), f, params)
            mem.fits += 1
    else:
        for _ in range(J):
            if mem.frozen:
                break
            batch = env.rollout(compose_policy(pi, f), B, rng)
            for h, X in enumerate(_per_level(batch.observations)):
                mem.data[h].append(X)
            sets = mem.training_sets()
            warm = None if mem.cold or not params.warm_start else f
            new = fit_ulo(sets, cfg, rng, init=warm)
            mem.cold = False
            probes = [X[rng.choice(len(X), size=min(len(X), params.holdout_size), replace=False)]
                      for X in sets]
            f, change = _stability_change(new, f, probes)
            mem.fits += 1
            if mem.fits > 1 and change < params.stability_threshold:
                mem.frozen = True
                mem.novelty_limits = _novelty_limits(f, sets, params)
                log.debug("decoders frozen after %d fits (%d trajectories)", mem.fits, len(sets[0]))
    traj = env.rollout(compose_policy(pi, f), 1, rng)[0]
    mem.decoders = f
    if params.mode == "practical" and mem.frozen and _is_novel(f, traj.observations, mem.novelty_limits):
        mem.frozen, mem.cold, mem.novelty_limits = False, True, None
        mem.unfreezes += 1
        log.debug("unseen observation after freeze; refitting (unfreeze %d)", mem.unfreezes)
    return traj, f


def _novelty_limits(decoders: Sequence, sets: Sequence[np.ndarray], params: UrlParams) -> tuple | None:
    if params.novelty_factor is None:
        return None
    return tuple(
        params.novelty_factor * float(np.quantile(dec.outlier_score(X), params.novelty_quantile))
        for dec, X in zip(decoders, sets)
    )


def _is_novel(decoders: Sequence, observations: np.ndarray, limits) -> bool:
    """Whether any level's observation lies beyond that level's outlier limit."""
    if limits is None:
        return False
    return any(
        float(dec.outlier_score(observations[h : h + 1])[0]) > limit
        for h, (dec, limit) in enumerate(zip(decoders, limits))
    )


class UrlRun:
    """One restart of the outer loop, advanced an episode at a time."""

    def __init__(self, env, cfg: UloConfig, learner: TabularLearner, params: UrlParams, rng):
        sizes = cfg.decoded_sizes()
        if len(sizes) != env.horizon + 1:
            raise ConfigError(f"need {env.horizon + 1} cluster counts, got {len(sizes)}")
        if list(learner.sizes) != list(sizes):
            raise ConfigError(f"learner sizes {learner.sizes} do not match decoder sizes {sizes}")
        self.env, self.cfg, self.learner, self.params = env, cfg, learner, params
        self.rng = rng
        self.mem = TsrMemory.initial(cfg)
        self.k = 0

    def episode(self) -> Trajectory:
        self.k += 1
        pi = self.learner.propose()
        traj, _ = tsr(self.env, self.cfg, pi, self.k, self.params, self.mem, self.rng)
        self.learner.update(traj)
        return traj

    def current_policy(self) -> ObsPolicy:
        return compose_policy(self.learner.greedy_policy(), self.mem.decoders)

    def finalize(self) -> ObsPolicy:
        """Final proposal composed with decoders refreshed by one more TSR call."""
        pi = self.learner.final_policy()
        _, f = tsr(self.env, self.cfg, pi, self.k + 1, self.params, self.mem, self.rng)
        return compose_policy(pi, f)


def url_train(env, cfg: UloConfig, learner_factory: Callable[[], TabularLearner],
              params: UrlParams, rng, on_episode: Callable | None = None) -> list[ObsPolicy]:
    """Run N independent restarts of K episodes; return one candidate per restart."""
    candidates = []
    for n in range(params.restarts):
        run = UrlRun(env, cfg, learner_factory(), params, rng)
        for _ in range(params.episodes):
            traj = run.episode()
            if on_episode is not None:
                on_episode(n, run.k, env.episodes, traj)
        candidates.append(run.finalize())
    return candidates


def evaluate_policy(env, phi, episodes: int, rng, chunk: int = 10_000) -> float:
    """Mean episodic reward of ``phi`` over ``episodes`` fresh rollouts.

    A :class:`TabularPolicy` is run on the latent states directly (needs
    the diagnostics channel).
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    total, left = 0.0, episodes
    while left:
        n = min(chunk, left)
        if isinstance(phi, TabularPolicy):
            batch = env.rollout_latent(phi, n, rng)
        else:
            batch = env.rollout(phi, n, rng)
        total += float(batch.returns().sum())
        left -= n
    return total / episodes


def select_best(candidates: Sequence[ObsPolicy], env, L: int, rng) -> tuple[int, ObsPolicy, list]:
    """Candidate with the highest empirical mean over ``L`` rollouts (lowest index on ties)."""
    if L < 1:
        raise ValueError("L must be at least 1")
    means = [evaluate_policy(env, phi, L, rng) for phi in candidates]
    best = int(np.argmax(means))
    return best, candidates[best], means
