"""Block-MDP environments and the LockBernoulli / LockGaussian combination locks."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .latent import LatentMdp, ObsPolicy, TabularPolicy, TrajectoryBatch

N_ACTIONS = 4
N_LOCK_STATES = 3
GOOD, BAD = (0, 1), 2  # latent indices of s1, s2 and the dead state s3


class BmdpEnv:
    """Episodic environment emitting observations from a hidden latent MDP.

    Latent states are only exposed when ``diagnostics`` is True. The
    ``episodes`` counter is incremented once per rolled-out episode and is the
    instrumented trajectory count used for budget accounting.
    """

    def __init__(self, mdp: LatentMdp, obs_dim: int, diagnostics: bool = False):
        self.mdp = mdp
        self.obs_dim = obs_dim
        self.diagnostics = diagnostics
        self.episodes = 0
        self._cdf = []
        for p in mdp.transition:
            c = np.cumsum(p, axis=-1)
            c[..., -1] = 1.0
            self._cdf.append(c)

    @property
    def horizon(self) -> int:
        return self.mdp.horizon

    def fork(self, diagnostics: bool | None = None) -> "BmdpEnv":
        """Independent copy with a fresh episode counter (e.g. for evaluation)."""
        env = copy.copy(self)
        env.episodes = 0
        if diagnostics is not None:
            env.diagnostics = diagnostics
        return env

    def emit(self, h: int, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _next_states(self, h: int, s: np.ndarray, a: np.ndarray, u: np.ndarray) -> np.ndarray:
        cdf = self._cdf[h - 1][s, a]
        nxt = (u[:, None] >= cdf).sum(axis=1)
        return np.minimum(nxt, cdf.shape[1] - 1)

    def _rewards(self, h, s, a, s_next, rng) -> np.ndarray:
        r = self.mdp.reward_mean[h - 1][s, a]
        if self.mdp.reward_noise == "bernoulli":
            return (rng.random(len(s)) < r).astype(float)
        return r.astype(float)

    def _check_horizon(self, horizon: int) -> None:
        if horizon != self.horizon:
            raise ContractViolation(f"policy horizon {horizon} != env horizon {self.horizon}")

    def rollout(self, phi: ObsPolicy, n: int, rng: np.random.Generator) -> TrajectoryBatch:
        """Run ``n`` episodes of an observation policy.

        ``states`` in the result are the policy's own decoded states
        (terminal level decoded with the level-(H+1) decoder).
        """
        self._check_horizon(phi.horizon)
        H = self.horizon
        s = np.zeros(n, dtype=np.int64)
        obs = np.empty((n, H + 1, self.obs_dim))
        decoded = np.empty((n, H + 1), dtype=np.int64)
        actions = np.empty((n, H), dtype=np.int64)
        rewards = np.empty((n, H))
        latent = np.empty((n, H + 1), dtype=np.int64)
        for h in range(1, H + 1):
            latent[:, h - 1] = s
            x = self.emit(h, s, rng)
            obs[:, h - 1] = x
            decoded[:, h - 1], a = phi.act(h, x)
            actions[:, h - 1] = a
            s_next = self._next_states(h, s, a, rng.random(n))
            rewards[:, h - 1] = self._rewards(h, s, a, s_next, rng)
            s = s_next
        latent[:, H] = s
        obs[:, H] = self.emit(H + 1, s, rng)
        decoded[:, H] = phi.decode(H + 1, obs[:, H])
        self.episodes += n
        return TrajectoryBatch(decoded, actions, rewards, obs, latent if self.diagnostics else None)

    def rollout_latent(self, pi: TabularPolicy, n: int, rng: np.random.Generator) -> TrajectoryBatch:
        """Run ``pi`` directly on the latent states (diagnostic access only)."""
        if not self.diagnostics:
            raise ContractViolation("latent rollouts need the diagnostics channel enabled")
        self._check_horizon(pi.horizon)
        H = self.horizon
        s = np.zeros(n, dtype=np.int64)
        states = np.empty((n, H + 1), dtype=np.int64)
        actions = np.empty((n, H), dtype=np.int64)
        rewards = np.empty((n, H))
        for h in range(1, H + 1):
            states[:, h - 1] = s
            a = pi.actions[h - 1][s]
            actions[:, h - 1] = a
            s_next = self._next_states(h, s, a, rng.random(n))
            rewards[:, h - 1] = self._rewards(h, s, a, s_next, rng)
            s = s_next
        states[:, H] = s
        self.episodes += n
        return TrajectoryBatch(states, actions, rewards, None, states.copy())


@dataclass(frozen=True)
class LockSpec:
    """Parameters of a combination-lock environment.

    ``relabel`` is ``per-state`` (independent action permutation per level
    and state), ``per-level`` (one permutation shared by a level) or
    ``identity`` (good action 0, flipped action 1 everywhere; test mode).
    ``reward_mode='mean'`` pays the Bernoulli mean instead of a draw.
    ``distractors=False`` zeroes the Bernoulli noise coordinates.
    """

    H: int = 5
    alpha: float = 0.0
    emission: str = "bernoulli"
    sigma: float = 0.1
    seed: int = 0
    relabel: str = "per-state"
    level1_states: int = 1
    distractors: bool = True
    reward_mode: str = "bernoulli"

    def __post_init__(self):
        if self.H < 1:
            raise ContractViolation("H must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolation("alpha must lie in [0, 1]")
        if self.emission not in ("bernoulli", "gaussian"):
            raise ContractViolation(f"unknown emission {self.emission!r}")
        if self.emission == "gaussian" and self.sigma < 0:
            raise ContractViolation("sigma must be non-negative")
        if self.relabel not in ("per-state", "per-level", "identity"):
            raise ContractViolation(f"unknown relabel mode {self.relabel!r}")
        if self.level1_states not in (1, N_LOCK_STATES):
            raise ContractViolation("level1_states must be 1 or 3")
        if self.reward_mode not in ("bernoulli", "mean"):
            raise ContractViolation(f"unknown reward_mode {self.reward_mode!r}")

    @property
    def obs_dim(self) -> int:
        return self.H + 3

    @property
    def states_per_level(self) -> tuple[int, ...]:
        return (self.level1_states,) + (N_LOCK_STATES,) * self.H


def randomize_action_labels(seed: int, H: int, mode: str = "per-state") -> np.ndarray:
    """Action-label permutations, shape ``(H, 3, 4)``.

    ``labels[h-1, s]`` lists actual action indices in role order:
    good, flipped, then the two dead-end actions.
    """
    if mode == "identity":
        return np.tile(np.arange(N_ACTIONS), (H, N_LOCK_STATES, 1))
    rng = np.random.default_rng(seed)
    labels = np.empty((H, N_LOCK_STATES, N_ACTIONS), dtype=np.int64)
    for h in range(H):
        if mode == "per-level":
            labels[h] = rng.permutation(N_ACTIONS)
        else:
            for s in range(N_LOCK_STATES):
                labels[h, s] = rng.permutation(N_ACTIONS)
    return labels


def lock_transition_row(s: int, a: int, labels_hs: np.ndarray, alpha: float) -> np.ndarray:
    """Next-state distribution of (s, a), given that cell's role permutation."""
    if s == BAD:
        return np.array([0.0, 0.0, 1.0])
    if a == labels_hs[0]:
        return np.array([1.0 - alpha, alpha, 0.0])
    if a == labels_hs[1]:
        return np.array([alpha, 1.0 - alpha, 0.0])
    return np.array([0.0, 0.0, 1.0])


def lock_latent_mdp(spec: LockSpec, labels: np.ndarray) -> LatentMdp:
    sizes = spec.states_per_level
    trans, rew = [], []
    for h in range(spec.H):
        p = np.zeros((sizes[h], N_ACTIONS, sizes[h + 1]))
        for s in range(sizes[h]):
            for a in range(N_ACTIONS):
                p[s, a] = lock_transition_row(s, a, labels[h, s], spec.alpha)
        r = np.zeros((sizes[h], N_ACTIONS))
        if h == spec.H - 1:
            r = 0.5 * p[:, :, list(GOOD)].sum(axis=-1)
        trans.append(p)
        rew.append(r)
    noise = "bernoulli" if spec.reward_mode == "bernoulli" else "deterministic"
    return LatentMdp(spec.H, sizes, N_ACTIONS, tuple(trans), tuple(rew), noise)


def emit_observation(s: int, h: int, spec: LockSpec, rng: np.random.Generator) -> np.ndarray:
    """One observation of latent state ``s`` at level ``h``."""
    return _emit(np.array([s]), spec, rng)[0]


def _emit(states: np.ndarray, spec: LockSpec, rng: np.random.Generator) -> np.ndarray:
    n = len(states)
    x = np.zeros((n, spec.obs_dim))
    x[np.arange(n), states] = 1.0
    if spec.emission == "bernoulli":
        if spec.distractors:
            x[:, N_LOCK_STATES:] = rng.random((n, spec.H)) < 0.5
    elif spec.sigma > 0:
        x += rng.normal(0.0, spec.sigma, size=x.shape)
    return x


def terminal_reward(s, rng: np.random.Generator, mode: str = "bernoulli"):
    """Reward collected on arriving at level-(H+1) state(s) ``s``."""
    s = np.asarray(s)
    good = (s == GOOD[0]) | (s == GOOD[1])
    if mode == "mean":
        r = 0.5 * good
    else:
        r = (good & (rng.random(s.shape) < 0.5)).astype(float)
    return float(r) if r.ndim == 0 else r


class LockEnv(BmdpEnv):
    """LockBernoulli / LockGaussian with latent lock dynamics."""

    def __init__(self, spec: LockSpec, diagnostics: bool = False, labels: np.ndarray | None = None):
        self.spec = spec
        self.labels = (
            randomize_action_labels(spec.seed, spec.H, spec.relabel) if labels is None else labels
        )
        super().__init__(lock_latent_mdp(spec, self.labels), spec.obs_dim, diagnostics)

    def emit(self, h, states, rng):
        return _emit(states, self.spec, rng)

    def _rewards(self, h, s, a, s_next, rng):
        if h < self.horizon:
            return np.zeros(len(s))
        return terminal_reward(s_next, rng, self.spec.reward_mode)

    def latent_step(self, h: int, s: int, a: int, rng: np.random.Generator) -> int:
        """Sample the level-(h+1) latent state reached by action ``a`` from ``s``."""
        if not 1 <= h <= self.horizon:
            raise ContractViolation(f"level {h} outside 1..{self.horizon}")
        if not 0 <= s < self.mdp.states_per_level[h - 1]:
            raise ContractViolation(f"state {s} invalid at level {h}")
        if not 0 <= a < N_ACTIONS:
            raise ContractViolation(f"action {a} invalid")
        return int(self._next_states(h, np.array([s]), np.array([a]), rng.random(1))[0])

    def good_action(self, h: int, s: int) -> int:
        return int(self.labels[h - 1, s, 0])

    def true_decoders(self) -> tuple["BlockDecoder", ...]:
        """The exact block map (one-hot readout); exact for Bernoulli emissions."""
        return tuple(
            BlockDecoder(h, n) for h, n in enumerate(self.spec.states_per_level, start=1)
        )


@dataclass(frozen=True)
class BlockDecoder:
    """Reads the latent state off the one-hot coordinates."""

    level: int
    n_states: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.minimum(np.argmax(X[:, :N_LOCK_STATES], axis=1), self.n_states - 1)
