"""Tabular latent MDPs, policies, trajectories and exact dynamic programming.

Levels are 1-based in every public signature (``h`` runs over ``1..H`` for
decisions and ``1..H+1`` for states); arrays are stored 0-based, so level
``h`` lives at index ``h - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import ContractViolation

REWARD_NOISE = ("deterministic", "bernoulli")
_TIE_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LatentMdp:
    """Finite-horizon tabular MDP over per-level latent state sets.

    ``transition[h-1]`` has shape ``(S_h, A, S_{h+1})`` and
    ``reward_mean[h-1]`` has shape ``(S_h, A)``. The initial state is state 0
    at level 1.
    """

    horizon: int
    states_per_level: tuple[int, ...]
    n_actions: int
    transition: tuple[np.ndarray, ...]
    reward_mean: tuple[np.ndarray, ...]
    reward_noise: str = "deterministic"

    def __post_init__(self):
        H, A = self.horizon, self.n_actions
        sizes = tuple(int(s) for s in self.states_per_level)
        if H < 1 or A < 1:
            raise ContractViolation("horizon and n_actions must be positive")
        if len(sizes) != H + 1 or min(sizes) < 1:
            raise ContractViolation(f"need {H + 1} positive level sizes, got {sizes}")
        if len(self.transition) != H or len(self.reward_mean) != H:
            raise ContractViolation("need one transition and reward table per decision level")
        if self.reward_noise not in REWARD_NOISE:
            raise ContractViolation(f"unknown reward_noise {self.reward_noise!r}")
        trans, rew = [], []
        for h in range(H):
            p = np.asarray(self.transition[h], dtype=float)
            r = np.asarray(self.reward_mean[h], dtype=float)
            if p.shape != (sizes[h], A, sizes[h + 1]):
                raise ContractViolation(f"transition[{h}] has shape {p.shape}")
            if r.shape != (sizes[h], A):
                raise ContractViolation(f"reward_mean[{h}] has shape {r.shape}")
            if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-8):
                raise ContractViolation(f"transition rows at level {h + 1} are not distributions")
            if np.any(r < 0) or np.any(r > 1):
                raise ContractViolation(f"reward means at level {h + 1} leave [0, 1]")
            trans.append(_frozen(p / p.sum(axis=-1, keepdims=True)))
            rew.append(_frozen(r))
        object.__setattr__(self, "states_per_level", sizes)
        object.__setattr__(self, "transition", tuple(trans))
        object.__setattr__(self, "reward_mean", tuple(rew))

    # -- plain-text tabular format ------------------------------------------------
    def dumps(self) -> str:
        """Serialize as ``H A sizes...`` then ``h s a p... r`` lines."""
        lines = [" ".join(str(v) for v in (self.horizon, self.n_actions, *self.states_per_level))]
        lines.append(f"noise {self.reward_noise}")
        for h in range(self.horizon):
            for s in range(self.states_per_level[h]):
                for a in range(self.n_actions):
                    probs = " ".join(repr(float(p)) for p in self.transition[h][s, a])
                    lines.append(f"{h + 1} {s} {a} {probs} {float(self.reward_mean[h][s, a])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "LatentMdp":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows:
            raise ContractViolation("empty latent MDP text")
        header = [int(v) for v in rows[0]]
        H, A, sizes = header[0], header[1], header[2:]
        if len(sizes) != H + 1:
            raise ContractViolation("header must list H+1 level sizes")
        noise = "deterministic"
        body = rows[1:]
        if body and body[0][0] == "noise":
            noise = body[0][1]
            body = body[1:]
        trans = [np.full((sizes[h], A, sizes[h + 1]), np.nan) for h in range(H)]
        rew = [np.full((sizes[h], A), np.nan) for h in range(H)]
        for row in body:
            h, s, a = int(row[0]) - 1, int(row[1]), int(row[2])
            vals = [float(v) for v in row[3:]]
            if len(vals) != sizes[h + 1] + 1:
                raise ContractViolation(f"bad row for (h={h + 1}, s={s}, a={a})")
            trans[h][s, a] = vals[:-1]
            rew[h][s, a] = vals[-1]
        if any(np.isnan(t).any() for t in trans) or any(np.isnan(r).any() for r in rew):
            raise ContractViolation("latent MDP text is missing (h, s, a) rows")
        return cls(H, tuple(sizes), A, tuple(trans), tuple(rew), noise)


@dataclass(frozen=True)
class TabularPolicy:
    """Deterministic map from (level, state) to action."""

    actions: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "actions", tuple(_frozen(np.asarray(a, dtype=np.int64)) for a in self.actions)
        )

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def action(self, h: int, s: int) -> int:
        return int(self.actions[h - 1][s])

    def n_states(self, h: int) -> int:
        return len(self.actions[h - 1])

    @classmethod
    def constant(cls, states_per_level: Sequence[int], action: int = 0) -> "TabularPolicy":
        return cls(tuple(np.full(n, action, dtype=np.int64) for n in states_per_level))

    def check(self, mdp: LatentMdp) -> None:
        if self.horizon != mdp.horizon:
            raise ContractViolation(f"policy horizon {self.horizon} != mdp horizon {mdp.horizon}")
        for h, acts in enumerate(self.actions):
            if len(acts) != mdp.states_per_level[h]:
                raise ContractViolation(
                    f"policy covers {len(acts)} states at level {h + 1}, "
                    f"mdp has {mdp.states_per_level[h]}"
                )
            if acts.size and (acts.min() < 0 or acts.max() >= mdp.n_actions):
                raise ContractViolation(f"policy action out of range at level {h + 1}")


@dataclass
class Trajectory:
    """One episode: ``H`` (state, action, reward) steps plus the terminal state.

    ``states`` holds whatever the consumer sees as states (decoded indices
    for URL, latent indices for the -lat baselines). ``latent`` is only
    filled when the environment's diagnostics channel is on.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    observations: np.ndarray | None = None
    latent: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass
class TrajectoryBatch:
    """``n`` episodes stored as stacked arrays (leading axis = episode)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    observations: np.ndarray | None = None
    latent: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> Trajectory:
        return Trajectory(
            self.states[i],
            self.actions[i],
            self.rewards[i],
            None if self.observations is None else self.observations[i],
            None if self.latent is None else self.latent[i],
        )

    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


class Decoder(Protocol):
    level: int
    n_states: int

    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ObsPolicy:
    """Policy on observations: act(h, x) = pi(h, decoders[h](x))."""

    pi: TabularPolicy
    decoders: tuple = field(default=())

    @property
    def horizon(self) -> int:
        return self.pi.horizon

    def decode(self, h: int, X: np.ndarray) -> np.ndarray:
        return self.decoders[h - 1].predict(X)

    def act(self, h: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decode a batch of level-``h`` observations and pick actions."""
        s = self.decode(h, X)
        return s, self.pi.actions[h - 1][s]

    def __call__(self, h: int, x: np.ndarray) -> int:
        return int(self.act(h, np.atleast_2d(x))[1][0])


def compose_policy(pi: TabularPolicy, decoders: Sequence[Decoder]) -> ObsPolicy:
    """Build ``pi o decoders`` after checking the decoder ranges match pi."""
    decoders = tuple(decoders)
    if len(decoders) != pi.horizon + 1:
        raise ContractViolation(f"need {pi.horizon + 1} decoders, got {len(decoders)}")
    for h in range(1, pi.horizon + 1):
        if decoders[h - 1].n_states != pi.n_states(h):
            raise ContractViolation(
                f"decoder at level {h} emits {decoders[h - 1].n_states} states, "
                f"policy expects {pi.n_states(h)}"
            )
    return ObsPolicy(pi, decoders)


def optimal_q(mdp: LatentMdp) -> list[np.ndarray]:
    """Finite-horizon optimal Q tables, ``q[h-1]`` of shape (S_h, A)."""
    v_next = np.zeros(mdp.states_per_level[-1])
    qs = []
    for h in reversed(range(mdp.horizon)):
        q = mdp.reward_mean[h] + mdp.transition[h] @ v_next
        qs.append(q)
        v_next = q.max(axis=1)
    return qs[::-1]


def greedy_actions(q: np.ndarray, tol: float = _TIE_TOL) -> np.ndarray:
    """Row-wise argmax; near-ties within ``tol`` go to the lowest action index."""
    best = q.max(axis=1, keepdims=True)
    return np.argmax(q >= best - tol, axis=1)


def value_iteration(mdp: LatentMdp) -> tuple[float, TabularPolicy]:
    """Optimal value from the initial state and a greedy optimal policy."""
    qs = optimal_q(mdp)
    pi = TabularPolicy(tuple(greedy_actions(q) for q in qs))
    return float(qs[0][0].max()), pi


def policy_value(mdp: LatentMdp, pi: TabularPolicy) -> float:
    """Exact expected return of ``pi`` by forward propagation of state occupancy."""
    pi.check(mdp)
    dist = np.zeros(mdp.states_per_level[0])
    dist[0] = 1.0
    value = 0.0
    for h in range(mdp.horizon):
        acts = pi.actions[h]
        idx = np.arange(len(acts))
        value += float(dist @ mdp.reward_mean[h][idx, acts])
        dist = dist @ mdp.transition[h][idx, acts]
    return value


def sample_trajectory(env, phi: ObsPolicy, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode of ``phi`` in ``env``."""
    return env.rollout(phi, 1, rng)[0]


def sample_trajectories(env, phi: ObsPolicy, n: int, rng: np.random.Generator) -> TrajectoryBatch:
    return env.rollout(phi, n, rng)
