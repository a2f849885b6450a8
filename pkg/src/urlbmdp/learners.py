"""Episodic tabular learners consumed as no-regret black boxes.

A learner proposes one deterministic policy per episode and is then fed the
trajectory that policy produced, strictly alternating. Learners see decoded
state indices only, never observations.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DecodingRangeError, SequencingError
from .latent import _TIE_TOL, TabularPolicy, Trajectory, greedy_actions


class TabularLearner:
    """Propose/update bookkeeping shared by the concrete learners.

    ``states_per_level`` has H+1 entries (the terminal level included so
    decoded terminal states can be range-checked). ``episodes`` is the
    budget K after which :meth:`final_policy` becomes available.
    """

    init_value = 0.0

    def __init__(self, horizon: int, states_per_level: Sequence[int], n_actions: int = 4,
                 episodes: int | None = None):
        if len(states_per_level) != horizon + 1:
            raise ValueError(f"need {horizon + 1} level sizes, got {len(states_per_level)}")
        self.horizon = horizon
        self.n_actions = n_actions
        self.sizes = [int(n) for n in states_per_level]
        self.episodes = episodes
        self.updates = 0
        self._pending = False
        self.q = [np.full((n, n_actions), self.init_value) for n in self.sizes[:-1]]
        # greedy actions are cached and refreshed per written row
        self._greedy = [greedy_actions(q) for q in self.q]

    def ensure_states(self, h: int, n: int) -> None:
        """Grow level ``h`` to hold at least ``n`` states (new rows at init)."""
        if n <= self.sizes[h - 1]:
            return
        if h <= self.horizon:
            extra = np.full((n - self.sizes[h - 1], self.n_actions), self.init_value)
            self.q[h - 1] = np.vstack([self.q[h - 1], extra])
            self._greedy[h - 1] = np.concatenate([self._greedy[h - 1], greedy_actions(extra)])
            self._grow(h, n - self.sizes[h - 1])
        self.sizes[h - 1] = n

    def _grow(self, h: int, extra: int) -> None:
        pass

    def propose(self) -> TabularPolicy:
        if self._pending:
            raise SequencingError("propose called twice without an update")
        self._pending = True
        return self._propose()

    def update(self, traj: Trajectory) -> None:
        if not self._pending:
            raise SequencingError("update called without a proposed policy")
        self._check(traj)
        self._update(traj)
        self._pending = False
        self.updates += 1

    def _set_q(self, h: int, s: int, a: int, value: float) -> None:
        """Write Q at 0-based level ``h`` and refresh that row's greedy action."""
        row = self.q[h][s]
        row[a] = value
        self._greedy[h][s] = int(np.argmax(row >= row.max() - _TIE_TOL))

    def greedy_policy(self) -> TabularPolicy:
        return TabularPolicy(tuple(self._greedy))

    def final_policy(self) -> TabularPolicy:
        if self._pending:
            raise SequencingError("final_policy requested while an episode is pending")
        if self.episodes is not None and self.updates < self.episodes:
            raise SequencingError(f"only {self.updates} of {self.episodes} episodes consumed")
        return self.greedy_policy()

    def _check(self, traj: Trajectory) -> None:
        states = np.asarray(traj.states)
        if len(states) != self.horizon + 1 or len(traj.actions) != self.horizon:
            raise DecodingRangeError("trajectory length does not match the learner horizon")
        for h, s in enumerate(states):
            if not 0 <= s < self.sizes[h]:
                raise DecodingRangeError(
                    f"decoded state {s} at level {h + 1} outside [0, {self.sizes[h]})"
                )
        acts = np.asarray(traj.actions)
        if acts.min() < 0 or acts.max() >= self.n_actions:
            raise DecodingRangeError("action index out of range")

    def dumps(self) -> str:
        """Q-table as ``H A sizes...`` followed by ``h s a q [count]`` lines."""
        lines = [" ".join(map(str, (self.horizon, self.n_actions, *self.sizes)))]
        counts = getattr(self, "counts", None)
        for h, q in enumerate(self.q, start=1):
            for s in range(len(q)):
                for a in range(self.n_actions):
                    tail = "" if counts is None else f" {int(counts[h - 1][s, a])}"
                    lines.append(f"{h} {s} {a} {float(q[s, a])!r}{tail}")
        return "\n".join(lines) + "\n"

    def _propose(self) -> TabularPolicy:
        raise NotImplementedError

    def _update(self, traj: Trajectory) -> None:
        raise NotImplementedError


class OracleQ(TabularLearner):
    """Optimistic Q-learning with Hoeffding-style UCB bonuses.

    For a visit number ``t`` of (h, s, a)::

        eta_t = (H + 1) / (H + t)
        b_t   = c * sqrt(H**3 * iota / t)
        Q    <- (1 - eta_t) Q + eta_t (r + V(h+1, s') + b_t)

    with ``V(h, s) = min(cap, max_a Q(h, s, a))``, ``V(H+1, .) = 0`` and Q
    clamped to ``[0, cap]``. ``learning_rate`` overrides ``eta_t`` when given
    (a function of ``t``).
    """

    def __init__(self, horizon, states_per_level, n_actions=4, episodes=None, *,
                 c: float = 0.02, iota: float = 1.0, cap: float = 1.0,
                 learning_rate: Callable[[int], float] | None = None):
        self.cap = cap
        self.init_value = cap
        super().__init__(horizon, states_per_level, n_actions, episodes)
        self.c, self.iota = c, iota
        self.learning_rate = learning_rate
        self.counts = [np.zeros((n, n_actions), dtype=np.int64) for n in self.sizes[:-1]]
        self._bonus_scale = c * math.sqrt(horizon ** 3 * iota)

    def _grow(self, h, extra):
        self.counts[h - 1] = np.vstack(
            [self.counts[h - 1], np.zeros((extra, self.n_actions), dtype=np.int64)]
        )

    def bonus(self, t: int) -> float:
        return self._bonus_scale / math.sqrt(t)

    def _propose(self):
        return self.greedy_policy()

    def _update(self, traj):
        H, cap = self.horizon, self.cap
        states = traj.states
        for h in range(H):
            s, a = int(states[h]), int(traj.actions[h])
            self.counts[h][s, a] += 1
            t = int(self.counts[h][s, a])
            eta = (H + 1) / (H + t) if self.learning_rate is None else self.learning_rate(t)
            v_next = 0.0 if h == H - 1 else min(cap, float(self.q[h + 1][int(states[h + 1])].max()))
            target = float(traj.rewards[h]) + v_next + self.bonus(t)
            q = (1.0 - eta) * float(self.q[h][s, a]) + eta * target
            self._set_q(h, s, a, min(cap, max(0.0, q)))


class EpsGreedyQ(TabularLearner):
    """One-step Q-learning with a constant learning rate.

    Each proposal is the greedy policy with every (h, s) cell independently
    replaced by a uniformly random action with probability ``epsilon``.
    """

    def __init__(self, horizon, states_per_level, n_actions=4, episodes=None, *,
                 lr: float = 0.1, epsilon: float = 0.3, init: float = 0.0, rng=None):
        self.init_value = init
        super().__init__(horizon, states_per_level, n_actions, episodes)
        self.lr, self.epsilon = lr, epsilon
        self.rng = np.random.default_rng(rng)

    def _propose(self):
        acts = []
        for greedy in self._greedy:
            explore = self.rng.random(len(greedy)) < self.epsilon
            if explore.any():
                greedy = greedy.copy()
                greedy[explore] = self.rng.integers(self.n_actions, size=int(explore.sum()))
            acts.append(greedy)
        return TabularPolicy(tuple(acts))

    def _update(self, traj):
        H, lr = self.horizon, self.lr
        states = traj.states
        for h in range(H):
            s, a = int(states[h]), int(traj.actions[h])
            v_next = 0.0 if h == H - 1 else float(self.q[h + 1][int(states[h + 1])].max())
            q = float(self.q[h][s, a])
            self._set_q(h, s, a, q + lr * (float(traj.rewards[h]) + v_next - q))
