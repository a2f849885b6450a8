"""Fast invariant checks runnable without pytest (``urlbmdp selfcheck``)."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .framework import LabelBank, TsrMemory, UrlParams, fix_label, tsr
from .harness.config import ExperimentConfig
from .harness.output import format_csv, parse_csv
from .harness.runner import run_experiment
from .latent import TabularPolicy, value_iteration
from .lock import LockEnv, LockSpec
from .ulo import ConstantDecoder, UloConfig, purity


def _optimal_value():
    worst = 0.0
    for alpha in (0.0, 0.2, 0.5):
        for H in (5, 10, 20):
            env = LockEnv(LockSpec(H=H, alpha=alpha, seed=1))
            worst = max(worst, abs(value_iteration(env.mdp)[0] - 0.5))
    return worst < 1e-10, f"max |V* - 0.5| = {worst:.1e}"


def _tsr_accounting():
    H, B, J = 3, 3, 4
    spec = LockSpec(H=H, emission="gaussian", seed=0)
    env = LockEnv(spec)
    cfg = UloConfig(clusters_per_level=spec.states_per_level)
    params = UrlParams(batch_size=B, iterations=J)
    mem = TsrMemory.initial(cfg)
    rng = np.random.default_rng(0)
    pi = TabularPolicy.constant(spec.states_per_level[:-1])
    expected = 0
    for k in (1, 2):
        tsr(env, cfg, pi, k, params, mem, rng)
        expected += sum(((k - 1) * J + i) * B + B for i in range(1, J + 1)) + 1
    return env.episodes == expected, f"{env.episodes} trajectories, formula {expected}"


def _fix_label_invariants():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    truth = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0).astype(int)
    from .ulo import CentroidDecoder

    dec = CentroidDecoder(2, np.array([[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]]))
    bank = LabelBank(2)
    bank.insert(2, 0, X[dec.predict(X) == 2])
    decoders = (ConstantDecoder(1, 1), dec)
    once = fix_label(decoders, bank)
    twice = fix_label(once, bank)
    same = np.array_equal(once[1].predict(X), twice[1].predict(X))
    ratio = np.isclose(purity(once[1].predict(X), truth), purity(dec.predict(X), truth))
    return bool(same and ratio), f"idempotent={same}, accuracy preserved={bool(ratio)}"


def _determinism():
    cfg = ExperimentConfig(algorithm="url", budget=300, eval_every=100, eval_episodes=50,
                           replicates=2)
    first = format_csv(run_experiment(cfg))
    second = format_csv(run_experiment(cfg))
    round_trip = format_csv(parse_csv(first)) == first
    return first == second and round_trip, f"identical={first == second}, round-trip={round_trip}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "optimal value of the lock is 0.5": _optimal_value,
    "TSR trajectory accounting": _tsr_accounting,
    "label fixing idempotence and accuracy": _fix_label_invariants,
    "seeded runs are byte-identical": _determinism,
}


def run_checks() -> Iterator[tuple[str, bool, str]]:
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # report, don't abort the remaining checks
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, bool(ok), detail
