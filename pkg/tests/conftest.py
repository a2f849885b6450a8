import numpy as np
import pytest

from urlbmdp.latent import LatentMdp


def random_mdp(rng, horizon=3, sizes=None, n_actions=3, sparse=False):
    """A random finite-horizon MDP; ``sparse`` puts zeros in the kernels."""
    sizes = sizes or (1,) + tuple(int(v) for v in rng.integers(1, 4, size=horizon))
    trans, rew = [], []
    for h in range(horizon):
        p = rng.random((sizes[h], n_actions, sizes[h + 1]))
        if sparse:
            p *= rng.random(p.shape) < 0.5
            p[..., 0] += 1e-3
        trans.append(p / p.sum(axis=-1, keepdims=True))
        rew.append(rng.random((sizes[h], n_actions)))
    return LatentMdp(horizon, sizes, n_actions, tuple(trans), tuple(rew))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    lines = request.config.stash[_CRITERIA_KEY]

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
