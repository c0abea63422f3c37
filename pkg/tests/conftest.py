import numpy as np
import pytest

from rtdsm.model import EQUALITY, INEQUALITY, Scenario
from rtdsm.scenarios import gen_named


def make_scenario(K=3, N=2, *, weights=None, gains=None, noise=1.0, masks=1e6, budgets=1.0,
                  mode=EQUALITY, name="toy"):
    weights = np.full(N, 1.0 / N) if weights is None else weights
    gains = np.zeros((K, N, N)) if gains is None else gains
    noise = np.broadcast_to(np.asarray(noise, dtype=float), (K, N))
    return Scenario(weights, gains, noise, masks, budgets, constraint_mode=mode, name=name)


def random_tiny(seed, K=3, N=2, mode=EQUALITY):
    """Small interference channel with O(1) SNRs and crosstalk."""
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.0, 0.5, (K, N, N))
    noise = rng.uniform(0.05, 1.0, (K, N))
    weights = rng.dirichlet(np.ones(N))
    return make_scenario(K, N, weights=weights, gains=gains, noise=noise, budgets=np.ones(N), mode=mode)


@pytest.fixture(scope="session")
def near_far():
    return gen_named("near-far-adsl")


@pytest.fixture(scope="session")
def near_far_small():
    # 64 tones keep the budget below the total mask and runs fast
    return gen_named("near-far-adsl", num_tones=64)


@pytest.fixture
def toy():
    return make_scenario()


__all__ = ["make_scenario", "random_tiny", "EQUALITY", "INEQUALITY"]
