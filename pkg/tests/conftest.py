import numpy as np
import pytest

from subsetsched import (
    ArrivalSpec,
    JointChannelDistribution,
    SubsetSystem,
    SystemModel,
)


@pytest.fixture(scope="session")
def reference_model() -> SystemModel:
    """Two users, iid {0:1/2, 2:1/2} channels, singleton subsets, rates 2/5."""
    return SystemModel(
        dist=JointChannelDistribution.product_form([{0: 0.5, 2: 0.5}, {0: 0.5, 2: 0.5}]),
        subsets=SubsetSystem.from_lists([[0], [1]], 2),
        arrivals=ArrivalSpec.from_values(["2/5", "2/5"]),
    )


def random_marginal(rng: np.random.Generator, min_pts: int = 2, max_pts: int = 4) -> dict[int, float]:
    k = int(rng.integers(min_pts, max_pts + 1))
    values = sorted(rng.choice(np.arange(0, 6), size=k, replace=False).tolist())
    probs = rng.dirichlet(np.ones(k))
    return {int(v): float(p) for v, p in zip(values, probs)}


def random_stable_two_user_instance(rng: np.random.Generator):
    """A random stable 2-user singleton instance with a finite exponent.

    Every marginal includes rate 0 so queues can always be starved at
    finite cost, and the load is kept strictly under 1.
    """
    while True:
        t1 = random_marginal(rng)
        t2 = random_marginal(rng)
        t1[0] = t1.get(0, 0.0) + 0.05
        t2[0] = t2.get(0, 0.0) + 0.05
        z1 = sum(t1.values())
        z2 = sum(t2.values())
        t1 = {r: p / z1 for r, p in t1.items()}
        t2 = {r: p / z2 for r, p in t2.items()}
        mu1 = sum(r * p for r, p in t1.items())
        mu2 = sum(r * p for r, p in t2.items())
        if mu1 < 0.05 or mu2 < 0.05:
            continue
        rho = rng.uniform(0.3, 0.8)
        w = rng.uniform(0.25, 0.75)
        lam = [round(rho * w * mu1, 2), round(rho * (1 - w) * mu2, 2)]
        if min(lam) <= 0.01:
            continue
        if lam[0] / mu1 + lam[1] / mu2 >= 0.95:
            continue
        return lam, t1, t2
