"""Scheduling policies over observable channel subsets.

All policies implement the two-step contract from ``simulate.Policy``:
subset choice from queues alone, then user choice from the revealed
sub-state.  Ties break to the lowest subset/user id everywhere, which
keeps runs replayable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .channels import SubsetSystem
from .simulate import Policy, SystemModel, _UniformStream


def max_rate_user(members: Sequence[int], rates: Sequence[int]) -> int:
    """Highest-rate user in the subset, lowest id on ties."""
    best_pos = 0
    for pos in range(1, len(members)):
        if rates[pos] > rates[best_pos]:
            best_pos = pos
    return members[best_pos]


class MaxExp(Policy):
    """Queue-length-only subset sampling with exponential-rule scheduling.

    Subset metric: sum over members of exp(Q_i / (1 + sqrt(qbar))), with
    qbar the mean of all N queues (including users in unchosen subsets).
    User metric: R_i * exp(Q_i / (1 + sqrt(qbar))).  Both are compared in
    log space so huge queues cannot overflow the exponentials; if every
    revealed rate is zero the lowest-id member is returned and no service
    occurs.  The metric is parameter-free.
    """

    def __init__(self, subsets: SubsetSystem):
        self.members = subsets.subsets
        self.n = subsets.num_users

    def choose_subset(self, q: Sequence[int], k: int) -> int:
        denom = 1.0 + math.sqrt(sum(q) / self.n)
        best = 0
        best_val = -math.inf
        for a, members in enumerate(self.members):
            xs = [q[i] / denom for i in members]
            top = max(xs)
            val = top + math.log(sum(math.exp(x - top) for x in xs))
            if val > best_val:
                best_val = val
                best = a
        return best

    def choose_user(self, subset_id: int, rates: Sequence[int], q: Sequence[int]) -> int:
        members = self.members[subset_id]
        denom = 1.0 + math.sqrt(sum(q) / self.n)
        best = -1
        best_val = -math.inf
        for pos, i in enumerate(members):
            r = rates[pos]
            if r <= 0:
                continue
            val = math.log(r) + q[i] / denom
            if val > best_val:
                best_val = val
                best = i
        return members[0] if best < 0 else best


class MaxQueue(Policy):
    """Serve the longest queue; only defined for all-singleton subsets.

    Tie rule: the lowest-indexed queue among the maxima.
    """

    def __init__(self, subsets: SubsetSystem):
        if not subsets.all_singletons:
            raise ValueError("max_queue requires all-singleton observable subsets")
        # (user, subset id) sorted by user id so ties resolve to the lowest queue index
        self._by_user = sorted((a[0], j) for j, a in enumerate(subsets.subsets))

    def choose(self, q: Sequence[int]) -> int:
        best_user, _ = self._by_user[0]
        best_q = q[best_user]
        for user, _ in self._by_user[1:]:
            if q[user] > best_q:
                best_q = q[user]
                best_user = user
        return best_user

    def choose_subset(self, q: Sequence[int], k: int) -> int:
        target = self.choose(q)
        for user, subset_id in self._by_user:
            if user == target:
                return subset_id
        raise AssertionError("unreachable")

    def choose_user(self, subset_id: int, rates: Sequence[int], q: Sequence[int]) -> int:
        user, _ = next(p for p in self._by_user if p[1] == subset_id)
        return user


class UniformRandomSubset(Policy):
    """Uniform subset choice from an own seeded stream; max-rate user within."""

    def __init__(self, subsets: SubsetSystem, rng: np.random.Generator):
        self.members = subsets.subsets
        self._stream = _UniformStream(rng)

    def choose_subset(self, q: Sequence[int], k: int) -> int:
        m = len(self.members)
        return min(int(self._stream.next() * m), m - 1)

    def choose_user(self, subset_id: int, rates: Sequence[int], q: Sequence[int]) -> int:
        return max_rate_user(self.members[subset_id], rates)


class RoundRobinSubset(Policy):
    """Cycle through subsets in id order; max-rate user within."""

    def __init__(self, subsets: SubsetSystem):
        self.members = subsets.subsets

    def choose_subset(self, q: Sequence[int], k: int) -> int:
        return k % len(self.members)

    def choose_user(self, subset_id: int, rates: Sequence[int], q: Sequence[int]) -> int:
        return max_rate_user(self.members[subset_id], rates)


@dataclass(frozen=True)
class PolicySpec:
    """Picklable policy identifier used by parallel replica workers."""

    name: str
    params: tuple[tuple[str, Any], ...] = ()


POLICY_NAMES = ("max_exp", "max_queue", "uniform_random", "round_robin")


def make_policy(
    spec: PolicySpec | str,
    model: SystemModel,
    rng: np.random.Generator | None = None,
) -> Policy:
    """Instantiate a policy by name; one instance per replica."""
    name = spec if isinstance(spec, str) else spec.name
    if name == "max_exp":
        return MaxExp(model.subsets)
    if name == "max_queue":
        return MaxQueue(model.subsets)
    if name == "uniform_random":
        if rng is None:
            raise ValueError("uniform_random needs its own seeded rng stream")
        return UniformRandomSubset(model.subsets, rng)
    if name == "round_robin":
        return RoundRobinSubset(model.subsets)
    raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
