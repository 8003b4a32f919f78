"""Subcarrier-to-user assignment (step one of the two-step method).

Subcarriers are partitioned among users before any power is allocated.  The
default rule gives each subcarrier to the user with the best channel on it;
a utility-aware greedy variant is available for comparison, which walks
subcarriers in descending best-channel order and hands each one to the user
whose utility gains the most from it under an equal power split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .utility import UtilityModel

__all__ = ["Partition", "assign_best_channel", "assign_utility_aware"]


@dataclass(frozen=True)
class Partition:
    """Disjoint, exhaustive assignment of subcarriers to users."""

    owner: np.ndarray  # (K,) user index per subcarrier
    n_users: int

    def __post_init__(self):
        owner = np.asarray(self.owner, dtype=int)
        object.__setattr__(self, "owner", owner)
        self.validate()

    @property
    def sets(self) -> list[list[int]]:
        """Per-user subcarrier index lists D_i (consistent with owner)."""
        out: list[list[int]] = [[] for _ in range(self.n_users)]
        for k, i in enumerate(self.owner):
            out[int(i)].append(k)
        return out

    def validate(self) -> None:
        if self.owner.ndim != 1:
            raise ValueError("owner must be one-dimensional")
        if self.owner.size and (
            np.min(self.owner) < 0 or np.max(self.owner) >= self.n_users
        ):
            raise ValueError("owner indices out of range")


def assign_best_channel(beta: np.ndarray) -> Partition:
    """Each subcarrier to the user with the largest beta; ties to the lowest index."""
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 2 or beta.shape[0] < 1 or beta.shape[1] < 1:
        raise ValueError(f"need an (N, K) matrix with N, K >= 1, got {beta.shape}")
    return Partition(owner=np.argmax(beta, axis=0), n_users=beta.shape[0])


def assign_utility_aware(
    beta: np.ndarray,
    utilities: Sequence[UtilityModel],
    budget: float,
) -> Partition:
    """Greedy partition by marginal utility increment under equal power split.

    Subcarriers are visited in descending order of their best channel
    coefficient (ties by index).  Each goes to the user whose utility rises
    the most when the subcarrier's equal-split rate is added to the rate the
    user has accumulated so far in this pass; ties go to the lowest user
    index.  Deterministic.
    """
    beta = np.asarray(beta, dtype=float)
    n, k = beta.shape
    if len(utilities) != n:
        raise ValueError(f"{n} users but {len(utilities)} utilities")
    p_bar = budget / k
    rate = np.log1p(beta * p_bar)
    order = np.lexsort((np.arange(k), -np.max(beta, axis=0)))
    owner = np.zeros(k, dtype=int)
    totals = np.zeros(n)
    current = np.array([float(u.value(0.0)) for u in utilities])
    for kk in order:
        best_gain = -np.inf
        best_user = 0
        for i, u in enumerate(utilities):
            gain = float(u.value(totals[i] + rate[i, kk])) - current[i]
            if gain > best_gain + 0.0:
                best_gain = gain
                best_user = i
        owner[kk] = best_user
        totals[best_user] += rate[best_user, kk]
        current[best_user] = float(
            utilities[best_user].value(totals[best_user])
        )
    return Partition(owner=owner, n_users=n)
