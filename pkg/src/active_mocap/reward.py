"""Team reconstruction reward and Shapley-based per-camera credit (CTCR)."""

import math
from itertools import combinations

import numpy as np

from .geometry import geman_mcclure, mpjpe
from .perception import reconstruct

MAX_TEAM = 12
REWARD_SCALE_MM = 50.0


class TeamTooLarge(Exception):
    pass


def team_reward(subset, packets, truth_skeleton, target_id=0, method="dlt",
                last_estimates=None, rng=None):
    """Reconstruction reward of one camera coalition.

    Zero for coalitions of size <= 1 and for coalitions that fail to
    reconstruct the target; otherwise 1 - GemanMcClure(MPJPE) which lives
    in (-1, 1].
    """
    if len(subset) <= 1:
        return 0.0
    recon = reconstruct(packets, subset, method=method, last_estimates=last_estimates, rng=rng)
    if not recon.reconstructed.get(target_id, False):
        return 0.0
    return 1.0 - geman_mcclure(mpjpe(recon.skeletons[target_id], truth_skeleton),
                               REWARD_SCALE_MM)


def coalition_table(packets, truth_skeleton, target_id=0, method="dlt",
                    last_estimates=None, rng=None):
    """Evaluate team_reward on every subset of the reporting cameras.

    The 2D detections are shared across subsets; only the triangulation is
    recomputed per coalition.  Returns {frozenset: reward}.
    """
    ids = sorted(p.sender_id for p in packets)
    n = len(ids)
    if n > MAX_TEAM:
        raise TeamTooLarge(f"{n} cameras exceeds exact-enumeration cap {MAX_TEAM}")
    table = {}
    for size in range(n + 1):
        for subset in combinations(ids, size):
            key = frozenset(subset)
            if size <= 1:
                table[key] = 0.0
            else:
                table[key] = team_reward(key, packets, truth_skeleton, target_id,
                                         method, last_estimates, rng)
    return table


def ctcr(table):
    """Per-camera contribution rewards: n times each camera's Shapley value.

    table must hold a reward for every subset of the player set (the union
    of all keys).  Exact enumeration; capped at 12 players.
    """
    players = sorted(set().union(*table.keys())) if table else []
    n = len(players)
    if n > MAX_TEAM:
        raise TeamTooLarge(f"{n} cameras exceeds exact-enumeration cap {MAX_TEAM}")
    expected = 2 ** n
    if len(table) != expected:
        raise ValueError(f"table must cover all {expected} subsets, has {len(table)}")
    fact = [math.factorial(k) for k in range(n + 1)]
    out = np.zeros(n)
    for idx, player in enumerate(players):
        others = [p for p in players if p != player]
        phi = 0.0
        for size in range(n):
            weight = fact[size] * fact[n - size - 1] / fact[n]
            for subset in combinations(others, size):
                key = frozenset(subset)
                phi += weight * (table[key | {player}] - table[key])
        out[idx] = n * phi
    return out
