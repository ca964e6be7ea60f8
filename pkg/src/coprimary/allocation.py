"""
Subcarrier-to-user assignment.

Each base station fills its dedicated subcarriers first, then offers the
shared pool to the users left over. A subcarrier hosts at most ``N_T``
users (one spatial group) and a user gets at most one subcarrier. Two
matchers are provided: capacitated deferred acceptance (users propose to
subcarriers) and a max-weight transportation problem solved as a linear
program.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import linprog

from .channel import DEDICATED, SHARED, ChannelSet
from .linalg import frob_norm_sq

__all__ = [
    "GALE_SHAPLEY",
    "TRANSPORTATION",
    "METHODS",
    "PreferenceProfile",
    "Assignment",
    "AllocationError",
    "band_gains",
    "preferences_from_gains",
    "build_preferences",
    "gale_shapley",
    "transportation_assign",
    "allocate_two_stage",
    "stability_check",
    "count_feasible_groups",
]

GALE_SHAPLEY = "gale_shapley"
TRANSPORTATION = "transportation"
METHODS = (GALE_SHAPLEY, TRANSPORTATION)

INTEGRALITY_TOL = 1e-9


class AllocationError(RuntimeError):
    pass


@dataclass
class PreferenceProfile:
    """Strict preference lists for one (cell, band) matching pass.

    ``user_prefs[u]`` lists subcarriers best first and
    ``subcarrier_prefs[s]`` lists users best first. ``gains[i, j]`` is the
    scalar gain of ``users[i]`` on ``subcarriers[j]`` the lists were built
    from.
    """

    users: list
    subcarriers: list
    user_prefs: dict
    subcarrier_prefs: dict
    gains: np.ndarray
    band: str = DEDICATED
    cell: int = 0

    def rank(self, subcarrier) -> dict:
        """Position of each user in the subcarrier's list (lower is better)."""
        return {u: i for i, u in enumerate(self.subcarrier_prefs[subcarrier])}


@dataclass
class Assignment:
    """Accepted users per subcarrier in each band, plus the unmatched users.

    ``proposals`` counts the proposals issued by deferred acceptance in each
    pass that produced this assignment (empty for the transportation method).
    """

    cell: int = 0
    dedicated: dict = field(default_factory=dict)
    shared: dict = field(default_factory=dict)
    unmatched: list = field(default_factory=list)
    proposals: list = field(default_factory=list)

    def band(self, band: str) -> dict:
        return self.dedicated if band == DEDICATED else self.shared

    def matched(self) -> dict:
        """user -> (band, subcarrier)"""
        out = {}
        for band in (DEDICATED, SHARED):
            for s, group in self.band(band).items():
                for u in group:
                    if u in out:
                        raise AllocationError(f"user {u} holds two subcarriers")
                    out[u] = (band, s)
        return out

    def links(self) -> list:
        """Scheduled (user, band, subcarrier) triples, dedicated band first."""
        return [
            (u, band, s)
            for band in (DEDICATED, SHARED)
            for s in sorted(self.band(band))
            for u in self.band(band)[s]
        ]


def _ranked(keys, values) -> list:
    # descending value, ascending key on ties
    return [k for _, k in sorted(zip(values, keys), key=lambda kv: (-kv[0], kv[1]))]


def preferences_from_gains(gains, users=None, subcarriers=None, band=DEDICATED, cell=0) -> PreferenceProfile:
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 2:
        raise ValueError("gains must be a users x subcarriers matrix")
    users = list(range(gains.shape[0])) if users is None else list(users)
    subcarriers = list(range(gains.shape[1])) if subcarriers is None else list(subcarriers)
    user_prefs = {u: _ranked(subcarriers, gains[i]) for i, u in enumerate(users)}
    subcarrier_prefs = {s: _ranked(users, gains[:, j]) for j, s in enumerate(subcarriers)}
    return PreferenceProfile(users, subcarriers, user_prefs, subcarrier_prefs, gains, band, cell)


def band_gains(channels: ChannelSet, cell: int, band: str, users=None) -> np.ndarray:
    """Squared Frobenius norm of each own-cell channel, shape (users, subcarriers)."""
    h = channels.own(cell, band)
    if users is not None:
        h = h[list(users)]
    return frob_norm_sq(h)


def build_preferences(channels: ChannelSet, cell: int, band: str, users=None) -> PreferenceProfile:
    """Rank subcarriers and users by channel gain ``||H||_F^2``.

    `users` restricts the profile to a subset of the cell's users (the
    shared-band pass only sees the users left over by the dedicated pass).
    """
    if users is None:
        users = range(channels.topology.users_per_cell[cell])
    users = list(users)
    gains = band_gains(channels, cell, band, users)
    subcarriers = range(channels.topology.subcarriers(cell, band))
    return preferences_from_gains(gains.reshape(len(users), -1), users, subcarriers, band, cell)


def gale_shapley(prefs: PreferenceProfile, capacity: int) -> Assignment:
    """User-proposing deferred acceptance with a quota of `capacity` per subcarrier.

    Every free user with a non-empty list proposes to its best remaining
    subcarrier, which is then struck from the user's list whatever the
    outcome. A subcarrier with room accepts; a full one replaces its
    least-preferred user when the proposer ranks higher, otherwise it
    rejects. Rounds repeat until all users hold a subcarrier or every free
    user has run out of subcarriers.
    """
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    remaining = {u: list(prefs.user_prefs[u]) for u in prefs.users}
    ranks = {s: prefs.rank(s) for s in prefs.subcarriers}
    accepted = {s: [] for s in prefs.subcarriers}
    holder = {}
    proposals = 0

    active = True
    while active:
        active = False
        for u in prefs.users:
            if u in holder or not remaining[u]:
                continue
            active = True
            s = remaining[u].pop(0)
            proposals += 1
            group = accepted[s]
            rank = ranks[s]
            if len(group) < capacity:
                group.append(u)
                holder[u] = s
            else:
                worst = max(group, key=rank.__getitem__)
                if rank[u] < rank[worst]:
                    group[group.index(worst)] = u
                    del holder[worst]
                    holder[u] = s

    result = Assignment(cell=prefs.cell, proposals=[proposals])
    result.band(prefs.band).update(
        {s: sorted(g, key=ranks[s].__getitem__) for s, g in accepted.items() if g}
    )
    result.unmatched = [u for u in prefs.users if u not in holder]
    return result


def transportation_assign(
    gains, capacity: int, users=None, subcarriers=None, band=DEDICATED, cell=0
) -> Assignment:
    """Max-weight transportation assignment solved as a linear program.

    Subcarriers supply at most `capacity` users, each user takes at most one
    subcarrier, and exactly ``min(#users, capacity * #subcarriers)`` users are
    served. The constraint matrix is totally unimodular, so the simplex
    vertex is integral; a fractional solution is treated as a solver fault.
    """
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 2:
        raise ValueError("gains must be a users x subcarriers matrix")
    if not np.all(np.isfinite(gains)) or np.any(gains < 0):
        raise ValueError("gains must be finite and non-negative")
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    n_users, n_sub = gains.shape
    users = list(range(n_users)) if users is None else list(users)
    subcarriers = list(range(n_sub)) if subcarriers is None else list(subcarriers)
    result = Assignment(cell=cell)
    if n_users == 0 or n_sub == 0:
        result.unmatched = list(users)
        return result

    # x[i, j] flattened row-major: user i on subcarrier j
    nvar = n_users * n_sub
    a_user = np.kron(np.eye(n_users), np.ones((1, n_sub)))
    a_sub = np.kron(np.ones((1, n_users)), np.eye(n_sub))
    a_ub = np.vstack([a_user, a_sub])
    b_ub = np.concatenate([np.ones(n_users), np.full(n_sub, float(capacity))])
    served = min(n_users, capacity * n_sub)
    res = linprog(
        -gains.ravel(),
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=np.ones((1, nvar)),
        b_eq=[float(served)],
        bounds=(0.0, 1.0),
        method="highs-ds",
    )
    if res.status != 0:
        raise AllocationError(f"transportation LP failed: {res.message}")
    x = res.x.reshape(n_users, n_sub)
    if np.max(np.abs(x - np.round(x))) > INTEGRALITY_TOL:
        raise AllocationError("transportation LP returned a fractional vertex")
    x = np.round(x).astype(int)

    groups = result.band(band)
    for j, s in enumerate(subcarriers):
        members = [users[i] for i in np.flatnonzero(x[:, j])]
        if members:
            groups[s] = members
    result.unmatched = [users[i] for i in range(n_users) if not x[i].any()]
    return result


def _merge(first: Assignment, second: Assignment) -> Assignment:
    out = Assignment(cell=first.cell)
    out.dedicated = {**first.dedicated, **second.dedicated}
    out.shared = {**first.shared, **second.shared}
    out.unmatched = list(second.unmatched)
    out.proposals = first.proposals + second.proposals
    return out


def _run(method: str, prefs: PreferenceProfile, capacity: int) -> Assignment:
    if method == GALE_SHAPLEY:
        return gale_shapley(prefs, capacity)
    if method == TRANSPORTATION:
        return transportation_assign(
            prefs.gains, capacity, prefs.users, prefs.subcarriers, prefs.band, prefs.cell
        )
    raise ValueError(f"unknown allocation method {method!r}")


def allocate_two_stage(channels: ChannelSet, cell: int, method: str, capacity: int | None = None) -> Assignment:
    """Dedicated band first, then the shared pool for whoever is left.

    `capacity` defaults to the cell's transmit antenna count. Users still
    unmatched after both passes stay unmatched and carry zero rate.
    """
    topo = channels.topology
    if capacity is None:
        capacity = topo.tx_antennas[cell]
    first = _run(method, build_preferences(channels, cell, DEDICATED), capacity)
    if not first.unmatched or topo.shared_subcarriers == 0:
        return first
    second = _run(method, build_preferences(channels, cell, SHARED, first.unmatched), capacity)
    return _merge(first, second)


def stability_check(assignment: Assignment, prefs: PreferenceProfile, capacity: int) -> bool:
    """True when no user-subcarrier pair blocks the band's matching.

    A pair (u, s) blocks if u prefers s to its current subcarrier (or is
    unmatched) and s either has room or ranks u above one of its users.
    """
    groups = assignment.band(prefs.band)
    where = {u: s for s, g in groups.items() for u in g}
    for u in prefs.users:
        order = prefs.user_prefs[u]
        current = where.get(u)
        better = order if current is None else order[: order.index(current)]
        for s in better:
            group = groups.get(s, [])
            if len(group) < capacity:
                return False
            rank = prefs.rank(s)
            if rank[u] < max(rank[v] for v in group):
                return False
    return True


def count_feasible_groups(users: int, capacity: int) -> int:
    """Number of non-empty user groups of size at most `capacity`."""
    if users < 1 or capacity < 1:
        raise ValueError("users and capacity must be >= 1")
    return sum(comb(users, t) for t in range(1, min(capacity, users) + 1))
