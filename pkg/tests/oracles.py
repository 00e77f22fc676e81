"""Brute-force reference computations, independent of the library code paths."""

import itertools

import numpy as np


def closure_components(nodes, edges):
    """Group nodes by mutual reachability using a transitive-closure matrix.

    Reachability is closed under repeated boolean squaring of (I + adjacency)
    until it stops changing.
    """
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    reach = np.eye(n, dtype=bool)
    for s, d in edges:
        reach[idx[s], idx[d]] = True
    while True:
        nxt = (reach.astype(np.int64) @ reach.astype(np.int64)) > 0
        if (nxt == reach).all():
            break
        reach = nxt
    mutual = reach & reach.T
    groups = []
    seen = set()
    for i in range(n):
        if i in seen:
            continue
        members = {nodes[j] for j in range(n) if mutual[i, j]}
        seen.update(idx[m] for m in members)
        groups.append(frozenset(members))
    return groups


def direct_mutual_gaps(nodes, edges, members):
    """Nodes in ``members`` missing a direct two-way edge to some other member."""
    edges = set(edges)
    flagged = set()
    for u, v in itertools.combinations([n for n in nodes if n in members], 2):
        if (u, v) not in edges or (v, u) not in edges:
            flagged.update((u, v))
    return flagged


def powerset_minimal_majorities(weights):
    """Inclusion-minimal index sets whose weight exceeds half the total."""
    total = sum(weights)
    n = len(weights)
    wins = {}
    for mask in range(1, 1 << n):
        wins[mask] = 2 * sum(weights[i] for i in range(n) if mask >> i & 1) > total
    minimal = []
    for mask, ok in wins.items():
        if not ok:
            continue
        # every proper non-empty submask must lose
        sub = (mask - 1) & mask
        proper_win = False
        while sub:
            if wins[sub]:
                proper_win = True
                break
            sub = (sub - 1) & mask
        if not proper_win:
            minimal.append(frozenset(i for i in range(n) if mask >> i & 1))
    return minimal
