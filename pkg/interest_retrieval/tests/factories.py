"""Petits jeux de données synthétiques partagés par les tests."""

from pathlib import Path

import numpy as np

from ..graph import ItemGraph
from ..ingest import InteractionSet, readonly


def interactions(num_users, num_items, pairs, timestamps=None) -> InteractionSet:
    """InteractionSet trié (user, item) à partir de paires, doublons retirés."""
    pairs = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
    if pairs.size:
        pairs = np.unique(pairs, axis=0)
    ts = np.zeros(len(pairs), dtype=np.int64) if timestamps is None else np.asarray(timestamps, dtype=np.int64)
    return InteractionSet(num_users, num_items, readonly(pairs[:, 0]), readonly(pairs[:, 1]), readonly(ts))


def random_interactions(rng, num_users, num_items, density=0.3, min_per_user=1) -> InteractionSet:
    dense = rng.random((num_users, num_items)) < density
    for user in range(num_users):
        missing = min_per_user - int(dense[user].sum())
        if missing > 0:
            free = np.flatnonzero(~dense[user])
            dense[user, rng.choice(free, size=missing, replace=False)] = True
    rows, cols = np.nonzero(dense)
    return interactions(num_users, num_items, zip(rows.tolist(), cols.tolist()))


def two_cliques() -> ItemGraph:
    """Deux 4-cliques {0..3} et {4..7} reliées par l'arête (3, 4)."""
    edges = [(a, b) for group in ((0, 1, 2, 3), (4, 5, 6, 7))
             for i, a in enumerate(group) for b in group[i + 1:]]
    return ItemGraph.from_edges(8, edges + [(3, 4)])


def community_ratings(num_users=40, num_items=30, per_user=12, groups=3, seed=0):
    """
    Lignes MovieLens (user, item, note, horodatage) où chaque utilisateur
    engage surtout les items de son groupe d'intérêt.
    """
    rng = np.random.default_rng(seed)
    items_by_group = np.array_split(np.arange(num_items), groups)
    rows, clock = [], 978300000
    for user in range(num_users):
        own = items_by_group[user % groups]
        others = np.setdiff1d(np.arange(num_items), own)
        n_own = min(len(own), per_user - 2)
        chosen = np.concatenate((rng.choice(own, size=n_own, replace=False),
                                 rng.choice(others, size=per_user - n_own, replace=False)))
        for item in chosen.tolist():
            clock += int(rng.integers(1, 60))
            rows.append((user + 1, item + 1, int(rng.integers(1, 6)), clock))
    return rows


def write_ratings(path, rows) -> Path:
    path = Path(path)
    path.write_text(''.join(f"{u}::{i}::{r}::{t}\n" for u, i, r, t in rows), encoding='latin-1')
    return path
