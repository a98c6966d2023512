# =============================================================================
# GRAPHES D'ENGAGEMENT ET CLUSTERS D'INTÉRÊTS
# =============================================================================
# Graphe biparti user-item, projection item-item par co-engagement (non
# pondérée) et détection de communautés Louvain avec plafond de taille.
# =============================================================================

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .exceptions import ConfigError, DataError, NumericalError
from .ingest import InteractionSet

logger = logging.getLogger(__name__)

MIN_MODULARITY_GAIN = 1e-7
MAX_OUTER_PASSES = 50
MAX_SWEEPS = 100
PROJECTION_CHUNK = 2048


# ================= TYPES DE GRAPHES =================

@dataclass(frozen=True)
class BipartiteGraph:
    """G = (U, I, R) : arêtes non orientées user-item, une par engagement."""
    num_users: int
    num_items: int
    user_matrix: sparse.csr_matrix
    item_matrix: sparse.csr_matrix

    def user_adj(self, user: int) -> np.ndarray:
        m = self.user_matrix
        return m.indices[m.indptr[user]:m.indptr[user + 1]]

    def item_adj(self, item: int) -> np.ndarray:
        m = self.item_matrix
        return m.indices[m.indptr[item]:m.indptr[item + 1]]

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_matrix.indptr)

    @property
    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_matrix.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.user_matrix.nnz)


@dataclass(frozen=True)
class ItemGraph:
    """
    Graphe item-item symétrique en CSR. Non pondéré et sans boucle après
    projection ; les niveaux agrégés de Louvain portent poids et boucles.
    """
    adjacency: sparse.csr_matrix

    @property
    def num_items(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def num_edges(self) -> float:
        """m : moitié du poids total (une arête = deux entrées symétriques)."""
        return float(self.adjacency.sum()) / 2.0

    def neighbors(self, item: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[item]:a.indptr[item + 1]]

    @classmethod
    def from_edges(cls, num_items: int, edges) -> 'ItemGraph':
        edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        rows = np.concatenate((edges[:, 0], edges[:, 1]))
        cols = np.concatenate((edges[:, 1], edges[:, 0]))
        adj = sparse.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(num_items, num_items)
        )
        adj.sum_duplicates()
        adj.data[:] = 1.0
        adj.sort_indices()
        return cls(adj)

    def subgraph(self, nodes: np.ndarray) -> 'ItemGraph':
        return ItemGraph(self.adjacency[nodes][:, nodes].tocsr())


@dataclass(frozen=True)
class Clustering:
    """Affectation item -> intérêt, ids denses dans [0, K)."""
    assignment: np.ndarray
    num_clusters: int
    resolution: float
    seed: int
    pass_modularities: tuple = ()

    @classmethod
    def from_labels(cls, labels, resolution, seed, pass_modularities=()) -> 'Clustering':
        labels = _dense_labels(np.asarray(labels, dtype=np.int64))
        labels.setflags(write=False)
        num_clusters = int(labels.max()) + 1 if labels.size else 0
        return cls(labels, num_clusters, float(resolution), int(seed), tuple(pass_modularities))

    @cached_property
    def cluster_members(self) -> list[np.ndarray]:
        order = np.argsort(self.assignment, kind='stable')
        bounds = np.cumsum(np.bincount(self.assignment, minlength=self.num_clusters))
        return np.split(order, bounds[:-1])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clusters)

    @property
    def num_items(self) -> int:
        return int(self.assignment.shape[0])


def _dense_labels(labels: np.ndarray) -> np.ndarray:
    """Renumérote les clusters par ordre de leur plus petit item."""
    if labels.size == 0:
        return labels.copy()
    uniques, first = np.unique(labels, return_index=True)
    rank = np.empty(uniques.size, dtype=np.int64)
    rank[np.argsort(first, kind='stable')] = np.arange(uniques.size)
    return rank[np.searchsorted(uniques, labels)]


# ================= CONSTRUCTION =================

def build_bipartite(interactions: InteractionSet) -> BipartiteGraph:
    if len(interactions) == 0:
        raise DataError("Graphe biparti vide : aucune interaction.")
    user_matrix = interactions.matrix
    item_matrix = user_matrix.T.tocsr()
    item_matrix.sort_indices()
    return BipartiteGraph(
        num_users=interactions.num_users,
        num_items=interactions.num_items,
        user_matrix=user_matrix,
        item_matrix=item_matrix,
    )


def project_co_engagement(bg: BipartiteGraph, chunk_size: int = PROJECTION_CHUNK) -> ItemGraph:
    """
    Arête (i, j), i != j, ssi au moins un utilisateur a engagé i et j.
    Les utilisateurs sont traités par blocs puis fusionnés ; pas de matrice dense.
    """
    n = bg.num_items
    binary = bg.user_matrix.astype(np.int32)
    merged = sparse.csr_matrix((n, n), dtype=np.int32)
    for start in range(0, bg.num_users, chunk_size):
        block = binary[start:start + chunk_size]
        co = (block.T @ block).tocsr()
        co.data[:] = 1
        merged = merged + co
        merged.data[:] = 1

    merged = merged.tocoo()
    off_diag = merged.row != merged.col
    adjacency = sparse.csr_matrix(
        (np.ones(int(off_diag.sum())), (merged.row[off_diag], merged.col[off_diag])),
        shape=(n, n),
    )
    adjacency.sort_indices()
    graph = ItemGraph(adjacency)
    logger.info(f"LOUVAIN : graphe de co-engagement {n} items, {int(graph.num_edges)} arêtes")
    return graph


# ================= MODULARITÉ =================

def _modularity(adjacency: sparse.csr_matrix, labels: np.ndarray, resolution: float) -> float:
    two_m = float(adjacency.sum())
    if two_m == 0.0:
        return 0.0
    coo = adjacency.tocoo()
    k = int(labels.max()) + 1
    same = labels[coo.row] == labels[coo.col]
    internal = np.bincount(labels[coo.row[same]], weights=coo.data[same], minlength=k)
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    totals = np.bincount(labels, weights=degrees, minlength=k)
    return float(internal.sum() / two_m - resolution * np.sum((totals / two_m) ** 2))


def modularity(g: ItemGraph, c, resolution: float = 1.0) -> float:
    """
    Q = (1/2m) sum_ij [A_ij - γ k_i k_j / 2m] δ(c_i, c_j) ; vaut 0 si m = 0.
    `c` est un Clustering ou un tableau d'affectation.
    """
    labels = c.assignment if isinstance(c, Clustering) else np.asarray(c, dtype=np.int64)
    if labels.shape[0] != g.num_items:
        raise ValueError("L'affectation doit couvrir tous les items.")
    return _modularity(g.adjacency, labels, resolution)


# ================= LOUVAIN =================

def _local_moving(level: sparse.csr_matrix, resolution: float, rng) -> tuple[np.ndarray, bool]:
    """Phase 1 : déplacements locaux jusqu'à ce qu'aucun nœud ne bouge."""
    n = level.shape[0]
    indptr, indices, weights = level.indptr, level.indices, level.data
    degrees = np.asarray(level.sum(axis=1)).ravel()
    two_m = degrees.sum()
    community = np.arange(n)
    totals = degrees.copy()
    moved_any = False

    for _ in range(MAX_SWEEPS):
        moves = 0
        for node in rng.permutation(n):
            nbrs = indices[indptr[node]:indptr[node + 1]]
            w = weights[indptr[node]:indptr[node + 1]]
            not_self = nbrs != node
            if not not_self.any():
                continue
            own = community[node]
            k_i = degrees[node]
            totals[own] -= k_i

            candidates, inverse = np.unique(community[nbrs[not_self]], return_inverse=True)
            k_in = np.bincount(inverse, weights=w[not_self])
            gains = k_in - resolution * totals[candidates] * k_i / two_m
            # np.argmax garde le premier maximum : l'id le plus bas gagne
            best = int(np.argmax(gains))
            pos = np.searchsorted(candidates, own)
            own_in = k_in[pos] if pos < candidates.size and candidates[pos] == own else 0.0
            own_gain = own_in - resolution * totals[own] * k_i / two_m

            target = own
            if candidates[best] != own and gains[best] > own_gain + 1e-12:
                target = candidates[best]
                moves += 1
            community[node] = target
            totals[target] += k_i
        if moves == 0:
            break
        moved_any = True
    return community, moved_any


def _aggregate(level: sparse.csr_matrix, community: np.ndarray) -> sparse.csr_matrix:
    """Phase 2 : une communauté devient un nœud, poids internes en boucle."""
    n = level.shape[0]
    k = int(community.max()) + 1
    membership = sparse.csr_matrix((np.ones(n), (np.arange(n), community)), shape=(n, k))
    return (membership.T @ level @ membership).tocsr()


def _louvain_labels(adjacency: sparse.csr_matrix, resolution: float, seed: int):
    n = adjacency.shape[0]
    labels = np.arange(n)
    if n == 0 or adjacency.nnz == 0:
        return labels, [0.0]

    rng = np.random.default_rng(seed)
    level = adjacency.astype(np.float64)
    q_prev = _modularity(adjacency, labels, resolution)
    history = [q_prev]
    for outer in range(MAX_OUTER_PASSES):
        community, moved = _local_moving(level, resolution, rng)
        if not moved:
            break
        community = _dense_labels(community)
        labels = community[labels]
        q = _modularity(adjacency, labels, resolution)
        if q < q_prev - 1e-10:
            raise NumericalError(
                f"Modularité décroissante à la passe {outer} : {q_prev:.9f} -> {q:.9f}"
            )
        history.append(q)
        logger.debug(f"LOUVAIN : passe {outer}, {int(community.max()) + 1} communautés, Q={q:.6f}")
        level = _aggregate(level, community)
        if q - q_prev < MIN_MODULARITY_GAIN:
            break
        q_prev = q
    return _dense_labels(labels), history


def _split_oversized(adjacency, resolution, seed, cap) -> np.ndarray:
    local, _ = _louvain_labels(adjacency, resolution, seed)
    n = adjacency.shape[0]
    if local.max(initial=0) == 0:
        # Re-partitionnement impossible : blocs contigus par id trié
        return np.arange(n) // cap
    result = local.copy()
    next_label = int(local.max()) + 1
    for cluster in np.flatnonzero(np.bincount(local) > cap):
        idx = np.flatnonzero(local == cluster)
        inner = _split_oversized(adjacency[idx][:, idx].tocsr(), resolution * 2.0, seed, cap)
        result[idx] = next_label + inner
        next_label += int(inner.max()) + 1
    return _dense_labels(result)


def _enforce_size_cap(adjacency, labels, resolution, seed, cap) -> np.ndarray:
    labels = labels.copy()
    next_label = int(labels.max()) + 1
    for cluster in np.flatnonzero(np.bincount(labels) > cap):
        nodes = np.flatnonzero(labels == cluster)
        sub = adjacency[nodes][:, nodes].tocsr()
        inner = _split_oversized(sub, resolution * 2.0, seed, cap)
        labels[nodes] = next_label + inner
        next_label += int(inner.max()) + 1
    return labels


def louvain(g: ItemGraph, resolution: float = 1.0, seed: int = 0,
            max_cluster_size: int | None = None) -> Clustering:
    """
    Louvain en deux phases (déplacements locaux puis agrégation), répétées
    jusqu'à un gain de modularité < 1e-7 ou 50 passes.

    L'ordre de visite est une permutation tirée de `seed`. Les items sans voisin
    restent seuls dans leur cluster. Avec `max_cluster_size`, chaque cluster trop
    gros est re-partitionné sur son sous-graphe avec une résolution doublée.
    """
    if resolution <= 0:
        raise ConfigError(f"La résolution doit être > 0 (reçu {resolution})")
    if max_cluster_size is not None and max_cluster_size < 1:
        raise ConfigError(f"max_cluster_size doit être >= 1 (reçu {max_cluster_size})")

    labels, history = _louvain_labels(g.adjacency, resolution, seed)
    if max_cluster_size is not None and labels.size:
        labels = _enforce_size_cap(g.adjacency, labels, resolution, seed, max_cluster_size)
    clustering = Clustering.from_labels(labels, resolution, seed, history)
    logger.info(
        f"LOUVAIN : K={clustering.num_clusters} clusters pour {g.num_items} items "
        f"(γ={resolution}, graine {seed}, Q={history[-1]:.4f})"
    )
    return clustering


def cluster_size_summary(clustering: Clustering) -> dict:
    sizes = clustering.sizes
    return {
        'clusters': clustering.num_clusters,
        'ratio': clustering.num_clusters / max(clustering.num_items, 1),
        'min_size': int(sizes.min()),
        'median_size': float(np.median(sizes)),
        'max_size': int(sizes.max()),
        'singletons': int((sizes == 1).sum()),
    }


# Grille de résolution : ratio K/|I| visé -> γ
RESOLUTION_GRID = {0.02: 1.02, 0.05: 1.05, 0.10: 1.1}


def resolution_for_ratio(target_ratio: float) -> float:
    """γ de la grille dont le ratio visé est le plus proche de `target_ratio`."""
    if target_ratio <= 0:
        raise ConfigError(f"Ratio de clusters invalide : {target_ratio}")
    closest = min(RESOLUTION_GRID, key=lambda r: (abs(r - target_ratio), r))
    return RESOLUTION_GRID[closest]
