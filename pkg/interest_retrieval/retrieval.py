# =============================================================================
# RECHERCHE DES CANDIDATS
# =============================================================================
# Balayage complet exact, KNN restreint aux clusters d'intérêt sélectionnés,
# KNN restreint aux centroïdes KMeans, et mesure du temps d'inférence.
# =============================================================================

import logging
import statistics
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import sparse

from .exceptions import ConfigError
from .graph import Clustering
from .ingest import InteractionSet
from .interest import InterestProfile

logger = logging.getLogger(__name__)

SELECTION_MODES = ('top', 'sample')


@dataclass(frozen=True)
class RankedList:
    user_index: int
    items: np.ndarray
    scores: np.ndarray
    candidates: int = 0

    def __len__(self):
        return int(self.items.shape[0])

    @classmethod
    def empty(cls, user: int) -> 'RankedList':
        return cls(user, np.empty(0, dtype=np.int64), np.empty(0), 0)


@dataclass(frozen=True)
class EmbeddingIndex:
    """
    Vecteurs précalculés et items train à exclure. Avec `item_clusters` et
    `attention`, le score devient α[u, c(i)] · ⟨e_u, e_i⟩.
    """
    user_vectors: np.ndarray
    item_vectors: np.ndarray
    train: InteractionSet
    item_clusters: np.ndarray | None = None
    attention: np.ndarray | None = None

    @property
    def num_items(self) -> int:
        return int(self.item_vectors.shape[0])

    def train_items(self, user: int) -> np.ndarray:
        return self.train.items_of(user)

    def train_mask(self, user: int) -> np.ndarray:
        seen = np.zeros(self.num_items, dtype=bool)
        seen[self.train_items(user)] = True
        return seen

    def scores(self, user: int, candidates: np.ndarray | None = None) -> np.ndarray:
        vectors = self.item_vectors if candidates is None else self.item_vectors[candidates]
        # einsum : même ordre de sommation quel que soit le sous-ensemble
        out = np.einsum('ij,j->i', vectors, self.user_vectors[user]).astype(np.float64)
        if self.attention is not None:
            clusters = self.item_clusters if candidates is None else self.item_clusters[candidates]
            out *= self.attention[user, clusters]
        return out


@dataclass(frozen=True)
class ClusterBlocks:
    """
    Items permutés pour que le cluster c occupe les lignes contiguës
    [offsets[c], offsets[c + 1]) de `vectors`. `train_rows` donne, par
    utilisateur, les lignes de ses items train.
    """
    items: np.ndarray
    offsets: np.ndarray
    vectors: np.ndarray
    train_rows: sparse.csr_matrix

    @classmethod
    def build(cls, index: EmbeddingIndex, assignment: np.ndarray, num_clusters: int) -> 'ClusterBlocks':
        assignment = np.asarray(assignment, dtype=np.int64)
        if assignment.shape[0] != index.num_items:
            raise ConfigError(
                f"Affectation de {assignment.shape[0]} items pour {index.num_items} vecteurs d'items"
            )
        order = np.argsort(assignment, kind='stable')
        offsets = np.concatenate(([0], np.cumsum(np.bincount(assignment, minlength=num_clusters))))
        row_of = np.empty_like(order)
        row_of[order] = np.arange(order.size)
        train = index.train
        train_rows = sparse.csr_matrix(
            (np.ones(len(train), dtype=bool), (train.users, row_of[train.items])),
            shape=(train.num_users, order.size),
        )
        return cls(
            items=order,
            offsets=offsets,
            vectors=np.ascontiguousarray(index.item_vectors[order]),
            train_rows=train_rows,
        )

    @classmethod
    def from_clustering(cls, index: EmbeddingIndex, clustering: Clustering) -> 'ClusterBlocks':
        return cls.build(index, clustering.assignment, clustering.num_clusters)

    @property
    def num_clusters(self) -> int:
        return int(self.offsets.shape[0] - 1)

    def rows(self, selected: np.ndarray) -> np.ndarray:
        """Lignes des clusters `selected`, bloc après bloc."""
        starts = self.offsets[selected]
        lengths = self.offsets[selected + 1] - starts
        shift = starts - (np.cumsum(lengths) - lengths)
        return np.repeat(shift, lengths) + np.arange(int(lengths.sum()))

    def rank(self, index: EmbeddingIndex, user: int, selected: np.ndarray, k_rec: int) -> RankedList:
        """Top-K exact sur les blocs sélectionnés, hors items train."""
        rows = self.rows(selected)
        seen = np.zeros(self.items.shape[0], dtype=bool)
        seen[self.train_rows.indices[self.train_rows.indptr[user]:self.train_rows.indptr[user + 1]]] = True
        rows = rows[~seen[rows]]
        if rows.size == 0:
            logger.warning(f"RETRIEVAL : pool de candidats vide pour l'utilisateur {user}")
            return RankedList.empty(user)
        scores = np.einsum('ij,j->i', self.vectors[rows], index.user_vectors[user]).astype(np.float64)
        items = self.items[rows]
        if index.attention is not None:
            scores *= index.attention[user, index.item_clusters[items]]
        items, top = top_k_exact(items, scores, k_rec)
        return RankedList(user, items, top, int(rows.size))


@dataclass(frozen=True)
class KmeansModel:
    centroids: np.ndarray
    assignment: np.ndarray
    seed: int
    sse_history: tuple = ()

    @property
    def members(self) -> list[np.ndarray]:
        k = self.centroids.shape[0]
        order = np.argsort(self.assignment, kind='stable')
        return np.split(order, np.cumsum(np.bincount(self.assignment, minlength=k))[:-1])


# ================= TOP-K EXACT =================

def top_k_exact(candidates: np.ndarray, scores: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-k par score décroissant ; à score égal, l'item d'indice le plus bas."""
    size = candidates.shape[0]
    k = min(k, size)
    if k <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    if k < size:
        part = np.argpartition(-scores, k - 1)[:k]
        threshold = scores[part].min()
        above = np.flatnonzero(scores > threshold)
        tied = np.flatnonzero(scores == threshold)
        tied = tied[np.argsort(candidates[tied], kind='stable')]
        chosen = np.concatenate((above, tied[:k - above.size]))
    else:
        chosen = np.arange(size)
    order = np.lexsort((candidates[chosen], -scores[chosen]))
    chosen = chosen[order]
    return candidates[chosen].astype(np.int64), scores[chosen]


def full_scan_topk(index: EmbeddingIndex, user: int, candidate_items: np.ndarray | None = None,
                   k_rec: int = 50) -> RankedList:
    """Top-K exact sur tous les candidats, hors items train de l'utilisateur."""
    keep = ~index.train_mask(user)
    if candidate_items is None:
        scores = index.scores(user)
        candidates = np.flatnonzero(keep)
        items, top = top_k_exact(candidates, scores[candidates], k_rec)
        return RankedList(user, items, top, int(candidates.size))
    pool = np.unique(candidate_items)
    pool = pool[keep[pool]]
    if pool.size == 0:
        logger.warning(f"RETRIEVAL : pool de candidats vide pour l'utilisateur {user}")
        return RankedList.empty(user)
    items, top = top_k_exact(pool, index.scores(user, pool), k_rec)
    return RankedList(user, items, top, int(pool.size))


# ================= SÉLECTION DE CLUSTERS =================

def select_clusters(eta: InterestProfile, n: int, mode: str = 'top', seed=0) -> np.ndarray:
    """
    top    : les n clusters de plus fort η (à égalité, id le plus bas).
    sample : tirage pondéré par η sans remise ; au-delà du support, les
             clusters de poids nul suivent par id croissant.
    `seed` est un entier ou un numpy.random.Generator.
    """
    if n < 1:
        raise ValueError(f"n doit être >= 1 (reçu {n})")
    if mode not in SELECTION_MODES:
        raise ValueError(f"Mode de sélection inconnu : {mode!r}")
    k = eta.num_clusters
    dense = eta.dense()
    if mode == 'top':
        return np.lexsort((np.arange(k), -dense))[:n]

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    support = np.flatnonzero(dense > 0)
    weights = dense[support] / dense[support].sum()
    drawn = rng.choice(support, size=min(n, support.size), replace=False, p=weights)
    if n > support.size:
        zero = np.flatnonzero(dense <= 0)
        drawn = np.concatenate((drawn, zero[:n - support.size]))
    return drawn.astype(np.int64)


def _user_rng(mode: str, seed: int, user: int):
    return np.random.default_rng([seed, user]) if mode == 'sample' else seed


def select_clusters_batch(profiles: Mapping[int, InterestProfile], users: Sequence[int], n: int,
                          mode: str = 'top', seed: int = 0) -> dict[int, np.ndarray]:
    """
    `select_clusters` pour tout un lot d'utilisateurs ; en mode top, un seul
    tri stable de la matrice η du lot.
    """
    users = [int(u) for u in users]
    if mode != 'top' or not users:
        return {u: select_clusters(profiles[u], n, mode, _user_rng(mode, seed, u)) for u in users}
    if n < 1:
        raise ValueError(f"n doit être >= 1 (reçu {n})")
    k = profiles[users[0]].num_clusters
    eta = np.zeros((len(users), k))
    for row, user in enumerate(users):
        profile = profiles[user]
        eta[row, profile.clusters] = profile.weights
    chosen = np.argsort(-eta, axis=1, kind='stable')[:, :n]
    return dict(zip(users, chosen))


def cluster_topk(index: EmbeddingIndex, user: int, eta: InterestProfile, blocks: ClusterBlocks,
                 n_clusters: int, k_rec: int = 50, mode: str = 'top', seed: int = 0) -> RankedList:
    """KNN exact restreint à l'union des clusters sélectionnés pour l'utilisateur."""
    selected = select_clusters(eta, min(n_clusters, blocks.num_clusters), mode, _user_rng(mode, seed, user))
    return blocks.rank(index, user, selected, k_rec)


class ClusterRetriever:
    """
    Appelable user -> RankedList sur une sélection de clusters calculée
    d'avance pour tous les utilisateurs cibles.
    """

    def __init__(self, index: EmbeddingIndex, blocks: ClusterBlocks, selection: Mapping[int, np.ndarray],
                 k_rec: int = 50):
        self.index = index
        self.blocks = blocks
        self.selection = selection
        self.k_rec = k_rec

    @classmethod
    def for_users(cls, index: EmbeddingIndex, blocks: ClusterBlocks, profiles: Mapping[int, InterestProfile],
                  users: Sequence[int], n_clusters: int, k_rec: int = 50, mode: str = 'top',
                  seed: int = 0) -> 'ClusterRetriever':
        n = min(n_clusters, blocks.num_clusters)
        return cls(index, blocks, select_clusters_batch(profiles, users, n, mode, seed), k_rec)

    def __call__(self, user: int) -> RankedList:
        return self.blocks.rank(self.index, user, self.selection[user], self.k_rec)


# ================= KMEANS (VANILLA KNN) =================

def _squared_distances(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (x ** 2).sum(axis=1)[:, None] - 2.0 * x @ centroids.T + (centroids ** 2).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_plusplus(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _squared_distances(x, x[chosen]).ravel()
    closest[chosen] = 0.0
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            # Points restants confondus avec les centres : tirage uniforme
            remaining = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(remaining))
        chosen.append(nxt)
        closest = np.minimum(closest, _squared_distances(x, x[[nxt]]).ravel())
        closest[chosen] = 0.0
    return x[chosen].copy()


def kmeans(item_embeddings: np.ndarray, k: int, seed: int = 0, max_iters: int = 100,
           tol: float = 1e-6) -> KmeansModel:
    """Lloyd depuis une initialisation k-means++ ; SSE non croissante."""
    x = np.asarray(item_embeddings, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k doit être dans [1, {n}] (reçu {k})")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_plusplus(x, k, rng)

    history = []
    for it in range(max_iters):
        d2 = _squared_distances(x, centroids)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), labels]
        history.append(float(point_d2.sum()))

        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        updated = centroids.copy()
        filled = counts > 0
        updated[filled] = sums[filled] / counts[filled, None]
        # Clusters vides : ré-ensemencés sur les points les plus éloignés
        far = point_d2.copy()
        for empty in np.flatnonzero(~filled).tolist():
            idx = int(far.argmax())
            updated[empty] = x[idx]
            far[idx] = -1.0

        movement = float(np.sqrt(((updated - centroids) ** 2).sum(axis=1)).max())
        centroids = updated
        if movement < tol:
            break

    d2 = _squared_distances(x, centroids)
    labels = d2.argmin(axis=1)
    history.append(float(d2[np.arange(n), labels].sum()))
    logger.info(f"RETRIEVAL : KMeans k={k} convergé en {it + 1} itérations, SSE {history[-1]:.4f}")
    return KmeansModel(centroids, labels.astype(np.int64), seed, tuple(history))


def kmeans_topk(index: EmbeddingIndex, user: int, kmeans_model: KmeansModel,
                n_centroids: int, k_rec: int = 50, blocks: ClusterBlocks | None = None) -> RankedList:
    """
    Centroïdes classés par ⟨e_u, c⟩, pool = membres des n meilleurs.
    `blocks` (items rangés par centroïde) se construit une fois par modèle.
    """
    if blocks is None:
        blocks = ClusterBlocks.build(index, kmeans_model.assignment, kmeans_model.centroids.shape[0])
    affinity = kmeans_model.centroids @ index.user_vectors[user].astype(np.float64)
    k = affinity.shape[0]
    selected = np.lexsort((np.arange(k), -affinity))[:n_centroids]
    return blocks.rank(index, user, selected, k_rec)


# ================= CHRONOMÉTRAGE =================

@dataclass
class TimingReport:
    strategy: str
    users: int
    total_seconds: float
    median_seconds: float
    candidates_scored: int
    repetitions: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'strategy': self.strategy,
            'users': self.users,
            'total_seconds': self.total_seconds,
            'median_seconds': self.median_seconds,
            'candidates_scored': self.candidates_scored,
        }


def benchmark_inference(strategy: Callable[[int], RankedList], users: Sequence[int],
                        repetitions: int = 3, name: str = 'strategy'):
    """
    Temps mural pour produire les listes de tous les `users`, sur un thread.
    Retourne (TimingReport, listes de la dernière répétition).
    `total_seconds` est la médiane des répétitions ; `median_seconds` la
    latence médiane par utilisateur.
    """
    if repetitions < 1:
        raise ConfigError("repetitions doit être >= 1")
    torch.set_num_threads(1)
    users = list(users)
    totals, per_user, lists = [], [], []
    for _ in range(repetitions):
        lists, latencies = [], []
        for user in users:
            start = time.perf_counter()
            lists.append(strategy(user))
            latencies.append(time.perf_counter() - start)
        totals.append(sum(latencies))
        per_user.append(statistics.median(latencies) if latencies else 0.0)

    median_rep = sorted(range(repetitions), key=lambda r: totals[r])[repetitions // 2]
    report = TimingReport(
        strategy=name,
        users=len(users),
        total_seconds=totals[median_rep],
        median_seconds=per_user[median_rep],
        candidates_scored=sum(r.candidates for r in lists),
        repetitions=totals,
    )
    logger.info(
        f"RETRIEVAL : {name} sur {len(users)} utilisateurs : {report.total_seconds:.3f} s "
        f"(médiane de {repetitions}), {report.candidates_scored} candidats évalués"
    )
    return report, lists
