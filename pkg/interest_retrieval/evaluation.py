# =============================================================================
# ÉVALUATION : MÉTRIQUES, BASELINES, COHORTES ET STABILITÉ
# =============================================================================

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from .exceptions import ConfigError
from .graph import build_bipartite, louvain, project_co_engagement
from .ingest import Dataset, InteractionSet, temporal_prefix
from .retrieval import RankedList
from .training import EpochLog, training_summary

logger = logging.getLogger(__name__)

METRICS = ('precision', 'recall', 'ndcg')
STABILITY_FRACTIONS = (0.99, 0.98, 0.97, 0.96, 0.95)
DECILES = 10


def _items(recommended) -> list[int]:
    items = recommended.items if isinstance(recommended, RankedList) else recommended
    return [int(i) for i in items]


# ================= MÉTRIQUES DE CLASSEMENT =================

def precision_at_k(recommended, relevant, k: int, available: int | None = None) -> float:
    """
    |top-K ∩ pertinents| / K. Seul un utilisateur ayant moins de K candidats
    disponibles (`available`, items hors train) divise par la longueur de sa
    liste ; un pool tronqué par la stratégie garde le dénominateur K.
    """
    items = _items(recommended)
    denominator = min(k, len(items)) if available is not None and available < k else k
    if denominator == 0:
        return 0.0
    relevant = set(relevant)
    return sum(1 for i in items[:k] if i in relevant) / denominator


def recall_at_k(recommended, relevant, k: int) -> float | None:
    """None quand il n'y a aucun item pertinent : l'utilisateur est ignoré."""
    relevant = set(relevant)
    if not relevant:
        return None
    return sum(1 for i in _items(recommended)[:k] if i in relevant) / len(relevant)


def ndcg_at_k(recommended, relevant, k: int) -> float | None:
    relevant = set(relevant)
    if not relevant:
        return None
    dcg = sum(1.0 / math.log2(rank + 2)
              for rank, item in enumerate(_items(recommended)[:k]) if item in relevant)
    ideal = sum(1.0 / math.log2(rank + 2) for rank in range(min(k, len(relevant))))
    return dcg / ideal


# ================= BASELINE MOST POPULAR =================

def popularity_ranking(train_set: InteractionSet) -> tuple[np.ndarray, np.ndarray]:
    """Items classés par nombre d'interactions train décroissant, puis id croissant."""
    counts = train_set.item_degrees()
    order = np.lexsort((np.arange(counts.size), -counts))
    return order, counts


class MostPopular:
    """Recommande les items les plus populaires non vus en train."""

    def __init__(self, train_set: InteractionSet, k_rec: int = 50):
        self.train = train_set
        self.k_rec = k_rec
        self.ranking, self.counts = popularity_ranking(train_set)

    def __call__(self, user: int) -> RankedList:
        seen = self.train.items_of(user)
        head = self.ranking[:self.k_rec + seen.size]
        items = head[~np.isin(head, seen)][:self.k_rec]
        return RankedList(user, items.astype(np.int64), self.counts[items].astype(np.float64),
                          int(head.size))


def most_popular_baseline(train_set: InteractionSet, k_rec: int = 50) -> list[RankedList]:
    strategy = MostPopular(train_set, k_rec)
    return [strategy(user) for user in range(train_set.num_users)]


# ================= RAPPORTS =================

def metric_names(k_values: Sequence[int]) -> list[str]:
    return [f'{m}@{k}' for m in METRICS for k in k_values]


@dataclass
class EvalReport:
    strategy: str
    k_values: tuple[int, ...]
    means: dict[str, float]
    std: dict[str, float]
    excluded_users: int
    rows: pd.DataFrame = field(default_factory=pd.DataFrame)
    timing: dict | None = None
    runs: int = 1

    @property
    def users(self) -> int:
        return int(len(self.rows))

    def to_dict(self, per_user_path: str | None = None) -> dict:
        payload = {
            'strategy': self.strategy,
            'k_values': list(self.k_values),
            'means': self.means,
            'std': self.std,
            'excluded_users': self.excluded_users,
            'per_user_path': per_user_path,
            'runs': self.runs,
        }
        if self.timing is not None:
            payload['timing'] = self.timing
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping) -> 'EvalReport':
        return cls(
            strategy=payload['strategy'],
            k_values=tuple(payload['k_values']),
            means=dict(payload['means']),
            std=dict(payload['std']),
            excluded_users=int(payload['excluded_users']),
            timing=payload.get('timing'),
            runs=int(payload.get('runs', 1)),
        )


def evaluate(strategy: Callable[[int], RankedList] | Mapping[int, RankedList], test_set: InteractionSet,
             k_values: Sequence[int], name: str = 'strategy',
             available: np.ndarray | None = None) -> EvalReport:
    """
    Pertinents = items test de l'utilisateur. Les moyennes portent sur les
    utilisateurs ayant au moins un item test ; les autres sont comptés.
    `strategy` est un appelable user -> RankedList ou un dict déjà calculé.
    `available[u]` : candidats hors train de u, pour le dénominateur de la
    précision (K par défaut).
    """
    k_values = tuple(sorted(set(int(k) for k in k_values)))
    if not k_values or k_values[0] < 1:
        raise ConfigError(f"k_values invalides : {k_values}")
    test_m = test_set.matrix
    lookup = strategy.get if isinstance(strategy, Mapping) else strategy

    rows, excluded = [], 0
    for user in range(test_set.num_users):
        relevant = test_m.indices[test_m.indptr[user]:test_m.indptr[user + 1]]
        if relevant.size == 0:
            excluded += 1
            continue
        ranked = lookup(user)
        recommended = [] if ranked is None else _items(ranked)
        row = {'user': user}
        for k in k_values:
            row[f'precision@{k}'] = precision_at_k(
                recommended, relevant, k, None if available is None else int(available[user])
            )
            row[f'recall@{k}'] = recall_at_k(recommended, relevant, k)
            row[f'ndcg@{k}'] = ndcg_at_k(recommended, relevant, k)
        rows.append(row)

    columns = ['user'] + metric_names(k_values)
    frame = pd.DataFrame(rows, columns=columns)
    names = metric_names(k_values)
    means = {m: float(frame[m].mean()) if len(frame) else 0.0 for m in names}
    if excluded:
        logger.warning(f"EVAL : {excluded} utilisateur(s) sans item test exclu(s) des moyennes")
    logger.info(
        f"EVAL : {name} sur {len(frame)} utilisateurs : "
        + ", ".join(f"{m}={means[m]:.4f}" for m in names if m.endswith(f'@{k_values[-1]}'))
    )
    return EvalReport(
        strategy=name,
        k_values=k_values,
        means=means,
        std={m: 0.0 for m in names},
        excluded_users=excluded,
        rows=frame,
    )


def combine_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Moyenne et écart-type de population sur plusieurs graines."""
    if not reports:
        raise ConfigError("Aucun rapport à combiner.")
    names = list(reports[0].means)
    for report in reports[1:]:
        if list(report.means) != names:
            raise ConfigError("Rapports incompatibles : métriques différentes.")
    table = np.array([[r.means[m] for m in names] for r in reports])
    return EvalReport(
        strategy=reports[0].strategy,
        k_values=reports[0].k_values,
        means=dict(zip(names, table.mean(axis=0).tolist())),
        std=dict(zip(names, table.std(axis=0, ddof=0).tolist())),
        excluded_users=reports[0].excluded_users,
        runs=sum(r.runs for r in reports),
    )


# ================= COHORTES =================

def engagement_buckets(users: np.ndarray, degrees: np.ndarray, buckets: int = DECILES) -> list[np.ndarray]:
    """Utilisateurs triés par (degré train, indice) puis découpés en tranches égales à ±1."""
    users = np.asarray(users, dtype=np.int64)
    order = np.lexsort((users, degrees[users]))
    return np.array_split(users[order], buckets)


def engagement_decile_report(rows: pd.DataFrame, train_degrees: np.ndarray,
                             reference: pd.DataFrame | None = None,
                             metric: str = 'ndcg@50') -> pd.DataFrame:
    """
    NDCG@50 moyen par décile d'engagement train et gain relatif
    (rapport − référence) / référence, sur les mêmes utilisateurs.
    """
    if metric not in rows.columns:
        raise ConfigError(f"Métrique {metric} absente du rapport")
    values = rows.set_index('user')[metric]
    ref_values = None if reference is None else reference.set_index('user')[metric]
    users = values.index.to_numpy()
    if ref_values is not None:
        users = np.intersect1d(users, ref_values.index.to_numpy())

    records = []
    for decile, bucket in enumerate(engagement_buckets(users, np.asarray(train_degrees)), start=1):
        mean = float(values.loc[bucket].mean()) if bucket.size else 0.0
        record = {
            'decile': decile,
            'users': int(bucket.size),
            'min_degree': int(train_degrees[bucket].min()) if bucket.size else 0,
            'max_degree': int(train_degrees[bucket].max()) if bucket.size else 0,
            metric: mean,
        }
        if ref_values is not None:
            ref_mean = float(ref_values.loc[bucket].mean()) if bucket.size else 0.0
            record[f'reference_{metric}'] = ref_mean
            record['relative_gain'] = (mean - ref_mean) / ref_mean if ref_mean else float('nan')
        records.append(record)
    return pd.DataFrame(records)


@dataclass
class PopularityReport:
    curve: pd.DataFrame
    summary: dict


def popularity_report(train_set: InteractionSet, recommendations: Mapping[int, RankedList] | Sequence[RankedList],
                      held_out: InteractionSet | None = None) -> PopularityReport:
    """
    (a) part cumulée des interactions des items classés par popularité ;
    (b) rang de popularité moyen des items recommandés et des items test.
    """
    ranking, counts = popularity_ranking(train_set)
    total = counts.sum()
    shares = np.cumsum(counts[ranking]) / total if total else np.zeros(ranking.size)
    curve = pd.DataFrame({
        'rank': np.arange(1, ranking.size + 1),
        'item': ranking,
        'interactions': counts[ranking],
        'cumulative_share': shares,
    })

    rank_of = np.empty(ranking.size, dtype=np.int64)
    rank_of[ranking] = np.arange(1, ranking.size + 1)
    lists = recommendations.values() if isinstance(recommendations, Mapping) else recommendations
    recommended = np.concatenate([r.items for r in lists] or [np.empty(0, dtype=np.int64)])
    summary = {
        'items': int(ranking.size),
        'top1_share': float(shares[0]) if shares.size else 0.0,
        'top10_share': float(shares[min(10, shares.size) - 1]) if shares.size else 0.0,
        'top_decile_share': float(shares[max(math.ceil(ranking.size / 10), 1) - 1]) if shares.size else 0.0,
        'mean_rank_recommended': float(rank_of[recommended].mean()) if recommended.size else None,
        'mean_rank_held_out': (float(rank_of[held_out.items].mean())
                               if held_out is not None and len(held_out) else None),
    }
    return PopularityReport(curve, summary)


# ================= STABILITÉ DES CLUSTERS =================

def ari(assignment_a, assignment_b) -> float:
    """Adjusted Rand Index de deux affectations des mêmes items."""
    a = np.asarray(assignment_a)
    b = np.asarray(assignment_b)
    if a.shape != b.shape:
        raise ValueError("Les deux affectations doivent couvrir les mêmes items.")
    return float(adjusted_rand_score(a, b))


@dataclass
class StabilityResult:
    fractions: tuple[float, ...]
    ari: list[float]
    clusters: list[int]
    shared_items: list[int]

    def to_dict(self) -> dict:
        return {
            'fractions': list(self.fractions),
            'ari': self.ari,
            'clusters': self.clusters,
            'shared_items': self.shared_items,
        }


def stability_study(dataset: Dataset, fractions: Sequence[float] = STABILITY_FRACTIONS,
                    resolution: float = 1.1, seed: int = 0,
                    max_cluster_size: int | None = None) -> StabilityResult:
    """
    Clusterise chaque préfixe temporel et compare les instantanés consécutifs
    par ARI, sur les items présents dans les deux (alignés par id brut).
    """
    if len(fractions) < 2:
        raise ConfigError("Il faut au moins deux fractions pour mesurer la stabilité.")
    snapshots = []
    for fraction in fractions:
        snapshot = temporal_prefix(dataset, fraction)
        graph = project_co_engagement(build_bipartite(snapshot))
        clustering = louvain(graph, resolution, seed, max_cluster_size)
        snapshots.append((snapshot, clustering))

    scores, shared = [], []
    for (snap_a, clus_a), (snap_b, clus_b) in zip(snapshots, snapshots[1:]):
        _, idx_a, idx_b = np.intersect1d(snap_a.item_ids.astype(str), snap_b.item_ids.astype(str),
                                         return_indices=True)
        scores.append(ari(clus_a.assignment[idx_a], clus_b.assignment[idx_b]))
        shared.append(int(idx_a.size))
    logger.info("EVAL : ARI entre instantanés consécutifs " + ", ".join(f"{s:.3f}" for s in scores))
    return StabilityResult(tuple(fractions), scores, [c.num_clusters for _, c in snapshots], shared)


def training_time_report(log_vanilla: Sequence[EpochLog], log_uic: Sequence[EpochLog]) -> pd.DataFrame:
    """Comparaison des temps d'entraînement Vanilla / fusion d'intérêts."""
    rows = []
    for label, log in (('vanilla', log_vanilla), ('uic', log_uic)):
        summary = training_summary(list(log))
        rows.append({'model': label, **summary})
    frame = pd.DataFrame(rows)
    base = frame.loc[0]
    frame['relative_total'] = frame['total_seconds'] / base['total_seconds'] if base['total_seconds'] else float('nan')
    frame['relative_per_epoch'] = (frame['seconds_per_epoch'] / base['seconds_per_epoch']
                                   if base['seconds_per_epoch'] else float('nan'))
    return frame
