# =============================================================================
# PROFILS D'INTÉRÊT (PERSONALIZED PAGERANK)
# =============================================================================

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .exceptions import ConfigError, DataError
from .graph import BipartiteGraph, Clustering
from .ingest import InteractionSet

logger = logging.getLogger(__name__)

PROFILE_METHODS = ('ppr', 'counts')


@dataclass(frozen=True)
class PprScores:
    """Masse PPR côté items (creuse), renormalisée à 1."""
    user_index: int
    items: np.ndarray
    scores: np.ndarray
    damping: float
    # ‖T(x) − x‖₁ de l'itéré retourné, avant renormalisation
    residual_bound: float
    iterations: int = 0

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.items.tolist(), self.scores.tolist()))

    def dense(self, num_items: int) -> np.ndarray:
        out = np.zeros(num_items)
        out[self.items] = self.scores
        return out


@dataclass(frozen=True)
class InterestProfile:
    """η_u : distribution creuse sur les K clusters."""
    user_index: int
    clusters: np.ndarray
    weights: np.ndarray
    num_clusters: int

    def __post_init__(self):
        if self.clusters.size and (self.clusters.min() < 0 or self.clusters.max() >= self.num_clusters):
            raise ValueError(f"Cluster hors de [0, {self.num_clusters}) dans le profil de {self.user_index}")
        if (self.weights < 0).any():
            raise ValueError(f"Poids négatif dans le profil de {self.user_index}")

    def dense(self) -> np.ndarray:
        out = np.zeros(self.num_clusters)
        out[self.clusters] = self.weights
        return out

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.clusters.tolist(), self.weights.tolist()))

    @classmethod
    def from_dense(cls, user_index: int, eta: np.ndarray) -> 'InterestProfile':
        support = np.flatnonzero(eta > 0)
        return cls(user_index, support, eta[support], int(eta.shape[0]))


# ================= PPR PAR ITÉRATION DE PUISSANCE =================

def _check_ppr_params(damping, tolerance, max_iters):
    if not 0.0 < damping < 1.0:
        raise ConfigError(f"damping doit être dans (0,1) (reçu {damping})")
    if tolerance <= 0:
        raise ConfigError(f"tolerance doit être > 0 (reçu {tolerance})")
    if max_iters < 1:
        raise ConfigError(f"max_iters doit être >= 1 (reçu {max_iters})")


def _inverse_degrees(degrees: np.ndarray) -> sparse.dia_matrix:
    inv = np.zeros(degrees.shape[0])
    np.divide(1.0, degrees, out=inv, where=degrees > 0)
    return sparse.diags(inv)


def ppr_batch(bg: BipartiteGraph, users, damping: float = 0.85, tolerance: float = 1e-8,
              max_iters: int = 200) -> list[PprScores]:
    """
    PPR d'un bloc d'utilisateurs : une colonne par utilisateur-graine.

    Marche aléatoire non orientée sur le biparti avec redémarrage en u
    (probabilité 1 - damping). Chaque colonne est figée dès que son
    changement L1 passe sous `tolerance`.
    """
    _check_ppr_params(damping, tolerance, max_iters)
    users = np.asarray(users, dtype=np.int64)
    degrees = bg.user_degrees
    isolated = users[degrees[users] == 0]
    if isolated.size:
        raise DataError(f"Utilisateur {int(isolated[0])} : no engagement, PPR undefined")

    a = bg.user_matrix
    # Transitions user -> item et item -> user
    to_items = (a.T @ _inverse_degrees(degrees)).tocsr()
    to_users = (a @ _inverse_degrees(bg.item_degrees)).tocsr()

    b = users.size
    restart = np.zeros((bg.num_users, b))
    restart[users, np.arange(b)] = 1.0 - damping
    x_users = np.zeros((bg.num_users, b))
    x_users[users, np.arange(b)] = 1.0
    x_items = np.zeros((bg.num_items, b))

    active = np.arange(b)
    iterations = np.full(b, max_iters)
    for it in range(1, max_iters + 1):
        xu, xi = x_users[:, active], x_items[:, active]
        new_items = damping * (to_items @ xu)
        new_users = restart[:, active] + damping * (to_users @ xi)
        delta = np.abs(new_users - xu).sum(axis=0) + np.abs(new_items - xi).sum(axis=0)
        x_users[:, active] = new_users
        x_items[:, active] = new_items
        done = delta < tolerance
        iterations[active[done]] = it
        active = active[~done]
        if active.size == 0:
            break

    if active.size:
        logger.warning(f"PPR : {active.size} colonne(s) non convergée(s) après {max_iters} itérations")

    residual = (np.abs(restart + damping * (to_users @ x_items) - x_users).sum(axis=0)
                + np.abs(damping * (to_items @ x_users) - x_items).sum(axis=0))

    results = []
    for col, user in enumerate(users.tolist()):
        mass = x_items[:, col]
        support = np.flatnonzero(mass > 0)
        values = mass[support] / mass[support].sum()
        results.append(PprScores(
            user_index=user,
            items=support,
            scores=values,
            damping=damping,
            residual_bound=float(residual[col]),
            iterations=int(iterations[col]),
        ))
    return results


def ppr(bg: BipartiteGraph, user: int, damping: float = 0.85, tolerance: float = 1e-8,
        max_iters: int = 200) -> PprScores:
    return ppr_batch(bg, [user], damping, tolerance, max_iters)[0]


# ================= RÉDUCTION EN PROFILS =================

def _profile_from_mass(user: int, items: np.ndarray, mass: np.ndarray,
                       clustering: Clustering) -> InterestProfile:
    eta = np.bincount(clustering.assignment[items], weights=mass, minlength=clustering.num_clusters)
    total = eta.sum()
    if not total > 0:
        raise DataError(f"Utilisateur {user} : masse nulle, profil d'intérêt indéfini")
    return InterestProfile.from_dense(user, eta / total)


def interest_from_ppr(scores: PprScores, clustering: Clustering) -> InterestProfile:
    """η_j = somme des scores PPR des items du cluster j, renormalisée."""
    if scores.items.size and scores.items.max() >= clustering.num_items:
        raise ValueError("Scores PPR sur des items hors du clustering.")
    return _profile_from_mass(scores.user_index, scores.items, scores.scores, clustering)


def interest_from_counts(dataset: InteractionSet, user: int, clustering: Clustering) -> InterestProfile:
    """Histogramme normalisé des interactions train de l'utilisateur par cluster."""
    items = dataset.items_of(user)
    if items.size == 0:
        raise DataError(f"Utilisateur {user} : aucune interaction d'entraînement")
    return _profile_from_mass(user, items, np.ones(items.size), clustering)


def build_all_profiles(bg: BipartiteGraph, clustering: Clustering, method: str = 'ppr',
                       damping: float = 0.85, tolerance: float = 1e-8, max_iters: int = 200,
                       batch_size: int = 256, threads: int = 1) -> dict[int, InterestProfile]:
    """
    Profils de tous les utilisateurs, par blocs de `batch_size`.

    Les blocs peuvent tourner sur un pool de threads ; le résultat est
    toujours rangé par indice utilisateur.
    """
    if method not in PROFILE_METHODS:
        raise ConfigError(f"Méthode de profil inconnue : {method!r} (attendu {PROFILE_METHODS})")
    if batch_size < 1:
        raise ConfigError("interest.batch_size doit être >= 1")

    def run_block(block: np.ndarray) -> list[InterestProfile]:
        if method == 'counts':
            out = []
            for user in block.tolist():
                items = bg.user_adj(user)
                if items.size == 0:
                    raise DataError(f"Utilisateur {user} : aucune interaction d'entraînement")
                out.append(_profile_from_mass(user, items, np.ones(items.size), clustering))
            return out
        return [interest_from_ppr(s, clustering)
                for s in ppr_batch(bg, block, damping, tolerance, max_iters)]

    blocks = [np.arange(s, min(s + batch_size, bg.num_users)) for s in range(0, bg.num_users, batch_size)]
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        results = list(pool.map(run_block, blocks))

    profiles = {p.user_index: p for block in results for p in block}
    logger.info(f"PPR : {len(profiles)} profils '{method}' sur K={clustering.num_clusters} clusters")
    return profiles


def profile_matrix(profiles: dict[int, InterestProfile], num_users: int, num_clusters: int) -> np.ndarray:
    """Vue dense |U| x K des profils (ligne nulle pour un utilisateur absent)."""
    eta = np.zeros((num_users, num_clusters), dtype=np.float64)
    for user, profile in profiles.items():
        eta[user, profile.clusters] = profile.weights
    return eta
