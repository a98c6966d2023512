# =============================================================================
# ENTRAÎNEMENT DU MODÈLE DEUX TOURS
# =============================================================================
# BCE sur positifs + négatifs uniformes, AdamW, validation Recall@50 par
# balayage complet tous les `eval_every` epochs et arrêt anticipé.
# =============================================================================

import copy
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ConfigError, DataError, NumericalError
from .ingest import InteractionSet
from .optim import AdamW
from .two_tower import FUSION_MODES, TwoTowerModel

logger = logging.getLogger(__name__)

VALIDATION_K = 50
SCORING_CHUNK = 1024


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    dropout_rate: float = 0.1
    batch_size: int = 4096
    negatives_per_positive: int = 4
    max_epochs: int = 100
    eval_every: int = 5
    patience: int = 5
    seed: int = 0
    fusion_mode: str = 'concat'

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate doit être > 0 (reçu {self.learning_rate})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout doit être dans [0,1) (reçu {self.dropout_rate})")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size doit être >= 1 (reçu {self.batch_size})")
        if self.negatives_per_positive < 0 or self.max_epochs < 1:
            raise ConfigError("negatives_per_positive >= 0 et max_epochs >= 1 requis")
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every et patience doivent être >= 1")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"Mode de fusion inconnu : {self.fusion_mode!r}")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    loss: float
    seconds: float
    val_recall: float | None = None


@dataclass
class TrainingResult:
    model: TwoTowerModel
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    best_val_recall: float = 0.0


# ================= PERTE ET NÉGATIFS =================

def bce_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """BCE moyenne sous forme stable : max(x,0) − x·y + log(1 + e^{−|x|})."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=logits.dtype)
    if logits.shape != labels.shape:
        raise ValueError(f"Longueurs différentes : {tuple(logits.shape)} vs {tuple(labels.shape)}")
    losses = logits.clamp(min=0) - logits * labels + torch.log1p(torch.exp(-logits.abs()))
    return losses.mean()


def sample_negatives(train_set: InteractionSet, user: int, n: int, rng) -> np.ndarray:
    """
    n items distincts tirés uniformément hors des items train de `user`,
    par rejet.
    """
    seen = set(train_set.items_of(user).tolist())
    available = train_set.num_items - len(seen)
    if available <= 0:
        raise ValueError(f"L'utilisateur {user} a déjà interagi avec tous les items.")
    if n > available:
        raise ValueError(f"{n} négatifs demandés, {available} disponibles pour {user}")
    chosen = []
    while len(chosen) < n:
        for item in rng.integers(train_set.num_items, size=2 * (n - len(chosen))).tolist():
            if item not in seen:
                seen.add(item)
                chosen.append(item)
                if len(chosen) == n:
                    break
    return np.asarray(chosen, dtype=np.int64)


def train_keys(train_set: InteractionSet) -> np.ndarray:
    """Clés triées user·|I| + item pour les tests d'appartenance vectorisés."""
    return np.sort(train_set.users * train_set.num_items + train_set.items)


def free_item_counts(keys: np.ndarray, users: np.ndarray, num_items: int) -> np.ndarray:
    """Nombre d'items hors train pour chaque utilisateur de `users`."""
    users = np.asarray(users, dtype=np.int64)
    seen = np.searchsorted(keys, (users + 1) * num_items) - np.searchsorted(keys, users * num_items)
    return num_items - seen


def _is_member(keys: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    if keys.size == 0:
        return np.zeros(candidates.shape, dtype=bool)
    pos = np.searchsorted(keys, candidates)
    pos = np.minimum(pos, keys.size - 1)
    return keys[pos] == candidates


def _row_duplicates(draws: np.ndarray) -> np.ndarray:
    order = np.argsort(draws, axis=1, kind='stable')
    ordered = np.take_along_axis(draws, order, axis=1)
    dup_sorted = np.zeros_like(draws, dtype=bool)
    dup_sorted[:, 1:] = ordered[:, 1:] == ordered[:, :-1]
    dup = np.zeros_like(dup_sorted)
    np.put_along_axis(dup, order, dup_sorted, axis=1)
    return dup


def sample_negative_batch(keys: np.ndarray, users: np.ndarray, n: int, num_items: int, rng) -> np.ndarray:
    """
    Forme vectorisée de `sample_negatives` : une ligne de n négatifs par
    utilisateur. DataError si un utilisateur a moins de n items libres.
    """
    users = np.asarray(users, dtype=np.int64)
    if n == 0:
        return np.empty((users.size, 0), dtype=np.int64)
    free = free_item_counts(keys, users, num_items)
    short = np.flatnonzero(free < n)
    if short.size:
        row = int(short[0])
        raise DataError(
            f"{n} négatifs demandés, {int(free[row])} disponibles pour l'utilisateur {int(users[row])}"
        )
    draws = rng.integers(num_items, size=(users.size, n))
    owners = np.repeat(users[:, None], n, axis=1)
    bad = _is_member(keys, owners * num_items + draws) | _row_duplicates(draws)
    while bad.any():
        draws[bad] = rng.integers(num_items, size=int(bad.sum()))
        bad = _is_member(keys, owners * num_items + draws) | _row_duplicates(draws)
    return draws


# ================= VECTEURS ET VALIDATION =================

@torch.no_grad()
def embed_all(model: TwoTowerModel, eta: np.ndarray | None = None, chunk: int = 4096):
    """
    Vecteurs e_u et e_i de tous les users et items en mode évaluation,
    plus la matrice α[u, j] en mode attention.
    """
    previous = model.training
    model.eval()
    try:
        spec = model.spec
        dtype = model.user_embedding.weight.dtype
        eta_t = None if eta is None else torch.as_tensor(eta, dtype=dtype)
        user_parts, alpha_parts = [], []
        for start in range(0, spec.num_users, chunk):
            users = torch.arange(start, min(start + chunk, spec.num_users))
            e_u = model.user_vectors(users, None if eta_t is None else eta_t[users])
            user_parts.append(e_u)
            if spec.fusion == 'attention':
                alpha_parts.append(model.attention_weights(e_u))
        item_parts = [model.item_vectors(torch.arange(s, min(s + chunk, spec.num_items)))
                      for s in range(0, spec.num_items, chunk)]
        user_vecs = torch.cat(user_parts).numpy().astype(np.float32)
        item_vecs = torch.cat(item_parts).numpy().astype(np.float32)
        alpha = torch.cat(alpha_parts).numpy().astype(np.float32) if alpha_parts else None
        return user_vecs, item_vecs, alpha
    finally:
        model.train(previous)


def validation_recall(model: TwoTowerModel, train_set: InteractionSet, val_set: InteractionSet,
                      eta: np.ndarray | None = None, item_clusters: np.ndarray | None = None,
                      k: int = VALIDATION_K) -> float:
    """Recall@k moyen sur val, balayage complet, items train masqués."""
    user_vecs, item_vecs, alpha = embed_all(model, eta)
    user_vecs, item_vecs = torch.from_numpy(user_vecs), torch.from_numpy(item_vecs)
    train_m, val_m = train_set.matrix, val_set.matrix
    val_counts = np.diff(val_m.indptr)
    k = min(k, train_set.num_items)
    recalls = []
    for start in range(0, train_set.num_users, SCORING_CHUNK):
        stop = min(start + SCORING_CHUNK, train_set.num_users)
        scores = user_vecs[start:stop] @ item_vecs.T
        if alpha is not None:
            scores = scores * torch.from_numpy(alpha[start:stop][:, item_clusters])
        block = train_m[start:stop].tocoo()
        rows = torch.from_numpy(block.row.astype(np.int64))
        cols = torch.from_numpy(block.col.astype(np.int64))
        scores[rows, cols] = float('-inf')
        top = torch.topk(scores, k, dim=1).indices.numpy()
        for row, user in enumerate(range(start, stop)):
            if val_counts[user] == 0:
                continue
            relevant = val_m.indices[val_m.indptr[user]:val_m.indptr[user + 1]]
            recalls.append(np.isin(top[row], relevant).sum() / relevant.size)
    return float(np.mean(recalls)) if recalls else 0.0


# ================= BOUCLE D'ENTRAÎNEMENT =================

def train(model: TwoTowerModel, train_set: InteractionSet, val_set: InteractionSet,
          profiles: np.ndarray | None, config: TrainConfig,
          item_clusters: np.ndarray | None = None) -> TrainingResult:
    """
    Mini-lots mélangés (graine fixée) de `batch_size` positifs, chacun avec
    `negatives_per_positive` négatifs. Arrêt quand `patience` évaluations
    successives n'améliorent pas le Recall@50 de validation ; le meilleur
    état est restauré.
    """
    spec = model.spec
    if spec.fusion == 'concat' and profiles is None:
        raise ConfigError("La fusion concat exige les profils d'intérêt (lancez `manage.py interest`).")
    if spec.fusion == 'attention' and item_clusters is None:
        raise ConfigError("Le mode attention exige le clustering (lancez `manage.py cluster`).")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)

    dtype = model.user_embedding.weight.dtype
    eta_t = None if profiles is None or spec.fusion != 'concat' else torch.as_tensor(profiles, dtype=dtype)
    clusters_t = None if item_clusters is None else torch.as_tensor(item_clusters, dtype=torch.long)
    keys = train_keys(train_set)
    pos_users, pos_items = np.asarray(train_set.users), np.asarray(train_set.items)
    n_neg = config.negatives_per_positive
    active = np.unique(pos_users)
    free = free_item_counts(keys, active, train_set.num_items)
    if (free < n_neg).any():
        short = int(np.argmax(free < n_neg))
        raise DataError(
            f"L'utilisateur {int(active[short])} n'a que {int(free[short])} item(s) hors train pour "
            f"{n_neg} négatifs par positif ; baissez model.negatives."
        )

    result = TrainingResult(model=model)
    best_state = None
    best_recall = -1.0
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        model.train()
        start = time.perf_counter()
        order = rng.permutation(pos_users.size)
        total, seen = 0.0, 0
        for batch_start in range(0, order.size, config.batch_size):
            idx = order[batch_start:batch_start + config.batch_size]
            users, items = pos_users[idx], pos_items[idx]
            negatives = sample_negative_batch(keys, users, n_neg, train_set.num_items, rng)
            all_users = torch.from_numpy(np.concatenate((users, np.repeat(users, n_neg))))
            all_items = torch.from_numpy(np.concatenate((items, negatives.ravel())))
            labels = torch.zeros(all_users.shape[0], dtype=dtype)
            labels[:users.size] = 1.0

            logits = model(
                all_users, all_items,
                eta=None if eta_t is None else eta_t[all_users],
                item_clusters=None if clusters_t is None else clusters_t[all_items],
            )
            loss = bce_loss(logits, labels)
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"Perte non finie ({loss.item()}) à l'epoch {epoch}, lot {batch_start // config.batch_size}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * labels.shape[0]
            seen += labels.shape[0]

        seconds = time.perf_counter() - start
        val_recall = None
        if epoch % config.eval_every == 0:
            val_recall = validation_recall(model, train_set, val_set, profiles, item_clusters)
            if val_recall > best_recall:
                best_recall, result.best_epoch, stale = val_recall, epoch, 0
                best_state = copy.deepcopy(model.state_dict())
            else:
                stale += 1
        result.log.append(EpochLog(epoch, total / max(seen, 1), seconds, val_recall))
        logger.info(
            f"TRAIN : epoch {epoch} perte {total / max(seen, 1):.5f} ({seconds:.2f} s)"
            + (f", Recall@50 val {val_recall:.4f}" if val_recall is not None else "")
        )
        result.stop_epoch = epoch
        if stale >= config.patience:
            logger.info(f"TRAIN : arrêt anticipé à l'epoch {epoch}, meilleur epoch {result.best_epoch}")
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    result.best_val_recall = max(best_recall, 0.0)
    return result


def training_summary(log: list[EpochLog]) -> dict:
    seconds = sum(entry.seconds for entry in log)
    evaluated = [entry for entry in log if entry.val_recall is not None]
    best = max(evaluated, key=lambda e: (e.val_recall, -e.epoch)) if evaluated else None
    return {
        'epochs': len(log),
        'total_seconds': seconds,
        'seconds_per_epoch': seconds / len(log) if log else 0.0,
        'best_epoch': best.epoch if best else None,
        'best_val_recall': best.val_recall if best else None,
    }
