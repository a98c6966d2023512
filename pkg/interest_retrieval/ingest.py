# =============================================================================
# INGESTION DES JOURNAUX D'INTERACTIONS
# =============================================================================
# Lecture MovieLens / CSV générique, filtrage itératif par degré,
# binarisation, découpage train/val/test et instantanés temporels.
# =============================================================================

import logging
import math
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import sparse

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

MOVIELENS_COLUMNS = ['user', 'item', 'value', 'timestamp']
CSV_ROLES = ('user', 'item', 'value', 'timestamp')


# ================= TYPES DE DONNÉES =================

@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """Une ligne brute du journal, avant ré-indexation."""
    user_raw_id: str
    item_raw_id: str
    value: float
    timestamp: int

    def __post_init__(self):
        if not self.user_raw_id or not self.item_raw_id:
            raise DataError("Identifiant utilisateur ou item vide.")
        if self.timestamp < 0:
            raise DataError(f"Horodatage négatif : {self.timestamp}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fractions = self.fractions
        if any(not 0.0 < f < 1.0 for f in fractions):
            raise ConfigError(f"Fractions hors de (0,1) : {fractions}")
        if abs(math.fsum(fractions) - 1.0) > 1e-12:
            raise ConfigError(f"Les fractions doivent sommer à 1 : {fractions}")

    @property
    def fractions(self):
        return (self.train_fraction, self.val_fraction, self.test_fraction)


def readonly(array):
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class InteractionSet:
    """
    Ensemble d'interactions positives en colonnes (user, item, timestamp).

    Les indices sont denses dans [0, num_users) et [0, num_items); les paires
    sont uniques et triées par (user, item).
    """
    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    timestamps: np.ndarray

    def __len__(self):
        return int(self.users.shape[0])

    @property
    def labels(self):
        return np.ones(len(self), dtype=np.int8)

    def iter_interactions(self) -> Iterator[tuple[int, int, int, int]]:
        for u, i, t in zip(self.users.tolist(), self.items.tolist(), self.timestamps.tolist()):
            yield u, i, 1, t

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Matrice binaire users x items (CSR, indices triés)."""
        data = np.ones(len(self), dtype=np.float64)
        csr = sparse.csr_matrix(
            (data, (self.users, self.items)), shape=(self.num_users, self.num_items)
        )
        csr.sum_duplicates()
        csr.sort_indices()
        return csr

    def degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def items_of(self, user: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[user]:m.indptr[user + 1]]

    def item_sets(self) -> list[set[int]]:
        m = self.matrix
        return [set(m.indices[m.indptr[u]:m.indptr[u + 1]].tolist()) for u in range(self.num_users)]

    @property
    def latest_timestamp(self) -> int:
        return int(self.timestamps.max()) if len(self) else 0

    def subset(self, mask) -> 'InteractionSet':
        return InteractionSet(
            num_users=self.num_users,
            num_items=self.num_items,
            users=readonly(self.users[mask]),
            items=readonly(self.items[mask]),
            timestamps=readonly(self.timestamps[mask]),
        )


@dataclass(frozen=True)
class Dataset(InteractionSet):
    """Jeu indexé et filtré ; conserve les seuils pour les re-filtrages."""
    user_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=object))
    item_ids: np.ndarray = field(default_factory=lambda: np.array([], dtype=object))
    min_user_degree: int = 0
    min_item_degree: int = 0

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.user_ids.tolist())}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.item_ids.tolist())}

    def as_interactions(self) -> InteractionSet:
        return InteractionSet(self.num_users, self.num_items, self.users, self.items, self.timestamps)


@dataclass(frozen=True)
class InteractionSplit:
    train: InteractionSet
    val: InteractionSet
    test: InteractionSet


# ================= LECTURE DES FICHIERS =================

def _bad_rows(frame: pd.DataFrame, first_line: int, *, numeric_ts=True):
    """Retourne (numéro de ligne, contenu) de la première ligne invalide, sinon None."""
    missing = frame.isna().any(axis=1) | (frame[['user', 'item']] == '').any(axis=1)
    value = pd.to_numeric(frame['value'], errors='coerce')
    bad = missing | value.isna()
    if numeric_ts:
        ts = pd.to_numeric(frame['timestamp'], errors='coerce')
        bad |= ts.isna() | (ts < 0) | (ts.fillna(0) % 1 != 0)
    if not bad.any():
        return None
    pos = int(np.flatnonzero(bad.to_numpy())[0])
    row = '::'.join(str(v) for v in frame.iloc[pos].tolist())
    return pos + first_line, row


def parse_movielens(path) -> list[InteractionRecord]:
    """
    Lit un fichier `ratings.dat` (UserID::MovieID::Rating::Timestamp).

    La note est conservée dans `value` ; la binarisation se fait plus tard.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(
            path, sep='::', engine='python', header=None, names=MOVIELENS_COLUMNS,
            dtype=str, keep_default_na=False, skip_blank_lines=False, encoding='latin-1',
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} : no records") from None
    except pd.errors.ParserError as exc:
        # Le message pandas contient déjà "line N"
        raise DataError(f"{path} : ligne mal formée ({exc})") from exc

    if frame.empty:
        raise DataError(f"{path} : no records")

    bad = _bad_rows(frame, first_line=1)
    if bad:
        line, raw = bad
        raise DataError(f"{path}, ligne {line} : enregistrement mal formé {raw!r}")

    records = [
        InteractionRecord(u, i, float(v), int(t))
        for u, i, v, t in zip(frame['user'], frame['item'], frame['value'], frame['timestamp'])
    ]
    logger.info(f"INGEST : {len(records)} enregistrements lus depuis {path.name}")
    return records


def _to_epoch_seconds(column: pd.Series) -> pd.Series:
    numeric = pd.to_numeric(column, errors='coerce')
    if not numeric.isna().any():
        return numeric
    # Colonne de dates (ex. "2003-02-17" dans le jeu Recipe)
    dates = pd.to_datetime(column, errors='coerce', utc=True)
    seconds = (dates - pd.Timestamp('1970-01-01', tz='UTC')) // pd.Timedelta(seconds=1)
    return numeric.fillna(seconds)


def parse_csv(path, columns: Mapping[str, str]) -> list[InteractionRecord]:
    """
    Lit un CSV avec en-tête ; `columns` associe les rôles user/item/value/timestamp
    aux noms de colonnes. Sans colonne `value`, chaque ligne vaut 1.
    """
    path = Path(path)
    for role in ('user', 'item', 'timestamp'):
        if not columns.get(role):
            raise ConfigError(f"Colonne non configurée pour le rôle '{role}'")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} : no records") from None

    absent = [columns[r] for r in CSV_ROLES if columns.get(r) and columns[r] not in frame.columns]
    if absent:
        raise DataError(f"{path} : colonne(s) absente(s) {', '.join(absent)}")
    if frame.empty:
        raise DataError(f"{path} : no records")

    selected = pd.DataFrame({
        'user': frame[columns['user']].str.strip(),
        'item': frame[columns['item']].str.strip(),
        'value': frame[columns['value']] if columns.get('value') else '1',
        'timestamp': _to_epoch_seconds(frame[columns['timestamp']]),
    })
    # ligne 1 = en-tête
    bad = _bad_rows(selected, first_line=2)
    if bad:
        line, raw = bad
        raise DataError(f"{path}, ligne {line} : enregistrement mal formé {raw!r}")

    return [
        InteractionRecord(u, i, float(v), int(t))
        for u, i, v, t in zip(selected['user'], selected['item'], selected['value'], selected['timestamp'])
    ]


# ================= CONSTRUCTION DU JEU INDEXÉ =================

def _records_frame(records: Iterable[InteractionRecord]) -> pd.DataFrame:
    records = list(records)
    return pd.DataFrame({
        'user': [r.user_raw_id for r in records],
        'item': [r.item_raw_id for r in records],
        'timestamp': np.fromiter((r.timestamp for r in records), dtype=np.int64, count=len(records)),
    })


def _filter_to_fixed_point(frame, min_user_degree, min_item_degree):
    """Retire itérativement users et items sous les seuils jusqu'à stabilité."""
    passes = 0
    while not frame.empty:
        user_deg = frame.groupby('user')['item'].transform('size')
        item_deg = frame.groupby('item')['user'].transform('size')
        keep = (user_deg >= min_user_degree) & (item_deg >= min_item_degree)
        passes += 1
        if keep.all():
            break
        frame = frame[keep]
    logger.debug(f"INGEST : filtrage stable après {passes} passe(s)")
    return frame


def _dataset_from_frame(frame, min_user_degree, min_item_degree) -> Dataset:
    # Doublons (user, item) : on garde l'horodatage le plus récent
    frame = frame.groupby(['user', 'item'], sort=False, as_index=False)['timestamp'].max()
    frame = _filter_to_fixed_point(frame, min_user_degree, min_item_degree)
    if frame.empty:
        raise DataError("empty dataset après filtrage par degré")

    user_ids = np.array(sorted(frame['user'].unique()), dtype=object)
    item_ids = np.array(sorted(frame['item'].unique()), dtype=object)
    users = pd.Categorical(frame['user'], categories=user_ids).codes.astype(np.int64)
    items = pd.Categorical(frame['item'], categories=item_ids).codes.astype(np.int64)
    timestamps = frame['timestamp'].to_numpy(dtype=np.int64)

    order = np.lexsort((items, users))
    return Dataset(
        num_users=len(user_ids),
        num_items=len(item_ids),
        users=readonly(users[order]),
        items=readonly(items[order]),
        timestamps=readonly(timestamps[order]),
        user_ids=readonly(user_ids),
        item_ids=readonly(item_ids),
        min_user_degree=min_user_degree,
        min_item_degree=min_item_degree,
    )


def build_dataset(records, min_user_degree: int, min_item_degree: int) -> Dataset:
    """
    Filtre, dédoublonne et ré-indexe les enregistrements.

    Les identifiants survivants sont ré-indexés dans l'ordre lexicographique
    des identifiants bruts ; tous les labels valent 1.
    """
    if min_user_degree < 0 or min_item_degree < 0:
        raise ConfigError("Les seuils de degré doivent être positifs ou nuls.")
    dataset = _dataset_from_frame(_records_frame(records), min_user_degree, min_item_degree)
    logger.info(
        f"INGEST : {dataset.num_users} users, {dataset.num_items} items, "
        f"{len(dataset)} interactions après filtrage ({min_user_degree}, {min_item_degree})"
    )
    return dataset


def dataset_statistics(dataset: InteractionSet) -> dict:
    user_deg = dataset.degrees()
    item_deg = dataset.item_degrees()
    return {
        'users': dataset.num_users,
        'items': dataset.num_items,
        'interactions': len(dataset),
        'density': len(dataset) / float(dataset.num_users * dataset.num_items),
        'user_degree_quantiles': np.quantile(user_deg, [0.0, 0.5, 0.9, 1.0]).tolist(),
        'item_degree_quantiles': np.quantile(item_deg, [0.0, 0.5, 0.9, 1.0]).tolist(),
    }


# ================= DÉCOUPAGE ET INSTANTANÉS =================

def split_counts(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """
    Arrondi au plus fort reste ; à reste égal, train puis val puis test.
    Val et test reçoivent au moins une interaction (prise sur train).
    """
    raw = [n * f for f in fractions]
    counts = [math.floor(r + 1e-9) for r in raw]
    leftover = n - sum(counts)
    ranking = sorted(range(3), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in ranking[:leftover]:
        counts[k] += 1
    for k in (1, 2):
        if counts[k] == 0:
            counts[k] = 1
            counts[0] -= 1
    return counts[0], counts[1], counts[2]


def split(dataset: InteractionSet, spec: SplitSpec) -> InteractionSplit:
    """Partition aléatoire par utilisateur, graine fixée, train prioritaire."""
    counts = dataset.degrees()
    too_small = np.flatnonzero(counts < 3)
    if too_small.size:
        raise DataError(
            f"L'utilisateur {int(too_small[0])} a {int(counts[too_small[0]])} interaction(s) ; "
            "il en faut au moins 3 pour remplir train/val/test."
        )

    # Les interactions d'un utilisateur sont contiguës (tri par user, item)
    order = np.lexsort((dataset.items, dataset.users))
    starts = np.concatenate(([0], np.cumsum(counts)))
    part = np.empty(len(dataset), dtype=np.int8)
    rng = np.random.default_rng(spec.seed)
    for user in range(dataset.num_users):
        n = int(counts[user])
        n_train, n_val, _ = split_counts(n, spec.fractions)
        labels = np.full(n, 2, dtype=np.int8)
        perm = rng.permutation(n)
        labels[perm[:n_train]] = 0
        labels[perm[n_train:n_train + n_val]] = 1
        part[order[starts[user]:starts[user + 1]]] = labels

    train, val, test = (dataset.subset(part == k) for k in range(3))
    logger.info(f"INGEST : découpage {len(train)}/{len(val)}/{len(test)} (graine {spec.seed})")
    return InteractionSplit(train=train, val=val, test=test)


def temporal_prefix(dataset: Dataset, fraction: float) -> Dataset:
    """Garde les interactions antérieures au quantile `fraction` des horodatages."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"Fraction temporelle hors de (0,1] : {fraction}")
    ordered = np.sort(dataset.timestamps)
    cutoff = ordered[max(math.ceil(fraction * len(ordered) - 1e-9), 1) - 1]
    keep = dataset.timestamps <= cutoff
    frame = pd.DataFrame({
        'user': dataset.user_ids[dataset.users[keep]],
        'item': dataset.item_ids[dataset.items[keep]],
        'timestamp': dataset.timestamps[keep],
    })
    return _dataset_from_frame(frame, dataset.min_user_degree, dataset.min_item_degree)
