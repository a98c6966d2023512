# =============================================================================
# ARTEFACTS SUR DISQUE
# =============================================================================
# Chaque fichier commence par un en-tête de provenance :
#   # command=<cmd> config=<hash> seed=<seed> timestamp=<ts>
# (objet "provenance" en tête pour les JSON). `timestamp` est l'horodatage
# de données le plus récent, jamais l'heure murale.
# =============================================================================

import hashlib
import io
import json
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .exceptions import DataError, MissingArtifactError
from .graph import Clustering
from .ingest import Dataset, InteractionSet, readonly
from .interest import InterestProfile
from .retrieval import RankedList
from .training import EpochLog
from .two_tower import ModelSpec, TwoTowerModel

PROVENANCE_RE = re.compile(
    r'^# command=(?P<command>\S+) config=(?P<config>\S+) seed=(?P<seed>-?\d+) timestamp=(?P<timestamp>-?\d+)$'
)


@dataclass(frozen=True)
class Provenance:
    command: str
    config_hash: str
    seed: int
    timestamp: int

    def header_line(self) -> str:
        return (f"# command={self.command} config={self.config_hash} "
                f"seed={self.seed} timestamp={self.timestamp}")

    def as_dict(self) -> dict:
        return {
            'command': self.command,
            'config': self.config_hash,
            'seed': self.seed,
            'timestamp': self.timestamp,
        }

    @classmethod
    def parse(cls, line: str) -> 'Provenance':
        match = PROVENANCE_RE.match(line.rstrip('\n'))
        if not match:
            raise DataError(f"En-tête de provenance invalide : {line.strip()!r}")
        return cls(match['command'], match['config'], int(match['seed']), int(match['timestamp']))


def require(path, producer: str) -> Path:
    """Vérifie qu'un artefact amont existe, sinon nomme la commande à lancer."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def file_digest(path) -> tuple[str, int]:
    data = Path(path).read_bytes()
    return hashlib.sha256(data).hexdigest(), len(data)


def sidecar(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.{suffix}{path.suffix}")


# ================= TEXTE =================

def _write_lines(path, provenance: Provenance, lines) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write(provenance.header_line() + '\n')
        for line in lines:
            fh.write(line + '\n')
    return path


def _read_lines(path) -> tuple[Provenance, list[str]]:
    with open(path, encoding='utf-8') as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataError(f"{path} : fichier vide")
    return Provenance.parse(lines[0]), lines[1:]


def _comment_fields(line: str) -> dict[str, str]:
    return dict(part.split('=', 1) for part in line.lstrip('#').split())


def _tab_rows(path, lines, width: int):
    for offset, line in enumerate(lines):
        if not line or line.startswith('#'):
            continue
        parts = line.split('\t')
        if len(parts) != width:
            raise DataError(f"{path}, ligne {offset + 2} : {width} colonnes attendues")
        yield parts


def _interaction_lines(interactions: InteractionSet):
    yield f"users={interactions.num_users} items={interactions.num_items} interactions={len(interactions)}"
    for u, i, t in zip(interactions.users.tolist(), interactions.items.tolist(),
                       interactions.timestamps.tolist()):
        yield f"{u}\t{i}\t{t}"


def _parse_interactions(path, lines) -> tuple[dict, np.ndarray]:
    counts = {k: int(v) for k, v in _comment_fields(lines[0]).items()}
    rows = np.array(list(_tab_rows(path, lines[1:], 3)), dtype=np.int64).reshape(-1, 3)
    if rows.shape[0] != counts['interactions']:
        raise DataError(f"{path} : {counts['interactions']} interactions annoncées, {rows.shape[0]} lues")
    return counts, rows


def write_interactions(path, interactions: InteractionSet, provenance: Provenance) -> Path:
    return _write_lines(path, provenance, _interaction_lines(interactions))


def read_interactions(path) -> InteractionSet:
    _, lines = _read_lines(path)
    counts, rows = _parse_interactions(path, lines)
    return InteractionSet(counts['users'], counts['items'],
                          readonly(rows[:, 0]), readonly(rows[:, 1]), readonly(rows[:, 2]))


def write_dataset(path, dataset: Dataset, provenance: Provenance) -> list[Path]:
    """Jeu indexé + fichiers annexes `*.users.tsv` / `*.items.tsv` (raw_id, index)."""
    def lines():
        generator = _interaction_lines(dataset)
        yield next(generator)
        yield f"# min_user_degree={dataset.min_user_degree} min_item_degree={dataset.min_item_degree}"
        yield from generator

    written = [_write_lines(path, provenance, lines())]
    for suffix, ids in (('users', dataset.user_ids), ('items', dataset.item_ids)):
        written.append(_write_lines(
            sidecar(path, suffix), provenance, (f"{raw}\t{idx}" for idx, raw in enumerate(ids.tolist()))
        ))
    return written


def _read_id_map(path, expected: int) -> np.ndarray:
    _, lines = _read_lines(path)
    pairs = list(_tab_rows(path, lines, 2))
    ids = np.empty(len(pairs), dtype=object)
    for raw, idx in pairs:
        ids[int(idx)] = raw
    if ids.size != expected:
        raise DataError(f"{path} : {expected} identifiants attendus, {ids.size} lus")
    return ids


def read_dataset(path) -> Dataset:
    _, lines = _read_lines(path)
    thresholds = {k: int(v) for k, v in _comment_fields(lines[1]).items()}
    counts, rows = _parse_interactions(path, [lines[0]] + lines[2:])
    return Dataset(
        num_users=counts['users'],
        num_items=counts['items'],
        users=readonly(rows[:, 0]),
        items=readonly(rows[:, 1]),
        timestamps=readonly(rows[:, 2]),
        user_ids=readonly(_read_id_map(sidecar(path, 'users'), counts['users'])),
        item_ids=readonly(_read_id_map(sidecar(path, 'items'), counts['items'])),
        min_user_degree=thresholds['min_user_degree'],
        min_item_degree=thresholds['min_item_degree'],
    )


def write_clustering(path, clustering: Clustering, provenance: Provenance) -> Path:
    def lines():
        yield f"# K={clustering.num_clusters} resolution={clustering.resolution} seed={clustering.seed}"
        for item, cluster in enumerate(clustering.assignment.tolist()):
            yield f"{item}\t{cluster}"
    return _write_lines(path, provenance, lines())


def read_clustering(path) -> Clustering:
    _, lines = _read_lines(path)
    meta = _comment_fields(lines[0])
    rows = np.array(list(_tab_rows(path, lines[1:], 2)), dtype=np.int64).reshape(-1, 2)
    assignment = np.empty(rows.shape[0], dtype=np.int64)
    assignment[rows[:, 0]] = rows[:, 1]
    clustering = Clustering.from_labels(assignment, float(meta['resolution']), int(meta['seed']))
    if clustering.num_clusters != int(meta['K']):
        raise DataError(f"{path} : K={meta['K']} annoncé, {clustering.num_clusters} clusters lus")
    return clustering


def write_profiles(path, profiles: dict[int, InterestProfile], num_clusters: int,
                   provenance: Provenance) -> Path:
    def lines():
        yield f"# K={num_clusters}"
        for user in sorted(profiles):
            p = profiles[user]
            yield f"{user}\t" + ','.join(f"{c}:{w:.6f}" for c, w in zip(p.clusters.tolist(), p.weights.tolist()))
    return _write_lines(path, provenance, lines())


def read_profiles(path) -> dict[int, InterestProfile]:
    """Les poids arrondis à 6 décimales sont renormalisés à la lecture."""
    _, lines = _read_lines(path)
    k = int(_comment_fields(lines[0])['K'])
    profiles = {}
    for user, body in _tab_rows(path, lines[1:], 2):
        pairs = [entry.split(':') for entry in body.split(',') if entry]
        eta = np.zeros(k)
        for cluster, weight in pairs:
            eta[int(cluster)] = float(weight)
        profiles[int(user)] = InterestProfile.from_dense(int(user), eta / eta.sum())
    return profiles


def write_recommendations(path, lists, provenance: Provenance) -> Path:
    def lines():
        for ranked in sorted(lists, key=lambda r: r.user_index):
            yield f"{ranked.user_index}\t" + ','.join(
                f"{i}:{s:.4f}" for i, s in zip(ranked.items.tolist(), ranked.scores.tolist())
            )
    return _write_lines(path, provenance, lines())


def read_recommendations(path) -> dict[int, RankedList]:
    _, lines = _read_lines(path)
    out = {}
    for user, body in _tab_rows(path, lines, 2):
        pairs = [entry.split(':') for entry in body.split(',') if entry]
        items = np.array([int(i) for i, _ in pairs], dtype=np.int64)
        scores = np.array([float(s) for _, s in pairs])
        out[int(user)] = RankedList(int(user), items, scores, 0)
    return out


def write_frame(path, frame: pd.DataFrame, provenance: Provenance, sep: str = ',') -> Path:
    """Table pandas (CSV ou TSV) précédée de l'en-tête de provenance."""
    buffer = io.StringIO()
    frame.to_csv(buffer, sep=sep, index=False, lineterminator='\n')
    return _write_lines(path, provenance, buffer.getvalue().splitlines())


def read_frame(path, sep: str = ',') -> pd.DataFrame:
    _, lines = _read_lines(path)
    return pd.read_csv(io.StringIO('\n'.join(lines)), sep=sep)


def write_training_log(path, log: list[EpochLog], provenance: Provenance) -> Path:
    frame = pd.DataFrame(
        [(e.epoch, e.loss, e.seconds, e.val_recall) for e in log],
        columns=['epoch', 'loss', 'seconds', 'val_recall'],
    )
    return write_frame(path, frame, provenance, sep='\t')


def read_training_log(path) -> list[EpochLog]:
    frame = read_frame(path, sep='\t')
    return [
        EpochLog(int(r.epoch), float(r.loss), float(r.seconds),
                 None if pd.isna(r.val_recall) else float(r.val_recall))
        for r in frame.itertuples(index=False)
    ]


# ================= JSON =================

def write_json(path, payload: dict, provenance: Provenance) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'provenance': provenance.as_dict(), **payload}
    path.write_text(json.dumps(document, indent=2) + '\n', encoding='utf-8')
    return path


def read_provenance(path) -> Provenance:
    """En-tête d'un artefact, qu'il soit texte, binaire ou JSON."""
    path = Path(path)
    if path.suffix == '.json':
        fields = json.loads(path.read_text(encoding='utf-8')).get('provenance')
        if not fields:
            raise DataError(f"{path} : objet provenance absent")
        return Provenance(fields['command'], fields['config'], int(fields['seed']), int(fields['timestamp']))
    with open(path, 'rb') as fh:
        return Provenance.parse(fh.readline().decode('utf-8'))


def read_json(path) -> dict:
    document = json.loads(Path(path).read_text(encoding='utf-8'))
    document.pop('provenance', None)
    return document


# ================= BINAIRES =================

def _model_header(spec: ModelSpec) -> str:
    return (f"d_in={spec.d_in} d_out={spec.d_out} K={spec.num_clusters} fusion={spec.fusion} "
            f"d_int={spec.d_int} hidden={','.join(map(str, spec.hidden))} "
            f"num_users={spec.num_users} num_items={spec.num_items} "
            f"similarity={spec.similarity} dropout={spec.dropout}")


def save_model(model: TwoTowerModel, path, provenance: Provenance) -> Path:
    """
    En-tête texte puis un bloc par paramètre, dans l'ordre du state_dict :
    <u4 longueur du nom, nom UTF-8, <u4 ndim, <u4 dims, données <f4.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as fh:
        fh.write((provenance.header_line() + '\n').encode('utf-8'))
        fh.write((_model_header(model.spec) + '\n').encode('utf-8'))
        for name, tensor in model.state_dict().items():
            encoded = name.encode('utf-8')
            data = tensor.detach().cpu().numpy()
            fh.write(struct.pack('<I', len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack('<I', data.ndim))
            fh.write(struct.pack(f'<{data.ndim}I', *data.shape))
            fh.write(data.astype('<f4').tobytes())
    return path


def load_model(path) -> TwoTowerModel:
    with open(path, 'rb') as fh:
        Provenance.parse(fh.readline().decode('utf-8'))
        meta = _comment_fields(fh.readline().decode('utf-8').strip())
        payload = fh.read()

    spec = ModelSpec(
        num_users=int(meta['num_users']),
        num_items=int(meta['num_items']),
        num_clusters=int(meta['K']),
        d_in=int(meta['d_in']),
        hidden=tuple(int(h) for h in meta['hidden'].split(',')),
        d_int=int(meta['d_int']),
        fusion=meta['fusion'],
        similarity=meta['similarity'],
        dropout=float(meta['dropout']),
    )
    state, offset = {}, 0
    while offset < len(payload):
        (name_len,) = struct.unpack_from('<I', payload, offset)
        offset += 4
        name = payload[offset:offset + name_len].decode('utf-8')
        offset += name_len
        (ndim,) = struct.unpack_from('<I', payload, offset)
        offset += 4
        shape = struct.unpack_from(f'<{ndim}I', payload, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(payload, dtype='<f4', count=count, offset=offset).reshape(shape)
        offset += 4 * count
        state[name] = torch.from_numpy(data.astype(np.float32))

    model = TwoTowerModel(spec)
    model.load_state_dict(state, strict=True)
    model.eval()
    return model


def write_embeddings(path, matrix: np.ndarray, provenance: Provenance) -> Path:
    """En-tête <i4 (lignes, colonnes, 1) puis données <f4 en ordre ligne."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = matrix.shape
    with open(path, 'wb') as fh:
        fh.write((provenance.header_line() + '\n').encode('utf-8'))
        fh.write(np.array([rows, cols, 1], dtype='<i4').tobytes())
        fh.write(np.ascontiguousarray(matrix, dtype='<f4').tobytes())
    return path


def read_embeddings(path) -> np.ndarray:
    with open(path, 'rb') as fh:
        Provenance.parse(fh.readline().decode('utf-8'))
        rows, cols, _ = np.frombuffer(fh.read(12), dtype='<i4')
        data = np.frombuffer(fh.read(), dtype='<f4')
    if data.size != rows * cols:
        raise DataError(f"{path} : {rows}x{cols} annoncé, {data.size} valeurs lues")
    return data.reshape(rows, cols).astype(np.float32)
