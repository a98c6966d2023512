# =============================================================================
# CONFIGURATION DU PIPELINE
# =============================================================================
# Fichier texte `clé = valeur` à préfixes pointés, `#` pour les commentaires,
# surchargé par des `--set clé=valeur`. Validation par PipelineConfigForm.
# =============================================================================

import hashlib
import logging
import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings

from .exceptions import ConfigError
from .forms import PipelineConfigForm, config_key, field_name
from .ingest import SplitSpec
from .training import TrainConfig
from .two_tower import ModelSpec

logger = logging.getLogger(__name__)

# Seuils de degré par format : (min_user_degree, min_item_degree)
DEGREE_DEFAULTS = {'movielens': (20, 1), 'csv': (20, 10)}

DEFAULTS = {
    'paths.artifacts': 'artifacts',
    'dataset.format': 'movielens',
    'dataset.user_column': 'user_id',
    'dataset.item_column': 'recipe_id',
    'dataset.value_column': 'rating',
    'dataset.timestamp_column': 'date',
    'split.train': '0.8',
    'split.val': '0.1',
    'split.test': '0.1',
    'louvain.resolution': '1.1',
    'interest.method': 'ppr',
    'interest.damping': '0.85',
    'interest.tolerance': '1e-8',
    'interest.max_iters': '200',
    'interest.batch_size': '256',
    'model.d_in': '64',
    'model.hidden': '128,64',
    'model.d_int': '32',
    'model.fusion': 'concat',
    'model.similarity': 'dot',
    'model.learning_rate': '0.001',
    'model.weight_decay': '0.0005',
    'model.dropout': '0.1',
    'model.batch_size': '4096',
    'model.negatives': '4',
    'model.max_epochs': '100',
    'model.eval_every': '5',
    'model.patience': '5',
    'retrieval.n_clusters': '250',
    'retrieval.mode': 'top',
    'retrieval.k_rec': '50',
    'retrieval.kmeans_ratio': '0.1',
    'retrieval.n_centroids': '250',
    'retrieval.repetitions': '3',
    'eval.k_values': '10,20,50',
    'stability.fractions': '0.99,0.98,0.97,0.96,0.95',
}

SECTION_SEEDS = ('split.seed', 'louvain.seed', 'model.seed', 'retrieval.seed')


def parse_lines(lines: Iterable[str], source: str = '<config>') -> dict[str, str]:
    values = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}, ligne {number} : `clé = valeur` attendu, reçu {raw.strip()!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError(f"{source}, ligne {number} : clé vide")
        values[key] = value
    return values


def parse_overrides(overrides: Iterable[str]) -> dict[str, str]:
    values = {}
    for item in overrides or ():
        if '=' not in item:
            raise ConfigError(f"--set attend clé=valeur, reçu {item!r}")
        key, value = (part.strip() for part in item.split('=', 1))
        values[key] = value
    return values


def _canonical(value) -> str:
    if isinstance(value, tuple):
        return ','.join(_canonical(v) for v in value)
    if value is None:
        return ''
    return repr(value) if isinstance(value, float) else str(value)


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration validée, accessible par clé pointée."""
    values: Mapping[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        value = self.values.get(key)
        return default if value in (None, '', ()) else value

    @property
    def seed(self) -> int:
        return int(self.values['seed'])

    @property
    def config_hash(self) -> str:
        """12 premiers hex du SHA-256 des lignes `clé=valeur` triées."""
        canonical = '\n'.join(f"{k}={_canonical(self.values[k])}" for k in sorted(self.values))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]

    @property
    def artifacts(self) -> Path:
        root = Path(self['paths.artifacts'])
        if not root.is_absolute():
            root = Path(getattr(settings, 'PIPELINE_ARTIFACT_ROOT', Path.cwd())) / root
        return root

    @property
    def run_name(self) -> str:
        return self.get('run.name') or self['model.fusion']

    @property
    def threads(self) -> int:
        threads = self.get('threads') or getattr(settings, 'PIPELINE_THREADS', 0)
        return int(threads) or (os.cpu_count() or 1)

    def degree_thresholds(self) -> tuple[int, int]:
        user_default, item_default = DEGREE_DEFAULTS[self['dataset.format']]
        user = self.values.get('filter.min_user_degree')
        item = self.values.get('filter.min_item_degree')
        return (user_default if user is None else user, item_default if item is None else item)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self['split.train'], self['split.val'], self['split.test'], self['split.seed'])

    def train_config(self, **overrides) -> TrainConfig:
        params = {
            'learning_rate': self['model.learning_rate'],
            'weight_decay': self['model.weight_decay'],
            'dropout_rate': self['model.dropout'],
            'batch_size': self['model.batch_size'],
            'negatives_per_positive': self['model.negatives'],
            'max_epochs': self['model.max_epochs'],
            'eval_every': self['model.eval_every'],
            'patience': self['model.patience'],
            'seed': self['model.seed'],
            'fusion_mode': self['model.fusion'],
        }
        params.update(overrides)
        return TrainConfig(**params)

    def model_spec(self, num_users: int, num_items: int, num_clusters: int, **overrides) -> ModelSpec:
        params = {
            'num_users': num_users,
            'num_items': num_items,
            'num_clusters': num_clusters,
            'd_in': self['model.d_in'],
            'hidden': tuple(self['model.hidden']),
            'd_int': self['model.d_int'],
            'fusion': self['model.fusion'],
            'similarity': self['model.similarity'],
            'dropout': self['model.dropout'],
        }
        params.update(overrides)
        return ModelSpec(**params)

    def with_overrides(self, **changes) -> 'PipelineConfig':
        values = dict(self.values)
        values.update(changes)
        return PipelineConfig(values)


def build_config(raw: Mapping[str, str]) -> PipelineConfig:
    """Applique les défauts, rejette les clés inconnues et valide par formulaire."""
    form_fields = PipelineConfigForm.base_fields
    unknown = sorted(k for k in raw if field_name(k) not in form_fields)
    if unknown:
        raise ConfigError(f"Clé(s) de configuration inconnue(s) : {', '.join(unknown)}")
    if 'seed' not in raw or not str(raw['seed']).strip():
        raise ConfigError("La clé `seed` est obligatoire.")

    merged = {**DEFAULTS, **raw}
    form = PipelineConfigForm(data={field_name(k): v for k, v in merged.items()})
    if not form.is_valid():
        problems = '; '.join(
            f"{config_key(name) if name != '__all__' else 'config'} : {' '.join(errors)}"
            for name, errors in form.errors.items()
        )
        raise ConfigError(f"Configuration invalide : {problems}")

    values = {config_key(name): value for name, value in form.cleaned_data.items()}
    for key in SECTION_SEEDS:
        if values.get(key) is None:
            values[key] = values['seed']
    if values.get('stability.resolution') is None:
        values['stability.resolution'] = values['louvain.resolution']
    return PipelineConfig(values)


def load_config(path=None, overrides: Iterable[str] = ()) -> PipelineConfig:
    raw = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Fichier de configuration introuvable : {path}")
        raw = parse_lines(path.read_text(encoding='utf-8').splitlines(), str(path))
    raw.update(parse_overrides(overrides))
    config = build_config(raw)
    logger.debug(f"Configuration {config.config_hash} chargée ({len(raw)} clé(s) explicite(s))")
    return config
