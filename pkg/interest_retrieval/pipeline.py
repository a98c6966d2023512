# =============================================================================
# SERVICES DU PIPELINE
# =============================================================================
# Une fonction par commande. Chacune ne lit que ses artefacts amont déclarés
# et écrit ses propres artefacts, tous précédés de leur provenance.
# =============================================================================

import itertools
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch

from . import artifacts
from .artifacts import Provenance, require
from .config import PipelineConfig
from .evaluation import (EvalReport, MostPopular, combine_reports, engagement_decile_report, evaluate,
                         popularity_report, stability_study, training_time_report)
from .exceptions import ConfigError
from .graph import Clustering, build_bipartite, cluster_size_summary, louvain, project_co_engagement
from .ingest import InteractionSet, build_dataset, dataset_statistics, parse_csv, parse_movielens, split
from .interest import build_all_profiles, profile_matrix
from .retrieval import (ClusterBlocks, ClusterRetriever, EmbeddingIndex, RankedList, benchmark_inference,
                        full_scan_topk, kmeans, kmeans_topk)
from .training import embed_all, train, training_summary
from .two_tower import TwoTowerModel

logger = logging.getLogger(__name__)

STRATEGIES = ('full', 'cluster', 'kmeans', 'popular')


@dataclass
class StageResult:
    """Artefacts écrits (type, chemin) et résumé journalisé par la commande."""
    artifacts: list[tuple[str, Path]] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trials: list[dict] = field(default_factory=list)

    def add(self, kind: str, path) -> None:
        self.artifacts.append((kind, Path(path)))


# ================= CHEMINS ET PROVENANCE =================

def artifact_path(config: PipelineConfig, name: str) -> Path:
    return config.artifacts / name


def run_artifact(config: PipelineConfig, stem: str, ext: str, strategy: str | None = None) -> Path:
    parts = [stem] + ([strategy] if strategy else []) + [config.run_name, ext]
    return artifact_path(config, '.'.join(parts))


def upstream_timestamp(path) -> int:
    """Horodatage de données porté par l'en-tête d'un artefact amont."""
    return artifacts.read_provenance(path).timestamp


def provenance(config: PipelineConfig, command: str, timestamp: int) -> Provenance:
    return Provenance(command, config.config_hash, config.seed, int(timestamp))


def _load_split(config: PipelineConfig, *parts: str) -> list[InteractionSet]:
    return [artifacts.read_interactions(require(artifact_path(config, f'{p}.tsv'), 'ingest')) for p in parts]


def resolution_tag(config: PipelineConfig) -> str:
    return f"res{config['louvain.resolution']:g}"


def clustering_path(config: PipelineConfig) -> Path:
    """Un fichier par résolution : les ablations ne s'écrasent pas."""
    return artifact_path(config, f'clustering.{resolution_tag(config)}.tsv')


def profiles_path(config: PipelineConfig) -> Path:
    return artifact_path(config, f"profiles.{resolution_tag(config)}.{config['interest.method']}.tsv")


def _load_clustering(config: PipelineConfig) -> Clustering:
    return artifacts.read_clustering(require(clustering_path(config), 'cluster'))


def _load_profiles(config: PipelineConfig, num_users: int, num_clusters: int) -> np.ndarray:
    profiles = artifacts.read_profiles(require(profiles_path(config), 'interest'))
    return profile_matrix(profiles, num_users, num_clusters)


# ================= INGESTION =================

def load_records(config: PipelineConfig):
    raw_path = config.get('dataset.path')
    if not raw_path:
        raise ConfigError("La clé `dataset.path` est obligatoire pour `ingest`.")
    path = Path(raw_path)
    if not path.exists():
        raise ConfigError(f"Fichier de données introuvable : {path}")
    if config['dataset.format'] == 'movielens':
        return parse_movielens(path)
    columns = {
        'user': config.get('dataset.user_column'),
        'item': config.get('dataset.item_column'),
        'value': config.get('dataset.value_column'),
        'timestamp': config.get('dataset.timestamp_column'),
    }
    return parse_csv(path, columns)


def cmd_ingest(config: PipelineConfig) -> StageResult:
    records = load_records(config)
    min_user, min_item = config.degree_thresholds()
    dataset = build_dataset(records, min_user, min_item)
    stats = dataset_statistics(dataset)
    logger.info(
        f"INGEST : {stats['users']} utilisateurs, {stats['items']} items, "
        f"{stats['interactions']} interactions (densité {stats['density']:.4%})"
    )
    parts = split(dataset, config.split_spec())
    prov = provenance(config, 'ingest', dataset.latest_timestamp)

    result = StageResult(summary=stats)
    dataset_path, users_path, items_path = artifacts.write_dataset(artifact_path(config, 'dataset.tsv'), dataset, prov)
    result.add('dataset', dataset_path)
    result.add('dataset_users', users_path)
    result.add('dataset_items', items_path)
    for name in ('train', 'val', 'test'):
        subset = getattr(parts, name)
        result.add(name, artifacts.write_interactions(artifact_path(config, f'{name}.tsv'), subset, prov))
        result.summary[f'{name}_interactions'] = len(subset)
    logger.info(
        f"INGEST : découpage {len(parts.train)}/{len(parts.val)}/{len(parts.test)} (train/val/test)"
    )
    return result


# ================= CLUSTERS ET PROFILS =================

def cluster_train(train_set: InteractionSet, resolution: float, seed: int,
                  max_cluster_size: int | None) -> Clustering:
    graph = project_co_engagement(build_bipartite(train_set))
    return louvain(graph, resolution, seed, max_cluster_size)


def cmd_cluster(config: PipelineConfig) -> StageResult:
    train_path = require(artifact_path(config, 'train.tsv'), 'ingest')
    train_set = artifacts.read_interactions(train_path)
    clustering = cluster_train(train_set, config['louvain.resolution'], config['louvain.seed'],
                               config.get('louvain.max_cluster_size'))
    summary = cluster_size_summary(clustering)
    summary['pass_modularities'] = list(clustering.pass_modularities)
    logger.info(
        f"LOUVAIN : K={summary['clusters']} (ratio {summary['ratio']:.3f}), tailles "
        f"min {summary['min_size']} / médiane {summary['median_size']:.0f} / max {summary['max_size']}"
    )
    prov = provenance(config, 'cluster', upstream_timestamp(train_path))
    result = StageResult(summary=summary)
    result.add('clustering', artifacts.write_clustering(clustering_path(config), clustering, prov))
    return result


def cmd_interest(config: PipelineConfig) -> StageResult:
    train_path = require(artifact_path(config, 'train.tsv'), 'ingest')
    train_set = artifacts.read_interactions(train_path)
    clustering = _load_clustering(config)
    profiles = build_all_profiles(
        build_bipartite(train_set), clustering,
        method=config['interest.method'],
        damping=config['interest.damping'],
        tolerance=config['interest.tolerance'],
        max_iters=config['interest.max_iters'],
        batch_size=config['interest.batch_size'],
        threads=config.threads,
    )
    support = np.array([p.clusters.size for p in profiles.values()])
    prov = provenance(config, 'interest', upstream_timestamp(train_path))
    result = StageResult(summary={
        'users': len(profiles),
        'clusters': clustering.num_clusters,
        'mean_support': float(support.mean()) if support.size else 0.0,
    })
    result.add('profiles', artifacts.write_profiles(profiles_path(config), profiles, clustering.num_clusters, prov))
    return result


# ================= ENTRAÎNEMENT =================

def _fusion_inputs(config: PipelineConfig, train_set: InteractionSet, clustering: Clustering | None = None):
    """(K, matrice η, clusters des items) selon le mode de fusion."""
    fusion = config['model.fusion']
    if fusion == 'none':
        return 0, None, None
    clustering = clustering or _load_clustering(config)
    if fusion == 'attention':
        return clustering.num_clusters, None, clustering.assignment
    profiles = _load_profiles(config, train_set.num_users, clustering.num_clusters)
    return clustering.num_clusters, profiles, None


def fit_model(config: PipelineConfig, train_set: InteractionSet, val_set: InteractionSet,
              num_clusters: int, profiles, item_clusters, **overrides):
    train_config = config.train_config(**overrides)
    torch.manual_seed(train_config.seed)
    model = TwoTowerModel(config.model_spec(
        train_set.num_users, train_set.num_items, num_clusters, dropout=train_config.dropout_rate
    ))
    return train(model, train_set, val_set, profiles, train_config, item_clusters)


def cmd_train(config: PipelineConfig) -> StageResult:
    train_set, val_set = _load_split(config, 'train', 'val')
    num_clusters, profiles, item_clusters = _fusion_inputs(config, train_set)
    outcome = fit_model(config, train_set, val_set, num_clusters, profiles, item_clusters)

    prov = provenance(config, 'train', upstream_timestamp(artifact_path(config, 'train.tsv')))
    user_vecs, item_vecs, _ = embed_all(outcome.model, profiles)
    result = StageResult(summary={
        **training_summary(outcome.log),
        'stop_epoch': outcome.stop_epoch,
        'fusion': config['model.fusion'],
    })
    result.add('model', artifacts.save_model(outcome.model, run_artifact(config, 'model', 'bin'), prov))
    result.add('training_log', artifacts.write_training_log(
        run_artifact(config, 'training', 'tsv'), outcome.log, prov
    ))
    result.add('user_embeddings', artifacts.write_embeddings(
        run_artifact(config, 'user_embeddings', 'bin'), user_vecs, prov
    ))
    result.add('item_embeddings', artifacts.write_embeddings(
        run_artifact(config, 'item_embeddings', 'bin'), item_vecs, prov
    ))
    logger.info(
        f"TRAIN : meilleur epoch {outcome.best_epoch}, Recall@50 val {outcome.best_val_recall:.4f}, "
        f"arrêt à l'epoch {outcome.stop_epoch}"
    )
    return result


# ================= RECHERCHE =================

def load_index(config: PipelineConfig, train_set: InteractionSet) -> EmbeddingIndex:
    user_vecs = artifacts.read_embeddings(require(run_artifact(config, 'user_embeddings', 'bin'), 'train'))
    item_vecs = artifacts.read_embeddings(require(run_artifact(config, 'item_embeddings', 'bin'), 'train'))
    if config['model.fusion'] != 'attention':
        return EmbeddingIndex(user_vecs, item_vecs, train_set)
    model = artifacts.load_model(require(run_artifact(config, 'model', 'bin'), 'train'))
    with torch.no_grad():
        alpha = model.attention_weights(torch.from_numpy(user_vecs).to(model.user_embedding.weight.dtype))
    clustering = _load_clustering(config)
    return EmbeddingIndex(user_vecs, item_vecs, train_set, clustering.assignment, alpha.numpy())


def kmeans_centroids(config: PipelineConfig, num_items: int) -> int:
    return min(max(1, math.ceil(config['retrieval.kmeans_ratio'] * num_items)), num_items)


def build_strategy(config: PipelineConfig, strategy: str, train_set: InteractionSet,
                   users: Sequence[int] = ()) -> tuple[Callable[[int], RankedList], dict]:
    """
    Appelable user -> RankedList et paramètres effectifs de la stratégie.
    Les index par blocs et la sélection des clusters de `users` sont
    préparés ici, hors chronométrage.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"Stratégie inconnue : {strategy!r} (attendu {', '.join(STRATEGIES)})")
    k_rec = config['retrieval.k_rec']
    if strategy == 'popular':
        return MostPopular(train_set, k_rec), {'k_rec': k_rec}

    index = load_index(config, train_set)
    if strategy == 'full':
        return (lambda user: full_scan_topk(index, user, k_rec=k_rec)), {'k_rec': k_rec}

    if strategy == 'cluster':
        clustering = _load_clustering(config)
        profiles = artifacts.read_profiles(require(profiles_path(config), 'interest'))
        n_clusters, mode, seed = config['retrieval.n_clusters'], config['retrieval.mode'], config['retrieval.seed']
        blocks = ClusterBlocks.from_clustering(index, clustering)
        start = time.perf_counter()
        ranker = ClusterRetriever.for_users(index, blocks, profiles, users, n_clusters, k_rec, mode, seed)
        params = {'k_rec': k_rec, 'n_clusters': n_clusters, 'mode': mode, 'clusters': clustering.num_clusters,
                  'selection_seconds': time.perf_counter() - start}
        return ranker, params

    k = kmeans_centroids(config, index.num_items)
    model = kmeans(index.item_vectors, k, seed=config['retrieval.seed'])
    blocks = ClusterBlocks.build(index, model.assignment, k)
    n_centroids = min(config['retrieval.n_centroids'], k)
    params = {'k_rec': k_rec, 'centroids': k, 'n_centroids': n_centroids}
    return (lambda user: kmeans_topk(index, user, model, n_centroids, k_rec, blocks)), params


def evaluation_users(test_set: InteractionSet, limit: int | None = None) -> list[int]:
    users = np.flatnonzero(test_set.degrees() > 0).tolist()
    return users[:limit] if limit else users


def cmd_retrieve(config: PipelineConfig, strategy: str, users: int | None = None) -> StageResult:
    train_set, test_set = _load_split(config, 'train', 'test')
    targets = evaluation_users(test_set, users)
    ranker, params = build_strategy(config, strategy, train_set, targets)
    report, lists = benchmark_inference(ranker, targets, config['retrieval.repetitions'], name=strategy)

    prov = provenance(config, 'retrieve', upstream_timestamp(artifact_path(config, 'train.tsv')))
    timing = {**report.to_dict(), 'parameters': params,
              'mean_candidates': report.candidates_scored / max(report.users, 1)}
    result = StageResult(summary=timing)
    result.add('recommendations', artifacts.write_recommendations(
        run_artifact(config, 'recommendations', 'tsv', strategy), lists, prov
    ))
    result.add('timing', artifacts.write_json(run_artifact(config, 'timing', 'json', strategy), timing, prov))
    return result


# ================= ÉVALUATION =================

def _decile_metric(k_values: Sequence[int]) -> str:
    return 'ndcg@50' if 50 in k_values else f'ndcg@{max(k_values)}'


def combine_evaluations(config: PipelineConfig, strategy: str, paths: Sequence[str]) -> StageResult:
    reports = [EvalReport.from_dict(artifacts.read_json(require(p, 'evaluate'))) for p in paths]
    combined = combine_reports(reports)
    prov = provenance(config, 'evaluate', max(upstream_timestamp(p) for p in paths))
    result = StageResult(summary=combined.to_dict())
    result.add('report_combined', artifacts.write_json(
        run_artifact(config, 'report', 'combined.json', strategy), combined.to_dict(), prov
    ))
    logger.info(f"EVAL : {len(reports)} rapport(s) combiné(s) pour {strategy}")
    return result


def compare_training_time(config: PipelineConfig, vanilla_log: str, uic_log: str) -> StageResult:
    log_a = artifacts.read_training_log(require(vanilla_log, 'train'))
    log_b = artifacts.read_training_log(require(uic_log, 'train'))
    frame = training_time_report(log_a, log_b)
    prov = provenance(config, 'evaluate', max(upstream_timestamp(vanilla_log), upstream_timestamp(uic_log)))
    result = StageResult(summary={'training_time': frame.to_dict(orient='records')})
    result.add('training_time', artifacts.write_frame(artifact_path(config, 'training_time.csv'), frame, prov))
    return result


def cmd_evaluate(config: PipelineConfig, strategy: str, deciles: bool = False, reference: str | None = None,
                 popularity: bool = False, combine: Sequence[str] = (),
                 training_time: Sequence[str] = ()) -> StageResult:
    """
    Rapport de métriques d'une stratégie. `combine` agrège des rapports
    existants et `training_time` compare deux journaux d'entraînement ;
    ces deux modes n'évaluent pas de recommandations.
    """
    if combine or training_time:
        partials = []
        if combine:
            partials.append(combine_evaluations(config, strategy, combine))
        if training_time:
            partials.append(compare_training_time(config, *training_time))
        result = StageResult()
        for partial in partials:
            result.artifacts.extend(partial.artifacts)
            result.summary.update(partial.summary)
        return result

    recs_path = require(run_artifact(config, 'recommendations', 'tsv', strategy), 'retrieve')
    train_set, test_set = _load_split(config, 'train', 'test')
    recommendations = artifacts.read_recommendations(recs_path)
    # `retrieve --users N` ne couvre qu'un préfixe des utilisateurs test
    test_set = test_set.subset(np.isin(test_set.users, np.fromiter(recommendations, dtype=np.int64)))
    report = evaluate(recommendations, test_set, config['eval.k_values'], name=strategy,
                      available=train_set.num_items - train_set.degrees())
    timing_path = run_artifact(config, 'timing', 'json', strategy)
    if timing_path.exists():
        report.timing = artifacts.read_json(timing_path)

    prov = provenance(config, 'evaluate', upstream_timestamp(recs_path))
    users_path = run_artifact(config, 'report', 'users.tsv', strategy)
    result = StageResult()
    result.add('report_users', artifacts.write_frame(users_path, report.rows, prov, sep='\t'))
    payload = report.to_dict(per_user_path=users_path.name)

    if deciles:
        ref_rows = None
        if reference:
            ref_rows = artifacts.read_frame(require(reference, 'evaluate'), sep='\t')
        frame = engagement_decile_report(report.rows, train_set.degrees(), ref_rows,
                                         metric=_decile_metric(report.k_values))
        result.add('deciles', artifacts.write_frame(run_artifact(config, 'deciles', 'csv', strategy), frame, prov))
        if 'relative_gain' in frame:
            payload['low_engagement_gain'] = float(frame['relative_gain'].head(3).mean())

    if popularity:
        pop = popularity_report(train_set, recommendations, held_out=test_set)
        result.add('popularity', artifacts.write_frame(
            run_artifact(config, 'popularity', 'csv', strategy), pop.curve, prov
        ))
        payload['popularity'] = pop.summary

    result.add('report', artifacts.write_json(run_artifact(config, 'report', 'json', strategy), payload, prov))
    result.summary = payload
    return result


# ================= STABILITÉ =================

def cmd_stability(config: PipelineConfig) -> StageResult:
    dataset_path = require(artifact_path(config, 'dataset.tsv'), 'ingest')
    dataset = artifacts.read_dataset(dataset_path)
    study = stability_study(
        dataset, config['stability.fractions'],
        resolution=config['stability.resolution'],
        seed=config['louvain.seed'],
        max_cluster_size=config.get('louvain.max_cluster_size'),
    )
    prov = provenance(config, 'stability', upstream_timestamp(dataset_path))
    result = StageResult(summary=study.to_dict())
    result.add('stability', artifacts.write_json(artifact_path(config, 'stability.json'), study.to_dict(), prov))
    return result


# ================= GRILLE D'HYPERPARAMÈTRES =================

def grid_points(config: PipelineConfig) -> list[dict]:
    """Produit cartésien des listes `grid.*` ; une liste vide garde la valeur courante."""
    learning_rates = config.get('grid.learning_rate') or (config['model.learning_rate'],)
    dropouts = config.get('grid.dropout') or (config['model.dropout'],)
    resolutions = config.get('grid.resolution') or (None,)
    return [
        {'learning_rate': lr, 'dropout': dr, 'resolution': res}
        for res, lr, dr in itertools.product(resolutions, learning_rates, dropouts)
    ]


def _resolution_inputs(config: PipelineConfig, train_set: InteractionSet, resolution: float | None):
    if resolution is None or config['model.fusion'] == 'none':
        return _fusion_inputs(config, train_set)
    clustering = cluster_train(train_set, resolution, config['louvain.seed'], config.get('louvain.max_cluster_size'))
    if config['model.fusion'] == 'attention':
        return clustering.num_clusters, None, clustering.assignment
    profiles = build_all_profiles(
        build_bipartite(train_set), clustering,
        method=config['interest.method'],
        damping=config['interest.damping'],
        tolerance=config['interest.tolerance'],
        max_iters=config['interest.max_iters'],
        batch_size=config['interest.batch_size'],
        threads=config.threads,
    )
    return (clustering.num_clusters,
            profile_matrix(profiles, train_set.num_users, clustering.num_clusters), None)


def cmd_grid(config: PipelineConfig) -> StageResult:
    train_set, val_set = _load_split(config, 'train', 'val')
    points = grid_points(config)
    inputs = {}
    trials = []
    for point in points:
        resolution = point['resolution']
        if resolution not in inputs:
            inputs[resolution] = _resolution_inputs(config, train_set, resolution)
        num_clusters, profiles, item_clusters = inputs[resolution]
        outcome = fit_model(config, train_set, val_set, num_clusters, profiles, item_clusters,
                            learning_rate=point['learning_rate'], dropout_rate=point['dropout'])
        trials.append({
            'parameters': point,
            'clusters': num_clusters,
            'val_recall': outcome.best_val_recall,
            'best_epoch': outcome.best_epoch,
            'stop_epoch': outcome.stop_epoch,
        })
        logger.info(f"TRAIN : grille {point} -> Recall@50 val {outcome.best_val_recall:.4f}")

    # Meilleur Recall@50 de validation ; à égalité, le premier point de la grille
    best = max(range(len(trials)), key=lambda t: (trials[t]['val_recall'], -t))
    for position, trial in enumerate(trials):
        trial['selected'] = position == best

    frame = pd.DataFrame([
        {
            'learning_rate': t['parameters']['learning_rate'],
            'dropout': t['parameters']['dropout'],
            'resolution': t['parameters']['resolution'],
            'clusters': t['clusters'],
            'val_recall': t['val_recall'],
            'best_epoch': t['best_epoch'],
            'stop_epoch': t['stop_epoch'],
            'selected': int(t['selected']),
        }
        for t in trials
    ])
    prov = provenance(config, 'grid', upstream_timestamp(artifact_path(config, 'train.tsv')))
    result = StageResult(summary={'best': trials[best]['parameters'], 'val_recall': trials[best]['val_recall']},
                         trials=trials)
    result.add('grid', artifacts.write_frame(artifact_path(config, 'grid.tsv'), frame, prov, sep='\t'))
    logger.info(f"TRAIN : point retenu {trials[best]['parameters']} (Recall@50 val {trials[best]['val_recall']:.4f})")
    return result
