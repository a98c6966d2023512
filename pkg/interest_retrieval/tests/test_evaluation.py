import math

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from ..exceptions import ConfigError
from ..ingest import InteractionRecord, build_dataset
from ..retrieval import RankedList
from ..evaluation import (EvalReport, MostPopular, ari, combine_reports, engagement_buckets,
                          engagement_decile_report, evaluate, ndcg_at_k, popularity_report, precision_at_k,
                          recall_at_k, stability_study, training_time_report)
from ..training import EpochLog
from .factories import community_ratings, interactions


class MetricTests(SimpleTestCase):

    def test_precision_example(self):
        self.assertEqual(precision_at_k([0, 1, 2, 3, 4], {1, 4}, 5), 0.4)

    def test_recall_example(self):
        self.assertEqual(recall_at_k([0, 1, 20, 21], set(range(8)), 4), 0.25)

    def test_ndcg_example(self):
        self.assertAlmostEqual(ndcg_at_k([5, 9, 7], {9}, 3), 1 / math.log2(3), places=12)
        self.assertAlmostEqual(ndcg_at_k([5, 9, 7], {9}, 3), 0.6309, places=4)

    def test_no_relevant_items(self):
        self.assertIsNone(recall_at_k([1, 2], set(), 2))
        self.assertIsNone(ndcg_at_k([1, 2], set(), 2))

    def test_short_list_precision(self):
        self.assertEqual(precision_at_k([7, 9], {7, 40, 41}, 50), 0.02)
        self.assertEqual(precision_at_k([3], {3}, 10), 0.1)
        self.assertEqual(precision_at_k([], {3}, 10), 0.0)

    def test_precision_when_few_candidates_remain(self):
        self.assertEqual(precision_at_k([7, 9], {7, 40, 41}, 50, available=2), 0.5)
        self.assertEqual(precision_at_k([3], {3}, 10, available=1), 1.0)
        self.assertEqual(precision_at_k([7, 9], {7}, 2, available=2), 0.5)
        self.assertEqual(precision_at_k([7, 9], {7}, 50, available=500), 0.02)
        self.assertEqual(precision_at_k([], {3}, 10, available=0), 0.0)

    def test_ndcg_grows_when_a_hit_moves_up(self):
        relevant = {8}
        rankings = [[1, 2, 3, 4, 5, 6, 7, 8][:position] + [8] + [1, 2, 3, 4, 5, 6, 7][position:]
                    for position in range(7, -1, -1)]
        scores = [ndcg_at_k(ranking, relevant, 8) for ranking in rankings]
        self.assertTrue(all(a < b for a, b in zip(scores, scores[1:])))
        self.assertEqual(rankings[-1][0], 8)
        self.assertAlmostEqual(scores[-1], 1.0, places=12)

    def test_metrics_monotone_in_k(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            recommended = rng.permutation(40)[:30].tolist()
            relevant = set(rng.choice(40, size=int(rng.integers(1, 12)), replace=False).tolist())
            recalls = [recall_at_k(recommended, relevant, k) for k in range(1, 31)]
            hits = [precision_at_k(recommended, relevant, k) * k for k in range(1, 31)]
            self.assertTrue(all(a <= b for a, b in zip(recalls, recalls[1:])))
            self.assertTrue(all(a <= b + 1e-12 for a, b in zip(hits, hits[1:])))

    def test_matches_direct_computation(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            recommended = rng.permutation(30)[:int(rng.integers(1, 30))].tolist()
            relevant = set(rng.choice(30, size=int(rng.integers(1, 10)), replace=False).tolist())
            k = int(rng.integers(1, 35))
            hits = np.array([item in relevant for item in recommended[:k]], dtype=float)
            discounts = 1 / np.log2(np.arange(2, hits.size + 2))
            ideal = (1 / np.log2(np.arange(2, min(k, len(relevant)) + 2))).sum()

            self.assertAlmostEqual(precision_at_k(recommended, relevant, k),
                                   hits.sum() / k, places=12)
            self.assertAlmostEqual(recall_at_k(recommended, relevant, k), hits.sum() / len(relevant), places=12)
            self.assertAlmostEqual(ndcg_at_k(recommended, relevant, k), (hits * discounts).sum() / ideal, places=12)
            self.assertTrue(0.0 <= ndcg_at_k(recommended, relevant, k) <= 1.0)


class MostPopularTests(SimpleTestCase):

    def setUp(self):
        self.train = interactions(3, 4, [(0, 2), (1, 2), (2, 2), (0, 1), (1, 1), (2, 3)])

    def test_ranking_skips_seen_items(self):
        strategy = MostPopular(self.train, k_rec=2)
        self.assertEqual(strategy(2).items.tolist(), [1, 0])
        self.assertEqual(strategy(0).items.tolist(), [3, 0])

    def test_scores_are_counts(self):
        self.assertEqual(MostPopular(self.train, k_rec=1)(2).scores.tolist(), [2.0])


class EvaluateTests(SimpleTestCase):

    def setUp(self):
        self.test = interactions(4, 6, [(0, 1), (0, 4), (1, 2), (3, 5)])

    def oracle(self, user):
        return RankedList(user, self.test.items_of(user).astype(np.int64), np.ones(self.test.items_of(user).size))

    def test_oracle_strategy(self):
        report = evaluate(self.oracle, self.test, [1, 2], name='oracle')
        self.assertEqual(report.users, 3)
        self.assertEqual(report.excluded_users, 1)
        self.assertEqual(report.means['recall@2'], 1.0)
        self.assertEqual(report.means['ndcg@2'], 1.0)
        self.assertAlmostEqual(report.means['recall@1'], (0.5 + 1 + 1) / 3)

    def test_precomputed_lists(self):
        lists = {0: RankedList(0, np.array([4, 0]), np.zeros(2))}
        report = evaluate(lists, self.test, [2])
        self.assertEqual(report.rows.set_index('user').loc[1, 'recall@2'], 0.0)
        self.assertEqual(report.rows.set_index('user').loc[0, 'precision@2'], 0.5)

    def test_available_candidates_set_precision_denominator(self):
        lists = {0: RankedList(0, np.array([4, 0]), np.zeros(2))}
        default = evaluate(lists, self.test, [10]).rows.set_index('user')
        self.assertEqual(default.loc[0, 'precision@10'], 0.1)
        short = evaluate(lists, self.test, [10], available=np.array([2, 6, 6, 6])).rows.set_index('user')
        self.assertEqual(short.loc[0, 'precision@10'], 0.5)

    def test_invalid_k_values(self):
        with self.assertRaises(ConfigError):
            evaluate(self.oracle, self.test, [0])

    def test_report_round_trip_through_dict(self):
        report = evaluate(self.oracle, self.test, [2], name='oracle')
        again = EvalReport.from_dict(report.to_dict('users.tsv'))
        self.assertEqual((again.strategy, again.means), ('oracle', report.means))

    def test_combine_uses_population_std(self):
        reports = [EvalReport('full', (50,), {'recall@50': value}, {'recall@50': 0.0}, 0) for value in (0.2, 0.4)]
        combined = combine_reports(reports)
        self.assertAlmostEqual(combined.means['recall@50'], 0.3)
        self.assertAlmostEqual(combined.std['recall@50'], 0.1)
        self.assertEqual(combined.runs, 2)

    def test_combine_incompatible(self):
        with self.assertRaises(ConfigError):
            combine_reports([EvalReport('a', (10,), {'recall@10': 0.1}, {}, 0),
                             EvalReport('a', (20,), {'recall@20': 0.1}, {}, 0)])


class DecileTests(SimpleTestCase):

    def setUp(self):
        self.degrees = np.arange(1, 26)
        self.rows = pd.DataFrame({'user': np.arange(25), 'ndcg@50': np.linspace(0.1, 0.5, 25)})

    def test_buckets_have_equal_sizes(self):
        sizes = [b.size for b in engagement_buckets(np.arange(25), self.degrees)]
        self.assertEqual(sum(sizes), 25)
        self.assertLessEqual(max(sizes) - min(sizes), 1)

    def test_buckets_are_ordered_by_engagement(self):
        buckets = engagement_buckets(np.arange(25), self.degrees[::-1].copy())
        self.assertEqual(buckets[0].tolist(), [24, 23, 22])

    def test_reference_against_itself_has_zero_gain(self):
        report = engagement_decile_report(self.rows, self.degrees, reference=self.rows)
        self.assertEqual(len(report), 10)
        self.assertTrue((report['relative_gain'] == 0).all())

    def test_gain_over_reference(self):
        reference = self.rows.assign(**{'ndcg@50': self.rows['ndcg@50'] / 2})
        report = engagement_decile_report(self.rows, self.degrees, reference=reference)
        np.testing.assert_allclose(report['relative_gain'], 1.0)

    def test_missing_metric(self):
        with self.assertRaises(ConfigError):
            engagement_decile_report(self.rows, self.degrees, metric='ndcg@10')


class PopularityReportTests(SimpleTestCase):

    def test_single_item_holds_everything(self):
        train = interactions(3, 2, [(0, 0), (1, 0), (2, 0)])
        report = popularity_report(train, [RankedList(0, np.array([1]), np.array([0.0]))])
        self.assertEqual(report.summary['top1_share'], 1.0)
        self.assertEqual(report.summary['mean_rank_recommended'], 2.0)

    def test_uniform_popularity(self):
        train = interactions(20, 20, [(u, u) for u in range(20)])
        report = popularity_report(train, {}, held_out=interactions(20, 20, [(0, 0)]))
        self.assertAlmostEqual(report.summary['top10_share'], 0.5)
        self.assertAlmostEqual(report.summary['top_decile_share'], 0.1)
        self.assertIsNone(report.summary['mean_rank_recommended'])
        self.assertEqual(report.summary['mean_rank_held_out'], 1.0)
        self.assertAlmostEqual(report.curve['cumulative_share'].iloc[-1], 1.0)


class AriTests(SimpleTestCase):

    def test_identical_partitions(self):
        self.assertEqual(ari([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]), 1.0)

    def test_relabelling_does_not_matter(self):
        self.assertEqual(ari([0, 0, 1, 1], [5, 5, 3, 3]), 1.0)

    def test_singletons_against_one_cluster(self):
        self.assertLessEqual(ari([0, 1, 2, 3], [0, 0, 0, 0]), 0.0)

    def test_partial_agreement(self):
        self.assertAlmostEqual(ari([0, 0, 1, 1], [0, 0, 0, 1]), 0.0, places=12)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            ari([0, 1], [0, 1, 2])


class StabilityTests(SimpleTestCase):

    def setUp(self):
        rows = community_ratings(num_users=30, num_items=24, per_user=10, groups=3)
        self.dataset = build_dataset([InteractionRecord(str(u), str(i), float(r), t) for u, i, r, t in rows], 0, 0)

    def test_identical_snapshots_are_perfectly_stable(self):
        result = stability_study(self.dataset, fractions=[1.0, 1.0], resolution=1.0, seed=0)
        self.assertEqual(result.ari, [1.0])
        self.assertEqual(result.shared_items, [self.dataset.num_items])

    def test_one_score_per_consecutive_pair(self):
        result = stability_study(self.dataset, fractions=[1.0, 0.95, 0.9], seed=0)
        self.assertEqual(len(result.ari), 2)
        self.assertEqual(len(result.clusters), 3)
        self.assertTrue(all(-1.0 <= score <= 1.0 for score in result.ari))

    def test_needs_two_fractions(self):
        with self.assertRaises(ConfigError):
            stability_study(self.dataset, fractions=[1.0])


class TrainingTimeTests(SimpleTestCase):

    def test_relative_cost(self):
        vanilla = [EpochLog(1, 0.7, 1.0, None), EpochLog(2, 0.6, 1.0, 0.1)]
        uic = [EpochLog(1, 0.7, 2.0, None), EpochLog(2, 0.5, 2.0, 0.2)]
        frame = training_time_report(vanilla, uic).set_index('model')
        self.assertEqual(frame.loc['uic', 'relative_total'], 2.0)
        self.assertEqual(frame.loc['vanilla', 'relative_per_epoch'], 1.0)
        self.assertEqual(frame.loc['uic', 'best_epoch'], 2)
