import numpy as np
from django.test import SimpleTestCase

from ..exceptions import ConfigError
from ..graph import Clustering
from ..interest import InterestProfile
from ..retrieval import (ClusterBlocks, ClusterRetriever, EmbeddingIndex, RankedList, benchmark_inference,
                         cluster_topk, full_scan_topk, kmeans, kmeans_topk, select_clusters, select_clusters_batch,
                         top_k_exact)
from .factories import random_interactions


def quarter_vectors(rng, rows, dim):
    """Vecteurs en quarts d'entiers : produits scalaires exacts en float32."""
    return (rng.integers(-8, 9, size=(rows, dim)) / 4).astype(np.float32)


def profile(weights):
    return InterestProfile.from_dense(0, np.asarray(weights, dtype=float))


class TopKExactTests(SimpleTestCase):

    def test_basic(self):
        items, scores = top_k_exact(np.array([0, 1, 2]), np.array([0.1, 0.9, 0.5]), 2)
        self.assertEqual(items.tolist(), [1, 2])
        self.assertEqual(scores.tolist(), [0.9, 0.5])

    def test_ties_prefer_the_lowest_item(self):
        items, _ = top_k_exact(np.array([3, 5, 8, 9]), np.array([1.0, 1.0, 1.0, 0.0]), 2)
        self.assertEqual(items.tolist(), [3, 5])

    def test_ties_on_unsorted_candidates(self):
        items, _ = top_k_exact(np.array([9, 3, 8, 5]), np.array([1.0, 1.0, 2.0, 1.0]), 3)
        self.assertEqual(items.tolist(), [8, 3, 5])

    def test_k_larger_than_candidates(self):
        items, _ = top_k_exact(np.array([4, 7]), np.array([0.2, 0.4]), 10)
        self.assertEqual(items.tolist(), [7, 4])

    def test_empty(self):
        self.assertEqual(top_k_exact(np.array([], dtype=np.int64), np.array([]), 5)[0].size, 0)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            size = int(rng.integers(1, 40))
            candidates = rng.choice(100, size=size, replace=False)
            scores = rng.integers(0, 6, size=size).astype(float)
            k = int(rng.integers(1, 45))
            expected = sorted(zip(candidates.tolist(), scores.tolist()), key=lambda p: (-p[1], p[0]))[:k]
            items, _ = top_k_exact(candidates, scores, k)
            self.assertEqual(items.tolist(), [item for item, _ in expected])


class SelectClustersTests(SimpleTestCase):

    def test_top_mode(self):
        self.assertEqual(select_clusters(profile([0.2, 0.5, 0.2, 0.1]), 2).tolist(), [1, 0])

    def test_top_mode_with_n_above_k(self):
        self.assertEqual(sorted(select_clusters(profile([0.6, 0.4, 0.0]), 5).tolist()), [0, 1, 2])

    def test_sample_pads_with_zero_weight_clusters(self):
        drawn = select_clusters(profile([0.0, 1.0, 0.0]), 3, mode='sample', seed=4)
        self.assertEqual(drawn.tolist(), [1, 0, 2])

    def test_sample_without_replacement(self):
        drawn = select_clusters(profile([0.1, 0.2, 0.3, 0.4]), 4, mode='sample', seed=1)
        self.assertEqual(sorted(drawn.tolist()), [0, 1, 2, 3])

    def test_sample_frequencies_follow_eta(self):
        rng = np.random.default_rng(12)
        eta = profile([0.7, 0.2, 0.1])
        draws = [int(select_clusters(eta, 1, mode='sample', seed=rng)[0]) for _ in range(5000)]
        self.assertAlmostEqual(draws.count(0) / 5000, 0.7, delta=0.03)
        self.assertAlmostEqual(draws.count(2) / 5000, 0.1, delta=0.02)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            select_clusters(profile([1.0]), 0)
        with self.assertRaises(ValueError):
            select_clusters(profile([1.0]), 1, mode='greedy')


class ClusterRetrievalTests(SimpleTestCase):
    num_users, num_items, num_clusters = 100, 60, 6

    def setUp(self):
        rng = np.random.default_rng(5)
        self.train = random_interactions(rng, self.num_users, self.num_items, density=0.1)
        self.clustering = Clustering.from_labels(rng.integers(self.num_clusters, size=self.num_items), 1.0, 0)
        k = self.clustering.num_clusters
        self.index = EmbeddingIndex(quarter_vectors(rng, self.num_users, 8),
                                    quarter_vectors(rng, self.num_items, 8), self.train)
        self.attention_index = EmbeddingIndex(
            self.index.user_vectors, self.index.item_vectors, self.train,
            item_clusters=np.asarray(self.clustering.assignment),
            attention=(rng.integers(1, 5, size=(self.num_users, k)) / 8).astype(np.float32),
        )
        self.etas = [InterestProfile.from_dense(u, rng.dirichlet(np.ones(k))) for u in range(self.num_users)]
        self.blocks = ClusterBlocks.from_clustering(self.index, self.clustering)

    def assertSameList(self, a: RankedList, b: RankedList):
        self.assertEqual(a.items.tolist(), b.items.tolist())
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_all_clusters_equals_full_scan(self):
        k = self.clustering.num_clusters
        for index in (self.index, self.attention_index):
            for user in range(self.num_users):
                expected = full_scan_topk(index, user, k_rec=20)
                for mode in ('top', 'sample'):
                    got = cluster_topk(index, user, self.etas[user], self.blocks, k, k_rec=20, mode=mode)
                    self.assertSameList(got, expected)

    def test_lists_exclude_train_items(self):
        for user in range(10):
            ranked = full_scan_topk(self.index, user, k_rec=50)
            self.assertFalse(set(ranked.items.tolist()) & set(self.train.items_of(user).tolist()))
            self.assertEqual(ranked.candidates, self.num_items - self.train.items_of(user).size)

    def test_pool_is_restricted_to_selected_clusters(self):
        members = self.clustering.cluster_members
        for user in range(20):
            selected = select_clusters(self.etas[user], 2)
            allowed = set(np.concatenate([members[c] for c in selected.tolist()]).tolist())
            ranked = cluster_topk(self.index, user, self.etas[user], self.blocks, 2, k_rec=50)
            self.assertTrue(set(ranked.items.tolist()) <= allowed)
            self.assertLessEqual(ranked.candidates, len(allowed))

    def test_sample_mode_is_reproducible_per_user(self):
        a = cluster_topk(self.index, 3, self.etas[3], self.blocks, 2, mode='sample', seed=9)
        b = cluster_topk(self.index, 3, self.etas[3], self.blocks, 2, mode='sample', seed=9)
        self.assertSameList(a, b)

    def test_explicit_candidates(self):
        ranked = full_scan_topk(self.index, 0, candidate_items=np.array([5, 1, 5, 3]), k_rec=2)
        self.assertTrue(set(ranked.items.tolist()) <= {1, 3, 5})

    def test_blocks_are_contiguous_clusters(self):
        members = self.clustering.cluster_members
        for cluster in range(self.clustering.num_clusters):
            start, stop = self.blocks.offsets[cluster], self.blocks.offsets[cluster + 1]
            self.assertEqual(self.blocks.items[start:stop].tolist(), members[cluster].tolist())
            np.testing.assert_array_equal(self.blocks.vectors[start:stop], self.index.item_vectors[members[cluster]])
        self.assertEqual(self.blocks.rows(np.array([1, 0])).tolist(),
                         list(range(self.blocks.offsets[1], self.blocks.offsets[2]))
                         + list(range(self.blocks.offsets[0], self.blocks.offsets[1])))

    def test_blocks_reject_foreign_assignment(self):
        with self.assertRaises(ConfigError):
            ClusterBlocks.build(self.index, np.zeros(self.num_items - 1, dtype=np.int64), 1)

    def test_batch_selection_matches_single_selection(self):
        profiles = dict(enumerate(self.etas))
        k = self.clustering.num_clusters
        profiles[7] = InterestProfile.from_dense(7, np.full(k, 1.0 / k))
        for n in (1, 2, 4):
            batch = select_clusters_batch(profiles, range(self.num_users), n)
            for user in range(self.num_users):
                self.assertEqual(batch[user].tolist(), select_clusters(profiles[user], n).tolist())

    def test_retriever_matches_single_user_path(self):
        profiles = dict(enumerate(self.etas))
        for index in (self.index, self.attention_index):
            for mode in ('top', 'sample'):
                retriever = ClusterRetriever.for_users(index, self.blocks, profiles, range(self.num_users), 2,
                                                       k_rec=15, mode=mode, seed=3)
                for user in range(self.num_users):
                    expected = cluster_topk(index, user, self.etas[user], self.blocks, 2, k_rec=15, mode=mode, seed=3)
                    self.assertSameList(retriever(user), expected)
                    self.assertEqual(retriever(user).candidates, expected.candidates)


class KmeansTests(SimpleTestCase):

    def test_two_separated_blobs(self):
        rng = np.random.default_rng(0)
        x = np.vstack((rng.normal(0, 0.1, size=(20, 2)), rng.normal(10, 0.1, size=(20, 2))))
        model = kmeans(x, 2, seed=3)
        self.assertEqual(len(set(model.assignment[:20].tolist())), 1)
        self.assertEqual(len(set(model.assignment[20:].tolist())), 1)
        self.assertNotEqual(model.assignment[0], model.assignment[20])

    def test_one_centroid_per_point(self):
        x = np.random.default_rng(1).normal(size=(12, 3))
        model = kmeans(x, 12, seed=0)
        self.assertAlmostEqual(model.sse_history[-1], 0.0, places=9)

    def test_sse_never_increases(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            history = kmeans(rng.normal(size=(80, 4)), 7, seed=seed).sse_history
            self.assertTrue(all(b <= a + 1e-9 for a, b in zip(history, history[1:])))

    def test_matches_exhaustive_two_partition(self):
        rng = np.random.default_rng(4)
        x = np.vstack((rng.normal(0, 0.3, size=(5, 2)), rng.normal(4, 0.3, size=(7, 2))))
        best = np.inf
        for mask in range(1, 2 ** 11):
            labels = np.array([0] + [(mask >> bit) & 1 for bit in range(11)])
            sse = sum(((x[labels == c] - x[labels == c].mean(axis=0)) ** 2).sum() for c in (0, 1))
            best = min(best, sse)
        for seed in range(3):
            self.assertLessEqual(kmeans(x, 2, seed=seed).sse_history[-1], best + 1e-9)

    def test_members_partition_the_items(self):
        model = kmeans(np.random.default_rng(3).normal(size=(30, 2)), 4, seed=1)
        members = np.sort(np.concatenate(model.members))
        self.assertEqual(members.tolist(), list(range(30)))

    def test_invalid_k(self):
        x = np.zeros((3, 2))
        with self.assertRaises(ConfigError):
            kmeans(x, 0)
        with self.assertRaises(ConfigError):
            kmeans(x, 4)

    def test_all_centroids_equals_full_scan(self):
        rng = np.random.default_rng(4)
        train = random_interactions(rng, 30, 40, density=0.1)
        index = EmbeddingIndex(quarter_vectors(rng, 30, 6), quarter_vectors(rng, 40, 6), train)
        model = kmeans(index.item_vectors, 5, seed=0)
        for user in range(30):
            got = kmeans_topk(index, user, model, n_centroids=5, k_rec=10)
            expected = full_scan_topk(index, user, k_rec=10)
            self.assertEqual(got.items.tolist(), expected.items.tolist())


class BenchmarkTests(SimpleTestCase):

    def test_report(self):
        def strategy(user):
            return RankedList(user, np.array([user]), np.array([1.0]), candidates=4)

        report, lists = benchmark_inference(strategy, range(5), repetitions=3, name='full')
        self.assertEqual((report.strategy, report.users, report.candidates_scored), ('full', 5, 20))
        self.assertEqual(len(report.repetitions), 3)
        self.assertIn(report.total_seconds, report.repetitions)
        self.assertEqual([r.user_index for r in lists], list(range(5)))

    def test_cluster_retrieval_beats_full_scan(self):
        """Catalogue de 3706 items, 334 clusters de tailles Zipf, d = 64."""
        rng = np.random.default_rng(21)
        num_users, num_items, num_clusters, n_clusters = 300, 3706, 334, 50
        weights = 1.0 / np.arange(1, num_clusters + 1)
        sizes = np.maximum(1, np.floor(weights / weights.sum() * num_items)).astype(np.int64)
        sizes[0] += num_items - sizes.sum()
        assignment = rng.permutation(np.repeat(np.arange(num_clusters), sizes))
        train = random_interactions(rng, num_users, num_items, density=0.005)
        index = EmbeddingIndex(rng.normal(size=(num_users, 64)).astype(np.float32),
                               rng.normal(size=(num_items, 64)).astype(np.float32), train)
        clustering = Clustering.from_labels(assignment, 1.0, 0)
        profiles = {u: InterestProfile.from_dense(u, rng.dirichlet(np.full(clustering.num_clusters, 0.5)))
                    for u in range(num_users)}
        users = range(num_users)

        blocks = ClusterBlocks.from_clustering(index, clustering)
        retriever = ClusterRetriever.for_users(index, blocks, profiles, users, n_clusters)
        full, _ = benchmark_inference(lambda u: full_scan_topk(index, u), users, repetitions=3, name='full')
        cluster, _ = benchmark_inference(retriever, users, repetitions=3, name='cluster')

        self.assertLess(cluster.candidates_scored, 0.3 * full.candidates_scored)
        self.assertLessEqual(cluster.total_seconds, 0.7 * full.total_seconds)

    def test_repetitions_must_be_positive(self):
        with self.assertRaises(ConfigError):
            benchmark_inference(lambda u: RankedList.empty(u), [0], repetitions=0)
