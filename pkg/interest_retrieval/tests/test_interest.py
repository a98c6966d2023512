import numpy as np
from django.test import SimpleTestCase

from ..exceptions import ConfigError, DataError
from ..graph import Clustering, build_bipartite
from ..interest import (InterestProfile, PprScores, build_all_profiles, interest_from_counts, interest_from_ppr,
                        ppr, ppr_batch, profile_matrix)
from .factories import interactions, random_interactions

DAMPING = 0.85


def dense_ppr(data, user, damping=DAMPING):
    """Résolution directe de π = (1−α)e + α·Pᵀπ sur le biparti, côté items renormalisé."""
    a = data.matrix.toarray()
    du, di = a.sum(axis=1), a.sum(axis=0)
    to_items = (a / np.where(du > 0, du, 1)[:, None]).T
    to_users = a / np.where(di > 0, di, 1)[None, :]
    restart = np.zeros(a.shape[0])
    restart[user] = 1.0 - damping
    x_users = np.linalg.solve(np.eye(a.shape[0]) - damping ** 2 * to_users @ to_items, restart)
    x_items = damping * to_items @ x_users
    return x_items / x_items.sum()


class PprTests(SimpleTestCase):

    def test_single_edge(self):
        scores = ppr(build_bipartite(interactions(1, 1, [(0, 0)])), 0)
        self.assertEqual(scores.as_dict(), {0: 1.0})

    def test_path_graph_matches_dense_solve(self):
        data = interactions(2, 2, [(0, 0), (1, 0), (1, 1)])
        scores = ppr(build_bipartite(data), 0, tolerance=1e-12, max_iters=2000)
        np.testing.assert_allclose(scores.dense(2), dense_ppr(data, 0), atol=1e-9)

    def test_random_graphs_match_dense_solve(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            num_users, num_items = rng.integers(2, 26, size=2)
            data = random_interactions(rng, int(num_users), int(num_items), density=0.25)
            user = int(rng.integers(num_users))
            scores = ppr(build_bipartite(data), user, tolerance=1e-12, max_iters=5000)
            error = np.abs(scores.dense(data.num_items) - dense_ppr(data, user)).sum()
            self.assertLessEqual(error, 1e-6)

    def test_tolerance_self_consistency(self):
        data = random_interactions(np.random.default_rng(3), 10, 12, density=0.3)
        bg = build_bipartite(data)
        loose, tight = ppr(bg, 0, tolerance=1e-6), ppr(bg, 0, tolerance=1e-10)
        self.assertLessEqual(np.abs(loose.dense(12) - tight.dense(12)).sum(), 1e-4)

    def test_residual_within_ten_tolerances(self):
        rng = np.random.default_rng(6)
        for tolerance in (1e-6, 1e-8, 1e-10):
            data = random_interactions(rng, 15, 20, density=0.25)
            for scores in ppr_batch(build_bipartite(data), range(15), tolerance=tolerance, max_iters=5000):
                self.assertLessEqual(scores.residual_bound, 10 * tolerance)
                error = np.abs(scores.dense(20) - dense_ppr(data, scores.user_index)).sum()
                self.assertLessEqual(error, 100 * tolerance)

    def test_batch_equals_single_calls(self):
        bg = build_bipartite(random_interactions(np.random.default_rng(8), 12, 15, density=0.3))
        batch = ppr_batch(bg, range(12))
        for user, scores in enumerate(batch):
            np.testing.assert_allclose(scores.dense(15), ppr(bg, user).dense(15), atol=1e-12)

    def test_scores_form_a_distribution(self):
        bg = build_bipartite(random_interactions(np.random.default_rng(4), 9, 11, density=0.3))
        scores = ppr(bg, 2)
        self.assertAlmostEqual(float(scores.scores.sum()), 1.0, places=12)
        self.assertTrue((scores.scores > 0).all())

    def test_isolated_user(self):
        bg = build_bipartite(interactions(2, 2, [(0, 0), (0, 1)]))
        with self.assertRaisesMessage(DataError, "no engagement"):
            ppr(bg, 1)

    def test_invalid_damping(self):
        bg = build_bipartite(interactions(1, 1, [(0, 0)]))
        with self.assertRaises(ConfigError):
            ppr(bg, 0, damping=1.0)


class InterestProfileTests(SimpleTestCase):

    def scores(self, items, values):
        return PprScores(0, np.array(items), np.array(values, dtype=float), DAMPING, 0.0)

    def test_all_mass_in_one_cluster(self):
        clustering = Clustering.from_labels([0, 1, 2, 3, 3], 1.0, 0)
        profile = interest_from_ppr(self.scores([3, 4], [0.4, 0.6]), clustering)
        self.assertEqual(profile.as_dict(), {3: 1.0})

    def test_mass_split_across_two_clusters(self):
        clustering = Clustering.from_labels([0, 1], 1.0, 0)
        profile = interest_from_ppr(self.scores([0, 1], [0.25, 0.75]), clustering)
        self.assertEqual(profile.as_dict(), {0: 0.25, 1: 0.75})

    def test_counts_histogram(self):
        data = interactions(1, 4, [(0, 0), (0, 1), (0, 2), (0, 3)])
        clustering = Clustering.from_labels([0, 0, 1, 0], 1.0, 0)
        self.assertEqual(interest_from_counts(data, 0, clustering).as_dict(), {0: 0.75, 1: 0.25})

    def test_ppr_profile_equals_group_sum_of_dense_solve(self):
        data = random_interactions(np.random.default_rng(21), 8, 9, density=0.35)
        clustering = Clustering.from_labels([0, 0, 1, 1, 1, 2, 2, 0, 2], 1.0, 0)
        profile = interest_from_ppr(ppr(build_bipartite(data), 3, tolerance=1e-12, max_iters=5000), clustering)
        expected = np.bincount(clustering.assignment, weights=dense_ppr(data, 3), minlength=3)
        np.testing.assert_allclose(profile.dense(), expected, atol=1e-8)

    def test_profile_validation(self):
        with self.assertRaises(ValueError):
            InterestProfile(0, np.array([4]), np.array([1.0]), 3)
        with self.assertRaises(ValueError):
            InterestProfile(0, np.array([0]), np.array([-0.5]), 3)


class BuildAllProfilesTests(SimpleTestCase):

    def setUp(self):
        self.data = random_interactions(np.random.default_rng(6), 20, 16, density=0.25)
        self.bg = build_bipartite(self.data)
        self.clustering = Clustering.from_labels(np.arange(16) % 4, 1.0, 0)

    def test_every_user_in_index_order(self):
        profiles = build_all_profiles(self.bg, self.clustering, batch_size=6)
        self.assertEqual(list(profiles), list(range(20)))
        for profile in profiles.values():
            self.assertAlmostEqual(float(profile.weights.sum()), 1.0, places=9)

    def test_threads_do_not_change_the_result(self):
        serial = build_all_profiles(self.bg, self.clustering, batch_size=5, threads=1)
        parallel = build_all_profiles(self.bg, self.clustering, batch_size=5, threads=4)
        np.testing.assert_array_equal(profile_matrix(serial, 20, 4), profile_matrix(parallel, 20, 4))

    def test_counts_method(self):
        profiles = build_all_profiles(self.bg, self.clustering, method='counts')
        for user, profile in profiles.items():
            expected = interest_from_counts(self.data, user, self.clustering)
            np.testing.assert_allclose(profile.dense(), expected.dense())

    def test_unknown_method(self):
        with self.assertRaises(ConfigError):
            build_all_profiles(self.bg, self.clustering, method='louvain')
