import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from ..exceptions import ConfigError, DataError
from ..ingest import (InteractionRecord, SplitSpec, build_dataset, dataset_statistics, parse_csv,
                      parse_movielens, split, split_counts, temporal_prefix)


def records(pairs, start=1000):
    return [InteractionRecord(str(u), str(i), 1.0, start + n) for n, (u, i) in enumerate(pairs)]


class ParseMovielensTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def write(self, text):
        path = self.dir / 'ratings.dat'
        path.write_text(text, encoding='latin-1')
        return path

    def test_single_line(self):
        parsed = parse_movielens(self.write("1::1193::5::978300760\n"))
        self.assertEqual(parsed, [InteractionRecord('1', '1193', 5.0, 978300760)])

    def test_empty_file(self):
        with self.assertRaisesMessage(DataError, "no records"):
            parse_movielens(self.write(""))

    def test_malformed_line_is_reported_with_its_number(self):
        path = self.write("1::1193::5::978300760\n1::661::x::978302109\n")
        with self.assertRaisesMessage(DataError, "ligne 2"):
            parse_movielens(path)

    def test_negative_timestamp(self):
        with self.assertRaises(DataError):
            parse_movielens(self.write("1::1193::5::-4\n"))


class ParseCsvTests(SimpleTestCase):
    columns = {'user': 'user_id', 'item': 'recipe_id', 'value': 'rating', 'timestamp': 'date'}

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, text):
        path = Path(self.tmp.name) / 'interactions.csv'
        path.write_text(text, encoding='utf-8')
        return path

    def test_three_rows_with_dates(self):
        path = self.write(
            "user_id,recipe_id,date,rating\n"
            "38094,40893,2003-02-17,4\n"
            "1293707,40893,2011-12-21,5\n"
            "8937,44394,2002-12-01,4\n"
        )
        parsed = parse_csv(path, self.columns)
        self.assertEqual(len(parsed), 3)
        self.assertEqual(parsed[0], InteractionRecord('38094', '40893', 4.0, 1045440000))

    def test_duplicates_are_kept(self):
        body = ''.join(f"1,7,{1000 + n},1\n" for n in range(10))
        parsed = parse_csv(self.write("user_id,recipe_id,date,rating\n" + body), self.columns)
        self.assertEqual(len(parsed), 10)

    def test_missing_item_column(self):
        path = self.write("user_id,date,rating\n1,1000,4\n")
        with self.assertRaisesMessage(DataError, "recipe_id"):
            parse_csv(path, self.columns)

    def test_unmapped_role(self):
        with self.assertRaises(ConfigError):
            parse_csv(self.write("a,b\n1,2\n"), {'user': 'a', 'item': 'b'})

    def test_value_defaults_to_one(self):
        path = self.write("user_id,recipe_id,date\n1,2,1000\n")
        columns = {'user': 'user_id', 'item': 'recipe_id', 'timestamp': 'date'}
        self.assertEqual(parse_csv(path, columns)[0].value, 1.0)


class BuildDatasetTests(SimpleTestCase):

    def test_heavy_user_survives(self):
        dataset = build_dataset(records((1, i) for i in range(25)), 20, 1)
        self.assertEqual((dataset.num_users, dataset.num_items, len(dataset)), (1, 25, 25))

    def test_light_user_empties_the_dataset(self):
        with self.assertRaisesMessage(DataError, "empty dataset"):
            build_dataset(records((1, i) for i in range(5)), 20, 1)

    def test_filtering_reaches_the_brute_force_fixed_point(self):
        rng = np.random.default_rng(3)
        pairs = {(int(u), int(i)) for u, i in zip(rng.integers(6, size=30), rng.integers(8, size=30))}

        survivors = {(str(u), str(i)) for u, i in pairs}
        while True:
            kept = {(u, i) for u, i in survivors
                    if sum(1 for v, _ in survivors if v == u) >= 3
                    and sum(1 for _, j in survivors if j == i) >= 2}
            if kept == survivors:
                break
            survivors = kept
        if not survivors:
            with self.assertRaises(DataError):
                build_dataset(records(sorted(pairs)), 3, 2)
            return

        dataset = build_dataset(records(sorted(pairs)), 3, 2)
        rebuilt = {(dataset.user_ids[u], dataset.item_ids[i])
                   for u, i in zip(dataset.users.tolist(), dataset.items.tolist())}
        self.assertEqual(rebuilt, survivors)

    def test_reindexing_is_lexicographic_and_bijective(self):
        dataset = build_dataset(records([('2', 'b'), ('10', 'a'), ('2', 'a'), ('10', 'b')]), 0, 0)
        self.assertEqual(dataset.user_ids.tolist(), ['10', '2'])
        for raw, idx in dataset.user_index.items():
            self.assertEqual(dataset.user_ids[idx], raw)

    def test_duplicates_collapse_to_one_positive(self):
        dataset = build_dataset(records([(1, 1), (1, 1), (1, 2)]), 0, 0)
        self.assertEqual(len(dataset), 2)
        self.assertTrue((dataset.labels == 1).all())

    def test_statistics(self):
        dataset = build_dataset(records([(1, 1), (1, 2), (2, 1)]), 0, 0)
        stats = dataset_statistics(dataset)
        self.assertEqual(stats['interactions'], 3)
        self.assertAlmostEqual(stats['density'], 0.75)


class SplitTests(SimpleTestCase):

    def test_split_counts(self):
        fractions = (0.8, 0.1, 0.1)
        self.assertEqual(split_counts(10, fractions), (8, 1, 1))
        self.assertEqual(split_counts(7, fractions), (5, 1, 1))
        self.assertEqual(split_counts(3, fractions), (1, 1, 1))

    def test_partition_is_complete_disjoint_and_deterministic(self):
        pairs = [(u, i) for u in range(5) for i in range(3 + 2 * u)]
        dataset = build_dataset(records(pairs), 0, 0)
        spec = SplitSpec(0.8, 0.1, 0.1, seed=7)
        first, second = split(dataset, spec), split(dataset, spec)

        keys = [set(zip(part.users.tolist(), part.items.tolist()))
                for part in (first.train, first.val, first.test)]
        self.assertEqual(sum(len(k) for k in keys), len(dataset))
        self.assertFalse(keys[0] & keys[1] or keys[0] & keys[2] or keys[1] & keys[2])
        for part in (first.train, first.val, first.test):
            self.assertTrue((part.degrees() >= 1).all())
        np.testing.assert_array_equal(first.test.items, second.test.items)

    def test_ten_interactions_split_eight_one_one(self):
        dataset = build_dataset(records((1, i) for i in range(10)), 0, 0)
        parts = split(dataset, SplitSpec(0.8, 0.1, 0.1, seed=7))
        self.assertEqual((len(parts.train), len(parts.val), len(parts.test)), (8, 1, 1))

    def test_different_seeds_give_different_splits(self):
        dataset = build_dataset(records((u, i) for u in range(20) for i in range(20)), 0, 0)
        first = split(dataset, SplitSpec(seed=0)).test
        second = split(dataset, SplitSpec(seed=1)).test
        changed = sum(set(first.items_of(u).tolist()) != set(second.items_of(u).tolist()) for u in range(20))
        self.assertGreaterEqual(changed, 15)

    def test_user_too_small(self):
        dataset = build_dataset(records([(1, 1), (1, 2)]), 0, 0)
        with self.assertRaises(DataError):
            split(dataset, SplitSpec())

    def test_fractions_must_sum_to_one(self):
        with self.assertRaises(ConfigError):
            SplitSpec(0.8, 0.1, 0.2)


class TemporalPrefixTests(SimpleTestCase):

    def test_full_fraction_is_identity(self):
        dataset = build_dataset(records((u, i) for u in range(3) for i in range(4)), 0, 0)
        prefix = temporal_prefix(dataset, 1.0)
        np.testing.assert_array_equal(prefix.items, dataset.items)
        self.assertEqual(prefix.item_ids.tolist(), dataset.item_ids.tolist())

    def test_half_keeps_the_earliest_interactions(self):
        dataset = build_dataset(records((1, i) for i in range(10)), 0, 0)
        prefix = temporal_prefix(dataset, 0.5)
        self.assertEqual(len(prefix), 5)
        self.assertEqual(sorted(prefix.timestamps.tolist()), list(range(1000, 1005)))
