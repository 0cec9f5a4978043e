import os
import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbmcf.data import (
    SplitDataset,
    cache_bytes,
    filter_min_ratings,
    from_records,
    holdout_split,
    load_model,
    model_bytes,
    parse_cache,
    parse_model,
    parse_ratings,
    rating_to_level,
    ratings_csv_text,
    read_ratings,
    save_model,
)
from rbmcf.errors import (
    ChecksumError,
    EmptyDatasetError,
    FormatError,
    ParseError,
    RatingRangeError,
    ShapeError,
    TruncatedFileError,
)

from conftest import random_params

HEADER = "userId,movieId,rating,timestamp"
MOVIELENS = os.environ.get("RBMCF_MOVIELENS", "")


def parse(*rows):
    return parse_ratings([HEADER, *rows])


def synthetic(counts, seed=0):
    g = np.random.default_rng(seed)
    users, items, ts = [], [], []
    for u, n in enumerate(counts):
        users += [100 + u] * n
        items += (g.choice(500, size=n, replace=False) * 3 + 7).tolist()
        ts += g.permutation(n).tolist()
    levels = g.integers(1, 6, size=len(users))
    return from_records(users, items, levels, ts)


class TestParse:
    def test_half_star_rounds_up(self):
        d = parse("1,307,3.5,1256677221")
        assert d.user_ids.tolist() == [1] and d.item_ids.tolist() == [307]
        assert d.user(0).as_dict() == {0: 4}
        assert d.timestamps.tolist() == [1256677221]

    def test_top_rating(self):
        assert parse("1,307,5.0,0").levels.tolist() == [5]

    def test_dense_indices_and_sorting(self):
        d = parse("9,50,1,0", "3,70,2,0", "9,20,3,0")
        assert d.user_ids.tolist() == [3, 9]
        assert d.item_ids.tolist() == [20, 50, 70]
        assert d.user(1).items.tolist() == [0, 1]
        assert d.user(1).levels.tolist() == [3, 1]

    def test_duplicates_keep_last(self):
        d = parse("1,5,1.0,10", "1,5,4.0,20")
        assert d.n_ratings == 1 and d.levels.tolist() == [4] and d.timestamps.tolist() == [20]

    def test_malformed_row_line_number(self):
        with pytest.raises(ParseError) as info:
            parse("1,5,1.0,10", "1,x,2.0,0")
        assert info.value.line == 3

    def test_short_row(self):
        with pytest.raises(ParseError):
            parse("1,5")

    @pytest.mark.parametrize("rating", ["0", "-1", "5.5", "nan"])
    def test_range(self, rating):
        with pytest.raises(RatingRangeError) as info:
            parse("1,2,3,0", f"1,5,{rating},0")
        assert info.value.line == 3

    def test_header_required(self):
        with pytest.raises(ParseError):
            parse_ratings(["1,307,3.5,1256677221"])

    def test_no_rows(self):
        with pytest.raises(EmptyDatasetError):
            parse_ratings([HEADER])

    def test_csv_round_trip(self):
        d = synthetic([4, 7, 2])
        again = parse_ratings(ratings_csv_text(d).splitlines())
        for name in ("user_ids", "item_ids", "indptr", "items", "levels", "timestamps"):
            np.testing.assert_array_equal(getattr(again, name), getattr(d, name))

    @pytest.mark.parametrize("rating,level", [(0.5, 1), (1.0, 1), (1.5, 2), (2.49, 2), (2.5, 3), (4.5, 5), (5.0, 5)])
    def test_levels(self, rating, level):
        assert rating_to_level(rating) == level

    def test_clamped_to_k(self):
        assert rating_to_level(4.5, K=3) == 3

    @given(a=st.floats(0.01, 5.0), b=st.floats(0.01, 5.0))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert rating_to_level(lo) <= rating_to_level(hi)

    @pytest.mark.skipif(not os.path.exists(MOVIELENS), reason="set RBMCF_MOVIELENS to ml-latest-small ratings.csv")
    def test_movielens_small_row_count(self):
        assert read_ratings(MOVIELENS).n_ratings == 100_836


class TestFilter:
    def test_threshold_one_identity(self):
        d = synthetic([3, 1, 5])
        out = filter_min_ratings(d, 1)
        for name in ("user_ids", "item_ids", "indptr", "items", "levels", "timestamps"):
            np.testing.assert_array_equal(getattr(out, name), getattr(d, name))

    def test_boundary_retained(self):
        assert filter_min_ratings(synthetic([4, 3, 5]), 4).user_ids.tolist() == [100, 102]

    def test_three_users(self):
        out = filter_min_ratings(synthetic([5, 100, 150]), 100)
        assert out.n_users == 2 and out.n_ratings == 250

    def test_items_redensified(self):
        d = from_records([1, 1, 2], [10, 20, 30], [1, 2, 3], [0, 0, 0])
        out = filter_min_ratings(d, 2)
        assert out.item_ids.tolist() == [10, 20]
        assert out.items.tolist() == [0, 1]

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            filter_min_ratings(synthetic([3, 4]), 5)

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            filter_min_ratings(synthetic([3]), 0)


class TestHoldout:
    def test_hundred_ratings(self):
        s = holdout_split(synthetic([100]), 30)
        assert (s.test.n_ratings, s.train.n_ratings) == (30, 70)

    def test_at_threshold_all_train(self):
        s = holdout_split(synthetic([30, 31]), 30)
        assert s.test.counts().tolist() == [0, 30]
        assert s.train.counts().tolist() == [30, 1]

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            holdout_split(synthetic([5]), 0)

    def test_earliest_by_timestamp(self):
        d = from_records([1] * 5, [1, 2, 3, 4, 5], [1, 2, 3, 4, 5], [50, 10, 40, 20, 30])
        s = holdout_split(d, 2)
        assert sorted(s.test.item_ids[s.test.items].tolist()) == [2, 4]

    def test_random_mode_deterministic(self):
        d = synthetic([40, 50])
        a = holdout_split(d, 10, order="random", seed=3)
        b = holdout_split(d, 10, order="random", seed=3)
        np.testing.assert_array_equal(a.test.items, b.test.items)
        first = holdout_split(d, 10)
        assert not np.array_equal(a.test.items, first.test.items)

    @given(counts=st.lists(st.integers(1, 60), min_size=1, max_size=8), per_user=st.integers(1, 40),
           threshold=st.integers(1, 30))
    def test_pipeline_preserves_counts(self, counts, per_user, threshold):
        d = synthetic(counts)
        if max(counts) < threshold:
            return
        f = filter_min_ratings(d, threshold)
        s = holdout_split(f, per_user)
        assert s.train.n_ratings + s.test.n_ratings == f.n_ratings
        for u in range(f.n_users):
            assert not set(s.train.user(u).items) & set(s.test.user(u).items)
            if s.test.counts()[u]:
                assert s.train.counts()[u] > 0


class TestModelFile:
    def test_round_trip(self, tmp_path):
        p = random_params(3, 4, 5, 3)
        path = tmp_path / "m.rbm"
        save_model(p, [10, 20, 30, 40], path)
        q, items = load_model(path)
        assert q.tobytes() == p.tobytes()
        assert items.tolist() == [10, 20, 30, 40]

    def test_layout(self):
        p = random_params(3, 2, 3, 2)
        blob = model_bytes(p, [5, 6])
        assert blob[:6] == b"RBMCF1"
        assert struct.unpack("<QQQ", blob[6:30]) == (2, 3, 2)
        assert struct.unpack("<qq", blob[30:46]) == (5, 6)
        assert np.frombuffer(blob[46:46 + 8 * 12], "<f8").tolist() == p.W.ravel().tolist()
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(blob[:-4])

    def test_flipped_byte(self):
        blob = bytearray(model_bytes(random_params(0, 3, 2, 2), [1, 2, 3]))
        blob[60] ^= 0x01
        with pytest.raises(ChecksumError):
            parse_model(bytes(blob))

    def test_wrong_magic(self):
        blob = model_bytes(random_params(0, 3, 2, 2), [1, 2, 3])
        with pytest.raises(FormatError):
            parse_model(b"XBMCF1" + blob[6:])

    def test_truncated(self):
        blob = model_bytes(random_params(0, 3, 2, 2), [1, 2, 3])
        with pytest.raises(TruncatedFileError):
            parse_model(blob[:-9])
        with pytest.raises(TruncatedFileError):
            parse_model(blob[:3])

    def test_errors_are_distinct(self):
        assert len({ChecksumError, FormatError, TruncatedFileError}) == 3
        assert not issubclass(ChecksumError, FormatError) and not issubclass(TruncatedFileError, FormatError)

    def test_map_size_checked(self):
        with pytest.raises(ShapeError):
            model_bytes(random_params(0, 3, 2, 2), [1, 2])


class TestCache:
    def test_round_trip_and_determinism(self):
        s = holdout_split(synthetic([40, 12, 33]), 10)
        blob = cache_bytes(s)
        assert blob[:5] == b"RBDS1"
        again = parse_cache(blob)
        for part in ("train", "test"):
            for name in ("user_ids", "item_ids", "indptr", "items", "levels", "timestamps"):
                np.testing.assert_array_equal(getattr(getattr(again, part), name), getattr(getattr(s, part), name))
        assert cache_bytes(again) == blob

    def test_corruption(self):
        blob = bytearray(cache_bytes(holdout_split(synthetic([40]), 10)))
        blob[40] ^= 0xFF
        with pytest.raises(ChecksumError):
            parse_cache(bytes(blob))
        with pytest.raises(FormatError):
            parse_cache(b"RBMCF1" + bytes(blob[5:]))
        with pytest.raises(TruncatedFileError):
            parse_cache(bytes(blob[:50]))

    def test_maps_must_match(self):
        a = synthetic([3])
        b = synthetic([3], seed=1)
        with pytest.raises(ShapeError):
            cache_bytes(SplitDataset(a, b))
