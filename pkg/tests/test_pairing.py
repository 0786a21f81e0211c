import logging

import numpy as np
import pytest

from psearch.dictionaries import FeatureDictionary
from psearch.errors import InvalidParams
from psearch.numerics import l2_normalize, make_rng
from psearch.pairing import build_subgroups, select_priority_pool


def unit(*comps):
    return l2_normalize(np.array(comps, dtype=float))


@pytest.fixture
def filled_dict():
    d = FeatureDictionary(8)
    d.push(unit(1, 0, 0), 7)
    d.push(unit(0, 1, 0), -1)
    d.push(unit(0, 0, 1), 9)
    return d


class TestBuildSubgroups:
    def test_symmetric_anchoring(self, filled_dict):
        batch = [
            [(unit(1, 1, 0), 3)],
            [(unit(1, 0, 1), 3)],
        ]
        sgs = build_subgroups(batch, filled_dict)
        assert len(sgs) == 2
        assert np.allclose(sgs[0].anchor, sgs[1].positive)
        assert np.allclose(sgs[0].positive, sgs[1].anchor)
        assert all(sg.anchor_label == 3 for sg in sgs)

    def test_no_shared_identity(self, filled_dict):
        batch = [[(unit(1, 0, 0), 1)], [(unit(0, 1, 0), 2)]]
        assert build_subgroups(batch, filled_dict) == []

    def test_negative_count_matches_dictionary(self, filled_dict):
        batch = [[(unit(1, 1, 0), 3)], [(unit(1, 0, 1), 3)]]
        sgs = build_subgroups(batch, filled_dict)
        for sg in sgs:
            assert len(sg.negatives) == 3
            assert sg.negative_labels == [7, -1, 9]

    def test_anchor_label_excluded_from_negatives(self, filled_dict):
        batch = [[(unit(1, 1, 0), 7)], [(unit(1, 0, 1), 7)]]
        sgs = build_subgroups(batch, filled_dict)
        for sg in sgs:
            assert 7 not in sg.negative_labels
            assert len(sg.negatives) == 2

    def test_unlabeled_and_background_never_pair(self, filled_dict):
        batch = [
            [(unit(1, 0, 0), -1), (unit(0, 1, 0), -2)],
            [(unit(0, 0, 1), -1), (unit(1, 1, 1), -2)],
        ]
        assert build_subgroups(batch, filled_dict) == []

    def test_within_image_same_identity_pairs(self, filled_dict):
        # identity 3 twice in image one, once in image two: 3 pairs, 6 subgroups
        batch = [
            [(unit(1, 0, 0), 3), (unit(0, 1, 0), 3)],
            [(unit(0, 0, 1), 3)],
        ]
        sgs = build_subgroups(batch, filled_dict)
        assert len(sgs) == 6

    def test_requires_two_images(self, filled_dict):
        with pytest.raises(InvalidParams):
            build_subgroups([[(unit(1, 0, 0), 1)]], filled_dict)


class TestSelectPriorityPool:
    def test_forced_membership(self):
        pool = select_priority_pool({3, 7}, [9], 5, 10, 20, make_rng(0))
        assert {3, 7, 9} <= pool.labels
        assert len(pool) == 5

    def test_degenerate_clamp(self):
        pool = select_priority_pool({0}, [], 100, 10, 4, make_rng(0))
        assert pool.labels == {0, 1, 2, 3}

    def test_hard_label_already_in_gt_deduplicated(self):
        pool = select_priority_pool({3}, [3], 4, 10, 20, make_rng(0))
        assert len(pool) == 4

    def test_unlabeled_skipped_in_hard_ranking(self):
        pool = select_priority_pool(set(), [-1, 5], 2, 10, 20, make_rng(0))
        assert 5 in pool.labels

    def test_top_r_limit(self):
        pool = select_priority_pool(set(), [1, 2, 3, 4], 10, 2, 20, make_rng(0))
        assert {1, 2} <= pool.labels
        # labels 3, 4 only by random fill, not forced
        assert len(pool) == 10

    def test_deterministic_given_rng(self):
        p1 = select_priority_pool({1}, [4], 8, 10, 50, make_rng(123))
        p2 = select_priority_pool({1}, [4], 8, 10, 50, make_rng(123))
        assert p1.labels == p2.labels

    def test_gt_overflow_keeps_all_and_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            pool = select_priority_pool({0, 1, 2, 3}, [], 2, 0, 10, make_rng(0))
        assert {0, 1, 2, 3} <= pool.labels
        assert any("overfull" in r.message for r in caplog.records)

    def test_invalid_gt_label(self):
        with pytest.raises(InvalidParams):
            select_priority_pool({20}, [], 5, 10, 20, make_rng(0))

    def test_gt_always_member_randomized(self):
        rng = make_rng(99)
        for _ in range(200):
            n = int(rng.integers(5, 40))
            gt = {int(v) for v in rng.choice(n, size=3, replace=False)}
            pool = select_priority_pool(gt, [], 10, 5, n, rng)
            assert gt <= pool.labels
