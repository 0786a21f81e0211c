"""Self-check suites: gradient cross-checks, brute-force retrieval
oracles, and randomized invariant sweeps. Used by the `check` CLI
subcommand and reused by the test suite."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .dictionaries import ClassCenterTable, FeatureDictionary
from .evaluation import average_precision, cmc_topk, rank_gallery
from .losses import olp_loss
from .numerics import check_gradient, l2_normalize, make_rng, softmax
from .pairing import Subgroup, select_priority_pool


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def ap_oracle(ranked, relevant) -> float:
    """Brute-force AP: walk the ranking, recomputing precision from
    scratch at every relevant hit."""
    precisions = []
    for rank in range(1, len(ranked) + 1):
        idx = int(ranked[rank - 1])
        if idx in relevant:
            num_relevant_so_far = sum(
                1 for r in range(rank) if int(ranked[r]) in relevant
            )
            precisions.append(num_relevant_so_far / rank)
    return sum(precisions) / len(relevant)


def cmc_oracle(ranked, relevant, k) -> bool:
    found = False
    for r in range(min(k, len(ranked))):
        if int(ranked[r]) in relevant:
            found = True
    return found


def single_subgroup_olp(anchor, positive, negatives) -> float:
    """Direct evaluation of the one-subgroup metric loss, used as the
    finite-difference target for the analytic gradient."""
    d_pos = float(np.dot(anchor, positive))
    terms = [math.exp(d_pos)] + [math.exp(float(np.dot(anchor, n))) for n in negatives]
    return -math.log(math.exp(d_pos) / math.fsum(terms))


def run_gradient_checks(trials: int = 100, seed: int = 12345) -> CheckResult:
    """Analytic anchor gradient vs central differences over random
    configurations (dimension 8..256, negatives 1..64)."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(trials):
        dim = int(rng.integers(8, 257))
        k = int(rng.integers(1, 65))
        anchor = l2_normalize(rng.normal(size=dim))
        positive = l2_normalize(rng.normal(size=dim))
        negatives = [l2_normalize(rng.normal(size=dim)) for _ in range(k)]
        sg = Subgroup(anchor, positive, negatives, 0, [1] * k)
        result = olp_loss([sg])
        err = check_gradient(
            lambda a: single_subgroup_olp(a, positive, negatives),
            anchor,
            result.anchor_gradients[0],
            h=1e-6,
        )
        worst = max(worst, err)
    return CheckResult(
        name="olp-gradient-vs-finite-differences",
        passed=worst < 1e-6,
        detail=f"max relative error {worst:.3e} over {trials} trials",
    )


def run_oracle_checks(max_gallery: int = 6) -> CheckResult:
    """Exhaustive AP/CMC agreement with the brute-force oracle over every
    relevance pattern for galleries up to max_gallery items."""
    checked = 0
    for size in range(1, max_gallery + 1):
        ranked = np.arange(size)
        for pattern in itertools.product([False, True], repeat=size):
            relevant = {i for i, rel in enumerate(pattern) if rel}
            if not relevant:
                continue
            ap_fast = average_precision(ranked, relevant)
            ap_slow = ap_oracle(ranked, relevant)
            if abs(ap_fast - ap_slow) > 1e-12:
                return CheckResult("map-cmc-oracle", False,
                                   f"AP mismatch at size {size} pattern {pattern}")
            for k in range(1, size + 1):
                if cmc_topk(ranked, relevant, k) != cmc_oracle(ranked, relevant, k):
                    return CheckResult("map-cmc-oracle", False,
                                       f"CMC mismatch at size {size} k {k}")
            checked += 1
    return CheckResult("map-cmc-oracle", True,
                       f"{checked} relevance patterns, galleries <= {max_gallery}")


def run_invariant_checks(trials: int = 1000, seed: int = 777) -> list[CheckResult]:
    """Randomized invariant sweeps over the core primitives."""
    rng = make_rng(seed)
    results = []

    # softmax normalization: q + sum(q_hat) = 1
    worst = 0.0
    for _ in range(trials):
        scores = rng.uniform(-700, 700, size=int(rng.integers(1, 20)))
        worst = max(worst, abs(float(np.sum(softmax(scores))) - 1.0))
    results.append(CheckResult("softmax-normalization", worst <= 1e-12,
                               f"max |sum - 1| = {worst:.3e}"))

    # FIFO capacity bound and recency
    ok = True
    for _ in range(trials):
        cap = int(rng.integers(1, 16))
        n = int(rng.integers(0, 40))
        d = FeatureDictionary(cap)
        pushed = []
        for t in range(n):
            v = l2_normalize(rng.normal(size=4))
            d.push(v, int(rng.integers(-1, 5)))
            pushed.append(v)
        if len(d) != min(cap, n):
            ok = False
            break
        expect = pushed[-min(cap, n):] if n else []
        got = [e.feature for e in d]
        if any(not np.allclose(a, b) for a, b in zip(expect, got)):
            ok = False
            break
    results.append(CheckResult("fifo-capacity-and-recency", ok, f"{trials} trials"))

    # priority pool size and forced membership; the trials deliberately
    # produce overfull pools, so mute that warning here
    ok = True
    pairing_log = logging.getLogger("psearch.pairing")
    old_level = pairing_log.level
    pairing_log.setLevel(logging.ERROR)
    try:
        for _ in range(trials):
            num_classes = int(rng.integers(2, 50))
            t_size = int(rng.integers(1, 30))
            gt = set(int(v) for v in rng.choice(num_classes,
                     size=int(rng.integers(0, min(5, num_classes) + 1)), replace=False))
            hard = [int(v) for v in rng.integers(-1, num_classes, size=6)]
            pool = select_priority_pool(gt, hard, t_size, 3, num_classes, rng)
            if not gt <= pool.labels:
                ok = False
                break
            expected = min(t_size, num_classes)
            if len(gt) <= t_size and len(pool) != expected:
                ok = False
                break
    finally:
        pairing_log.setLevel(old_level)
    results.append(CheckResult("priority-pool-rules", ok, f"{trials} trials"))

    # center-scale invariance of the center-based loss
    from .losses import c2hep_loss
    from .pairing import PriorityPool
    worst = 0.0
    for _ in range(trials // 10):
        dim = 8
        table = ClassCenterTable(num_classes=4)
        for lab in range(4):
            table.centers[lab] = l2_normalize(rng.normal(size=dim))
        x = l2_normalize(rng.normal(size=dim))
        pool = PriorityPool(labels={0, 1, 2, 3}, target_size=4)
        base, _ = c2hep_loss([(x, 2)], pool, table, lam=10.0)
        table.centers[1] = table.centers[1] * 3.0
        scaled, _ = c2hep_loss([(x, 2)], pool, table, lam=10.0)
        worst = max(worst, abs(base - scaled))
    results.append(CheckResult("center-scale-invariance", worst <= 1e-9,
                               f"max |delta| = {worst:.3e}"))

    # AP never increases when a non-relevant distractor is inserted
    ok = True
    for _ in range(trials):
        size = int(rng.integers(2, 8))
        sims = rng.uniform(-1, 1, size=size)
        relevant = {i for i in range(size) if rng.random() < 0.5}
        if not relevant:
            relevant = {0}
        ranked = np.argsort(-sims, kind="stable")
        ap_before = average_precision(ranked, relevant)
        new_sim = rng.uniform(-1, 1)
        sims2 = np.append(sims, new_sim)
        ranked2 = np.argsort(-sims2, kind="stable")
        ap_after = average_precision(ranked2, relevant)
        if ap_after > ap_before + 1e-12:
            ok = False
            break
    results.append(CheckResult("ap-distractor-monotonicity", ok, f"{trials} trials"))
    return results


def run_suite(suite: str) -> list[CheckResult]:
    if suite == "gradients":
        return [run_gradient_checks()]
    if suite == "oracles":
        return [run_oracle_checks()]
    if suite == "invariants":
        return run_invariant_checks()
    raise ValueError(f"unknown check suite {suite!r}")
