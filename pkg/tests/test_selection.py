import itertools

import numpy as np
import pytest

from spl_advise.data import gen_gaussian_blobs
from spl_advise.numerics import rng_child
from spl_advise.selection import (
    PaceSchedule,
    PaceTooStrictError,
    epoch_batches,
    fallback_selection,
    init_pace_from_losses,
    rank_threshold,
    select_batch,
    solve_weights,
    spld_raw_clusters,
    update_pace,
)


def objective(cluster_losses, weight_vector, lam, gamma):
    """Eq-style objective of a binary selection, straight from its definition."""
    total = 0.0
    for (ids, losses), w in zip(cluster_losses, weight_vector.weights):
        losses = np.asarray(losses, dtype=np.float64)
        total += float(w @ losses) - lam * float(w.sum())
        total -= gamma * np.sqrt(float(w.sum()))
    return total


def brute_force_min(cluster_losses, lam, gamma):
    """Exhaustive minimum over all 2^N binary weight vectors."""
    losses = np.concatenate([np.asarray(l) for _, l in cluster_losses])
    sizes = [len(l) for _, l in cluster_losses]
    best = np.inf
    for bits in itertools.product((0, 1), repeat=len(losses)):
        w = np.array(bits, dtype=np.float64)
        obj = float(w @ losses) - lam * w.sum()
        pos = 0
        for size in sizes:
            obj -= gamma * np.sqrt(w[pos : pos + size].sum())
            pos += size
        best = min(best, obj)
    return best


def random_instance(rng, max_n=12, max_k=3):
    n = int(rng.integers(1, max_n + 1))
    k = int(rng.integers(1, max_k + 1))
    losses = rng.uniform(0, 3, size=n)
    boundaries = (
        np.sort(rng.choice(np.arange(1, n), size=min(k - 1, n - 1), replace=False))
        if n > 1 and k > 1
        else np.array([], dtype=int)
    )
    edges = [0, *boundaries.tolist(), n]
    ids = np.arange(n)
    return [
        (ids[a:b], losses[a:b]) for a, b in zip(edges[:-1], edges[1:])
    ]


class TestSolveWeights:
    def test_hand_computed_thresholds(self):
        pace = PaceSchedule(lam=0.3, gamma=0.4)
        thresholds = [rank_threshold(i, pace) for i in (1, 2, 3)]
        np.testing.assert_allclose(
            thresholds, [0.7, 0.46568, 0.42713], atol=5e-5
        )
        w = solve_weights(
            [(np.array([0, 1, 2]), np.array([0.1, 0.5, 2.0]))], pace
        )
        np.testing.assert_array_equal(w.weights[0], [1, 0, 0])

    def test_rank_one_threshold_is_lam_plus_gamma(self):
        pace = PaceSchedule(lam=0.9, gamma=0.55)
        assert rank_threshold(1, pace) == pytest.approx(0.9 + 0.55, abs=1e-15)

    def test_gamma_zero_reduces_to_plain_thresholding(self):
        rng = rng_child(20, 0)
        for _ in range(200):
            instance = random_instance(rng)
            lam = float(rng.uniform(0.01, 2.0))
            pace = PaceSchedule(lam=lam, gamma=0.0)
            w = solve_weights(instance, pace)
            selected = set(w.selected_ids().tolist())
            losses = np.concatenate([l for _, l in instance])
            ids = np.concatenate([i for i, _ in instance])
            want = set(ids[losses < lam].tolist())
            assert selected == want

    def test_matches_exhaustive_minimum(self):
        rng = rng_child(20, 1)
        for _ in range(150):
            instance = random_instance(rng)
            lam = float(rng.uniform(0.01, 2.0))
            gamma = float(rng.uniform(0.0, 2.0))
            pace = PaceSchedule(lam=lam, gamma=gamma)
            w = solve_weights(instance, pace)
            got = objective(instance, w, lam, gamma)
            want = brute_force_min(instance, lam, gamma)
            assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_in_lambda(self):
        rng = rng_child(20, 2)
        for _ in range(50):
            instance = random_instance(rng)
            lams = np.sort(rng.uniform(0.01, 2.0, size=4))
            gamma = float(rng.uniform(0.0, 2.0))
            prev = set()
            for lam in lams:
                w = solve_weights(
                    instance, PaceSchedule(lam=float(lam), gamma=gamma)
                )
                cur = set(w.selected_ids().tolist())
                assert prev <= cur
                prev = cur

    def test_selection_is_a_sorted_prefix(self):
        rng = rng_child(20, 3)
        for _ in range(100):
            instance = random_instance(rng, max_k=1)
            pace = PaceSchedule(
                lam=float(rng.uniform(0.01, 2.0)),
                gamma=float(rng.uniform(0.0, 2.0)),
            )
            w = solve_weights(instance, pace)
            ids, losses = instance[0]
            order = np.lexsort((ids, losses))
            flags = w.weights[0][order]
            # Once a rank is rejected, every later rank is rejected too.
            if flags.size:
                assert (np.diff(flags.astype(int)) <= 0).all()

    def test_identical_clusters_select_identical_counts(self):
        losses = np.array([0.2, 0.6, 1.0, 1.4])
        instance = [
            (np.arange(4), losses.copy()),
            (np.arange(4, 8), losses.copy()),
        ]
        pace = PaceSchedule(lam=0.5, gamma=1.0)
        w = solve_weights(instance, pace)
        counts = w.selected_per_cluster
        assert counts[0] == counts[1]
        assert counts[0] > 0

    def test_negative_losses_rejected(self):
        with pytest.raises(ValueError):
            solve_weights(
                [(np.array([0]), np.array([-0.1]))],
                PaceSchedule(lam=1.0, gamma=0.0),
            )

    def test_empty_cluster_yields_no_selection(self):
        w = solve_weights(
            [
                (np.array([], dtype=np.int64), np.array([])),
                (np.array([3]), np.array([0.1])),
            ],
            PaceSchedule(lam=1.0, gamma=0.0),
        )
        assert w.total_selected == 1
        np.testing.assert_array_equal(w.selected_ids(), [3])


class TestUpdatePace:
    def test_growth_mode(self):
        pace = PaceSchedule(lam=1.0, gamma=1.0, beta1=0.1, beta2=0.1)
        out = update_pace(pace)
        assert out.lam == pytest.approx(1.1)
        assert out.gamma == pytest.approx(1.1)

    def test_as_written_mode_updates_gamma_from_lambda(self):
        pace = PaceSchedule(
            lam=1.0, gamma=5.0, beta1=0.1, beta2=0.1, update_mode="as-written"
        )
        out = update_pace(pace)
        assert out.lam == pytest.approx(0.1)
        assert out.gamma == pytest.approx(0.1)

    def test_growth_strictly_increasing_over_100_updates(self):
        pace = PaceSchedule(lam=0.5, gamma=0.25, beta1=0.1, beta2=0.05)
        lams, gammas = [pace.lam], [pace.gamma]
        for _ in range(100):
            pace = update_pace(pace)
            lams.append(pace.lam)
            gammas.append(pace.gamma)
        assert (np.diff(lams) > 0).all()
        assert (np.diff(gammas) > 0).all()
        assert np.isfinite(pace.lam) and np.isfinite(pace.gamma)

    def test_init_from_losses_uses_percentile(self):
        losses = np.linspace(0, 2, 101)
        pace = init_pace_from_losses(losses, 0.1, 0.1, percentile=50.0)
        assert pace.lam == pytest.approx(1.0)
        assert pace.gamma == pytest.approx(0.5)
        pace = init_pace_from_losses(
            losses, 0.1, 0.1, percentile=25.0, gamma_ratio=0.0
        )
        assert pace.lam == pytest.approx(0.5)
        assert pace.gamma == 0.0

    def test_invalid_schedule_rejected(self):
        with pytest.raises(ValueError):
            PaceSchedule(lam=0.0, gamma=0.0)
        with pytest.raises(ValueError):
            PaceSchedule(lam=1.0, gamma=-1.0)
        with pytest.raises(ValueError):
            PaceSchedule(lam=1.0, gamma=0.0, update_mode="nope")


class TestBatchSelection:
    def test_exact_batch_when_pool_matches_size(self):
        pool = np.array([4, 9, 2])
        batch = select_batch(pool, 3, rng_child(21, 0))
        assert set(batch.tolist()) == {4, 9, 2}

    def test_remainder_when_pool_small(self):
        batch = select_batch(np.array([7, 8]), 5, rng_child(21, 1))
        assert set(batch.tolist()) == {7, 8}

    def test_epoch_covers_every_index_once(self):
        pool = np.arange(103)
        batches = epoch_batches(pool, 10, rng_child(21, 2))
        assert len(batches) == 11
        combined = np.sort(np.concatenate(batches))
        np.testing.assert_array_equal(combined, pool)

    def test_draw_frequencies_uniform_over_pool(self):
        pool = np.arange(20)
        counts = np.zeros(20)
        rng = rng_child(21, 3)
        draws = 10_000
        for _ in range(draws):
            batch = select_batch(pool, 5, rng)
            counts[batch] += 1
        freq = counts / (draws * 5)
        expected = 1 / 20
        chi2 = draws * 5 * ((freq - expected) ** 2 / expected).sum()
        # 19 dof; p > 0.01 needs chi2 below ~36.2
        assert chi2 < 36.2

    def test_empty_pool_signals_pace_too_strict(self):
        with pytest.raises(PaceTooStrictError):
            select_batch(np.array([], dtype=np.int64), 4, rng_child(21, 4))
        with pytest.raises(PaceTooStrictError):
            epoch_batches(np.array([], dtype=np.int64), 4, rng_child(21, 5))

    def test_fallback_picks_smallest_loss_per_cluster(self):
        instance = [
            (np.array([3, 4, 5]), np.array([2.0, 0.5, 1.0])),
            (np.array([0, 1]), np.array([9.0, 9.0])),  # tie -> lowest id
            (np.array([], dtype=np.int64), np.array([])),
        ]
        np.testing.assert_array_equal(fallback_selection(instance), [0, 4])


class TestSpldRawClusters:
    def test_deterministic_given_seed(self):
        ds = gen_gaussian_blobs(3, 2, 20, 4, 16.0, 0.6, rng_child(22, 0))
        a = spld_raw_clusters(ds.features, 6, rng_child(22, 1))
        b = spld_raw_clusters(ds.features, 6, rng_child(22, 1))
        for ga, gb in zip(a, b):
            np.testing.assert_array_equal(ga, gb)

    def test_recovers_separable_subclusters(self):
        # k-means++ can still seed two centers in one blob on unlucky draws;
        # this seed is a clean run on clearly separable data.
        ds = gen_gaussian_blobs(3, 2, 40, 4, 40.0, 0.5, rng_child(22, 2))
        groups = spld_raw_clusters(ds.features, 6, rng_child(22, 4))
        assignment = np.empty(ds.n_samples, dtype=np.int64)
        for gi, members in enumerate(groups):
            assignment[members] = gi
        from spl_advise.clusters import cluster_purity

        assert cluster_purity(assignment, ds.subcluster_ids) >= 0.9

    def test_ignores_any_learned_representation(self):
        # The grouping is a pure function of raw features and seed; there is
        # nothing to pass an embedding through.
        ds = gen_gaussian_blobs(2, 2, 15, 3, 12.0, 0.8, rng_child(22, 4))
        first = spld_raw_clusters(ds.features, 4, rng_child(22, 5))
        again = spld_raw_clusters(ds.features, 4, rng_child(22, 5))
        for ga, gb in zip(first, again):
            np.testing.assert_array_equal(ga, gb)
