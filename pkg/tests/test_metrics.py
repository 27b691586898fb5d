import random

import pytest

from appcat.metrics import (
    ContingencyTable,
    DetectionCounts,
    Partition,
    PartitionMismatchError,
    UndefinedRateError,
    adjusted_rand_index,
    contingency_table,
    detection_metrics,
)


def pair_counting_ari(x: Partition, y: Partition) -> float:
    """O(n^2) oracle: classify every element pair, then the ARI identity
    2(ad - bc) / ((a+b)(b+d) + (a+c)(c+d)) over pair-agreement counts."""
    ids = sorted(x.assignments)
    n11 = n10 = n01 = n00 = 0
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            same_x = x.assignments[ids[i]] == x.assignments[ids[j]]
            same_y = y.assignments[ids[i]] == y.assignments[ids[j]]
            if same_x and same_y:
                n11 += 1
            elif same_x:
                n10 += 1
            elif same_y:
                n01 += 1
            else:
                n00 += 1
    denominator = (n11 + n10) * (n10 + n00) + (n11 + n01) * (n01 + n00)
    if denominator == 0:
        return 1.0 if x.same_blocks(y) else 0.0
    return 2.0 * (n11 * n00 - n10 * n01) / denominator


def random_partition(rng: random.Random, ids: list[str]) -> Partition:
    k = rng.randint(1, len(ids))
    return Partition.from_labels(ids, [str(rng.randrange(k)) for _ in ids])


class TestContingencyTable:
    def test_hand_case(self):
        x = Partition.from_blocks([["a", "b"], ["c"]])
        y = Partition.from_blocks([["a"], ["b", "c"]])
        table = contingency_table(x, y)
        assert table.counts == ((1, 1), (0, 1))
        assert table.row_sums == (2, 1)
        assert table.col_sums == (1, 2)
        assert table.n == 3

    def test_single_block(self):
        p = Partition.from_blocks([["a", "b", "c"]])
        table = contingency_table(p, p)
        assert table.counts == ((3,),)

    def test_element_mismatch(self):
        x = Partition.from_labels(["a", "b"], ["0", "0"])
        y = Partition.from_labels(["a", "c"], ["0", "0"])
        with pytest.raises(PartitionMismatchError, match="symmetric difference"):
            contingency_table(x, y)

    def test_marginals_reconstruct_cluster_sizes(self):
        rng = random.Random(5)
        ids = [f"e{i}" for i in range(30)]
        x, y = random_partition(rng, ids), random_partition(rng, ids)
        table = contingency_table(x, y)
        x_sizes = sorted(len(b) for b in x.blocks().values())
        assert sorted(table.row_sums) == x_sizes
        y_sizes = sorted(len(b) for b in y.blocks().values())
        assert sorted(table.col_sums) == y_sizes

    def test_inconsistent_table_rejected(self):
        with pytest.raises(ValueError):
            ContingencyTable(counts=((1, 1),), row_sums=(3,), col_sums=(1, 1), n=2)


class TestAdjustedRandIndex:
    def test_identical_partitions(self):
        p = Partition.from_blocks([["a", "b", "c"], ["d", "e"]])
        assert adjusted_rand_index(p, p) == 1.0

    def test_hand_case_minus_half(self):
        x = Partition.from_blocks([["a", "b"], ["c"]])
        y = Partition.from_blocks([["a"], ["b", "c"]])
        assert adjusted_rand_index(x, y) == -0.5

    def test_singletons_vs_one_block(self):
        x = Partition.from_blocks([["a"], ["b"], ["c"]])
        y = Partition.from_blocks([["a", "b", "c"]])
        assert adjusted_rand_index(x, y) == 0.0

    def test_degenerate_equal_partitions(self):
        singles = Partition.from_blocks([["a"], ["b"], ["c"]])
        relabeled = Partition.from_labels(["a", "b", "c"], ["x", "y", "z"])
        assert adjusted_rand_index(singles, relabeled) == 1.0

    def test_symmetry_and_relabel_invariance(self):
        rng = random.Random(11)
        ids = [f"e{i}" for i in range(9)]
        for _ in range(50):
            x, y = random_partition(rng, ids), random_partition(rng, ids)
            forward = adjusted_rand_index(x, y)
            assert forward == adjusted_rand_index(y, x)
            shuffle = {
                label: f"z{i}" for i, label in enumerate(set(x.assignments.values()))
            }
            relabeled = Partition.from_labels(
                ids, [shuffle[x.assignments[e]] for e in ids]
            )
            assert adjusted_rand_index(relabeled, y) == pytest.approx(
                forward, abs=1e-15
            )

    def test_matches_pair_counting_oracle(self):
        rng = random.Random(42)
        for trial in range(200):
            n = rng.randint(2, 12)
            ids = [f"e{i}" for i in range(n)]
            x, y = random_partition(rng, ids), random_partition(rng, ids)
            assert adjusted_rand_index(x, y) == pytest.approx(
                pair_counting_ari(x, y), abs=1e-12
            ), f"trial {trial}"

    def test_needs_two_elements(self):
        p = Partition.from_labels(["a"], ["0"])
        with pytest.raises(ValueError, match="at least 2"):
            adjusted_rand_index(p, p)

    def test_mismatch_raises(self):
        x = Partition.from_labels(["a", "b"], ["0", "1"])
        y = Partition.from_labels(["a", "z"], ["0", "1"])
        with pytest.raises(PartitionMismatchError):
            adjusted_rand_index(x, y)

    def test_large_n_no_overflow(self):
        # Pair-count products at n=5000 exceed 2**46; the integer path
        # must stay exact.
        ids = [f"e{i}" for i in range(5000)]
        labels = [str(i % 50) for i in range(5000)]
        p = Partition.from_labels(ids, labels)
        assert adjusted_rand_index(p, p) == 1.0


class TestPartitionCsv:
    def test_round_trip(self, tmp_path):
        p = Partition.from_labels(["a", "b", "c"], ["x", "y", "x"])
        path = tmp_path / "partition.csv"
        p.save_csv(path)
        assert Partition.load_csv(path).assignments == dict(p.assignments)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("app_id,cluster_id\na,0\na,1\n")
        with pytest.raises(ValueError, match="duplicate"):
            Partition.load_csv(path)


class TestDetectionMetrics:
    def test_improved_detector_row(self):
        rates = detection_metrics(DetectionCounts(tp=154, fp=40, fn=346, tn=460))
        assert rates.tpr == pytest.approx(0.308)
        assert rates.fpr == pytest.approx(0.080)
        assert rates.tnr == pytest.approx(0.920)
        assert rates.fnr == pytest.approx(0.692)
        assert rates.f1 == pytest.approx(0.44, abs=0.005)

    def test_baseline_detector_row(self):
        rates = detection_metrics(DetectionCounts(tp=98, fp=68, fn=402, tn=432))
        assert rates.tpr == pytest.approx(0.196)
        assert rates.fpr == pytest.approx(0.136)
        assert rates.f1 == pytest.approx(0.29, abs=0.005)

    def test_perfect_detector(self):
        rates = detection_metrics(DetectionCounts(tp=7, fp=0, fn=0, tn=5))
        assert rates.f1 == 1.0
        assert rates.tpr == 1.0 and rates.fpr == 0.0

    def test_zero_denominators(self):
        with pytest.raises(UndefinedRateError):
            detection_metrics(DetectionCounts(tp=0, fp=1, fn=0, tn=1))
        with pytest.raises(UndefinedRateError):
            detection_metrics(DetectionCounts(tp=1, fp=0, fn=1, tn=0))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            DetectionCounts(tp=-1, fp=0, fn=0, tn=0)
