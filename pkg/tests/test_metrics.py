import random
import time

import pytest
import torch

from hybridseg.exceptions import DimensionError, UsageError
from hybridseg.metrics import (GLOBAL_COUNTS, PER_IMAGE_MEAN, METRIC_FIELDS,
                               ConfusionCounts, MetricReport, aggregate_report,
                               compute_metrics, confusion_counts, fps_benchmark,
                               format_metrics_text, write_metrics_csv)


def brute_force_metrics(pred_mask, gt_mask):
    """Per-pixel oracle: python loops and direct formula evaluation."""
    tp = fp = fn = tn = 0
    for p, g in zip(pred_mask.flatten().tolist(), gt_mask.flatten().tolist()):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1

    def ratio(num, den):
        return num / den if den else 1.0

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    return {
        "counts": (tp, fp, fn, tn),
        "iou": ratio(tp, tp + fp + fn),
        "dsc": ratio(2 * tp, 2 * tp + fp + fn),
        "precision": precision,
        "recall": recall,
        "accuracy": ratio(tp + tn, tp + fp + fn + tn),
        "f1": 2 * precision * recall / (precision + recall)
            if precision + recall else 0.0,
        "f2": 5 * precision * recall / (4 * precision + recall)
            if 4 * precision + recall else 0.0,
    }


def hand_counted_4x4():
    """8 predicted positives, 8 true positives, overlap 6 on a 4x4 grid."""
    pred = torch.tensor([[1, 1, 1, 1],
                         [1, 1, 1, 1],
                         [0, 0, 0, 0],
                         [0, 0, 0, 0]], dtype=torch.int64)
    gt = torch.tensor([[1, 1, 1, 1],
                       [1, 1, 0, 0],
                       [1, 1, 0, 0],
                       [0, 0, 0, 0]], dtype=torch.int64)
    return pred, gt


class TestConfusionCounts:
    def test_perfect_prediction_has_no_errors(self):
        gt = (torch.rand(1, 8, 8) > 0.5).long()
        c = confusion_counts(gt.clone(), gt)
        assert c.fp == 0 and c.fn == 0
        assert c.tp + c.tn == 64

    def test_hand_counted_grid(self):
        pred, gt = hand_counted_4x4()
        c = confusion_counts(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == (6, 2, 2, 6)
        assert c.total == 16

    def test_all_background(self):
        c = confusion_counts(torch.zeros(4, 4, dtype=torch.int64),
                             torch.zeros(4, 4, dtype=torch.int64))
        assert (c.tp, c.fp, c.fn, c.tn) == (0, 0, 0, 16)

    def test_logits_thresholded_on_sigmoid(self):
        gt = torch.tensor([[1.0, 0.0]])
        logits = torch.tensor([[2.0, -2.0]])  # sigmoid 0.88, 0.12
        c = confusion_counts(logits, gt, threshold=0.5)
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 0, 1)

    def test_zero_logit_ties_predict_background(self):
        gt = torch.zeros(3, 3)
        c = confusion_counts(torch.zeros(3, 3), gt, threshold=0.5)
        assert c.tn == 9

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            confusion_counts(torch.zeros(4, 4), torch.zeros(4, 5))

    def test_non_binary_gt_rejected(self):
        with pytest.raises(UsageError, match="binary"):
            confusion_counts(torch.zeros(2, 2), torch.full((2, 2), 0.5))


class TestComputeMetrics:
    def test_hand_counted_values(self):
        r = compute_metrics(ConfusionCounts(tp=6, fp=2, fn=2, tn=6))
        assert r.iou == pytest.approx(0.6)
        assert r.dsc == pytest.approx(0.75)
        assert r.precision == pytest.approx(0.75)
        assert r.recall == pytest.approx(0.75)
        assert r.accuracy == pytest.approx(0.75)
        assert r.f1 == pytest.approx(0.75)
        assert r.f2 == pytest.approx(0.75)

    def test_perfect(self):
        r = compute_metrics(ConfusionCounts(tp=16, fp=0, fn=0, tn=0))
        assert all(getattr(r, f) == 1.0 for f in METRIC_FIELDS)

    def test_empty_empty_convention(self):
        r = compute_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=16))
        assert r.iou == 1.0 and r.dsc == 1.0 and r.accuracy == 1.0

    def test_total_failure(self):
        r = compute_metrics(ConfusionCounts(tp=0, fp=8, fn=8, tn=0))
        assert r.iou == 0.0 and r.dsc == 0.0 and r.f1 == 0.0 and r.f2 == 0.0

    def test_dsc_equals_f1_and_iou_below_dsc_randomized(self):
        rng = random.Random(7)
        for _ in range(300):
            c = ConfusionCounts(tp=rng.randrange(20), fp=rng.randrange(20),
                                fn=rng.randrange(20), tn=rng.randrange(20))
            r = compute_metrics(c)
            assert r.f1 == pytest.approx(r.dsc, abs=1e-12)
            assert r.iou <= r.dsc + 1e-12

    def test_matches_brute_force_on_random_masks(self):
        g = torch.Generator().manual_seed(5)
        for _ in range(50):
            pred = (torch.rand(16, 16, generator=g) > 0.5).long()
            gt = (torch.rand(16, 16, generator=g) > 0.5).long()
            c = confusion_counts(pred, gt)
            expected = brute_force_metrics(pred.numpy(), gt.numpy())
            assert (c.tp, c.fp, c.fn, c.tn) == expected["counts"]
            r = compute_metrics(c)
            for f in METRIC_FIELDS:
                assert abs(getattr(r, f) - expected[f]) < 1e-12

    def test_permutation_invariance(self):
        g = torch.Generator().manual_seed(9)
        pred = (torch.rand(8, 8, generator=g) > 0.4).long()
        gt = (torch.rand(8, 8, generator=g) > 0.6).long()
        perm = torch.randperm(64, generator=g)
        r1 = compute_metrics(confusion_counts(pred, gt))
        r2 = compute_metrics(confusion_counts(
            pred.view(-1)[perm].view(8, 8), gt.view(-1)[perm].view(8, 8)))
        assert r1 == r2


class TestAggregateReport:
    def test_mean_of_two(self):
        r1 = MetricReport(iou=0.4, dsc=0.5, precision=0.5, recall=0.5,
                          accuracy=0.5, f1=0.5, f2=0.5)
        r2 = MetricReport(iou=0.8, dsc=0.9, precision=0.9, recall=0.9,
                          accuracy=0.9, f1=0.9, f2=0.9)
        agg = aggregate_report([r1, r2], [], PER_IMAGE_MEAN)
        assert agg.iou == pytest.approx(0.6)
        assert agg.n_images == 2
        assert agg.aggregation == PER_IMAGE_MEAN

    def test_single_image_equals_itself_in_both_modes(self):
        c = ConfusionCounts(tp=6, fp=2, fn=2, tn=6)
        r = compute_metrics(c)
        mean = aggregate_report([r], [c], PER_IMAGE_MEAN)
        pooled = aggregate_report([r], [c], GLOBAL_COUNTS)
        for f in METRIC_FIELDS:
            assert getattr(mean, f) == pytest.approx(getattr(r, f))
            assert getattr(pooled, f) == pytest.approx(getattr(r, f))

    def test_modes_differ_as_derived(self):
        c1 = ConfusionCounts(tp=1, fp=0, fn=1, tn=0)
        c2 = ConfusionCounts(tp=9, fp=0, fn=1, tn=0)
        reports = [compute_metrics(c1), compute_metrics(c2)]
        mean = aggregate_report(reports, [c1, c2], PER_IMAGE_MEAN)
        pooled = aggregate_report(reports, [c1, c2], GLOBAL_COUNTS)
        assert mean.iou == pytest.approx((0.5 + 0.9) / 2)
        assert pooled.iou == pytest.approx(10 / 12)

    def test_empty_raises(self):
        with pytest.raises(UsageError):
            aggregate_report([], [], PER_IMAGE_MEAN)
        with pytest.raises(UsageError):
            aggregate_report([], [], GLOBAL_COUNTS)

    def test_unknown_mode(self):
        with pytest.raises(UsageError, match="mode"):
            aggregate_report([MetricReport(1, 1, 1, 1, 1, 1, 1)], [], "median")


class TestFpsBenchmark:
    def test_warmup_excluded_from_count(self):
        calls = []
        fps_benchmark(lambda x: calls.append(1), (32, 32),
                      n_frames=100, n_warmup=10)
        assert len(calls) == 110

    def test_fixed_delay_stub_fps(self):
        report = fps_benchmark(lambda x: time.sleep(0.010), (32, 32),
                               n_frames=30, n_warmup=3)
        assert 60 <= report.fps <= 100
        assert report.mean_latency >= 0.010
        assert report.std_latency >= 0.0

    def test_failure_carries_frame_index(self):
        def broken(x):
            raise RuntimeError("boom")
        with pytest.raises(RuntimeError, match="frame 0"):
            fps_benchmark(broken, (32, 32), n_frames=5, n_warmup=0)

    def test_validates_args(self):
        with pytest.raises(UsageError):
            fps_benchmark(lambda x: None, (32, 32), n_frames=0)
        with pytest.raises(UsageError):
            fps_benchmark(lambda x: None, (32, 32), n_frames=1, n_warmup=-1)


class TestSerialization:
    def test_csv_roundtrip_columns_and_values(self, tmp_path):
        c = ConfusionCounts(tp=6, fp=2, fn=2, tn=6)
        r = compute_metrics(c)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, [("img1", r), ("img2", r)],
                          aggregate_report([r, r], [c, c], PER_IMAGE_MEAN))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "image_id,iou,dsc,precision,recall,accuracy,f1,f2"
        assert len(lines) == 4
        assert lines[1].startswith("img1,0.600000,0.750000,")
        assert lines[3].startswith("aggregate(per-image-mean),")

    def test_text_format_has_all_fields(self):
        r = compute_metrics(ConfusionCounts(tp=6, fp=2, fn=2, tn=6))
        text = format_metrics_text(r.with_fps(42.5), "test")
        for f in METRIC_FIELDS:
            assert f"{f}:" in text
        assert "fps: 42.500" in text
