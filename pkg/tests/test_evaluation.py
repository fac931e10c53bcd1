import dataclasses
import math

import numpy as np
import pytest
import torch

from revdeid.core import (
    BoundingBox,
    ConfigError,
    ContractError,
    StatisticUndefinedError,
)
from revdeid.evaluation import (
    DecisionEnvironment,
    auc,
    bootstrap_environment,
    bootstrap_stat,
    confidence_comparison,
    decidability,
    encoder_transform,
    identity_transform,
    iou,
    ks_statistic,
    matcher_scorer,
    mean_average_precision,
    pearson,
    pixel_scorer,
    plot_confidence_scatter,
    plot_score_histograms,
    toy_confidence,
    verification_protocol,
    write_report,
    write_scores,
)

# ---------------------------------------------------------------- environments


def test_environment_rejects_empty_sides():
    with pytest.raises(ContractError):
        DecisionEnvironment(genuine_scores=[], impostor_scores=[1.0])
    with pytest.raises(ContractError):
        DecisionEnvironment(genuine_scores=[1.0], impostor_scores=[])


def test_decidability_worked_example():
    env = DecisionEnvironment(genuine_scores=[0.0, 2.0], impostor_scores=[-1.0, 1.0])
    assert abs(decidability(env) - 1.0 / math.sqrt(2.0)) < 1e-12


def test_decidability_equal_means_is_zero():
    env = DecisionEnvironment(genuine_scores=[1.0, 3.0], impostor_scores=[0.0, 4.0])
    assert decidability(env) == 0.0


def test_decidability_affine_invariance():
    rng = np.random.default_rng(3)
    g, i = rng.normal(1.0, 0.5, 40), rng.normal(0.0, 0.7, 60)
    base = decidability(DecisionEnvironment(g, i))
    moved = decidability(DecisionEnvironment(3.5 * g - 2.0, 3.5 * i - 2.0))
    assert abs(base - moved) < 1e-12


def test_decidability_undefined_for_constant_scores():
    env = DecisionEnvironment(genuine_scores=[1.0, 1.0], impostor_scores=[0.0, 0.0])
    with pytest.raises(StatisticUndefinedError):
        decidability(env)


def test_decidability_needs_two_per_side():
    with pytest.raises(ContractError):
        decidability(DecisionEnvironment([1.0], [0.0, 1.0]))


# ---------------------------------------------------------------- auc


def test_auc_worked_example():
    env = DecisionEnvironment(genuine_scores=[0.8, 0.4], impostor_scores=[0.6, 0.2])
    assert abs(auc(env) - 0.75) < 1e-12


def test_auc_extremes_and_ties():
    sep = DecisionEnvironment([2.0, 3.0], [0.0, 1.0])
    assert auc(sep) == 1.0
    flipped = DecisionEnvironment([0.0, 1.0], [2.0, 3.0])
    assert auc(flipped) == 0.0
    tied = DecisionEnvironment([1.0], [1.0])
    assert auc(tied) == 0.5


def test_auc_matches_brute_force_on_large_lists():
    rng = np.random.default_rng(11)
    g = rng.normal(0.3, 1.0, 500)
    i = rng.normal(0.0, 1.0, 700)
    wins = sum(
        1.0 if gv > iv else (0.5 if gv == iv else 0.0) for gv in g for iv in i
    )
    assert abs(auc(DecisionEnvironment(g, i)) - wins / (500 * 700)) < 1e-12


def test_auc_is_a_rank_statistic():
    rng = np.random.default_rng(12)
    g = rng.normal(0.5, 1.0, 80)
    i = rng.normal(0.0, 1.0, 80)
    before = auc(DecisionEnvironment(g, i))
    after = auc(DecisionEnvironment(np.exp(g), np.exp(i)))
    assert before == after


# ---------------------------------------------------------------- ks


def smirnov_p_theta(d, n_a, n_b):
    """Independent p-value oracle via the Jacobi-theta form of the
    Kolmogorov distribution (different series from the alternating one)."""
    n_eff = n_a * n_b / (n_a + n_b)
    lam = (math.sqrt(n_eff) + 0.12 + 0.11 / math.sqrt(n_eff)) * d
    cdf = (math.sqrt(2.0 * math.pi) / lam) * sum(
        math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8.0 * lam ** 2))
        for k in range(1, 40)
    )
    return 1.0 - cdf


def test_ks_worked_example():
    d, p = ks_statistic([1.0, 2.0], [1.5, 2.5])
    assert d == 0.5
    assert abs(p - smirnov_p_theta(0.5, 2, 2)) < 1e-8
    assert abs(p - 0.8437) < 5e-4


def test_ks_identical_samples():
    d, p = ks_statistic([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert d == 0.0
    assert p == 1.0


def test_ks_disjoint_supports():
    a = np.arange(50, dtype=float)
    b = np.arange(100, 150, dtype=float)
    d, p = ks_statistic(a, b)
    assert d == 1.0
    assert p < 1e-8


def test_ks_is_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.normal(0, 1, 30), rng.normal(0.5, 1, 45)
    assert ks_statistic(a, b) == ks_statistic(b, a)


def test_ks_p_matches_theta_oracle_mid_range():
    rng = np.random.default_rng(5)
    a, b = rng.normal(0, 1, 60), rng.normal(0.4, 1, 80)
    d, p = ks_statistic(a, b)
    assert 0.0 < d < 1.0
    assert abs(p - smirnov_p_theta(d, 60, 80)) < 1e-7


def test_ks_rejects_empty():
    with pytest.raises(ContractError):
        ks_statistic([], [1.0])


# ---------------------------------------------------------------- pearson


def test_pearson_worked_example():
    assert abs(pearson([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) - 0.9819805060619657) < 1e-12


def test_pearson_extremes():
    u = [1.0, 2.0, 5.0]
    assert abs(pearson(u, u) - 1.0) < 1e-12
    assert abs(pearson(u, [-x for x in u]) + 1.0) < 1e-12


def test_pearson_matches_direct_formula():
    rng = np.random.default_rng(6)
    u, v = rng.normal(size=100), rng.normal(size=100)
    du, dv = u - u.mean(), v - v.mean()
    oracle = (du * dv).sum() / math.sqrt((du ** 2).sum() * (dv ** 2).sum())
    assert abs(pearson(u, v) - oracle) < 1e-12


def test_pearson_contracts():
    with pytest.raises(ContractError):
        pearson([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        pearson([1.0], [2.0])
    with pytest.raises(StatisticUndefinedError):
        pearson([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


# ---------------------------------------------------------------- iou / map


def test_iou_worked_example():
    assert abs(iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 2, 2)) - 1.0 / 7.0) < 1e-12


def test_iou_extremes_and_symmetry():
    box = BoundingBox(3, 4, 5, 6)
    assert iou(box, box) == 1.0
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(10, 10, 2, 2)) == 0.0
    other = BoundingBox(5, 5, 7, 2)
    assert iou(box, other) == iou(other, box)


def test_iou_range_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x1, y1, x2, y2 = rng.integers(0, 20, 4)
        w1, h1, w2, h2 = rng.integers(1, 15, 4)
        v = iou(BoundingBox(int(x1), int(y1), int(w1), int(h1)),
                BoundingBox(int(x2), int(y2), int(w2), int(h2)))
        assert 0.0 <= v <= 1.0


GT = BoundingBox(0, 0, 10, 10)
FAR = BoundingBox(50, 50, 10, 10)


def test_map_single_exact_match():
    assert mean_average_precision([[(GT, 0.9)]], [[GT]]) == 1.0


def test_map_no_detections():
    assert mean_average_precision([[]], [[GT]]) == 0.0


def test_map_ranked_list_cases():
    # true positive ranked first: full recall while precision is still 1
    assert mean_average_precision([[(GT, 0.9), (FAR, 0.5)]], [[GT]]) == 1.0
    # false positive ranked first halves the precision at full recall
    assert mean_average_precision([[(FAR, 0.9), (GT, 0.5)]], [[GT]]) == 0.5


def test_map_greedy_matching_is_one_to_one():
    gt2 = BoundingBox(30, 30, 10, 10)
    dets = [(GT, 0.9), (GT, 0.8), (gt2, 0.7)]
    # second detection re-hits the first truth and must count as a miss
    assert abs(mean_average_precision([dets], [[GT, gt2]]) - 5.0 / 6.0) < 1e-12


def test_map_averages_over_images_and_skips_empty_ones():
    images = [[(GT, 0.9)], [(FAR, 0.9), (GT, 0.5)], []]
    truths = [[GT], [GT], []]
    assert abs(mean_average_precision(images, truths) - 0.75) < 1e-12


def test_map_detection_on_empty_truth_scores_zero():
    assert mean_average_precision([[(GT, 0.9)], [(GT, 0.8)]], [[], [GT]]) == 0.5


def test_map_self_match_is_exact():
    truths = [[GT, BoundingBox(20, 0, 5, 5)], [FAR]]
    dets = [[(b, 1.0) for b in img] for img in truths]
    assert mean_average_precision(dets, truths) == 1.0


def test_map_contracts():
    with pytest.raises(ConfigError):
        mean_average_precision([[]], [[]], iou_threshold=0.0)
    with pytest.raises(ConfigError):
        mean_average_precision([[]], [[]], iou_threshold=1.0)
    with pytest.raises(ContractError):
        mean_average_precision([[], []], [[]])


# ---------------------------------------------------------------- scorers


def test_pixel_scorer_self_is_one():
    rng = np.random.default_rng(8)
    crop = rng.random((64, 64, 3), dtype=np.float64).astype(np.float32)
    assert abs(pixel_scorer(crop, crop) - 1.0) < 1e-6


def test_pixel_scorer_constant_crop_scores_zero():
    flat = np.full((64, 64, 3), 0.5, dtype=np.float32)
    other = np.random.default_rng(9).random((64, 64, 3)).astype(np.float32)
    assert pixel_scorer(flat, other) == 0.0


def test_matcher_scorer_head_selection():
    torch.manual_seed(21)
    from revdeid.matcher import MatcherModel, predict

    model = MatcherModel(4)
    rng = np.random.default_rng(10)
    ca = rng.random((64, 64, 3)).astype(np.float32)
    cb = rng.random((64, 64, 3)).astype(np.float32)
    full = predict(model, ca, cb)
    assert abs(matcher_scorer(model, head=0)(ca, cb) - float(full[0])) < 1e-7
    assert abs(matcher_scorer(model)(ca, cb) - float(full.mean())) < 1e-7
    with pytest.raises(ContractError):
        matcher_scorer(model, head=4)
    with pytest.raises(ContractError):
        matcher_scorer(model, head=-1)


def test_encoder_transform_consumes_the_pair_stream():
    torch.manual_seed(22)
    from revdeid.networks import build_generator_pair

    pair = build_generator_pair()
    apply = encoder_transform(pair.encoder)
    crop = np.random.default_rng(12).random((64, 64, 3)).astype(np.float32)
    out1 = apply(crop, np.random.default_rng(33))
    out2 = apply(crop, np.random.default_rng(33))
    out3 = apply(crop, np.random.default_rng(34))
    assert np.array_equal(out1, out2)
    assert not np.array_equal(out1, out3)  # different noise seed
    assert identity_transform(crop, np.random.default_rng(0)) is crop


# ---------------------------------------------------------------- protocols


def marked(dataset):
    """Stamp subject/sequence ids into a corner pixel so a scorer can
    observe which rows were paired."""
    crops = dataset.crops.copy()
    for row in range(crops.shape[0]):
        i, j, _ = dataset.index[row]
        crops[row, 0, 0, 0] = i / 100.0
        crops[row, 0, 0, 1] = j / 10.0
    return dataclasses.replace(dataset, crops=crops)


@pytest.mark.parametrize("protocol", ["xx", "xa", "temporal", "cross_session"])
def test_protocol_pairing_rules(tiny_dataset, protocol):
    ds = marked(tiny_dataset)
    seen = []

    def scorer(ca, cb):
        seen.append((round(float(ca[0, 0, 0]) * 100), round(float(ca[0, 0, 1]) * 10),
                     round(float(cb[0, 0, 0]) * 100), round(float(cb[0, 0, 1]) * 10)))
        return float(len(seen))

    env = verification_protocol(ds, protocol, (10, 50), scorer, seed=1)
    assert env.genuine_scores.size == 10 and env.impostor_scores.size == 50
    assert len(seen) == 60
    for ia, ja, ib, jb in seen[:10]:
        assert ia == ib
        if protocol == "cross_session":
            assert ja != jb
        else:
            assert ja == jb
    for ia, _, ib, _ in seen[10:]:
        assert ia != ib


def test_protocol_transform_sides(tiny_dataset):
    calls = {"a": 0, "b": 0}

    def mark_a(crop, rng):
        calls["a"] += 1
        return crop + 0.0

    def mark_b(crop, rng):
        calls["b"] += 1
        return crop + 0.0

    verification_protocol(tiny_dataset, "xa", (4, 6), lambda a, b: 0.0,
                          seed=2, transform_a=mark_a, transform_b=mark_b)
    assert calls == {"a": 10, "b": 10}


def test_protocol_is_deterministic(tiny_dataset):
    runs = [
        verification_protocol(tiny_dataset, "xx", (8, 12), pixel_scorer, seed=9)
        for _ in range(2)
    ]
    assert np.array_equal(runs[0].genuine_scores, runs[1].genuine_scores)
    assert np.array_equal(runs[0].impostor_scores, runs[1].impostor_scores)


def test_protocol_contracts(tiny_dataset):
    with pytest.raises(ConfigError):
        verification_protocol(tiny_dataset, "yy", (5, 5), pixel_scorer)
    with pytest.raises(ConfigError):
        verification_protocol(tiny_dataset, "xx", (0, 5), pixel_scorer)
    only_zero = tiny_dataset.index[:, 0] == 0
    lonely = dataclasses.replace(
        tiny_dataset,
        frames=tiny_dataset.frames[only_zero],
        boxes=tiny_dataset.boxes[only_zero],
        crops=tiny_dataset.crops[only_zero],
        labels=tiny_dataset.labels[only_zero],
        index=tiny_dataset.index[only_zero],
        _row_map={},
    )
    with pytest.raises(ConfigError):
        verification_protocol(lonely, "xx", (5, 5), pixel_scorer)


def test_xx_auc_is_high_on_raw_crops(tiny_dataset):
    env = verification_protocol(tiny_dataset, "xx", (40, 40), pixel_scorer, seed=3)
    assert auc(env) > 0.8  # same-sequence frames correlate strongly


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_constant_values():
    mean, sd = bootstrap_stat(np.full(20, 3.25), np.mean, seed=1)
    assert mean == 3.25
    assert sd == 0.0


def test_bootstrap_mean_recovers_balanced_mean():
    values = np.array([0.0, 1.0] * 100)
    mean, sd = bootstrap_stat(values, np.mean, seed=2)
    assert abs(mean - 0.5) < 0.03
    assert sd > 0.0


def test_bootstrap_single_split_has_zero_sd():
    mean, sd = bootstrap_stat(np.arange(10.0), np.mean, splits=1, seed=3)
    assert sd == 0.0


def test_bootstrap_is_deterministic():
    values = np.random.default_rng(13).normal(size=50)
    assert bootstrap_stat(values, np.median, seed=7) == bootstrap_stat(
        values, np.median, seed=7)


def test_bootstrap_contracts():
    with pytest.raises(ContractError):
        bootstrap_stat([], np.mean)
    with pytest.raises(ConfigError):
        bootstrap_stat([1.0], np.mean, fraction=0.0)
    with pytest.raises(ConfigError):
        bootstrap_stat([1.0], np.mean, fraction=1.5)
    with pytest.raises(ConfigError):
        bootstrap_stat([1.0], np.mean, splits=0)


def test_bootstrap_environment_tracks_auc():
    rng = np.random.default_rng(14)
    env = DecisionEnvironment(rng.normal(1.0, 1.0, 200), rng.normal(0.0, 1.0, 200))
    mean, sd = bootstrap_environment(env, auc, seed=5)
    assert abs(mean - auc(env)) < 0.05
    assert sd > 0.0
    assert bootstrap_environment(env, auc, seed=5) == (mean, sd)


# ---------------------------------------------------------------- confidence


def test_toy_confidence_bounds():
    flat = np.full((64, 64, 3), 0.5, dtype=np.float32)
    assert toy_confidence(flat) == 0.0
    checker = np.indices((64, 64)).sum(axis=0) % 2
    crop = np.repeat(checker[:, :, None], 3, axis=2).astype(np.float32)
    assert toy_confidence(crop) == 1.0


def test_confidence_comparison_fields():
    out = confidence_comparison([0.9, 0.8, 0.7], [0.2, 0.3, 0.1])
    assert abs(out["mean_x"] - 0.8) < 1e-12
    assert abs(out["mean_a"] - 0.2) < 1e-12
    assert abs(out["mean_drop"] - 0.6) < 1e-12
    assert -1.0 <= out["pearson"] <= 1.0


def test_confidence_comparison_constant_side_reports_none():
    out = confidence_comparison([0.5, 0.5], [0.1, 0.9])
    assert out["pearson"] is None


def test_confidence_comparison_contracts():
    with pytest.raises(ContractError):
        confidence_comparison([0.5], [0.1, 0.2])
    with pytest.raises(ContractError):
        confidence_comparison([], [])


# ---------------------------------------------------------------- outputs


def test_report_and_scores_files(tmp_path):
    report = tmp_path / "report.csv"
    write_report([("auc", "xx", 0.9619, 0.002), ("dprime", "xa", 0.1 + 0.2, 0.0)],
                 report)
    lines = report.read_text().splitlines()
    assert lines[0] == "metric,protocol,mean,sd"
    assert lines[1].startswith("auc,xx,")
    assert float(lines[2].split(",")[2]) == 0.1 + 0.2  # repr keeps full precision

    scores = tmp_path / "scores.txt"
    values = np.random.default_rng(15).normal(size=7)
    write_scores(values, scores)
    back = np.array([float(s) for s in scores.read_text().split()])
    assert np.array_equal(back, values)


def test_plots_emit_svg(tmp_path):
    rng = np.random.default_rng(16)
    env = DecisionEnvironment(rng.normal(1, 1, 50), rng.normal(0, 1, 50))
    hist = tmp_path / "hist.svg"
    plot_score_histograms(env, hist, title="scores")
    scatter = tmp_path / "scatter.svg"
    plot_confidence_scatter(rng.random(30), rng.random(30), scatter)
    for path in (hist, scatter):
        text = path.read_text()
        assert "<svg" in text[:500]
