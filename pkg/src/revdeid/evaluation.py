"""Verification statistics and reporting.

Scores come from pluggable scorers over crop pairs; everything here is
plain numpy over the resulting genuine/impostor score lists, plus CSV and
SVG emission for reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, ConfigError, ContractError, StatisticUndefinedError

PROTOCOLS = ("xx", "xa", "temporal", "cross_session")


@dataclass
class DecisionEnvironment:
    """Genuine and impostor similarity scores for one verification setting."""

    genuine_scores: np.ndarray
    impostor_scores: np.ndarray

    def __post_init__(self):
        self.genuine_scores = np.asarray(self.genuine_scores, dtype=np.float64)
        self.impostor_scores = np.asarray(self.impostor_scores, dtype=np.float64)
        if self.genuine_scores.size == 0 or self.impostor_scores.size == 0:
            raise ContractError("decision environment needs scores on both sides")


def decidability(env: DecisionEnvironment) -> float:
    """Separation of the two score distributions in pooled-sd units:
    (mean_G - mean_I) / sqrt(sd_G^2 + sd_I^2), population standard deviations."""
    g, i = env.genuine_scores, env.impostor_scores
    if g.size < 2 or i.size < 2:
        raise ContractError("decidability needs at least 2 scores per side")
    denom = np.sqrt(g.std() ** 2 + i.std() ** 2)
    if denom == 0:
        raise StatisticUndefinedError("decidability undefined: both score sets are constant")
    return float((g.mean() - i.mean()) / denom)


def auc(env: DecisionEnvironment) -> float:
    """Probability a genuine score beats an impostor score, ties at half."""
    g = env.genuine_scores
    i = env.impostor_scores
    wins = 0.0
    # chunked pairwise comparison keeps memory flat for big score lists
    step = max(1, int(2e6 // max(1, i.size)))
    for lo in range(0, g.size, step):
        block = g[lo : lo + step, None]
        wins += float((block > i[None, :]).sum()) + 0.5 * float((block == i[None, :]).sum())
    return wins / (g.size * i.size)


def ks_statistic(sample_a, sample_b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov: max ECDF gap and its asymptotic p-value."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ContractError("KS statistic needs non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))

    n_eff = a.size * b.size / (a.size + b.size)
    lam = (np.sqrt(n_eff) + 0.12 + 0.11 / np.sqrt(n_eff)) * d
    terms = np.arange(1, 101, dtype=np.float64)
    series = (-1.0) ** (terms - 1) * np.exp(-2.0 * (terms * lam) ** 2)
    # the alternating series only converges for lam away from 0; a tail
    # that has not died out means the gap is far too small to reject
    if abs(series[-1]) > 1e-10:
        return d, 1.0
    p = 2.0 * float(series.sum())
    return d, float(np.clip(p, 0.0, 1.0))


def pearson(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1 or u.size < 2:
        raise ContractError("pearson needs two equal-length lists of at least 2 values")
    du, dv = u - u.mean(), v - v.mean()
    denom = np.sqrt((du ** 2).sum() * (dv ** 2).sum())
    if denom == 0:
        raise StatisticUndefinedError("pearson undefined for constant input")
    return float((du * dv).sum() / denom)


def iou(b1: BoundingBox, b2: BoundingBox) -> float:
    ix = max(0, min(b1.x + b1.w, b2.x + b2.w) - max(b1.x, b2.x))
    iy = max(0, min(b1.y + b1.h, b2.y + b2.h) - max(b1.y, b2.y))
    inter = ix * iy
    union = b1.w * b1.h + b2.w * b2.h - inter
    return inter / union


def _average_precision(dets, truths, iou_threshold: float) -> float:
    """Ranked PR AP for one image; dets are (box, confidence) pairs."""
    if not truths:
        return 0.0
    order = sorted(range(len(dets)), key=lambda k: -dets[k][1])
    matched = [False] * len(truths)
    hits = []
    for k in order:
        box = dets[k][0]
        best, best_iou = -1, iou_threshold
        for g, truth in enumerate(truths):
            if matched[g]:
                continue
            v = iou(box, truth)
            if v >= best_iou:
                best, best_iou = g, v
        if best >= 0:
            matched[best] = True
            hits.append(1)
        else:
            hits.append(0)
    tp = np.cumsum(hits)
    precision = tp / (np.arange(len(hits)) + 1)
    recall = tp / len(truths)
    ap = 0.0
    prev_r = 0.0
    for p, r, h in zip(precision, recall, hits):
        if h:
            ap += p * (r - prev_r)
            prev_r = r
    return float(ap)


def mean_average_precision(detections, ground_truth, iou_threshold: float = 0.5) -> float:
    """Per-image ranked-PR average precision, averaged over images.

    `detections` is one list of (BoundingBox, confidence) per image,
    `ground_truth` one list of BoundingBox per image. Images with neither
    boxes nor detections carry no information and are skipped.
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ConfigError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    if len(detections) != len(ground_truth):
        raise ContractError("detections and ground truth must cover the same images")
    aps = []
    for dets, truths in zip(detections, ground_truth):
        if not dets and not truths:
            continue
        aps.append(_average_precision(dets, truths, iou_threshold))
    return float(np.mean(aps)) if aps else 0.0


def pixel_scorer(crop_a: np.ndarray, crop_b: np.ndarray) -> float:
    """Toy verifier: Pearson correlation of the central face region.

    The border rows mostly carry background, so they are trimmed before
    correlating. Stands in for a real face recognizer at desk scale."""
    inner_a = crop_a[8:56, 8:56].reshape(-1)
    inner_b = crop_b[8:56, 8:56].reshape(-1)
    try:
        return pearson(inner_a, inner_b)
    except StatisticUndefinedError:
        return 0.0


def matcher_scorer(model, head: int | None = None):
    """Similarity from a trained matcher: one head's agreement, or the mean.

    head=0 gives an identity verifier; None averages all attributes.
    """
    from .matcher import predict

    if head is not None and not 0 <= head < model.t:
        raise ContractError(f"head must be in [0, {model.t}), got {head}")

    def score(crop_a: np.ndarray, crop_b: np.ndarray) -> float:
        agreement = predict(model, crop_a, crop_b)
        return float(agreement.mean() if head is None else agreement[head])

    return score


def identity_transform(crop: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return crop


def encoder_transform(encoder):
    """De-identifies a crop with a per-call noise seed from the pair stream."""
    from .networks import encode

    def apply(crop: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return encode(encoder, crop, int(rng.integers(2 ** 31)))

    return apply


def _genuine_pool(dataset, protocol: str) -> list[tuple[int, int]]:
    """Row pairs eligible as genuine for the protocol."""
    pairs = []
    index = dataset.index
    subjects = np.unique(index[:, 0])
    for i in subjects:
        seqs = np.unique(index[index[:, 0] == i, 1])
        if protocol in ("xx", "xa", "temporal"):
            for j in seqs:
                rows = dataset.rows_of(int(i), int(j))
                for a in range(rows.size):
                    for b in range(a + 1, rows.size):
                        pairs.append((int(rows[a]), int(rows[b])))
        elif protocol == "cross_session":
            for ja in range(seqs.size):
                for jb in range(ja + 1, seqs.size):
                    for a in dataset.rows_of(int(i), int(seqs[ja])):
                        for b in dataset.rows_of(int(i), int(seqs[jb])):
                            pairs.append((int(a), int(b)))
    return pairs


def verification_protocol(
    dataset,
    protocol: str,
    pair_counts: tuple[int, int],
    scorer,
    seed: int = 0,
    transform_a=identity_transform,
    transform_b=identity_transform,
) -> DecisionEnvironment:
    """Builds a decision environment for one protocol.

    Genuine pairs share the subject (same sequence, except cross_session
    which spans sequences); impostor pairs always differ in subject. Both
    sides pass through their transform before scoring, so x-side and
    a-side protocols are expressed by the identity/encoder transforms.
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    n_genuine, n_impostor = pair_counts
    if n_genuine < 1 or n_impostor < 1:
        raise ConfigError("pair counts must be positive")
    subjects = np.unique(dataset.index[:, 0])
    if subjects.size < 2:
        raise ConfigError("impostor sampling needs at least 2 distinct subjects")
    pool = _genuine_pool(dataset, protocol)
    if not pool:
        raise ConfigError(f"dataset has no eligible genuine pairs for protocol {protocol!r}")

    rng = np.random.default_rng(seed)
    crops = dataset.crops

    genuine = np.empty(n_genuine, dtype=np.float64)
    for n in range(n_genuine):
        a, b = pool[rng.integers(len(pool))]
        ca = transform_a(crops[a], rng)
        cb = transform_b(crops[b], rng)
        genuine[n] = scorer(ca, cb)

    by_subject = {int(i): np.flatnonzero(dataset.index[:, 0] == i) for i in subjects}
    impostor = np.empty(n_impostor, dtype=np.float64)
    for n in range(n_impostor):
        ia, ib = rng.choice(subjects.size, size=2, replace=False)
        rows_a, rows_b = by_subject[int(subjects[ia])], by_subject[int(subjects[ib])]
        a = int(rows_a[rng.integers(rows_a.size)])
        b = int(rows_b[rng.integers(rows_b.size)])
        ca = transform_a(crops[a], rng)
        cb = transform_b(crops[b], rng)
        impostor[n] = scorer(ca, cb)

    return DecisionEnvironment(genuine_scores=genuine, impostor_scores=impostor)


def bootstrap_stat(values, statistic, fraction: float = 0.9, splits: int = 50,
                   seed: int = 0) -> tuple[float, float]:
    """Mean and sd of a statistic over resamples drawn with repetition."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("bootstrap needs non-empty values")
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    if splits < 1:
        raise ConfigError(f"splits must be positive, got {splits}")
    rng = np.random.default_rng(seed)
    size = max(1, int(round(fraction * values.size)))
    stats = np.array([
        statistic(values[rng.integers(values.size, size=size)]) for _ in range(splits)
    ], dtype=np.float64)
    return float(stats.mean()), float(stats.std())


def bootstrap_environment(
    env: DecisionEnvironment, statistic, fraction: float = 0.9, splits: int = 50,
    seed: int = 0,
) -> tuple[float, float]:
    """Bootstraps a two-sided statistic by resampling both score lists."""
    rng = np.random.default_rng(seed)
    g, i = env.genuine_scores, env.impostor_scores
    size_g = max(1, int(round(fraction * g.size)))
    size_i = max(1, int(round(fraction * i.size)))
    stats = []
    for _ in range(splits):
        sub = DecisionEnvironment(
            genuine_scores=g[rng.integers(g.size, size=size_g)],
            impostor_scores=i[rng.integers(i.size, size=size_i)],
        )
        stats.append(statistic(sub))
    stats = np.asarray(stats, dtype=np.float64)
    return float(stats.mean()), float(stats.std())


def toy_confidence(crop: np.ndarray) -> float:
    """Detail-based detection-confidence stand-in.

    Generated faces tend to carry less high-frequency detail than camera
    ones, so local contrast makes a serviceable toy confidence in [0, 1]."""
    gray = crop.mean(axis=2)
    dx = np.abs(np.diff(gray, axis=1)).mean()
    dy = np.abs(np.diff(gray, axis=0)).mean()
    return float(np.clip((dx + dy) / 0.08, 0.0, 1.0))


def confidence_comparison(conf_x, conf_a) -> dict:
    """Detector confidence before/after de-identification, no threshold attached."""
    x = np.asarray(conf_x, dtype=np.float64)
    a = np.asarray(conf_a, dtype=np.float64)
    if x.shape != a.shape or x.size == 0:
        raise ContractError("confidence lists must be equal-length and non-empty")
    try:
        corr = pearson(x, a) if x.size >= 2 else None
    except StatisticUndefinedError:
        corr = None
    return {
        "mean_x": float(x.mean()),
        "mean_a": float(a.mean()),
        "mean_drop": float(x.mean() - a.mean()),
        "pearson": corr,
    }


def write_report(rows: list[tuple[str, str, float, float]], path):
    """CSV report: metric,protocol,mean,sd."""
    with open(path, "w") as f:
        f.write("metric,protocol,mean,sd\n")
        for metric, protocol, mean, sd in rows:
            # float() first: repr of a numpy scalar is not a bare literal
            f.write(f"{metric},{protocol},{float(mean)!r},{float(sd)!r}\n")


def write_scores(scores, path):
    with open(path, "w") as f:
        for s in np.asarray(scores, dtype=np.float64):
            f.write(f"{float(s)!r}\n")


def plot_score_histograms(env: DecisionEnvironment, path, title: str = ""):
    """Overlaid genuine/impostor score histograms as SVG."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(env.genuine_scores, bins=30, alpha=0.6, color="tab:green",
            label="genuine", density=True)
    ax.hist(env.impostor_scores, bins=30, alpha=0.6, color="tab:red",
            label="impostor", density=True)
    ax.set_xlabel("similarity score")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_confidence_scatter(conf_x, conf_a, path, title: str = ""):
    """Scatter of per-face detector confidence: original vs de-identified."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(conf_x, conf_a, s=12, alpha=0.6, color="tab:blue")
    lim = [0.0, max(1.0, float(np.max(conf_x)), float(np.max(conf_a)))]
    ax.plot(lim, lim, color="gray", linewidth=0.8, linestyle="--")
    ax.set_xlabel("confidence on original")
    ax.set_ylabel("confidence on de-identified")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
