"""Bag-of-spatio-temporal-words descriptors and chi-squared k-NN classification.

Each video is cut densely into overlapping super blocks. Every super block
is cut into a small grid of sub blocks, each sub block is whitened and encoded
by a feature model, and the sub-block codes are concatenated and reduced by
PCA into one local descriptor. Descriptors are quantized against a K-means
vocabulary, and each video becomes an L1-normalized word histogram.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .data import DataError, eigen_spectrum, grid_offsets, numerical_rank, sample_moments


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorConfig:
    super_dims: Tuple[int, int, int] = (14, 20, 20)
    sub_dims: Tuple[int, int, int] = (10, 16, 16)
    sub_stride: int = 4
    overlap_fraction: float = 0.5
    descriptor_pca_dims: int = 100
    vocab_size: int = 3000
    pooling_centroids: int = 500

    def __post_init__(self):
        object.__setattr__(self, "super_dims", tuple(int(d) for d in self.super_dims))
        object.__setattr__(self, "sub_dims", tuple(int(d) for d in self.sub_dims))
        if any(s > S for s, S in zip(self.sub_dims, self.super_dims)):
            raise PipelineError(f"sub_dims {self.sub_dims} exceed super_dims {self.super_dims}")
        if self.sub_stride < 1:
            raise PipelineError("sub_stride must be >= 1")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise PipelineError("overlap_fraction must be in [0, 1)")

    @classmethod
    def from_run_config(cls, cfg):
        return cls(cfg.super_dims, cfg.sub_dims, cfg.sub_stride, cfg.overlap_fraction,
                   cfg.descriptor_pca_dims, cfg.vocab_size, cfg.pooling_centroids)

    @property
    def sub_strides(self):
        return (self.sub_stride,) * 3

    @property
    def super_strides(self):
        keep = 1.0 - self.overlap_fraction
        return tuple(max(1, int(math.floor(d * keep + 1e-9))) for d in self.super_dims)

    @property
    def sub_offsets(self):
        return grid_offsets(self.super_dims, self.sub_dims, self.sub_strides)

    @property
    def subblocks_per_superblock(self):
        return len(self.sub_offsets)


@dataclass(frozen=True)
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # (dims, D), rows are unit eigenvectors, descending variance
    variances: np.ndarray

    @property
    def dims(self):
        return self.components.shape[0]

    def project(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def fit_descriptor_pca(descriptors, dims):
    """Plain (non-whitening) PCA onto the top `dims` components."""
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise PipelineError("descriptors must be a 2-D array")
    n, D = X.shape
    if dims > D:
        raise PipelineError(f"descriptor_pca_dims={dims} exceeds descriptor length {D}")
    if n <= dims:
        raise PipelineError(f"need more descriptors ({n}) than PCA dims ({dims})")
    mean, cov = sample_moments(X)
    vals, vecs = eigen_spectrum(cov)
    rank = numerical_rank(vals, D)
    if rank < dims:
        raise PipelineError(f"descriptor covariance has numerical rank {rank} < requested {dims} dims")
    return PCAProjection(mean, vecs[:, :dims].T.copy(), vals[:dims].copy())


@dataclass
class Codebook:
    centroids: np.ndarray
    training_seed: int = 0
    objective: List[float] = field(default_factory=list)

    @property
    def K(self):
        return self.centroids.shape[0]

    @property
    def D(self):
        return self.centroids.shape[1]

    def assign(self, X):
        return kernels.nearest_centroid(np.asarray(X, dtype=np.float64), self.centroids)[0]


def _kmeanspp(X, K, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            j = int(rng.choice(n, p=d2 / total))
        else:
            j = int(rng.choice(np.flatnonzero(~taken)))
        chosen.append(j)
        taken[j] = True
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    return X[chosen].copy()


def kmeans(X, K, seed, iterations=50):
    """Batch K-means (k-means++ seeding); stops at `iterations` or an assignment fixpoint.

    Returns ``(centroids, assignments, objective per iteration)``. Empty
    clusters are re-seeded from a random sample.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if K < 1:
        raise PipelineError("K must be >= 1")
    if n < K:
        raise PipelineError(f"need at least K={K} samples, got {n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, K, rng)
    assign = None
    objective = []
    for _ in range(max(1, iterations)):
        new, d2 = kernels.nearest_centroid(X, C)
        objective.append(float(d2.sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        for k in np.flatnonzero(~nonempty):
            C[k] = X[rng.integers(n)]
    return C, assign, objective


def build_vocabulary(descriptors, K, seed, iterations=50):
    C, _, objective = kmeans(descriptors, K, seed, iterations)
    return Codebook(C, seed, objective)


def pool_features(hidden_vectors, centroids=500, seed=0, iterations=50):
    """K-means pooling layer over hidden-unit activation vectors."""
    C, _, objective = kmeans(hidden_vectors, centroids, seed, iterations)
    return Codebook(C, seed, objective)


def pooling_counts(pooling: Codebook, hidden_vectors):
    return np.bincount(pooling.assign(hidden_vectors), minlength=pooling.K)


def pooling_report(pooling: Codebook, hidden_vectors=None, top=6, counts=None):
    """Per pooling unit, the `top` filters with the largest centroid weight.

    Units are listed most active first (by number of assigned samples), using
    `counts` when given instead of re-assigning `hidden_vectors`.
    """
    if counts is None:
        if hidden_vectors is None:
            raise PipelineError("pooling_report needs hidden vectors or assignment counts")
        counts = pooling_counts(pooling, hidden_vectors)
    counts = np.asarray(counts)
    order = sorted(range(pooling.K), key=lambda k: (-counts[k], k))
    report = []
    for k in order:
        w = pooling.centroids[k]
        filters = sorted(range(len(w)), key=lambda q: (-w[q], q))[:top]
        report.append({"centroid": k, "count": int(counts[k]), "filters": filters,
                       "weights": [float(w[q]) for q in filters]})
    return report


def pool_responses(hiddens, pooling: Codebook):
    return np.asarray(hiddens) @ pooling.centroids.T


@dataclass
class FeatureExtractor:
    """Everything needed to turn a video into descriptors."""

    model: object
    whitening: object
    cfg: DescriptorConfig
    pca: Optional[PCAProjection] = None
    pooling: Optional[Codebook] = None

    def __post_init__(self):
        if getattr(self.model, "mode", "sequence") != "sequence":
            raise PipelineError("descriptor extraction needs a sequence-mode model")
        n_pix = int(np.prod(self.cfg.sub_dims))
        want = self.whitening.input_dims if self.whitening is not None else self.model.input_dims
        if want != n_pix:
            raise PipelineError(f"sub blocks have {n_pix} pixels but the model/whitening expects {want}")
        if self.whitening is not None and self.whitening.retained_dims != self.model.input_dims:
            raise PipelineError("whitening output does not match model input dims")

    def superblocks(self, video):
        return dense_superblocks(video, self.cfg)

    def subblock_codes(self, video):
        """Encoded sub blocks of every super block: ``(n_super, n_sub, code_len)``."""
        video = np.asarray(video)
        if video.ndim != 3:
            raise PipelineError("video must be (T, H, W)")
        if any(v < s for v, s in zip(video.shape, self.cfg.super_dims)):
            raise PipelineError(f"video {video.shape} smaller than one super block {self.cfg.super_dims}")
        sup = np.array(grid_offsets(video.shape, self.cfg.super_dims, self.cfg.super_strides))
        sub = np.array(self.cfg.sub_offsets)
        starts = (sup[:, None, :] + sub[None, :, :]).reshape(-1, 3)
        windows = np.lib.stride_tricks.sliding_window_view(video, self.cfg.sub_dims)
        blocks = windows[starts[:, 0], starts[:, 1], starts[:, 2]].reshape(len(starts), -1)
        return self.encode_flat(blocks).reshape(len(sup), len(sub), -1)

    def encode_flat(self, blocks):
        dtype = np.float64 if self.model_dtype == np.float64 else np.float32
        X = np.asarray(blocks, dtype=dtype)
        if self.whitening is not None:
            X = self.whitening.apply(X, dtype)
        codes = np.asarray(self.model.hiddens(X), dtype=np.float64)
        if self.pooling is not None:
            codes = pool_responses(codes, self.pooling)
        return codes

    @property
    def model_dtype(self):
        return next(iter(self.model.weights().values())).dtype

    def raw_descriptors(self, video):
        codes = self.subblock_codes(video)
        return codes.reshape(codes.shape[0], -1)

    def descriptors(self, video):
        if self.pca is None:
            raise PipelineError("descriptor PCA has not been fitted (run fit_descriptor_pca first)")
        return self.pca.project(self.raw_descriptors(video))


def dense_superblocks(video, cfg: DescriptorConfig):
    from .data import crop_array

    video = np.asarray(video)
    if video.ndim != 3 or any(v < s for v, s in zip(video.shape, cfg.super_dims)):
        raise PipelineError(f"video {video.shape} smaller than one super block {cfg.super_dims}")
    return list(crop_array(video, cfg.super_dims, cfg.super_strides))


def extract_descriptor(extractor: FeatureExtractor, super_block):
    """Local descriptor of one super block (PCA-reduced concatenated sub-block codes)."""
    super_block = np.asarray(super_block)
    if tuple(super_block.shape) != extractor.cfg.super_dims:
        raise PipelineError(f"super block must be {extractor.cfg.super_dims}, got {super_block.shape}")
    if extractor.pca is None:
        raise PipelineError("descriptor PCA has not been fitted (run fit_descriptor_pca first)")
    return extractor.descriptors(super_block)[0]


@dataclass
class Histogram:
    weights: np.ndarray
    empty: bool = False

    @property
    def K(self):
        return self.weights.shape[0]


def histogram_from_words(words, K):
    words = np.asarray(words, dtype=np.int64)
    counts = np.bincount(words, minlength=K).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return Histogram(counts, empty=True)
    return Histogram(counts / total)


def histogram(video, extractor: FeatureExtractor, codebook: Codebook):
    if codebook is None:
        raise PipelineError("no codebook: build a vocabulary before computing histograms")
    return histogram_from_words(codebook.assign(extractor.descriptors(video)), codebook.K)


def _hist(a):
    return a.weights if isinstance(a, Histogram) else np.asarray(a, dtype=np.float64)


def chi2_distance(a, b, epsilon=1e-10):
    a, b = _hist(a), _hist(b)
    if a.shape != b.shape:
        raise PipelineError(f"histogram length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(0.5 * np.sum((a - b) ** 2 / (a + b + epsilon)))


def mean_pairwise_distance(D):
    n = D.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, k=1)
    return float(D[iu].mean())


def chi2_kernel(a, b, gamma, epsilon=1e-10):
    return math.exp(-chi2_distance(a, b, epsilon) / gamma)


def chi2_distance_matrix(A, B=None, epsilon=1e-10):
    A = np.asarray([_hist(a) for a in A]) if not isinstance(A, np.ndarray) else A
    if B is None:
        D = kernels.chi2_matrix(A, A, epsilon)
        return (D + D.T) / 2.0  # exact symmetry
    B = np.asarray([_hist(b) for b in B]) if not isinstance(B, np.ndarray) else B
    return kernels.chi2_matrix(A, B, epsilon)


def chi2_kernel_matrix(A, B=None, gamma=None, epsilon=1e-10):
    """``exp(-D / gamma)``; gamma defaults to the mean pairwise distance over `A`."""
    DA = chi2_distance_matrix(A, None, epsilon)
    if gamma is None or gamma <= 0:
        gamma = mean_pairwise_distance(DA)
        gamma = gamma if gamma > 0 else 1.0
    D = DA if B is None else chi2_distance_matrix(B, A, epsilon)
    K = np.exp(-D / gamma)
    if B is None:
        np.fill_diagonal(K, 1.0)
    return K, gamma


def _vote(dists, labels, k):
    order = np.argsort(dists, kind="stable")[:k]
    near_labels = labels[order]
    near_d = dists[order]
    best = None
    for lab in np.unique(near_labels):
        mask = near_labels == lab
        key = (-int(mask.sum()), float(near_d[mask].mean()), int(lab))
        if best is None or key < best:
            best = key
    return best[2]


def knn_classify(train, test, k=5, epsilon=1e-10):
    """Majority vote of the `k` chi-squared-nearest training histograms.

    `train` is a sequence of ``(histogram, label)``. Vote ties go to the
    smallest mean distance, then the lowest label.
    """
    if len(train) == 0:
        raise PipelineError("empty training set")
    if k < 1 or k > len(train):
        raise PipelineError(f"k={k} must be in [1, {len(train)}]")
    H = np.asarray([_hist(h) for h, _ in train])
    labels = np.asarray([lab for _, lab in train], dtype=np.int64)
    d = kernels.chi2_matrix(_hist(test)[None], H, epsilon)[0]
    return _vote(d, labels, k)


def knn_predict(D, train_labels, k, exclude_self=False):
    """Predict every row of a (test x train) distance matrix."""
    labels = np.asarray(train_labels, dtype=np.int64)
    preds = np.empty(D.shape[0], dtype=np.int64)
    for i, row in enumerate(D):
        if exclude_self:
            keep = np.arange(len(row)) != i
            preds[i] = _vote(row[keep], labels[keep], k)
        else:
            preds[i] = _vote(row, labels, k)
    return preds


@dataclass
class EvalReport:
    accuracy: float
    classes: np.ndarray
    confusion: np.ndarray  # rows: true, cols: predicted
    true: np.ndarray
    predicted: np.ndarray


def evaluate(train_hists, train_labels, test_hists=None, test_labels=None, k=5, loo=False,
             epsilon=1e-10):
    """Chi-squared k-NN accuracy on a fixed split, or leave-one-out over the training set."""
    train_hists = np.asarray([_hist(h) for h in train_hists])
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if len(np.unique(train_labels)) < 2:
        raise PipelineError("evaluation needs at least two classes")
    if loo:
        if k > len(train_labels) - 1:
            raise PipelineError("k too large for leave-one-out")
        D = chi2_distance_matrix(train_hists, None, epsilon)
        true = train_labels
        pred = knn_predict(D, train_labels, k, exclude_self=True)
    else:
        test_hists = np.asarray([_hist(h) for h in test_hists])
        true = np.asarray(test_labels, dtype=np.int64)
        missing = sorted(set(true.tolist()) - set(train_labels.tolist()))
        if missing:
            raise PipelineError(f"classes {missing} are absent from the training split")
        if k > len(train_labels):
            raise PipelineError(f"k={k} exceeds training size {len(train_labels)}")
        D = chi2_distance_matrix(test_hists, train_hists, epsilon)
        pred = knn_predict(D, train_labels, k)
    classes = np.unique(np.concatenate([train_labels, true]))
    pos = {c: i for i, c in enumerate(classes.tolist())}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(true, pred):
        conf[pos[int(t)], pos[int(p)]] += 1
    return EvalReport(float(np.mean(true == pred)), classes, conf, true, pred)


def write_predictions_csv(path, ids, report: EvalReport):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["video_id", "true_label", "predicted_label"])
        for vid, t, p in zip(ids, report.true, report.predicted):
            w.writerow([vid, int(t), int(p)])


def write_confusion_csv(path, report: EvalReport):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted"] + [str(int(c)) for c in report.classes])
        for c, row in zip(report.classes, report.confusion):
            w.writerow([str(int(c))] + [str(int(v)) for v in row])


# -- end-to-end helpers ------------------------------------------------------

def fit_extractor(model, whitening, cfg: DescriptorConfig, videos, pooling=None, sample_limit=None,
                  seed=0):
    """Fit the descriptor PCA on raw descriptors pooled from `videos`."""
    ext = FeatureExtractor(model, whitening, cfg, pooling=pooling)
    raw = np.concatenate([ext.raw_descriptors(v) for v in videos])
    if sample_limit and raw.shape[0] > sample_limit:
        raw = raw[np.random.default_rng(seed).choice(raw.shape[0], sample_limit, replace=False)]
    ext.pca = fit_descriptor_pca(raw, cfg.descriptor_pca_dims)
    return ext


def video_histograms(extractor, codebook, videos):
    return np.asarray([histogram(v, extractor, codebook).weights for v in videos])
