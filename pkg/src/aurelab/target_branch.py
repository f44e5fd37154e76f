"""Expression classification branch.

A small trainable backbone MLP stands in for a pretrained feature extractor.
On top of it sit a per-sample confidence head (a one-unit sigmoid attention
layer), per-batch class-balance weights, the confidence- and class-weighted
softmax cross-entropy, and the hinge that keeps the mean confidence of the
high group above the low group by a margin.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError


class TargetBranch:
    """Backbone (dim -> hidden -> feat), confidence head, class logits."""

    def __init__(self, in_dim: int, hidden_dim: int, feat_dim: int,
                 n_classes: int, leaky_slope: float = 0.01,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.in_dim = in_dim
        self.feat_dim = feat_dim
        self.n_classes = n_classes
        self.leaky_slope = leaky_slope
        self.layer1_w = ad.parameter(
            rng.standard_normal((in_dim, hidden_dim)) * np.sqrt(2.0 / in_dim),
            "target.layer1_w")
        self.layer1_b = ad.parameter(np.zeros((1, hidden_dim)), "target.layer1_b")
        self.layer2_w = ad.parameter(
            rng.standard_normal((hidden_dim, feat_dim)) * np.sqrt(1.0 / hidden_dim),
            "target.layer2_w")
        self.layer2_b = ad.parameter(np.zeros((1, feat_dim)), "target.layer2_b")
        self.confidence_w = ad.parameter(
            rng.standard_normal((feat_dim, 1)) * 0.01, "target.confidence_w")
        self.classifier_w = ad.parameter(
            rng.standard_normal((feat_dim, n_classes)) * np.sqrt(1.0 / feat_dim),
            "target.classifier_w")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.layer1_w, self.layer1_b, self.layer2_w,
                                    self.layer2_b, self.confidence_w,
                                    self.classifier_w)}

    def features(self, inputs: Tensor) -> Tensor:
        """N x feat_dim features; input must be N x in_dim."""
        h = ad.leaky_relu(ad.add_row(ad.matmul(inputs, self.layer1_w),
                                     self.layer1_b), self.leaky_slope)
        return ad.add_row(ad.matmul(h, self.layer2_w), self.layer2_b)

    def confidence(self, features: Tensor) -> Tensor:
        """Per-sample confidence in (0, 1): sigmoid of a learned projection."""
        return ad.sigmoid(ad.matmul(features, self.confidence_w))

    def logits(self, features: Tensor) -> Tensor:
        return ad.matmul(features, self.classifier_w)


def class_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-class weights 1 - count/N over a batch; absent classes get 1."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("class_weights needs a non-empty batch")
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    return 1.0 - counts / labels.size


def weighted_cross_entropy(features: Tensor, classifier_w: Tensor,
                           confidence: Tensor, class_wts: np.ndarray,
                           labels: np.ndarray) -> Tensor:
    """Softmax cross-entropy with every logit of sample i scaled by
    confidence_i * class_wts[label_i].

    The scale multiplies all class logits of the row (numerator and
    denominator alike), so it acts as a per-sample temperature: it never
    changes the argmax, only how sharply the row is penalized.
    """
    labels = np.asarray(labels)
    n = features.rows
    n_cls = classifier_w.cols
    if labels.size != n:
        raise ConfigError(f"{labels.size} labels for {n} samples")
    if labels.size and (labels.min() < 0 or labels.max() >= n_cls):
        bad = labels[(labels < 0) | (labels >= n_cls)][0]
        raise IndexError(f"label {bad} out of range [0, {n_cls})")
    sel = ad.constant(np.asarray(class_wts, dtype=np.float64)[labels].reshape(n, 1))
    scales = ad.mul(confidence, sel)
    scaled = ad.scale_rows(ad.matmul(features, classifier_w), scales)
    logp = ad.log_softmax_row(scaled)
    onehot = np.zeros((n, n_cls))
    onehot[np.arange(n), labels] = 1.0
    picked = ad.row_sum(ad.mul(logp, ad.constant(onehot)))
    return ad.scale(ad.total_sum(picked), -1.0 / n)


@dataclass
class RankSplit:
    """Hinge loss plus the batch's high/low confidence partition."""
    loss: Tensor
    high_indices: np.ndarray   # positions within the batch, sorted rank order
    low_indices: np.ndarray
    avg_high: float
    avg_low: float


def rank_regularization(confidence: Tensor, sample_ids: np.ndarray,
                        high_fraction: float, margin: float) -> RankSplit:
    """Split the batch into high/low confidence groups and penalize a mean
    gap smaller than ``margin``.

    Samples are ranked by confidence descending (ties broken by ascending
    sample id); the top round(high_fraction * N) form the high group, clamped
    so both groups stay non-empty.  Loss is max(0, margin - (avg_high -
    avg_low)), differentiable through both means.
    """
    if not 0.0 < high_fraction < 1.0:
        raise ConfigError(f"high_fraction must lie in (0, 1), got {high_fraction}")
    if margin < 0.0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    n = confidence.rows
    if n < 2:
        warnings.warn("rank regularization skipped: batch has fewer than 2 samples")
        return RankSplit(ad.scalar(0.0), np.arange(n), np.arange(0),
                         float(confidence.data.mean()) if n else 0.0, 0.0)
    values = confidence.data[:, 0]
    order = np.lexsort((np.asarray(sample_ids), -values))
    k = int(round(high_fraction * n))
    k = min(max(k, 1), n - 1)
    high, low = order[:k], order[k:]

    mask_h = np.zeros((1, n))
    mask_h[0, high] = 1.0 / k
    mask_l = np.zeros((1, n))
    mask_l[0, low] = 1.0 / (n - k)
    avg_h = ad.matmul(ad.constant(mask_h), confidence)
    avg_l = ad.matmul(ad.constant(mask_l), confidence)
    loss = ad.relu(ad.sub(ad.scalar(margin), ad.sub(avg_h, avg_l)))
    return RankSplit(loss, high, low, avg_h.item(), avg_l.item())
