"""The unlearning loss suite.

Forget side: pseudo-label cross-entropy, teacher-alignment cosine penalty,
and a margin contrastive term repelling forget features from both their
teacher embedding and the nearest retain centroid. Retain side: cosine
alignment, squared-distance feature matching, and a temperature-scaled
KL term over the feature dimensions.

Every term has a ``*_grad`` companion returning the analytic gradients
used by the training engine; tests check them against central finite
differences in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass
class LossWeights:
    """Per-term weights; zeroing a weight disables that term (ablations)."""

    pseudo_label: float = 1.0
    cosine_forget: float = 1.0
    contrastive: float = 1.0
    cosine_retain: float = 1.0
    feature_match: float = 1.0
    feature_distribution: float = 10.0

    def __post_init__(self):
        for name, value in self.as_dict().items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")

    def as_dict(self):
        return {
            "pseudo_label": self.pseudo_label,
            "cosine_forget": self.cosine_forget,
            "contrastive": self.contrastive,
            "cosine_retain": self.cosine_retain,
            "feature_match": self.feature_match,
            "feature_distribution": self.feature_distribution,
        }

    def all_zero(self):
        return all(v == 0.0 for v in self.as_dict().values())


@dataclass
class MarginSpec:
    """Margins and temperatures used across the loss suite."""

    margin: float = 0.3  # contrastive similarity margin
    temperature: float = 0.5  # softmax temperature (pseudo-label + KL terms)
    arc_margin: float = 0.2  # angular margin for supervised embedding training
    scale: float = 16.0  # logit scale for supervised embedding training

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 <= self.margin <= 1.0:
            raise ConfigError("contrastive margin must be in [0, 1]")
        if not 0.0 <= self.arc_margin < math.pi / 2:
            raise ConfigError("angular margin must be in [0, pi/2)")
        if self.scale <= 0:
            raise ConfigError("logit scale must be positive")


@dataclass
class LossBreakdown:
    """One value per term plus the weighted totals of a training step."""

    pseudo_label: float = 0.0
    cosine_forget: float = 0.0
    contrastive: float = 0.0
    cosine_retain: float = 0.0
    feature_match: float = 0.0
    feature_distribution: float = 0.0
    forget_total: float = 0.0
    retain_total: float = 0.0
    grand_total: float = 0.0

    FIELDS = (
        "pseudo_label", "cosine_forget", "contrastive",
        "cosine_retain", "feature_match", "feature_distribution",
        "forget_total", "retain_total", "grand_total",
    )

    def as_row(self):
        return [getattr(self, f) for f in self.FIELDS]


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_paired(a, b):
    if a.shape != b.shape:
        raise ValueError(f"paired embeddings must match in shape: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- forget side


def pseudo_label_loss_grad(student_emb, head, targets, temperature):
    """Temperature-scaled cross-entropy toward the farthest-cluster targets.

    Returns (loss, g_embeddings, g_head_weight, g_head_bias).
    """
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    e = np.asarray(student_emb, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n_clusters = head.n_clusters
    if targets.min() < 0 or targets.max() >= n_clusters:
        raise ValueError("pseudo-label targets outside [0, n_clusters)")
    b = e.shape[0]
    logits = (e @ head.weight + head.bias) / temperature
    logp = _log_softmax(logits)
    loss = -logp[np.arange(b), targets].mean()
    g_logits = np.exp(logp)
    g_logits[np.arange(b), targets] -= 1.0
    g_logits /= b * temperature
    g_e = g_logits @ head.weight.T
    g_w = e.T @ g_logits
    g_b = g_logits.sum(axis=0)
    return float(loss), g_e, g_w, g_b


def pseudo_label_loss(student_emb, head, targets, temperature):
    return pseudo_label_loss_grad(student_emb, head, targets, temperature)[0]


def cosine_forget_loss_grad(student_emb, teacher_emb):
    """Mean student/teacher dot product on forget pairs (to be minimized)."""
    e = np.asarray(student_emb, dtype=np.float64)
    t = np.asarray(teacher_emb, dtype=np.float64)
    _check_paired(e, t)
    loss = float(np.einsum("ij,ij->i", e, t).mean())
    return loss, t / e.shape[0]


def cosine_forget_loss(student_emb, teacher_emb):
    return cosine_forget_loss_grad(student_emb, teacher_emb)[0]


def contrastive_forget_loss_grad(student_emb, teacher_emb, retain_centroids,
                                 anchor_indices, margin):
    """Hinge penalty on similarity to the teacher embedding and to the
    nearest retain centroid; zero once both similarities are under the margin."""
    if not 0.0 <= margin <= 1.0:
        raise ConfigError("contrastive margin must be in [0, 1]")
    e = np.asarray(student_emb, dtype=np.float64)
    t = np.asarray(teacher_emb, dtype=np.float64)
    _check_paired(e, t)
    centroids = getattr(retain_centroids, "centroids", retain_centroids)
    centroids = np.asarray(centroids, dtype=np.float64)
    idx = np.asarray(anchor_indices, dtype=np.int64)
    if idx.shape[0] != e.shape[0]:
        raise ValueError("one retain-centroid index is required per sample")
    if idx.min() < 0 or idx.max() >= centroids.shape[0]:
        raise ValueError("missing retain-centroid assignment for a sample")
    b = e.shape[0]
    anchors = centroids[idx]
    sim_teacher = np.einsum("ij,ij->i", e, t)
    sim_anchor = np.einsum("ij,ij->i", e, anchors)
    loss = np.maximum(sim_teacher - margin, 0.0) + np.maximum(sim_anchor - margin, 0.0)
    g_e = (
        (sim_teacher > margin)[:, None] * t
        + (sim_anchor > margin)[:, None] * anchors
    ) / b
    return float(loss.mean()), g_e


def contrastive_forget_loss(student_emb, teacher_emb, retain_centroids,
                            anchor_indices, margin):
    return contrastive_forget_loss_grad(
        student_emb, teacher_emb, retain_centroids, anchor_indices, margin
    )[0]


# ---------------------------------------------------------------- retain side


def cosine_retain_loss_grad(student_emb, teacher_emb):
    """Negative mean dot product on retain pairs (alignment is maximized)."""
    loss, g = cosine_forget_loss_grad(student_emb, teacher_emb)
    return -loss, -g


def cosine_retain_loss(student_emb, teacher_emb):
    return cosine_retain_loss_grad(student_emb, teacher_emb)[0]


def feature_matching_loss_grad(student_emb, teacher_emb):
    """Mean squared Euclidean distance between paired embeddings."""
    e = np.asarray(student_emb, dtype=np.float64)
    t = np.asarray(teacher_emb, dtype=np.float64)
    _check_paired(e, t)
    diff = e - t
    loss = float(np.einsum("ij,ij->i", diff, diff).mean())
    return loss, 2.0 * diff / e.shape[0]


def feature_matching_loss(student_emb, teacher_emb):
    return feature_matching_loss_grad(student_emb, teacher_emb)[0]


def feature_distribution_loss_grad(student_emb, teacher_emb, temperature):
    """T^2-scaled KL(student || teacher) between softmaxes taken over the
    feature dimensions of each embedding."""
    if temperature <= 0:
        raise ConfigError("temperature must be positive")
    e = np.asarray(student_emb, dtype=np.float64)
    t = np.asarray(teacher_emb, dtype=np.float64)
    _check_paired(e, t)
    b = e.shape[0]
    logp = _log_softmax(e / temperature)
    logq = _log_softmax(t / temperature)
    p = np.exp(logp)
    per_sample_kl = np.einsum("ij,ij->i", p, logp - logq)
    loss = float(temperature**2 * per_sample_kl.mean())
    g_e = (temperature / b) * p * ((logp - logq) - per_sample_kl[:, None])
    return loss, g_e


def feature_distribution_loss(student_emb, teacher_emb, temperature):
    return feature_distribution_loss_grad(student_emb, teacher_emb, temperature)[0]


# ---------------------------------------------------------------- aggregation


def forget_loss_total(pseudo_label, cosine_forget, contrastive, weights: LossWeights):
    return (
        weights.pseudo_label * pseudo_label
        + weights.cosine_forget * cosine_forget
        + weights.contrastive * contrastive
    )


def retain_loss_total(cosine_retain, feature_match, feature_distribution,
                      weights: LossWeights):
    return (
        weights.cosine_retain * cosine_retain
        + weights.feature_match * feature_match
        + weights.feature_distribution * feature_distribution
    )


def grand_total(pseudo_label, cosine_forget, contrastive, cosine_retain,
                feature_match, feature_distribution, weights: LossWeights):
    """Weighted totals packed into a LossBreakdown (invariants hold exactly)."""
    forget = forget_loss_total(pseudo_label, cosine_forget, contrastive, weights)
    retain = retain_loss_total(cosine_retain, feature_match, feature_distribution, weights)
    return LossBreakdown(
        pseudo_label=pseudo_label,
        cosine_forget=cosine_forget,
        contrastive=contrastive,
        cosine_retain=cosine_retain,
        feature_match=feature_match,
        feature_distribution=feature_distribution,
        forget_total=forget,
        retain_total=retain,
        grand_total=forget + retain,
    )


# ------------------------------------------------- supervised teacher loss


def angular_margin_loss_grad(embeddings, labels, class_weights, arc_margin, scale):
    """Additive angular-margin softmax (ArcFace-style) for teacher training.

    Class weight columns are normalized internally; the true-class angle
    gets +arc_margin, with the standard monotonic fallback (cos(theta) -
    m*sin(m)) once theta + m would pass pi. Returns (loss, g_embeddings,
    g_class_weights).
    """
    if scale <= 0:
        raise ConfigError("logit scale must be positive")
    if not 0.0 <= arc_margin < math.pi / 2:
        raise ConfigError("angular margin must be in [0, pi/2)")
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)
    b, n_classes = e.shape[0], w.shape[1]
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels outside the class range")

    col_norm = np.sqrt((w * w).sum(axis=0))
    u = w / col_norm[None, :]
    cos = e @ u  # (b, n_classes)

    rows = np.arange(b)
    cos_y = cos[rows, y]
    sin_y = np.sqrt(np.clip(1.0 - cos_y**2, 0.0, None) + 1e-16)
    cos_m, sin_m = math.cos(arc_margin), math.sin(arc_margin)
    in_range = cos_y > math.cos(math.pi - arc_margin)
    phi = np.where(
        in_range,
        cos_y * cos_m - sin_y * sin_m,
        cos_y - arc_margin * sin_m,
    )

    logits = scale * cos
    logits[rows, y] = scale * phi
    logp = _log_softmax(logits)
    loss = float(-logp[rows, y].mean())

    g_logits = np.exp(logp)
    g_logits[rows, y] -= 1.0
    g_logits /= b
    # chain through the margin on the true-class entries
    dphi = np.where(in_range, cos_m + cos_y / sin_y * sin_m, 1.0)
    g_cos = scale * g_logits
    g_cos[rows, y] *= dphi
    g_e = g_cos @ u.T
    g_u = e.T @ g_cos
    # backprop the column normalization of the class weights
    radial = (g_u * u).sum(axis=0)
    g_w = (g_u - u * radial[None, :]) / col_norm[None, :]
    return loss, g_e, g_w


def angular_margin_loss(embeddings, labels, class_weights, arc_margin, scale):
    return angular_margin_loss_grad(embeddings, labels, class_weights, arc_margin, scale)[0]
