"""Training engines: supervised teacher training, the centroid-guided
unlearning loop, and the comparison procedures (negative-gradient ascent,
random-teacher distillation, and the retrain-from-scratch oracle).

The unlearning loop never reads identity labels; it sees only sample
inputs and the forget/retain partition. Anything label-dependent
(per-epoch accuracy logging) happens through an optional eval hook.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .clustering import (
    assign_clusters,
    farthest_cluster_mapping,
    gmm_fit,
    kmeans_fit,
    recompute_forget_clusters,
)
from .errors import ConfigError, DivergenceError
from .losses import LossBreakdown, LossWeights
from .model import ClassifierHead, FeatureExtractor, ModelSnapshot, freeze_early_layers

DIVERGENCE_CAP = 1e3


@dataclass
class TeacherConfig:
    """Recipe for supervised angular-margin training of the extractor."""

    input_dim: int = 32
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    epochs: int = 40
    learning_rate: float = 0.05
    batch_size: int = 32
    scale: float = 16.0  # logit scale
    arc_margin: float = 0.2
    momentum: float = 0.9
    weight_decay: float = 5e-4
    min_accuracy: float = 0.9
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("teacher epochs and batch size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("teacher learning rate must be positive")
        losses.MarginSpec(temperature=1.0, arc_margin=self.arc_margin, scale=self.scale)

    def layer_sizes(self):
        return [self.input_dim, *self.hidden, self.embed_dim]


@dataclass
class UnlearnConfig:
    """Hyperparameters of the unlearning loop."""

    clusters: int = 8  # pseudo-label cluster count
    margin: float = 0.3  # contrastive similarity margin
    temperature: float = 0.5
    cluster_interval: int = 5  # epochs between forget-cluster refits
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    freeze_fraction: float = 0.5
    seed: int = 0
    pseudo_label_space: str = "student"  # teacher | student
    clustering_backend: str = "kmeans"  # kmeans | gmm
    optimizer: str = "sgd_momentum"  # sgd_momentum | adaptive
    momentum: float = 0.9
    weight_decay: float = 5e-4
    reinit_head_on_recluster: bool = True

    def validate(self):
        if self.cluster_interval < 1:
            raise ConfigError("cluster_interval must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.clusters < 1:
            raise ConfigError("clusters must be >= 1")
        if self.pseudo_label_space not in ("teacher", "student"):
            raise ConfigError("pseudo_label_space must be teacher or student")
        if self.clustering_backend not in ("kmeans", "gmm"):
            raise ConfigError("clustering_backend must be kmeans or gmm")
        if self.optimizer not in ("sgd_momentum", "adaptive"):
            raise ConfigError("optimizer must be sgd_momentum or adaptive")
        losses.MarginSpec(margin=self.margin, temperature=self.temperature)


@dataclass
class TrainState:
    """Mutable state threaded through the unlearning loop."""

    epoch: int
    student: ModelSnapshot
    head: ClassifierHead
    forget_clusters: object
    retain_clusters: object
    mapping: np.ndarray
    rng: np.random.Generator


@dataclass
class UnlearnResult:
    student: ModelSnapshot
    head: ClassifierHead | None
    epoch_records: list
    step_records: list
    recompute_count: int


class _SGDMomentum:
    def __init__(self, n_slots, momentum, weight_decay):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [None] * n_slots

    def reset_slot(self, i):
        self.velocity[i] = None

    def step(self, params, grads, trainable, lr):
        for i, (p, g) in enumerate(zip(params, grads)):
            if not trainable[i]:
                continue
            g = g + self.weight_decay * p
            v = self.velocity[i]
            v = g if v is None else self.momentum * v + g
            self.velocity[i] = v
            p -= lr * v


class _Adam:
    def __init__(self, n_slots, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [None] * n_slots
        self.v = [None] * n_slots
        self.t = [0] * n_slots

    def reset_slot(self, i):
        self.m[i] = None
        self.v[i] = None
        self.t[i] = 0

    def step(self, params, grads, trainable, lr):
        for i, (p, g) in enumerate(zip(params, grads)):
            if not trainable[i]:
                continue
            g = g + self.weight_decay * p
            if self.m[i] is None:
                self.m[i] = np.zeros_like(p)
                self.v[i] = np.zeros_like(p)
            self.t[i] += 1
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1 ** self.t[i])
            vhat = self.v[i] / (1 - self.beta2 ** self.t[i])
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(kind, n_slots, momentum, weight_decay):
    if kind == "adaptive":
        return _Adam(n_slots, weight_decay)
    return _SGDMomentum(n_slots, momentum, weight_decay)


def _extractor_slots(ext: FeatureExtractor):
    """Flat (params, trainable) view of the extractor honoring frozen groups."""
    params, trainable = [], []
    for i in range(ext.n_groups):
        params += [ext.weights[i], ext.biases[i]]
        trainable += [not ext.frozen[i]] * 2
    return params, trainable


def _decay_lr(base, epoch, milestones, gamma=0.1):
    """Step schedule: multiply by gamma after each milestone epoch."""
    k = sum(1 for m in milestones if m > 0 and epoch > m)
    return base * gamma**k


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


class _CyclingSampler:
    """Endless shuffled index stream over a finite set (forget loader)."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k):
        out = []
        while len(out) < k:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(self.order[self.pos])
            self.pos += 1
        return np.array(out)


# ------------------------------------------------------------- teacher


def train_teacher(train_samples, config: TeacherConfig) -> ModelSnapshot:
    """Supervised angular-margin training; returns a sealed teacher snapshot.

    Raises DivergenceError with a diagnostic when the final train-set
    accuracy (nearest-class-prototype) misses config.min_accuracy.
    """
    config.validate()
    identities = sorted({s.identity for s in train_samples})
    if len(identities) < 2:
        raise ConfigError("teacher training needs at least 2 identities")
    class_index = {c: i for i, c in enumerate(identities)}
    x = np.stack([s.input for s in train_samples])
    y = np.array([class_index[s.identity] for s in train_samples])

    rng = np.random.default_rng(config.seed)
    ext = FeatureExtractor(config.layer_sizes(), seed=config.seed)
    class_w = rng.normal(0.0, 0.1, size=(config.embed_dim, len(identities)))

    params, trainable = _extractor_slots(ext)
    params.append(class_w)
    trainable.append(True)
    opt = _SGDMomentum(len(params), config.momentum, config.weight_decay)
    milestones = (
        max(1, math.floor(config.epochs * 0.5)),
        max(1, math.floor(config.epochs * 0.75)),
    )

    n = len(train_samples)
    for epoch in range(1, config.epochs + 1):
        lr = _decay_lr(config.learning_rate, epoch, milestones)
        for idx in _batches(n, config.batch_size, rng):
            emb, cache = ext.forward(x[idx])
            _, g_e, g_w = losses.angular_margin_loss_grad(
                emb, y[idx], class_w, config.arc_margin, config.scale
            )
            grads = [g for pair in ext.backward(g_e, cache) for g in pair]
            grads.append(g_w)
            opt.step(params, grads, trainable, lr)

    snapshot = ModelSnapshot(extractor=ext, role="teacher")
    from .metrics import build_prototypes, prototype_accuracy

    accuracy = prototype_accuracy(
        snapshot, train_samples, build_prototypes(snapshot, train_samples)
    )
    if accuracy < config.min_accuracy:
        raise DivergenceError(
            f"teacher failed to converge: train accuracy {accuracy:.4f} "
            f"< required {config.min_accuracy:.4f} after {config.epochs} epochs"
        )
    return snapshot.seal()


def retrain_oracle(split, config: TeacherConfig) -> ModelSnapshot:
    """Exact-unlearning gold standard: the teacher recipe on the retain set only."""
    if not split.retain:
        raise ConfigError("retrain oracle needs a non-empty retain set")
    return train_teacher(split.retain, config)


# ------------------------------------------------------------- shared loop


def _unlearn_loop(teacher: ModelSnapshot, split, config: UnlearnConfig,
                  setup, step_fn, eval_hook=None):
    """Common scaffolding for unlearning-style runs.

    ``setup(state, ctx)`` may add method-specific context; ``step_fn``
    receives (state, ctx, f_idx, r_idx, caches...) and must return
    (record_dict, g_emb_forget, g_emb_retain, head_grads|None).
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    student = freeze_early_layers(teacher.spawn_student(), config.freeze_fraction)
    ext = student.extractor

    x_f = np.stack([s.input for s in split.forget])
    x_r = np.stack([s.input for s in split.retain])
    t_f = teacher.extractor.embed(x_f)
    t_r = teacher.extractor.embed(x_r)

    head = ClassifierHead.init(ext.embed_dim, config.clusters, rng)
    state = TrainState(
        epoch=0, student=student, head=head,
        forget_clusters=None, retain_clusters=None,
        mapping=None, rng=rng,
    )
    ctx = {"x_f": x_f, "x_r": x_r, "t_f": t_f, "t_r": t_r}
    setup(state, ctx)

    params, trainable = _extractor_slots(ext)
    head_slot = len(params)
    params += [state.head.weight, state.head.bias]
    trainable += [True, True]
    opt = _make_optimizer(config.optimizer, len(params), config.momentum,
                          config.weight_decay)
    milestones = (config.epochs // 10, config.epochs // 5)

    epoch_records, step_records = [], []
    recompute_count = 0
    if config.epochs == 0 or config.weights.all_zero():
        # nothing can move the student; skip the loop entirely
        return UnlearnResult(student, state.head, epoch_records, step_records, 0)

    forget_sampler = _CyclingSampler(len(split.forget), rng)
    steps_per_epoch = math.ceil(len(split.retain) / config.batch_size)
    retain_frozen = (
        None if state.retain_clusters is None else state.retain_clusters.centroids.copy()
    )

    for epoch in range(1, config.epochs + 1):
        state.epoch = epoch
        lr = _decay_lr(config.learning_rate, epoch, milestones)
        sums = {}
        for step, r_idx in enumerate(_batches(len(split.retain), config.batch_size, rng)):
            f_idx = forget_sampler.take(min(config.batch_size, len(split.forget)))
            record, g_e_f, g_e_r, head_grads = step_fn(state, ctx, f_idx, r_idx)

            grads = [np.zeros_like(p) for p in params]
            if g_e_f is not None:
                e_grads = ext.backward(g_e_f, ctx["cache_f"])
                for i, (gw, gb) in enumerate(e_grads):
                    grads[2 * i] += gw
                    grads[2 * i + 1] += gb
            if g_e_r is not None:
                e_grads = ext.backward(g_e_r, ctx["cache_r"])
                for i, (gw, gb) in enumerate(e_grads):
                    grads[2 * i] += gw
                    grads[2 * i + 1] += gb
            if head_grads is not None:
                grads[head_slot] += head_grads[0]
                grads[head_slot + 1] += head_grads[1]
            opt.step(params, grads, trainable, lr)

            step_records.append({"epoch": epoch, "step": step, **record})
            for key, value in record.items():
                sums[key] = sums.get(key, 0.0) + value

        epoch_record = {
            "epoch": epoch,
            "lr": lr,
            **{k: v / steps_per_epoch for k, v in sums.items()},
        }

        if epoch % config.cluster_interval == 0 and state.forget_clusters is not None:
            if retain_frozen is not None and not np.array_equal(
                retain_frozen, state.retain_clusters.centroids
            ):
                raise AssertionError("retain centroids mutated during the run")
            recompute_count += 1
            state.forget_clusters, state.mapping = recompute_forget_clusters(
                student, split.forget, config.clusters,
                seed=config.seed + 1_000_003 * recompute_count,
                backend=config.clustering_backend,
            )
            if config.reinit_head_on_recluster:
                # cluster identities changed meaning; start the head over
                new_head = ClassifierHead.init(ext.embed_dim, config.clusters, rng)
                state.head.weight[...] = new_head.weight
                state.head.bias[...] = new_head.bias
                opt.reset_slot(head_slot)
                opt.reset_slot(head_slot + 1)
            epoch_record["recomputed_clusters"] = 1.0

        if eval_hook is not None:
            epoch_record.update(eval_hook(epoch, student))
        epoch_records.append(epoch_record)

    return UnlearnResult(student, state.head, epoch_records, step_records,
                         recompute_count)


# ------------------------------------------------------------- CURE


def cure_unlearn(teacher: ModelSnapshot, split, config: UnlearnConfig,
                 eval_hook=None) -> UnlearnResult:
    """Centroid-guided unsupervised unlearning.

    Precomputes teacher embeddings, fits fixed retain centroids and
    initial forget centroids, then drives forget features toward their
    farthest-cluster targets while holding retain features to the
    teacher. Forget clusters (and the mapping) are refit on student
    embeddings every ``cluster_interval`` epochs.
    """
    weights = config.weights

    def setup(state, ctx):
        fit = gmm_fit if config.clustering_backend == "gmm" else kmeans_fit
        state.retain_clusters = fit(
            ctx["t_r"], config.clusters, config.seed,
            source="retain", space="teacher",
            sample_ids=[s.id for s in split.retain],
        )
        state.forget_clusters = fit(
            ctx["t_f"], config.clusters, config.seed,
            source="forget", space="teacher",
            sample_ids=[s.id for s in split.forget],
        )
        state.mapping = farthest_cluster_mapping(state.forget_clusters)
        # fixed repulsion anchors: nearest retain centroid per forget sample,
        # in teacher space
        ctx["anchors"] = assign_clusters(ctx["t_f"], state.retain_clusters)

    def step(state, ctx, f_idx, r_idx):
        ext = state.student.extractor
        e_f, cache_f = ext.forward(ctx["x_f"][f_idx])
        e_r, cache_r = ext.forward(ctx["x_r"][r_idx])
        ctx["cache_f"], ctx["cache_r"] = cache_f, cache_r
        t_f, t_r = ctx["t_f"][f_idx], ctx["t_r"][r_idx]

        if config.pseudo_label_space == "teacher" or state.forget_clusters.space == "teacher":
            assign_emb = t_f
        else:
            assign_emb = e_f
        baseline = assign_clusters(assign_emb, state.forget_clusters)
        targets = state.mapping[baseline]

        pl, g_pl, g_hw, g_hb = losses.pseudo_label_loss_grad(
            e_f, state.head, targets, config.temperature
        )
        cos_f, g_cos_f = losses.cosine_forget_loss_grad(e_f, t_f)
        con, g_con = losses.contrastive_forget_loss_grad(
            e_f, t_f, state.retain_clusters, ctx["anchors"][f_idx], config.margin
        )
        cos_r, g_cos_r = losses.cosine_retain_loss_grad(e_r, t_r)
        feat, g_feat = losses.feature_matching_loss_grad(e_r, t_r)
        fd, g_fd = losses.feature_distribution_loss_grad(e_r, t_r, config.temperature)

        breakdown = losses.grand_total(pl, cos_f, con, cos_r, feat, fd, weights)
        g_e_f = (
            weights.pseudo_label * g_pl
            + weights.cosine_forget * g_cos_f
            + weights.contrastive * g_con
        )
        g_e_r = (
            weights.cosine_retain * g_cos_r
            + weights.feature_match * g_feat
            + weights.feature_distribution * g_fd
        )
        head_grads = (weights.pseudo_label * g_hw, weights.pseudo_label * g_hb)
        record = dict(zip(LossBreakdown.FIELDS, breakdown.as_row()))
        return record, g_e_f, g_e_r, head_grads

    return _unlearn_loop(teacher, split, config, setup, step, eval_hook)


# ------------------------------------------------------------- baselines


def baseline_neggrad(teacher: ModelSnapshot, split, config: UnlearnConfig,
                     eval_hook=None) -> UnlearnResult:
    """Gradient ascent on forget feature matching, descent on retain.

    Label-free: pushes forget embeddings away from the teacher's while
    pinning retain embeddings to it.
    """

    def setup(state, ctx):
        pass

    def step(state, ctx, f_idx, r_idx):
        ext = state.student.extractor
        e_f, cache_f = ext.forward(ctx["x_f"][f_idx])
        e_r, cache_r = ext.forward(ctx["x_r"][r_idx])
        ctx["cache_f"], ctx["cache_r"] = cache_f, cache_r
        dist_f, g_f = losses.feature_matching_loss_grad(e_f, ctx["t_f"][f_idx])
        dist_r, g_r = losses.feature_matching_loss_grad(e_r, ctx["t_r"][r_idx])
        total = -dist_f + dist_r
        if not math.isfinite(total) or abs(total) > DIVERGENCE_CAP:
            raise DivergenceError(f"negative-gradient objective diverged: {total}")
        record = {"forget_distance": dist_f, "retain_distance": dist_r, "total": total}
        return record, -g_f, g_r, None

    return _unlearn_loop(teacher, split, config, setup, step, eval_hook)


def baseline_badteacher(teacher: ModelSnapshot, split, config: UnlearnConfig,
                        eval_hook=None) -> UnlearnResult:
    """Distill forget batches toward a randomly initialized extractor and
    retain batches toward the real teacher (KL + feature matching)."""

    def setup(state, ctx):
        random_ext = FeatureExtractor(
            list(teacher.extractor.layer_sizes), seed=config.seed + 7919
        )
        ctx["bad_f"] = random_ext.embed(ctx["x_f"])

    def step(state, ctx, f_idx, r_idx):
        ext = state.student.extractor
        e_f, cache_f = ext.forward(ctx["x_f"][f_idx])
        e_r, cache_r = ext.forward(ctx["x_r"][r_idx])
        ctx["cache_f"], ctx["cache_r"] = cache_f, cache_r
        bad_f = ctx["bad_f"][f_idx]
        t_r = ctx["t_r"][r_idx]
        kl_f, g_kl_f = losses.feature_distribution_loss_grad(e_f, bad_f, config.temperature)
        feat_f, g_feat_f = losses.feature_matching_loss_grad(e_f, bad_f)
        kl_r, g_kl_r = losses.feature_distribution_loss_grad(e_r, t_r, config.temperature)
        feat_r, g_feat_r = losses.feature_matching_loss_grad(e_r, t_r)
        total = kl_f + feat_f + kl_r + feat_r
        if not math.isfinite(total) or abs(total) > DIVERGENCE_CAP:
            raise DivergenceError(f"bad-teacher objective diverged: {total}")
        record = {
            "forget_kl": kl_f, "forget_distance": feat_f,
            "retain_kl": kl_r, "retain_distance": feat_r, "total": total,
        }
        return record, g_kl_f + g_feat_f, g_kl_r + g_feat_r, None

    return _unlearn_loop(teacher, split, config, setup, step, eval_hook)


METHODS = {
    "cure": cure_unlearn,
    "neggrad": baseline_neggrad,
    "badteacher": baseline_badteacher,
}
