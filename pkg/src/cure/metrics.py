"""Evaluation metrics: accuracy via class prototypes, the unlearning
efficiency score (UES), confidence/entropy shifts, membership-inference
style diagnostics, and verification accuracy over embedding pairs."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, UndefinedMetricError
from .model import ModelSnapshot, extract_embeddings

DEFAULT_MEMBERSHIP_THRESHOLD = 0.8
PROB_TOL = 1e-9


@dataclass
class UESInputs:
    """Accuracies feeding the unlearning efficiency score. Any consistent
    scale works (fractions or percentages); only ratios matter."""

    acc_forget_before: float
    acc_forget_after: float
    acc_retain_before: float
    acc_retain_after: float
    alpha: float = 0.5


def ues(inputs: UESInputs):
    """alpha-weighted normalized forget drop minus normalized retain drop.

    Drops may be negative when an accuracy rises; nothing is clamped.
    """
    if inputs.acc_forget_before <= 0 or inputs.acc_retain_before <= 0:
        raise UndefinedMetricError("before-unlearning accuracies must be positive")
    if not 0.0 <= inputs.alpha <= 1.0:
        raise UndefinedMetricError("alpha must be in [0, 1]")
    forget_drop = (inputs.acc_forget_before - inputs.acc_forget_after) / inputs.acc_forget_before
    retain_drop = (inputs.acc_retain_before - inputs.acc_retain_after) / inputs.acc_retain_before
    return inputs.alpha * forget_drop - (1.0 - inputs.alpha) * retain_drop


@dataclass
class PredictionDump:
    """Per-sample class probabilities with their top-3 predictions.

    ``class_ids`` names the identity behind each probability column, so
    dumps from models with different class supports stay comparable.
    """

    ids: np.ndarray  # (n,) sample ids
    probs: np.ndarray  # (n, n_classes)
    top3: np.ndarray  # (n, 3) entries are class ids
    class_ids: np.ndarray  # (n_classes,)

    def check(self):
        sums = self.probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_TOL):
            raise ValueError("probability rows must sum to 1")
        return self


@dataclass
class ClassPrototypes:
    """Unit-norm mean embedding per identity, used as a label-free classifier."""

    matrix: np.ndarray  # (n_classes, d)
    class_ids: np.ndarray  # (n_classes,)


def build_prototypes(model: ModelSnapshot, samples):
    """Mean embedding per identity (normalized), from the given model."""
    if not samples:
        raise EmptyInputError("no samples for prototype construction")
    emb = extract_embeddings(model, samples)
    labels = np.array([s.identity for s in samples])
    class_ids = np.unique(labels)
    matrix = np.stack([emb[labels == c].mean(axis=0) for c in class_ids])
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    return ClassPrototypes(matrix=matrix, class_ids=class_ids)


def prototype_accuracy(model: ModelSnapshot, samples, prototypes: ClassPrototypes):
    """Fraction of samples whose nearest prototype (cosine) is their identity."""
    if not samples:
        raise EmptyInputError("no samples to classify")
    emb = extract_embeddings(model, samples)
    sims = emb @ prototypes.matrix.T
    pred = prototypes.class_ids[np.argmax(sims, axis=1)]
    truth = np.array([s.identity for s in samples])
    return float(np.mean(pred == truth))


def prediction_dump(model: ModelSnapshot, samples, prototypes: ClassPrototypes,
                    scale):
    """Softmax over scaled prototype similarities, per sample.

    ``scale`` is the logit scale of the embedding model (margin-trained
    networks produce calibrated posteriors only after their native scaling).
    """
    if not samples:
        raise EmptyInputError("no samples to dump")
    emb = extract_embeddings(model, samples)
    logits = scale * (emb @ prototypes.matrix.T)
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    order = np.argsort(-probs, axis=1, kind="stable")[:, :3]
    top3 = prototypes.class_ids[order]
    ids = np.array([s.id for s in samples])
    return PredictionDump(ids=ids, probs=probs, top3=top3,
                          class_ids=prototypes.class_ids).check()


def confidence(dump: PredictionDump):
    """Mean max-probability over the dump."""
    if dump.probs.shape[0] == 0:
        raise EmptyInputError("empty prediction dump")
    return float(dump.probs.max(axis=1).mean())


def entropy(dump: PredictionDump):
    """Mean Shannon entropy (natural log, 0 ln 0 := 0)."""
    if dump.probs.shape[0] == 0:
        raise EmptyInputError("empty prediction dump")
    dump.check()
    p = dump.probs
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(-terms.sum(axis=1).mean())


def _aligned_probs(before: PredictionDump, after: PredictionDump):
    """Align two dumps on sample ids and the union of their class supports."""
    if before.ids.shape != after.ids.shape or np.any(before.ids != after.ids):
        raise ValueError("prediction dumps cover different samples")
    if np.array_equal(before.class_ids, after.class_ids):
        return before.probs, after.probs
    union = np.union1d(before.class_ids, after.class_ids)
    def lift(dump):
        out = np.zeros((dump.probs.shape[0], union.shape[0]))
        cols = np.searchsorted(union, dump.class_ids)
        out[:, cols] = dump.probs
        return out
    return lift(before), lift(after)


def activation_distance(before: PredictionDump, after: PredictionDump):
    """Mean L2 distance between paired probability vectors."""
    pb, pa = _aligned_probs(before, after)
    return float(np.linalg.norm(pb - pa, axis=1).mean())


def completeness(before: PredictionDump, after: PredictionDump):
    """Mean Jaccard similarity of top-3 prediction sets."""
    if before.class_ids.shape[0] < 3 or after.class_ids.shape[0] < 3:
        raise ValueError("completeness needs at least 3 classes")
    if np.any(before.ids != after.ids):
        raise ValueError("prediction dumps cover different samples")
    scores = []
    for tb, ta in zip(before.top3, after.top3):
        sb, sa = set(tb.tolist()), set(ta.tolist())
        scores.append(len(sb & sa) / len(sb | sa))
    return float(np.mean(scores))


def membership_recall(dump: PredictionDump, threshold=DEFAULT_MEMBERSHIP_THRESHOLD):
    """Fraction of samples predicted with confidence above the threshold."""
    if dump.probs.shape[0] == 0:
        raise EmptyInputError("empty prediction dump")
    if not 0.0 < threshold < 1.0:
        raise UndefinedMetricError("membership threshold must be in (0, 1)")
    return float(np.mean(dump.probs.max(axis=1) > threshold))


def layerwise_distance(before: ModelSnapshot, after: ModelSnapshot):
    """Mean, over parameter groups, of the L2 distance between group params."""
    gb = before.extractor.parameter_groups()
    ga = after.extractor.parameter_groups()
    if before.extractor.layer_sizes != after.extractor.layer_sizes:
        raise ValueError("layerwise distance needs identical architectures")
    norms = []
    for (_, wb, bb), (_, wa, ba) in zip(gb, ga):
        diff = np.concatenate([(wb - wa).ravel(), (bb - ba).ravel()])
        norms.append(np.linalg.norm(diff))
    return float(np.mean(norms))


def best_threshold(similarities, same_labels):
    """Accuracy-maximizing threshold for same/different classification.

    Predicts "same" when similarity >= threshold; sweeps every candidate
    split point and returns (threshold, accuracy); ties break to the
    lowest threshold.
    """
    sims = np.asarray(similarities, dtype=np.float64)
    labels = np.asarray(same_labels, dtype=bool)
    if sims.shape[0] == 0:
        raise EmptyInputError("no pairs to sweep")
    candidates = np.unique(sims)
    candidates = np.concatenate([candidates, [candidates[-1] + 1.0]])
    best_t, best_acc = candidates[0], -1.0
    for t in candidates:
        acc = float(np.mean((sims >= t) == labels))
        if acc > best_acc:
            best_t, best_acc = float(t), acc
    return best_t, best_acc


def verification_accuracy(model: ModelSnapshot, pairs):
    """Best-threshold accuracy of cosine-similarity pair classification."""
    if not pairs:
        raise EmptyInputError("no verification pairs")
    lefts = extract_embeddings(model, [p[0] for p in pairs])
    rights = extract_embeddings(model, [p[1] for p in pairs])
    sims = np.einsum("ij,ij->i", lefts, rights)
    labels = np.array([p[2] for p in pairs], dtype=bool)
    return best_threshold(sims, labels)[1]


@dataclass
class EvaluationReport:
    """Every evaluation quantity for one (teacher, student) pair."""

    acc_forget_before: float
    acc_forget_after: float
    acc_retain_before: float
    acc_retain_after: float
    alpha: float
    ues: float
    conf_drop_forget: float
    ent_inc_forget: float
    conf_drop_retain: float
    ent_inc_retain: float
    activation_distance: float
    layerwise_distance: float
    completeness: float
    membership_recall_before: float
    membership_recall_after: float
    verification_acc_before: float | None
    verification_acc_after: float | None
    warnings: list

    def to_json(self, path=None):
        text = json.dumps(dataclasses.asdict(self), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if "{" not in str(text_or_path):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls(**json.loads(text))


def evaluate_all(teacher: ModelSnapshot, student: ModelSnapshot, split,
                 alpha=0.5, *, scale=16.0,
                 membership_threshold=DEFAULT_MEMBERSHIP_THRESHOLD,
                 prototypes_from="teacher", pairs=None, n_pairs=200,
                 pair_seed=0):
    """Assemble the full evaluation report for an unlearning run.

    Accuracy and prediction dumps classify by nearest class prototype:
    teacher-era prototypes over the whole train set by default, or the
    student's own retain-set prototypes (``prototypes_from="self"``, the
    retrain-oracle convention where forgotten identities have no class).
    """
    from .data import make_verification_pairs

    train = split.train()
    teacher_protos = build_prototypes(teacher, train)
    if prototypes_from == "teacher":
        student_protos = teacher_protos
    elif prototypes_from == "self":
        student_protos = build_prototypes(student, split.retain)
    else:
        raise ValueError("prototypes_from must be 'teacher' or 'self'")

    acc_fb = prototype_accuracy(teacher, split.forget, teacher_protos)
    acc_rb = prototype_accuracy(teacher, split.retain, teacher_protos)
    acc_fa = prototype_accuracy(student, split.forget, student_protos)
    acc_ra = prototype_accuracy(student, split.retain, student_protos)
    score = ues(UESInputs(acc_fb, acc_fa, acc_rb, acc_ra, alpha))

    dump_fb = prediction_dump(teacher, split.forget, teacher_protos, scale)
    dump_fa = prediction_dump(student, split.forget, student_protos, scale)
    dump_rb = prediction_dump(teacher, split.retain, teacher_protos, scale)
    dump_ra = prediction_dump(student, split.retain, student_protos, scale)

    warnings = []
    ver_before = ver_after = None
    try:
        if pairs is None:
            pairs = make_verification_pairs(split.holdout, n_pairs, pair_seed)
        n_same = sum(1 for p in pairs if p[2])
        if n_same * 2 != len(pairs):
            warnings.append("verification pair list is unbalanced")
        ver_before = verification_accuracy(teacher, pairs)
        ver_after = verification_accuracy(student, pairs)
    except Exception as exc:  # pair construction is best-effort
        warnings.append(f"verification skipped: {exc}")

    return EvaluationReport(
        acc_forget_before=acc_fb,
        acc_forget_after=acc_fa,
        acc_retain_before=acc_rb,
        acc_retain_after=acc_ra,
        alpha=alpha,
        ues=score,
        conf_drop_forget=confidence(dump_fb) - confidence(dump_fa),
        ent_inc_forget=entropy(dump_fa) - entropy(dump_fb),
        conf_drop_retain=confidence(dump_rb) - confidence(dump_ra),
        ent_inc_retain=entropy(dump_ra) - entropy(dump_rb),
        activation_distance=activation_distance(dump_fb, dump_fa),
        layerwise_distance=layerwise_distance(teacher, student),
        completeness=completeness(dump_fb, dump_fa),
        membership_recall_before=membership_recall(dump_fb, membership_threshold),
        membership_recall_after=membership_recall(dump_fa, membership_threshold),
        verification_acc_before=ver_before,
        verification_acc_after=ver_after,
        warnings=warnings,
    )
