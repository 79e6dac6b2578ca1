"""Experiment orchestration: dataset/split derivation, method dispatch,
comparison tables, and the ablation grid. The CLI is a thin shell over
these functions; tests drive them directly."""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import replace

import numpy as np

from . import engine, metrics
from .config import ExperimentConfig
from .data import (
    generate_dataset,
    make_verification_pairs,
    split_quality_forget,
    split_random_forget,
)
from .errors import ConfigError
from .model import ModelSnapshot, save_checkpoint

COMPARISON_COLUMNS = ("method", "forget_acc", "retain_acc", "ues", "verification_acc")
ABLATION_COLUMNS = ("ablation", "forget_acc", "retain_acc", "ues")


def build_dataset(config: ExperimentConfig):
    return generate_dataset(config.generator_spec())


def build_split(config: ExperimentConfig, samples=None):
    if samples is None:
        samples = build_dataset(config)
    mode = config.get("split", "mode")
    holdout = config.get("split", "holdout_fraction")
    if mode == "random":
        return split_random_forget(
            samples, config.get("split", "forget_fraction"),
            seed=config.split_seed, holdout_fraction=holdout,
        )
    return split_quality_forget(
        samples, config.get("split", "quality_percentile"),
        seed=config.split_seed, holdout_fraction=holdout,
    )


def accuracy_hook(teacher, split):
    """Per-epoch forget/retain accuracy logger (label-dependent, so it lives
    outside the unlearning loop and is injected as a hook)."""
    prototypes = metrics.build_prototypes(teacher, split.train())

    def hook(epoch, student):
        return {
            "forget_acc": metrics.prototype_accuracy(student, split.forget, prototypes),
            "retain_acc": metrics.prototype_accuracy(student, split.retain, prototypes),
        }

    return hook


def run_method(method, teacher, split, config: ExperimentConfig, eval_hook=None,
               unlearn_config=None):
    """Run one unlearning method; returns (student, result_or_None)."""
    if method == "oracle":
        student = engine.retrain_oracle(split, config.teacher_config())
        return student, None
    if method not in engine.METHODS:
        raise ConfigError(f"unknown method {method!r}")
    ucfg = unlearn_config if unlearn_config is not None else config.unlearn_config()
    result = engine.METHODS[method](teacher, split, ucfg, eval_hook=eval_hook)
    return result.student, result


def evaluate_method(method, teacher, student, split, config: ExperimentConfig,
                    pairs=None):
    return metrics.evaluate_all(
        teacher, student, split,
        alpha=config.get("evaluate", "alpha"),
        scale=config.get("teacher", "scale"),
        membership_threshold=config.get("evaluate", "membership_threshold"),
        prototypes_from="self" if method == "oracle" else "teacher",
        pairs=pairs,
        n_pairs=config.get("evaluate", "n_pairs"),
        pair_seed=config.pair_seed,
    )


def holdout_pairs(config: ExperimentConfig, split):
    return make_verification_pairs(
        split.holdout, config.get("evaluate", "n_pairs"), config.pair_seed
    )


def comparison_table(config: ExperimentConfig, teacher, split, run_dir=None,
                     eval_hooks=False):
    """One row per method plus the before-unlearning row, Table-style.

    Returns (rows, reports) where rows follow COMPARISON_COLUMNS and the
    before row carries no UES.
    """
    pairs = holdout_pairs(config, split)
    prototypes = metrics.build_prototypes(teacher, split.train())
    before = {
        "method": "before",
        "forget_acc": metrics.prototype_accuracy(teacher, split.forget, prototypes),
        "retain_acc": metrics.prototype_accuracy(teacher, split.retain, prototypes),
        "ues": None,
        "verification_acc": metrics.verification_accuracy(teacher, pairs),
    }
    rows = [before]
    reports = {}
    for method in config.get("experiment", "methods"):
        hook = accuracy_hook(teacher, split) if eval_hooks else None
        student, result = run_method(method, teacher, split, config, eval_hook=hook)
        report = evaluate_method(method, teacher, student, split, config, pairs=pairs)
        reports[method] = report
        rows.append({
            "method": method,
            "forget_acc": report.acc_forget_after,
            "retain_acc": report.acc_retain_after,
            "ues": report.ues,
            "verification_acc": report.verification_acc_after,
        })
        if run_dir is not None:
            method_dir = os.path.join(run_dir, method)
            os.makedirs(method_dir, exist_ok=True)
            save_checkpoint(student, os.path.join(method_dir, "student.npz"))
            report.to_json(os.path.join(method_dir, "report.json"))
            if result is not None:
                write_epoch_csv(result.epoch_records,
                                os.path.join(method_dir, "metrics.csv"))
    return rows, reports


# ------------------------------------------------------------- ablations

LOSS_TERM_ALIASES = {
    "pl": "pseudo_label",
    "pseudo_label": "pseudo_label",
    "cos-forget": "cosine_forget",
    "cosine_forget": "cosine_forget",
    "cont": "contrastive",
    "contrast": "contrastive",
    "contrastive": "contrastive",
    "cos-retain": "cosine_retain",
    "cosine_retain": "cosine_retain",
    "feat": "feature_match",
    "feature_match": "feature_match",
    "fd": "feature_distribution",
    "feature_distribution": "feature_distribution",
}

ABLATION_MARGINS = (0.0, 0.1, 0.3, 0.6)

# the stock grid: retain-loss subsets, forget-loss subsets, clustering swap,
# margin sweep
_RETAIN_TERMS = ("cosine_retain", "feature_match", "feature_distribution")
_FORGET_TERMS = ("pseudo_label", "cosine_forget", "contrastive")
_RETAIN_SUBSETS = [
    ("A1:cos-retain", ("cosine_retain",)),
    ("A2:feat", ("feature_match",)),
    ("A3:fd", ("feature_distribution",)),
    ("A4:feat+cos-retain", ("feature_match", "cosine_retain")),
    ("A5:fd+feat", ("feature_distribution", "feature_match")),
    ("A6:cos-retain+fd", ("cosine_retain", "feature_distribution")),
]
_FORGET_SUBSETS = [
    ("A7:pl", ("pseudo_label",)),
    ("A8:cont", ("contrastive",)),
    ("A9:cos-forget", ("cosine_forget",)),
    ("A10:cos-forget+pl", ("cosine_forget", "pseudo_label")),
    ("A11:cos-forget+cont", ("cosine_forget", "contrastive")),
    ("A12:cont+pl", ("contrastive", "pseudo_label")),
]


def disable_terms(weights, terms):
    """Copy of the weights with the named terms zeroed."""
    updates = {}
    for term in terms:
        key = LOSS_TERM_ALIASES.get(term.strip().lower())
        if key is None:
            raise ConfigError(f"unknown loss term {term!r}")
        updates[key] = 0.0
    return replace(weights, **updates)


def _keep_only(weights, side_terms, keep):
    return disable_terms(weights, [t for t in side_terms if t not in keep])


def ablation_grid(base: "engine.UnlearnConfig"):
    """(label, UnlearnConfig) rows for the stock ablation run."""
    rows = [("CURE", base)]
    for label, keep in _RETAIN_SUBSETS:
        rows.append((label, replace(base, weights=_keep_only(base.weights, _RETAIN_TERMS, keep))))
    for label, keep in _FORGET_SUBSETS:
        rows.append((label, replace(base, weights=_keep_only(base.weights, _FORGET_TERMS, keep))))
    rows.append(("A13:gmm", replace(base, clustering_backend="gmm")))
    for m in ABLATION_MARGINS:
        rows.append((f"m={m}", replace(base, margin=m)))
    return rows


def custom_ablation(base, disable=None, margin=None, clustering=None):
    """A single ablation row built from CLI toggles."""
    cfg = base
    label_parts = []
    if disable:
        cfg = replace(cfg, weights=disable_terms(cfg.weights, disable))
        label_parts.append("disable=" + ",".join(disable))
    if margin is not None:
        cfg = replace(cfg, margin=margin)
        label_parts.append(f"m={margin}")
    if clustering is not None:
        if clustering not in ("kmeans", "gmm"):
            raise ConfigError("clustering must be kmeans or gmm")
        cfg = replace(cfg, clustering_backend=clustering)
        label_parts.append(clustering)
    return (" ".join(label_parts) or "CURE", cfg)


def run_ablations(config: ExperimentConfig, teacher, split, grid):
    """Run each (label, config) row and score it against the teacher."""
    pairs = holdout_pairs(config, split)
    rows = []
    for label, ucfg in grid:
        student, _ = run_method("cure", teacher, split, config, unlearn_config=ucfg)
        report = evaluate_method("cure", teacher, student, split, config, pairs=pairs)
        rows.append({
            "ablation": label,
            "forget_acc": report.acc_forget_after,
            "retain_acc": report.acc_retain_after,
            "ues": report.ues,
        })
    return rows


# ------------------------------------------------------------- persistence


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else row[c] for c in columns])


def write_epoch_csv(records, path):
    if not records:
        with open(path, "w", newline="") as fh:
            fh.write("epoch\n")
        return
    columns = sorted({k for r in records for k in r}, key=lambda c: (c != "epoch", c))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for record in records:
            writer.writerow([record.get(c, "") for c in columns])


def write_step_csv(records, path):
    write_epoch_csv(records, path)
