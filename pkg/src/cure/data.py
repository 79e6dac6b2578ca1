"""Synthetic identity dataset with controllable separability and per-sample
quality, plus the forget/retain/holdout split builders and verification pairs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    EmptyInputError,
    GenerationError,
)

CENTER_RETRY_CAP = 1000


@dataclass(frozen=True)
class Sample:
    """One synthetic observation: raw input vector, identity, quality score."""

    input: np.ndarray
    identity: int
    quality: float
    id: int


@dataclass
class GeneratorSpec:
    n_identities: int = 50
    samples_per_identity: int = 40
    input_dim: int = 32
    cluster_spread: float = 0.35  # gaussian sigma around each identity center
    separation: float = 3.0  # minimum pairwise distance between centers
    noise_low: float = 0.0  # additive noise magnitude range; drives quality
    noise_high: float = 1.5
    seed: int = 0

    def validate(self):
        if self.n_identities < 2:
            raise ConfigError("need at least 2 identities")
        if self.samples_per_identity < 1:
            raise ConfigError("need at least 1 sample per identity")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if self.cluster_spread < 0:
            raise ConfigError("cluster_spread must be non-negative")
        if self.separation <= 0:
            raise ConfigError("separation must be positive")
        if self.noise_low < 0 or self.noise_high < self.noise_low:
            raise ConfigError("noise range must satisfy 0 <= low <= high")


@dataclass
class DatasetSplit:
    """Forget/retain partition of the train set plus unseen holdout samples."""

    forget: list
    retain: list
    holdout: list

    def train(self):
        return self.forget + self.retain

    def check(self):
        f = {s.id for s in self.forget}
        r = {s.id for s in self.retain}
        h = {s.id for s in self.holdout}
        if f & r or f & h or r & h:
            raise ValueError("split sets must be pairwise disjoint")
        return self


def generate_dataset(spec: GeneratorSpec):
    """Deterministic synthetic dataset.

    Identity centers are rejection-sampled on a hypersphere (radius
    1.5x separation) until pairwise distances reach the requested
    separation. Each sample is center + gaussian spread + a noise vector
    of magnitude eta ~ U(low, high); quality = 1 - normalized eta.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    radius = 1.5 * spec.separation
    centers = []
    for _ in range(spec.n_identities):
        for attempt in range(CENTER_RETRY_CAP + 1):
            if attempt == CENTER_RETRY_CAP:
                raise GenerationError(
                    f"could not place {spec.n_identities} centers at separation "
                    f">= {spec.separation} within {CENTER_RETRY_CAP} tries"
                )
            cand = rng.standard_normal(spec.input_dim)
            cand *= radius / np.linalg.norm(cand)
            if all(np.linalg.norm(cand - c) >= spec.separation for c in centers):
                centers.append(cand)
                break

    noise_span = spec.noise_high - spec.noise_low
    samples = []
    next_id = 0
    for identity, center in enumerate(centers):
        for _ in range(spec.samples_per_identity):
            spread = rng.standard_normal(spec.input_dim) * spec.cluster_spread
            direction = rng.standard_normal(spec.input_dim)
            nd = np.linalg.norm(direction)
            direction = direction / nd if nd > 0 else direction
            eta = rng.uniform(spec.noise_low, spec.noise_high)
            x = center + spread + eta * direction
            quality = 1.0 if noise_span == 0 else 1.0 - (eta - spec.noise_low) / noise_span
            samples.append(
                Sample(
                    input=x,
                    identity=identity,
                    quality=float(np.clip(quality, 0.0, 1.0)),
                    id=next_id,
                )
            )
            next_id += 1
    return samples


def _carve_holdout(samples, fraction, rng):
    """Split off round(fraction * n) samples per identity, seeded."""
    by_identity = {}
    for s in samples:
        by_identity.setdefault(s.identity, []).append(s)
    holdout, pool = [], []
    for identity in sorted(by_identity):
        group = sorted(by_identity[identity], key=lambda s: s.id)
        k = int(round(fraction * len(group)))
        picked = set(rng.choice(len(group), size=k, replace=False)) if k else set()
        for i, s in enumerate(group):
            (holdout if i in picked else pool).append(s)
    return holdout, pool


def split_random_forget(samples, forget_fraction, seed, holdout_fraction=0.1):
    """Identity-level split: a rounded share of identities goes wholly to the
    forget set; 10% of each retained identity's samples are held out."""
    if not 0.0 < forget_fraction < 1.0:
        raise ConfigError("forget_fraction must be in (0, 1)")
    identities = sorted({s.identity for s in samples})
    n_forget = int(round(forget_fraction * len(identities)))
    if n_forget == 0:
        raise ConfigError("forget_fraction selects zero identities")
    if n_forget >= len(identities):
        raise ConfigError("forget_fraction leaves no retain identities")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(identities))
    forget_ids = {identities[i] for i in order[:n_forget]}
    forget = [s for s in samples if s.identity in forget_ids]
    retain_pool = [s for s in samples if s.identity not in forget_ids]
    holdout, retain = _carve_holdout(retain_pool, holdout_fraction, rng)
    return DatasetSplit(forget=forget, retain=retain, holdout=holdout).check()


def split_quality_forget(samples, percentile, seed=0, holdout_fraction=0.1):
    """Sample-level split: after carving a holdout, the lowest-quality
    ``percentile`` percent of the remaining samples become the forget set."""
    if not 0.0 < percentile < 100.0:
        raise ConfigError("percentile must be in (0, 100)")
    qualities = np.array([s.quality for s in samples])
    if np.all(qualities == qualities[0]):
        raise DegenerateInputError("quality distribution is constant")
    rng = np.random.default_rng(seed)
    holdout, pool = _carve_holdout(samples, holdout_fraction, rng)
    k = int(round(percentile / 100.0 * len(pool)))
    if k == 0:
        raise ConfigError("percentile selects an empty forget set")
    if k >= len(pool):
        raise ConfigError("percentile leaves an empty retain set")
    order = sorted(pool, key=lambda s: (s.quality, s.id))
    forget = order[:k]
    retain = order[k:]
    return DatasetSplit(forget=forget, retain=retain, holdout=holdout).check()


def split_random_samples(samples, n_forget, seed, holdout_fraction=0.1):
    """Sample-level random split of the same cardinality shape as the quality
    split (same holdout for the same seed), for like-for-like comparisons."""
    rng = np.random.default_rng(seed)
    holdout, pool = _carve_holdout(samples, holdout_fraction, rng)
    if not 0 < n_forget < len(pool):
        raise ConfigError(f"n_forget must be in (0, {len(pool)})")
    picked = set(rng.choice(len(pool), size=n_forget, replace=False))
    pool = sorted(pool, key=lambda s: s.id)
    forget = [s for i, s in enumerate(pool) if i in picked]
    retain = [s for i, s in enumerate(pool) if i not in picked]
    return DatasetSplit(forget=forget, retain=retain, holdout=holdout).check()


def make_verification_pairs(samples, n_pairs, seed):
    """Balanced same/different-identity pairs, deduplicated, seeded."""
    if n_pairs < 2 or n_pairs % 2:
        raise ConfigError("n_pairs must be a positive even number")
    by_identity = {}
    for s in samples:
        by_identity.setdefault(s.identity, []).append(s)
    for group in by_identity.values():
        group.sort(key=lambda s: s.id)
    eligible = [i for i, g in sorted(by_identity.items()) if len(g) >= 2]
    identities = sorted(by_identity)
    if len(identities) < 2 or not eligible:
        raise DegenerateInputError("need >= 2 identities and one with >= 2 samples")

    rng = np.random.default_rng(seed)
    half = n_pairs // 2
    pairs, seen = [], set()
    cap = 100 * n_pairs
    tries = 0
    while sum(1 for p in pairs if p[2]) < half:
        tries += 1
        if tries > cap:
            raise DegenerateInputError("not enough distinct same-identity pairs")
        identity = eligible[int(rng.integers(len(eligible)))]
        group = by_identity[identity]
        i, j = rng.choice(len(group), size=2, replace=False)
        key = frozenset((group[i].id, group[j].id))
        if key not in seen:
            seen.add(key)
            pairs.append((group[i], group[j], True))
    tries = 0
    while sum(1 for p in pairs if not p[2]) < half:
        tries += 1
        if tries > cap:
            raise DegenerateInputError("not enough distinct cross-identity pairs")
        ia, ib = rng.choice(len(identities), size=2, replace=False)
        ga, gb = by_identity[identities[ia]], by_identity[identities[ib]]
        a = ga[int(rng.integers(len(ga)))]
        b = gb[int(rng.integers(len(gb)))]
        key = frozenset((a.id, b.id))
        if key not in seen:
            seen.add(key)
            pairs.append((a, b, False))
    return pairs


def save_dataset_csv(samples, path, spec: GeneratorSpec | None = None):
    """Persist as CSV (id, identity, quality, input components) plus a JSON
    sidecar holding the generator spec."""
    if not samples:
        raise EmptyInputError("no samples to save")
    dim = samples[0].input.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "identity", "quality"] + [f"x{j}" for j in range(dim)])
        for s in samples:
            writer.writerow([s.id, s.identity, repr(s.quality)] + [repr(v) for v in s.input])
    if spec is not None:
        with open(str(path) + ".spec.json", "w") as fh:
            json.dump(asdict(spec), fh, indent=2)


def load_dataset_csv(path):
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 3
        for row in reader:
            samples.append(
                Sample(
                    input=np.array([float(v) for v in row[3 : 3 + dim]]),
                    identity=int(row[1]),
                    quality=float(row[2]),
                    id=int(row[0]),
                )
            )
    return samples
