"""Feature extractor, classifier head, model snapshots and checkpoint IO.

The extractor is a small fully connected network (tanh hidden layers,
linear output, row-wise L2 normalization) kept in float64 throughout so
that analytic gradients can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import ConfigError, DegenerateInputError, EmptyInputError

NORM_TOL = 1e-6


def l2_normalize(v):
    """Scale a vector to unit Euclidean norm.

    Raises DegenerateInputError for (numerically) zero vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0 or not math.isfinite(nrm):
        raise DegenerateInputError("cannot normalize a zero or non-finite vector")
    return v / nrm


class FeatureExtractor:
    """Fully connected embedding network.

    ``layer_sizes`` lists every layer width including input and output,
    e.g. ``[32, 64, 64, 16]`` for the default 3-layer architecture.
    Each layer (weight matrix + bias) is one parameter group; the frozen
    mask marks groups that must not move during optimization.
    """

    def __init__(self, layer_sizes, seed=0):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2:
            raise ConfigError("layer_sizes needs at least input and output widths")
        if any(s < 1 for s in layer_sizes):
            raise ConfigError("layer widths must be positive")
        self.layer_sizes = tuple(layer_sizes)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.frozen = np.zeros(self.n_groups, dtype=bool)

    @property
    def n_groups(self):
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def embed_dim(self):
        return self.layer_sizes[-1]

    def forward(self, x):
        """Embed a batch; returns (unit embeddings, cache for backward)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected inputs of shape (n, {self.input_dim})")
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = kernels.dense_tanh(h, w, b)
            acts.append(h)
        z = kernels.dense(h, self.weights[-1], self.biases[-1])
        e, nrm = kernels.normalize_rows(z)
        return e, (acts, e, nrm)

    def embed(self, x):
        """Unit-norm embeddings only (no cache)."""
        return self.forward(x)[0]

    def backward(self, g_e, cache):
        """Backprop an embedding gradient to per-group (g_w, g_b) pairs."""
        acts, e, nrm = cache
        g = kernels.normalize_backward(np.ascontiguousarray(g_e), e, nrm)
        grads = [None] * self.n_groups
        g, g_w, g_b = kernels.dense_backward(g, acts[-1], self.weights[-1])
        grads[-1] = (g_w, g_b)
        for i in range(self.n_groups - 2, -1, -1):
            g, g_w, g_b = kernels.dense_tanh_backward(
                g, acts[i + 1], acts[i], self.weights[i]
            )
            grads[i] = (g_w, g_b)
        return grads

    def parameter_groups(self):
        """List of (name, weight, bias) per group, in network order."""
        return [
            (f"layer{i}", self.weights[i], self.biases[i])
            for i in range(self.n_groups)
        ]

    def copy(self):
        dup = object.__new__(FeatureExtractor)
        dup.layer_sizes = self.layer_sizes
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup.frozen = self.frozen.copy()
        return dup

    def set_writeable(self, flag):
        for arr in self.weights + self.biases:
            arr.flags.writeable = flag


@dataclass
class ClassifierHead:
    """Linear map from embeddings to cluster logits."""

    weight: np.ndarray  # (d, n_clusters)
    bias: np.ndarray  # (n_clusters,)

    @classmethod
    def init(cls, embed_dim, n_clusters, rng, scale=0.01):
        return cls(
            weight=rng.normal(0.0, scale, size=(embed_dim, n_clusters)),
            bias=np.zeros(n_clusters),
        )

    @property
    def n_clusters(self):
        return self.weight.shape[1]

    def logits(self, e):
        return e @ self.weight + self.bias


@dataclass
class ModelSnapshot:
    """An extractor plus its role in the unlearning pipeline."""

    extractor: FeatureExtractor
    role: str = "student"  # teacher | student

    def seal(self):
        """Make all parameters read-only (teacher immutability)."""
        self.extractor.set_writeable(False)
        return self

    def spawn_student(self):
        """Writable copy of this snapshot, tagged as student."""
        return ModelSnapshot(extractor=self.extractor.copy(), role="student")


def extract_embeddings(model: ModelSnapshot, samples):
    """Unit-norm embedding per sample, in input order.

    Pure function of (parameters, inputs): repeated calls agree exactly.
    """
    if len(samples) == 0:
        raise EmptyInputError("no samples to embed")
    x = np.stack([s.input for s in samples])
    return model.extractor.embed(x)


def freeze_early_layers(model: ModelSnapshot, fraction):
    """Mark the first ceil(fraction * n_groups) parameter groups frozen.

    Returns the same snapshot with its frozen mask replaced.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"freeze fraction must be in [0, 1], got {fraction}")
    n = model.extractor.n_groups
    if n < 2:
        raise ConfigError("model needs at least 2 parameter groups to freeze")
    k = math.ceil(fraction * n)
    mask = np.zeros(n, dtype=bool)
    mask[:k] = True
    model.extractor.frozen = mask
    return model


def save_checkpoint(model: ModelSnapshot, path):
    """Persist a snapshot; round-trips losslessly (bit-exact float64)."""
    meta = {
        "layer_sizes": list(model.extractor.layer_sizes),
        "frozen": model.extractor.frozen.astype(int).tolist(),
        "role": model.role,
    }
    arrays = {}
    for i, (name, w, b) in enumerate(model.extractor.parameter_groups()):
        arrays[f"w{i}"] = w
        arrays[f"b{i}"] = b
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        ext = object.__new__(FeatureExtractor)
        ext.layer_sizes = tuple(meta["layer_sizes"])
        ext.weights = [
            np.ascontiguousarray(data[f"w{i}"]) for i in range(len(ext.layer_sizes) - 1)
        ]
        ext.biases = [
            np.ascontiguousarray(data[f"b{i}"]) for i in range(len(ext.layer_sizes) - 1)
        ]
        ext.frozen = np.asarray(meta["frozen"], dtype=bool)
    return ModelSnapshot(extractor=ext, role=meta["role"])
