"""Experiment configuration: flat key-value INI with one section per
subsystem, strict unknown-key rejection, and CLI overrides on top."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .data import GeneratorSpec
from .engine import TeacherConfig, UnlearnConfig
from .errors import ConfigError
from .losses import LossWeights

ENV_OUTPUT_ROOT = "CURE_OUTPUT_ROOT"

# seed offsets: every stage draws from the root experiment seed
SEED_DATA = 0
SEED_SPLIT = 1
SEED_TEACHER = 2
SEED_UNLEARN = 3
SEED_PAIRS = 4


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text):
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def _parse_str_list(text):
    return [v for v in str(text).replace(" ", "").split(",") if v]


def _identity(text):
    return str(text).strip()


# section -> key -> (parser, default)
SCHEMA = {
    "data": {
        "n_identities": (int, 50),
        "samples_per_identity": (int, 40),
        "input_dim": (int, 32),
        "cluster_spread": (float, 0.35),
        "separation": (float, 3.0),
        "noise_low": (float, 0.0),
        "noise_high": (float, 1.5),
    },
    "split": {
        "mode": (_identity, "random"),
        "forget_fraction": (float, 0.2),
        "quality_percentile": (float, 35.0),
        "holdout_fraction": (float, 0.1),
    },
    "teacher": {
        "hidden": (_parse_int_tuple, (64, 64)),
        "embed_dim": (int, 16),
        "epochs": (int, 40),
        "learning_rate": (float, 0.05),
        "batch_size": (int, 32),
        "scale": (float, 16.0),
        "arc_margin": (float, 0.2),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4),
        "min_accuracy": (float, 0.9),
    },
    "unlearn": {
        "clusters": (int, 8),
        "margin": (float, 0.3),
        "temperature": (float, 0.5),
        "cluster_interval": (int, 5),
        "epochs": (int, 30),
        "learning_rate": (float, 1e-3),
        "batch_size": (int, 32),
        "freeze_fraction": (float, 0.5),
        "pseudo_label_space": (_identity, "student"),
        "clustering_backend": (_identity, "kmeans"),
        "optimizer": (_identity, "sgd_momentum"),
        "momentum": (float, 0.9),
        "weight_decay": (float, 5e-4),
        "reinit_head_on_recluster": (_parse_bool, True),
    },
    "weights": {
        "pseudo_label": (float, 1.0),
        "cosine_forget": (float, 1.0),
        "contrastive": (float, 1.0),
        "cosine_retain": (float, 1.0),
        "feature_match": (float, 1.0),
        "feature_distribution": (float, 10.0),
    },
    "evaluate": {
        "alpha": (float, 0.5),
        "membership_threshold": (float, 0.8),
        "n_pairs": (int, 200),
    },
    "experiment": {
        "seed": (int, 0),
        "methods": (_parse_str_list, ["cure", "neggrad", "badteacher", "oracle"]),
        "output_dir": (_identity, ""),
    },
}

VALID_SPLIT_MODES = ("random", "quality")
VALID_METHODS = ("cure", "neggrad", "badteacher", "oracle")


@dataclass
class ExperimentConfig:
    """All parsed values, keyed [section][key]."""

    values: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls):
        return cls(values={
            section: {key: default for key, (_, default) in keys.items()}
            for section, keys in SCHEMA.items()
        })

    def get(self, section, key):
        return self.values[section][key]

    def set(self, section, key, raw):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        parser = SCHEMA[section][key][0]
        try:
            self.values[section][key] = parser(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc

    def validate(self):
        if self.get("split", "mode") not in VALID_SPLIT_MODES:
            raise ConfigError(f"split mode must be one of {VALID_SPLIT_MODES}")
        for method in self.get("experiment", "methods"):
            if method not in VALID_METHODS:
                raise ConfigError(f"unknown method {method!r}; valid: {VALID_METHODS}")
        if not 0.0 <= self.get("evaluate", "alpha") <= 1.0:
            raise ConfigError("alpha must be in [0, 1]")
        self.generator_spec().validate()
        self.teacher_config().validate()
        self.unlearn_config().validate()
        return self

    # ------------------------------------------------ derived stage configs

    @property
    def seed(self):
        return self.get("experiment", "seed")

    def generator_spec(self):
        d = self.values["data"]
        return GeneratorSpec(
            n_identities=d["n_identities"],
            samples_per_identity=d["samples_per_identity"],
            input_dim=d["input_dim"],
            cluster_spread=d["cluster_spread"],
            separation=d["separation"],
            noise_low=d["noise_low"],
            noise_high=d["noise_high"],
            seed=self.seed + SEED_DATA,
        )

    def teacher_config(self):
        t = self.values["teacher"]
        return TeacherConfig(
            input_dim=self.get("data", "input_dim"),
            hidden=t["hidden"],
            embed_dim=t["embed_dim"],
            epochs=t["epochs"],
            learning_rate=t["learning_rate"],
            batch_size=t["batch_size"],
            scale=t["scale"],
            arc_margin=t["arc_margin"],
            momentum=t["momentum"],
            weight_decay=t["weight_decay"],
            min_accuracy=t["min_accuracy"],
            seed=self.seed + SEED_TEACHER,
        )

    def unlearn_config(self):
        u = self.values["unlearn"]
        w = self.values["weights"]
        return UnlearnConfig(
            clusters=u["clusters"],
            margin=u["margin"],
            temperature=u["temperature"],
            cluster_interval=u["cluster_interval"],
            epochs=u["epochs"],
            learning_rate=u["learning_rate"],
            batch_size=u["batch_size"],
            weights=LossWeights(**w),
            freeze_fraction=u["freeze_fraction"],
            seed=self.seed + SEED_UNLEARN,
            pseudo_label_space=u["pseudo_label_space"],
            clustering_backend=u["clustering_backend"],
            optimizer=u["optimizer"],
            momentum=u["momentum"],
            weight_decay=u["weight_decay"],
            reinit_head_on_recluster=u["reinit_head_on_recluster"],
        )

    @property
    def split_seed(self):
        return self.seed + SEED_SPLIT

    @property
    def pair_seed(self):
        return self.seed + SEED_PAIRS

    def output_root(self):
        configured = self.get("experiment", "output_dir")
        return configured or os.environ.get(ENV_OUTPUT_ROOT, "runs")


def load_config(path=None, overrides=()):
    """Parse an INI file (optional) and apply ``section.key=value`` overrides.

    Precedence: overrides > file > built-in defaults. Unknown sections or
    keys are rejected.
    """
    config = ExperimentConfig.defaults()
    if path is not None:
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                config.set(section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        config.set(section.strip(), key.strip(), raw.strip())
    return config.validate()


def config_text(config: ExperimentConfig):
    """Serialize a config to INI text (the run-directory snapshot format)."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = config.get(section, key)
            if isinstance(value, (tuple, list)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def save_snapshot(config: ExperimentConfig, path):
    with open(path, "w") as fh:
        fh.write(config_text(config))
