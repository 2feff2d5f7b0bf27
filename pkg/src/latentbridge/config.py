"""Run configuration: a flat INI file of ``key = value`` lines.

A ``[run]`` section header is optional.  Unknown keys are rejected and all
values are validated when the file is loaded.
"""
from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import UsageError


def _shape(text):
    parts = [p for p in str(text).replace("x", ",").split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    # model shapes
    latent_dim: int = 8
    genes: int = 50
    feature_shape: tuple = (16, 4, 4)
    image_size: int = 32
    image_from_true_features: bool = False
    cosine_on_mu: bool = False
    # synthetic data
    classes: int = 3
    samples_per_class: int = 300
    latent_factors: int = 2
    noise: float = 0.1
    # image loss weights
    alpha: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0
    delta: float = 1.0
    # rna loss weights ("lambda" in the file)
    lam: float = 1.0
    phi: float = 1.0
    rna_beta: float = 1.0
    # optimization
    image_epochs: int = 160
    rna_epochs: int = 300
    lr: float = 0.001
    batch_size: int = 32
    # trajectory
    gp_sigma: float = 0.5
    jitter: float = 1e-8
    steps: int = 20
    anchors_per_class: int = 0  # 0 = centroid mode
    # clustering
    k: int = 3
    max_iter: int = 100
    n_init: int = 10
    flat_tol: float = 0.4
    seed: int = 0
    # paths
    data_dir: str = "data"
    model_dir: str = "models"
    out_dir: str = "out"

    def __post_init__(self):
        pos_int = ("latent_dim", "genes", "image_size", "classes", "samples_per_class",
                   "latent_factors", "image_epochs", "rna_epochs", "batch_size", "steps", "k",
                   "max_iter", "n_init")
        for name in pos_int:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 2:
            raise UsageError("steps must be >= 2")
        if len(self.feature_shape) != 3 or min(self.feature_shape) < 1:
            raise UsageError(f"feature_shape must be C,H,W, got {self.feature_shape}")
        if max(self.feature_shape[1:]) > self.image_size:
            raise UsageError("feature grid cannot be finer than the image")
        for name in ("alpha", "gamma", "beta", "delta", "lam", "phi", "rna_beta", "noise",
                     "flat_tol"):
            v = getattr(self, name)
            if not (v >= 0 and v != float("inf")):
                raise UsageError(f"{name} must be finite and non-negative, got {v}")
        for name in ("lr", "gp_sigma", "jitter"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.anchors_per_class < 0:
            raise UsageError("anchors_per_class must be >= 0")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise UsageError("seed must fit in u64")

    @classmethod
    def published(cls, **overrides) -> "RunConfig":
        """Published network shapes and training schedule."""
        base = dict(latent_dim=50, genes=2432, feature_shape=(256, 14, 14), image_size=288,
                    image_epochs=160, rna_epochs=300, lr=0.001)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        if not re.search(r"^\s*\[", text, re.MULTILINE):
            text = "[run]\n" + text
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise UsageError(f"malformed config: {exc}") from None
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key] = raw
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"))

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = "lam" if key == "lambda" else key
            if name not in types:
                raise UsageError(f"unknown config key {key!r}")
            default = getattr(cls, name)
            try:
                if isinstance(default, bool):
                    kwargs[name] = _bool(raw)
                elif isinstance(default, tuple):
                    kwargs[name] = _shape(raw)
                elif isinstance(default, int):
                    kwargs[name] = int(raw)
                elif isinstance(default, float):
                    kwargs[name] = float(raw)
                else:
                    kwargs[name] = str(raw).strip()
            except ValueError:
                raise UsageError(f"bad value for {key!r}: {raw!r}") from None
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = ["[run]"]
        for f in fields(self):
            v = getattr(self, f.name)
            key = "lambda" if f.name == "lam" else f.name
            if isinstance(v, tuple):
                v = ",".join(str(s) for s in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"
