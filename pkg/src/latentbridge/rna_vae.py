"""Expression-side beta-VAE with a cosine pull toward reference-atlas anchors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError
from .image_vae import TrainHistory
from .nn_core import (
    MLP,
    Adam,
    GradTape,
    LatentDistribution,
    kl_standard_normal,
    kl_standard_normal_grad,
    mse,
    reparameterize,
    split_latent,
)

_NORM_FLOOR = 1e-12


@dataclass
class ExpressionProfile:
    expression: np.ndarray
    atlas_anchor: np.ndarray | None = None
    class_label: int = 0

    def __post_init__(self):
        self.expression = np.asarray(self.expression, dtype=np.float64)
        if self.atlas_anchor is not None:
            self.atlas_anchor = np.asarray(self.atlas_anchor, dtype=np.float64)


@dataclass
class RnaDataset:
    expression: np.ndarray  # (N, G)
    labels: np.ndarray  # (N,)
    anchors: np.ndarray | None = None  # (N, d), one row per sample

    def __post_init__(self):
        self.expression = np.asarray(self.expression, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.expression) != len(self.labels):
            raise ShapeError("expression and labels have different lengths")
        if self.anchors is not None:
            self.anchors = np.asarray(self.anchors, dtype=np.float64)
            if len(self.anchors) != len(self.labels):
                raise ShapeError("anchors and labels have different lengths")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> ExpressionProfile:
        a = None if self.anchors is None else self.anchors[i]
        return ExpressionProfile(self.expression[i], a, int(self.labels[i]))

    @classmethod
    def with_class_anchors(cls, expression, labels, class_anchors) -> "RnaDataset":
        """Broadcast one anchor row per class to every member of that class."""
        labels = np.asarray(labels, dtype=np.int64)
        class_anchors = np.asarray(class_anchors, dtype=np.float64)
        if labels.size and labels.max() >= len(class_anchors):
            raise UsageError(f"label {labels.max()} has no anchor row")
        return cls(expression, labels, class_anchors[labels])


@dataclass(frozen=True)
class RnaLossWeights:
    lam: float = 1.0
    phi: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("lam", "phi", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"loss weight {name}={v} must be finite and non-negative")


@dataclass
class RnaVae:
    encoder: MLP
    decoder: MLP
    cosine_on_mu: bool = False

    def __post_init__(self):
        d = self.encoder.out_size // 2
        if self.decoder.in_size != d or self.decoder.out_size != self.encoder.in_size:
            raise ShapeError(
                f"decoder {self.decoder.sizes} is not the mirror of encoder {self.encoder.sizes}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_size // 2

    @property
    def n_genes(self) -> int:
        return self.encoder.in_size

    @classmethod
    def create(cls, n_genes=50, latent_dim=8, hidden=128, rng=None, cosine_on_mu=False):
        rng = np.random.default_rng(rng)
        return cls(MLP.build([n_genes, hidden, 2 * latent_dim], rng=rng),
                   MLP.build([latent_dim, hidden, n_genes], rng=rng), cosine_on_mu)

    def networks(self) -> dict[str, MLP]:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def encode(self, expression) -> LatentDistribution:
        expression = np.asarray(expression, dtype=np.float64)
        if expression.shape[-1] != self.n_genes:
            raise ShapeError(f"expression has length {expression.shape[-1]}, expected {self.n_genes}")
        ld, _ = split_latent(self.encoder(expression))
        return ld

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent has length {z.shape[-1]}, expected {self.latent_dim}")
        return self.decoder(z)


def encode_rna(vae: RnaVae, profile: ExpressionProfile) -> LatentDistribution:
    return vae.encode(profile.expression)


def cosine_anchor_loss(z, anchor):
    """1 - cos(z, anchor), reduced over the last axis; lies in [0, 2]."""
    z = np.asarray(z, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    if z.shape[-1] != anchor.shape[-1]:
        raise ShapeError(f"lengths {z.shape[-1]} and {anchor.shape[-1]} differ")
    nz = np.linalg.norm(z, axis=-1)
    na = np.linalg.norm(anchor, axis=-1)
    if np.any(nz < _NORM_FLOOR) or np.any(na < _NORM_FLOOR):
        raise DegenerateInputError("cosine anchor loss is undefined for a zero-norm vector")
    cos = np.sum(z * anchor, axis=-1) / (nz * na)
    return 1.0 - np.clip(cos, -1.0, 1.0)


def cosine_anchor_grad(z, anchor):
    """d(1 - cos(z, anchor)) / dz."""
    z = np.asarray(z, dtype=np.float64)
    anchor = np.asarray(anchor, dtype=np.float64)
    nz = np.linalg.norm(z, axis=-1, keepdims=True)
    na = np.linalg.norm(anchor, axis=-1, keepdims=True)
    if np.any(nz < _NORM_FLOOR) or np.any(na < _NORM_FLOOR):
        raise DegenerateInputError("cosine anchor loss is undefined for a zero-norm vector")
    dot = np.sum(z * anchor, axis=-1, keepdims=True)
    return -(anchor / (nz * na) - dot * z / (nz ** 3 * na))


def rna_loss_terms(vae: RnaVae, profile: ExpressionProfile, weights: RnaLossWeights, noise=None):
    """Returns ``(recon, anchor, kl, total)`` for one profile."""
    if weights.phi > 0 and profile.atlas_anchor is None:
        raise UsageError("phi > 0 requires an atlas anchor on the profile")
    ld = encode_rna(vae, profile)
    noise = np.zeros(vae.latent_dim) if noise is None else noise
    z = reparameterize(ld, noise)
    recon = float(mse(vae.decode(z), profile.expression))
    anchor = 0.0
    if profile.atlas_anchor is not None and weights.phi > 0:
        anchor = float(cosine_anchor_loss(ld.mu if vae.cosine_on_mu else z, profile.atlas_anchor))
    kl = float(kl_standard_normal(ld))
    return recon, anchor, kl, weights.lam * recon + weights.phi * anchor + weights.beta * kl


def rna_vae_loss(vae: RnaVae, profile: ExpressionProfile, weights: RnaLossWeights,
                 noise=None) -> float:
    return rna_loss_terms(vae, profile, weights, noise)[3]


def batch_loss_and_grads(vae: RnaVae, expression, anchors, noise, weights: RnaLossWeights):
    """Batch-mean objective; returns ``((total, recon, anchor, kl), grads)``.

    Anchors are constants: no gradient is formed for them.
    """
    if weights.phi > 0 and anchors is None:
        raise UsageError("phi > 0 requires anchors")
    b = len(expression)
    t_enc, t_dec = GradTape(), GradTape()
    ld, inside = split_latent(vae.encoder.forward(expression, t_enc))
    z = reparameterize(ld, noise)
    x_hat = vae.decoder.forward(z, t_dec)
    diff = x_hat - expression
    recon = np.mean(diff * diff, axis=1)
    kl = kl_standard_normal(ld)
    anchor_val = np.zeros(b)
    if weights.phi > 0:
        target = ld.mu if vae.cosine_on_mu else z
        anchor_val = cosine_anchor_loss(target, anchors)
    total = weights.lam * recon.mean() + weights.phi * anchor_val.mean() + weights.beta * kl.mean()

    g_dec, g_z = vae.decoder.backward(t_dec, (weights.lam * 2.0 / (diff.shape[1] * b)) * diff)
    g_mu_extra = 0.0
    if weights.phi > 0:
        g_cos = (weights.phi / b) * cosine_anchor_grad(target, anchors)
        if vae.cosine_on_mu:
            g_mu_extra = g_cos
        else:
            g_z = g_z + g_cos
    kmu, klv = kl_standard_normal_grad(ld)
    g_mu = g_z + (weights.beta / b) * kmu + g_mu_extra
    g_lv = (g_z * noise * 0.5 * np.exp(0.5 * ld.logvar) + (weights.beta / b) * klv) * inside
    g_enc, _ = vae.encoder.backward(t_enc, np.concatenate([g_mu, g_lv], axis=1))
    terms = (float(total), float(recon.mean()), float(anchor_val.mean()), float(kl.mean()))
    return terms, g_enc + g_dec


RNA_HISTORY_COLUMNS = ("epoch", "total", "recon", "anchor", "kl")


def train_rna_vae(vae: RnaVae, dataset: RnaDataset, weights: RnaLossWeights = RnaLossWeights(),
                  epochs: int = 300, lr: float = 1e-3, seed: int = 0, batch_size: int = 32):
    """Adam training in place; returns ``(vae, history)``."""
    if len(dataset) == 0:
        raise UsageError("cannot train on an empty dataset")
    if epochs < 1:
        raise UsageError("epochs must be >= 1")
    if weights.phi > 0 and dataset.anchors is None:
        raise UsageError("phi > 0 requires anchors in the dataset")
    rng = np.random.default_rng(seed)
    opt = Adam(vae.parameters(), lr=lr)
    hist = TrainHistory(RNA_HISTORY_COLUMNS)
    n = len(dataset)
    for epoch in range(1, epochs + 1):
        noise = rng.standard_normal((n, vae.latent_dim))
        order = rng.permutation(n)
        acc = np.zeros(4)
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            anchors = None if dataset.anchors is None else dataset.anchors[idx]
            terms, grads = batch_loss_and_grads(vae, dataset.expression[idx], anchors,
                                                noise[idx], weights)
            opt.step(grads)
            acc += terms
            n_batches += 1
        hist.rows.append((epoch, *(acc / n_batches)))
    return vae, hist
