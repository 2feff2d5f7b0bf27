"""Class-moment alignment between the two latent embeddings, and the
two-phase training schedule (RNA first, then image against the frozen RNA
moments)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax

from .errors import UsageError
from .image_vae import ImageDataset, ImageLossWeights, ImageVae, TrainHistory, train_image_vae
from .rna_vae import RnaDataset, RnaLossWeights, RnaVae, train_rna_vae


@dataclass
class ClassMoments:
    class_id: int
    mean: np.ndarray  # (d,)
    cov_softmax: np.ndarray  # (d*d,), a probability vector
    log_cov_softmax: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.log_cov_softmax is None:
            self.log_cov_softmax = np.log(self.cov_softmax)


def _class_cov(points):
    centered = points - points.mean(axis=0)
    return centered.T @ centered / len(points)


def class_moments(labels, mus) -> dict[int, ClassMoments]:
    """Per-class mean and softmax of the flattened population covariance.

    A class with a single member has zero covariance, so its softmax is
    uniform.
    """
    labels = np.asarray(labels)
    mus = np.asarray(mus, dtype=np.float64)
    if len(labels) != len(mus):
        raise UsageError("labels and embeddings have different lengths")
    if len(labels) == 0:
        raise UsageError("no embeddings given")
    out = {}
    for c in np.unique(labels):
        pts = mus[labels == c]
        logs = log_softmax(_class_cov(pts).reshape(-1))
        out[int(c)] = ClassMoments(int(c), pts.mean(axis=0), np.exp(logs), logs)
    return out


def discrete_kl(log_p, log_q) -> float:
    """KL(p || q) for probability vectors given by their logs."""
    return float(np.sum(np.exp(log_p) * (log_p - log_q)))


def align_loss(img_moments: dict, rna_moments: dict) -> float:
    """Sum over classes of MSE(mean_img, mean_rna) + KL(s_img || s_rna)."""
    if set(img_moments) != set(rna_moments):
        raise UsageError(
            f"class sets differ: image {sorted(img_moments)} vs rna {sorted(rna_moments)}")
    total = 0.0
    for c in sorted(img_moments):
        a, b = img_moments[c], rna_moments[c]
        diff = a.mean - b.mean
        total += float(np.mean(diff * diff)) + discrete_kl(a.log_cov_softmax, b.log_cov_softmax)
    return total


def align_loss_grad(labels, img_mus, rna_moments: dict):
    """Alignment loss of a batch of image means and its gradient w.r.t. them.

    Every class of ``rna_moments`` must be present in ``labels``.
    """
    labels = np.asarray(labels)
    img_mus = np.asarray(img_mus, dtype=np.float64)
    present = set(np.unique(labels).tolist())
    if present != set(rna_moments):
        raise UsageError(f"batch classes {sorted(present)} differ from {sorted(rna_moments)}")
    d = img_mus.shape[1]
    grad = np.zeros_like(img_mus)
    total = 0.0
    for c in sorted(rna_moments):
        ref = rna_moments[c]
        sel = labels == c
        pts = img_mus[sel]
        n = len(pts)
        mean = pts.mean(axis=0)
        centered = pts - mean
        log_p = log_softmax((centered.T @ centered / n).reshape(-1))
        p = np.exp(log_p)
        diff = mean - ref.mean
        kl = float(np.sum(p * (log_p - ref.log_cov_softmax)))
        total += float(np.mean(diff * diff)) + kl
        g_logits = (p * (log_p - ref.log_cov_softmax - kl)).reshape(d, d)
        # centered rows sum to zero, so the mean's dependence drops out here
        g = centered @ (g_logits + g_logits.T) / n
        g += (2.0 / (d * n)) * diff
        grad[sel] = g
    return total, grad


@dataclass(frozen=True)
class TrainSchedule:
    rna_epochs: int = 300
    image_epochs: int = 160
    lr: float = 1e-3
    batch_size: int = 32

    def __post_init__(self):
        if self.rna_epochs < 1 or self.image_epochs < 1:
            raise UsageError("epochs must be >= 1")
        if not self.lr > 0:
            raise UsageError("lr must be positive")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")


@dataclass
class JointModel:
    image_vae: ImageVae
    rna_vae: RnaVae
    classes: list

    def __post_init__(self):
        if self.image_vae.latent_dim != self.rna_vae.latent_dim:
            raise UsageError(
                f"latent dimensions differ: image {self.image_vae.latent_dim}, "
                f"rna {self.rna_vae.latent_dim}")

    @property
    def latent_dim(self):
        return self.rna_vae.latent_dim

    def embed(self, image_data: ImageDataset | None = None, rna_data: RnaDataset | None = None):
        """Posterior means of each dataset: ``(image_mu, rna_mu)``."""
        img = None if image_data is None else self.image_vae.encode(image_data.features).mu
        rna = None if rna_data is None else self.rna_vae.encode(rna_data.expression).mu
        return img, rna


@dataclass
class JointHistory:
    rna: TrainHistory
    image: TrainHistory


def train_joint(image_vae: ImageVae, rna_vae: RnaVae, image_data: ImageDataset,
                rna_data: RnaDataset, image_weights=ImageLossWeights(),
                rna_weights=RnaLossWeights(), schedule=TrainSchedule(), seed: int = 0):
    """Phase 1 trains the RNA VAE alone; phase 2 freezes it and trains the
    image VAE with the alignment term against the frozen per-class moments.

    Models are trained in place and returned as a :class:`JointModel`.
    """
    if len(image_data) == 0 or len(rna_data) == 0:
        raise UsageError("both datasets must be non-empty")
    img_classes = set(np.unique(image_data.labels).tolist())
    rna_classes = set(np.unique(rna_data.labels).tolist())
    if img_classes != rna_classes:
        only = sorted(img_classes ^ rna_classes)
        raise UsageError(f"classes {only} are present in only one modality")

    _, rna_hist = train_rna_vae(rna_vae, rna_data, rna_weights, schedule.rna_epochs,
                                schedule.lr, seed, schedule.batch_size)

    # computed once: the RNA side is never updated in phase 2
    rna_moments = class_moments(rna_data.labels, rna_vae.encode(rna_data.expression).mu)

    def align_fn(labels, mus):
        return align_loss_grad(labels, mus, rna_moments)

    _, img_hist = train_image_vae(image_vae, image_data, image_weights, schedule.image_epochs,
                                  schedule.lr, seed, schedule.batch_size, align_fn)
    model = JointModel(image_vae, rna_vae, sorted(img_classes))
    return model, JointHistory(rna_hist, img_hist)
