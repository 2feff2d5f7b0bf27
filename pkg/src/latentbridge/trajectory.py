"""Gaussian-process interpolation between classes in the joint latent space.

The GP runs over a scalar pseudotime in [0, 1] with an RBF kernel and a zero
prior mean.  All latent dimensions share one kernel matrix and therefore
one Cholesky factor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalError, ShapeError, UsageError


def rbf_kernel(x, x_prime, sigma: float) -> float:
    """exp(-|x - x'|^2 / (2 sigma^2))."""
    if not sigma > 0:
        raise UsageError(f"kernel sigma must be positive, got {sigma}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=np.float64))
    if x.shape != x_prime.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_prime.shape}")
    d = x - x_prime
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma ** 2)))


def rbf_matrix(a, b, sigma: float) -> np.ndarray:
    """Kernel matrix between two sets of scalar inputs."""
    if not sigma > 0:
        raise UsageError(f"kernel sigma must be positive, got {sigma}")
    a = np.asarray(a, dtype=np.float64)[:, None]
    b = np.asarray(b, dtype=np.float64)[None, :]
    return np.exp(-((a - b) ** 2) / (2.0 * sigma ** 2))


@dataclass(frozen=True)
class GPModel:
    train_inputs: np.ndarray  # (n,), ascending
    train_targets: np.ndarray  # (n, d)
    kernel_sigma: float
    jitter: float
    cholesky_factor: np.ndarray  # lower triangular factor of K + jitter*I
    weights: np.ndarray  # (K + jitter*I)^-1 Y


@dataclass(frozen=True)
class GPPrediction:
    mean: np.ndarray  # (T, d)
    covariance: np.ndarray  # (T, T), shared by every latent dimension


def gp_fit(inputs, targets, sigma: float = 0.5, jitter: float = 1e-8) -> GPModel:
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[:, None]
    if len(inputs) < 2:
        raise UsageError("need at least two training inputs")
    if len(targets) != len(inputs):
        raise ShapeError(f"{len(inputs)} inputs but {len(targets)} targets")
    if not jitter > 0:
        raise UsageError("jitter must be positive")
    order = np.argsort(inputs, kind="stable")
    inputs, targets = inputs[order], targets[order]
    if np.any(np.diff(inputs) == 0):
        raise UsageError("training inputs must be distinct")
    k = rbf_matrix(inputs, inputs, sigma)
    k[np.diag_indices_from(k)] += jitter
    try:
        chol = linalg.cholesky(k, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Cholesky factorization failed ({exc}); try a larger jitter than {jitter}") from None
    weights = linalg.cho_solve((chol, True), targets)
    return GPModel(inputs, targets, float(sigma), float(jitter), chol, weights)


def gp_predict(model: GPModel, query_times) -> GPPrediction:
    """Posterior mean and covariance at ``query_times``."""
    q = np.asarray(query_times, dtype=np.float64).reshape(-1)
    k_star = rbf_matrix(model.train_inputs, q, model.kernel_sigma)  # (n, T)
    mean = k_star.T @ model.weights
    v = linalg.solve_triangular(model.cholesky_factor, k_star, lower=True)
    cov = rbf_matrix(q, q, model.kernel_sigma) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return GPPrediction(mean, cov)


@dataclass
class Trajectory:
    times: np.ndarray  # (T,)
    latent_points: np.ndarray  # (T, d)
    decoded_images: np.ndarray  # (T, P, P, 3)
    decoded_expression: np.ndarray  # (T, G)
    prediction: GPPrediction | None = None


def endpoint_anchors(class_a_latents, class_b_latents, anchors_per_class=None, rng=None):
    """Pseudotimes and latent targets for the GP.

    ``anchors_per_class=None`` (centroid mode) uses one class centroid at
    t = 0 and one at t = 1.  Otherwise ``k`` members are drawn from each
    class; since the GP needs distinct inputs they are spread over [0, 0.1]
    and [0.9, 1], ordered by their projection on the centroid-to-centroid
    direction.
    """
    a = np.asarray(class_a_latents, dtype=np.float64)
    b = np.asarray(class_b_latents, dtype=np.float64)
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    if anchors_per_class is None:
        return np.array([0.0, 1.0]), np.stack([ca, cb])
    k = int(anchors_per_class)
    if k < 1:
        raise UsageError("anchors_per_class must be >= 1")
    rng = np.random.default_rng(rng)
    direction = cb - ca
    pa = a[rng.choice(len(a), size=min(k, len(a)), replace=False)]
    pb = b[rng.choice(len(b), size=min(k, len(b)), replace=False)]
    pa = pa[np.argsort(pa @ direction, kind="stable")]
    pb = pb[np.argsort(pb @ direction, kind="stable")]
    ta = np.linspace(0.0, 0.1, len(pa)) if len(pa) > 1 else np.zeros(1)
    tb = np.linspace(0.9, 1.0, len(pb)) if len(pb) > 1 else np.ones(1)
    return np.concatenate([ta, tb]), np.concatenate([pa, pb])


def interpolate_classes(model, class_a: int, class_b: int, embeddings: dict,
                        anchors_per_class: int | None = None, steps: int = 20,
                        sigma: float = 0.5, seed: int = 0, jitter: float = 1e-8,
                        sample_posterior: bool = False) -> Trajectory:
    """Fit a GP between two classes and decode ``steps`` points along it.

    ``embeddings`` maps class id to an (n, d) array of latent means.  With
    ``sample_posterior`` the decoded path is one posterior draw instead of
    the posterior mean.
    """
    for c in (class_a, class_b):
        if c not in embeddings or len(embeddings[c]) == 0:
            raise UsageError(f"unknown class {c!r}; known: {sorted(embeddings)}")
    if steps < 2:
        raise UsageError("steps must be >= 2")
    rng = np.random.default_rng(seed)
    times, targets = endpoint_anchors(embeddings[class_a], embeddings[class_b],
                                      anchors_per_class, rng)
    gp = gp_fit(times, targets, sigma, jitter)
    query = np.linspace(0.0, 1.0, steps)
    pred = gp_predict(gp, query)
    path = pred.mean
    if sample_posterior:
        # eigh tolerates the numerically semidefinite posterior covariance
        w, v = np.linalg.eigh(pred.covariance)
        root = v * np.sqrt(np.clip(w, 0.0, None))
        path = path + root @ rng.standard_normal(path.shape)
    _, images = model.image_vae.decode(path)
    p = model.image_vae.image_size
    expression = model.rna_vae.decode(path)
    return Trajectory(query, path, images.reshape(steps, p, p, 3), expression, pred)


def expression_kinetics(traj: Trajectory) -> np.ndarray:
    """Per-gene time series, shape (G, T)."""
    return np.ascontiguousarray(np.asarray(traj.decoded_expression).T)
