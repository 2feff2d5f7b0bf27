"""k-Shape clustering of expression time series.

Distances are shape-based (SBD): one minus the best normalized
cross-correlation over all relative shifts, computed through zero-padded
FFTs.  Series are z-normalized first.  Series whose standard deviation is
tiny relative to the largest one in the set can optionally be flattened to
the zero vector (``flat_tol``), which is how "no significant change" genes
end up in one cluster: two zero vectors are at distance 0 from each other
and at distance 1 from everything else.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ShapeError, UsageError

_SD_FLOOR = 1e-12


@dataclass
class GeneSeries:
    gene_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.values) < 2:
            raise ShapeError("a gene series needs at least two time points")
        if not np.all(np.isfinite(self.values)):
            raise UsageError(f"series {self.gene_id!r} has non-finite values")


@dataclass
class KShapeResult:
    assignments: dict  # gene_id -> cluster index
    labels: np.ndarray  # cluster index per input series, in input order
    centroids: np.ndarray  # (k, T)
    iterations: int
    inertia: float
    inertia_history: list = field(default_factory=list)


def znormalize(x) -> np.ndarray:
    """Zero mean, unit population standard deviation along the last axis.

    Constant series map to the zero vector.
    """
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    flat = sd < _SD_FLOOR
    return np.where(flat, 0.0, centered / np.where(flat, 1.0, sd))


def cross_correlation(x, y) -> np.ndarray:
    """CC_w = sum_i x_i y_{i+w} for w = -(T-1) .. T-1 (zero padding).

    Broadcasts over leading axes of ``x`` and ``y``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = x.shape[-1]
    if y.shape[-1] != t:
        raise ShapeError(f"series lengths {t} and {y.shape[-1]} differ")
    size = 1 << (2 * t - 2).bit_length()
    r = np.fft.irfft(np.conj(np.fft.rfft(x, size)) * np.fft.rfft(y, size), size)
    return np.concatenate([r[..., size - (t - 1):], r[..., :t]], axis=-1)


def _sbd_many(x, y):
    """Distances and shifts between broadcast stacks of series."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    t = x.shape[-1]
    cc = cross_correlation(x, y)
    nx = np.linalg.norm(x, axis=-1)
    ny = np.linalg.norm(y, axis=-1)
    den = nx * ny
    zx, zy = nx < _SD_FLOOR, ny < _SD_FLOOR
    safe = np.where(den > 0, den, 1.0)
    ncc = cc / safe[..., None]
    best = np.argmax(ncc, axis=-1)
    dist = 1.0 - np.take_along_axis(ncc, best[..., None], axis=-1)[..., 0]
    dist = np.clip(dist, 0.0, 2.0)
    shift = best - (t - 1)
    either = zx | zy
    dist = np.where(either, np.where(zx & zy, 0.0, 1.0), dist)
    shift = np.where(either, 0, shift)
    return dist, shift


def sbd(x, y):
    """Shape-based distance in [0, 2] and the shift ``w`` maximizing CC_w(x, y).

    ``w`` means ``y[i + w]`` lines up with ``x[i]``.  A zero vector is at
    distance 1 from any non-zero series and 0 from another zero vector.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"sbd needs two equal-length vectors, got {x.shape} and {y.shape}")
    d, s = _sbd_many(x, y)
    return float(d), int(s)


def shift_series(y, w: int) -> np.ndarray:
    """Series ``a`` with ``a[i] = y[i + w]``, zero-filled outside the range."""
    y = np.asarray(y, dtype=np.float64)
    out = np.zeros_like(y)
    t = len(y)
    if w >= t or -w >= t:
        return out
    if w >= 0:
        out[:t - w] = y[w:]
    else:
        out[-w:] = y[:t + w]
    return out


def shape_extraction(members, current_centroid=None) -> np.ndarray:
    """Centroid update: align members to the current centroid, then take the
    dominant eigenvector of Q^T S Q (S = aligned scatter, Q = centering).

    The sign is chosen to correlate non-negatively with the aligned mean; the
    result is z-normalized.  All-zero members give the zero vector.
    """
    x = np.atleast_2d(np.asarray(members, dtype=np.float64))
    if len(x) == 0:
        raise UsageError("shape extraction needs at least one member")
    t = x.shape[1]
    if current_centroid is not None and np.any(current_centroid):
        _, shifts = _sbd_many(np.asarray(current_centroid)[None, :], x)
        aligned = np.stack([shift_series(m, int(w)) for m, w in zip(x, shifts)])
    else:
        aligned = x
    if not np.any(aligned):
        return np.zeros(t)
    centered = aligned - aligned.mean(axis=1, keepdims=True)  # rows times Q
    m = centered.T @ centered
    _, vecs = np.linalg.eigh(m)
    c = vecs[:, -1]
    if c @ aligned.mean(axis=0) < 0:
        c = -c
    return znormalize(c)


def _prepare(series, flat_tol: float):
    if isinstance(series, np.ndarray):
        values = np.asarray(series, dtype=np.float64)
        ids = [str(i) for i in range(len(values))]
    else:
        series = [s if isinstance(s, GeneSeries) else GeneSeries(str(i), s)
                  for i, s in enumerate(series)]
        ids = [s.gene_id for s in series]
        lengths = {len(s.values) for s in series}
        if len(lengths) > 1:
            raise ShapeError(f"series have different lengths {sorted(lengths)}")
        values = np.stack([s.values for s in series]) if series else np.zeros((0, 2))
    if values.ndim != 2 or values.shape[1] < 2:
        raise ShapeError("expected an (n, T) array of series with T >= 2")
    z = znormalize(values)
    if flat_tol > 0 and len(values):
        sd = values.std(axis=1)
        z[sd < flat_tol * sd.max()] = 0.0
    return ids, z


def _seed_centroids(x, k, rng):
    """k-means++ style seeding under SBD."""
    n = len(x)
    chosen = [int(rng.integers(n))]
    closest = _sbd_many(x[chosen[0]][None, :], x)[0]
    for _ in range(1, k):
        p = closest ** 2
        total = p.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=p / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        closest = np.minimum(closest, _sbd_many(x[nxt][None, :], x)[0])
    return x[chosen].copy()


def _distances(x, centroids):
    return _sbd_many(x[:, None, :], centroids[None, :, :])[0]  # (n, k)


def _assign(dist):
    return np.argmin(dist, axis=1)


def _reseed_empty(x, labels, dist, centroids, k):
    for j in range(k):
        if np.any(labels == j):
            continue
        own = dist[np.arange(len(x)), labels]
        # only take from clusters that keep at least one member
        counts = np.bincount(labels, minlength=k)
        own = np.where(counts[labels] > 1, own, -np.inf)
        far = int(np.argmax(own))
        labels[far] = j
        centroids[j] = x[far]
        dist[:, j] = _sbd_many(x, centroids[j][None, :])[0]
    return labels


def _run(x, k, max_iter, rng):
    centroids = _seed_centroids(x, k, rng)
    dist = _distances(x, centroids)
    labels = _assign(dist)
    labels = _reseed_empty(x, labels, dist, centroids, k)
    inertia = float(dist[np.arange(len(x)), labels].sum())
    history = [inertia]
    it = 0
    for it in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        for j in range(k):
            new_centroids[j] = shape_extraction(x[labels == j], centroids[j])
        new_dist = _distances(x, new_centroids)
        new_labels = _reassign(new_dist, labels)
        new_labels = _reseed_empty(x, new_labels, new_dist, new_centroids, k)
        new_inertia = float(new_dist[np.arange(len(x)), new_labels].sum())
        if new_inertia > inertia:
            # keep the better previous state
            break
        converged = np.array_equal(new_labels, labels)
        centroids, labels, dist, inertia = new_centroids, new_labels, new_dist, new_inertia
        history.append(inertia)
        if converged:
            break
    return labels, centroids, inertia, it, history


def _reassign(dist, labels):
    """argmin, but keep the current cluster when it is tied for best."""
    best = dist.min(axis=1)
    keep = dist[np.arange(len(labels)), labels] <= best
    return np.where(keep, labels, np.argmin(dist, axis=1))


def kshape_cluster(series: Sequence | np.ndarray, k: int = 3, max_iter: int = 100, seed: int = 0,
                   n_init: int = 10, flat_tol: float = 0.0) -> KShapeResult:
    """Cluster series by shape.

    ``series`` is a list of :class:`GeneSeries` (or plain arrays) or an
    (n, T) array.  ``n_init`` seeded restarts are run and the one with the
    lowest inertia (sum of member-to-centroid SBD) is kept.
    """
    ids, x = _prepare(series, flat_tol)
    n = len(x)
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > n:
        raise UsageError(f"k={k} exceeds the number of series ({n})")
    if n_init < 1:
        raise UsageError("n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _run(x, k, max_iter, rng)
        if best is None or run[2] < best[2]:
            best = run
    labels, centroids, inertia, iterations, history = best
    return KShapeResult(dict(zip(ids, labels.tolist())), labels, centroids, iterations,
                        inertia, history)
