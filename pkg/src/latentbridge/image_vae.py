"""Image-side beta-VAE: RoI features -> latent -> (features, masked cell image)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ShapeError, UsageError
from .nn_core import (
    MLP,
    Activation,
    Adam,
    GradTape,
    LatentDistribution,
    kl_standard_normal,
    kl_standard_normal_grad,
    mse,
    reparameterize,
    split_latent,
)


@dataclass
class CellImageSample:
    features: np.ndarray  # flattened C*H*W
    mask: np.ndarray  # (P, P) of {0, 1}
    image: np.ndarray  # (P, P, 3) in [0, 1]
    class_label: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        self.image = np.asarray(self.image, dtype=np.float64)
        if self.image.shape != self.mask.shape + (3,):
            raise ShapeError(f"image {self.image.shape} and mask {self.mask.shape} disagree")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise UsageError("mask must be binary")


@dataclass
class ImageDataset:
    """Column-stacked image samples."""

    features: np.ndarray  # (N, F)
    masks: np.ndarray  # (N, P, P)
    images: np.ndarray  # (N, P, P, 3)
    labels: np.ndarray  # (N,) int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.masks = np.asarray(self.masks, dtype=np.float64)
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if not (len(self.features) == len(self.masks) == len(self.images) == n):
            raise ShapeError("image dataset columns have different lengths")
        if self.images.shape[1:] != self.masks.shape[1:] + (3,):
            raise ShapeError(f"images {self.images.shape} and masks {self.masks.shape} disagree")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> CellImageSample:
        return CellImageSample(self.features[i], self.masks[i], self.images[i], int(self.labels[i]))

    @classmethod
    def from_samples(cls, samples) -> "ImageDataset":
        samples = list(samples)
        return cls(np.stack([s.features for s in samples]), np.stack([s.mask for s in samples]),
                   np.stack([s.image for s in samples]),
                   np.array([s.class_label for s in samples]))


@dataclass(frozen=True)
class ImageLossWeights:
    alpha: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "gamma", "beta", "delta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"loss weight {name}={v} must be finite and non-negative")


@dataclass
class ImageVae:
    """Encoder plus chained feature and image decoders.

    ``image_from_true_features`` switches the image decoder input from the
    reconstructed features to the true ones during training.
    """

    encoder: MLP
    feature_decoder: MLP
    image_decoder: MLP
    feature_shape: tuple
    image_size: int
    image_from_true_features: bool = False

    def __post_init__(self):
        self.feature_shape = tuple(int(s) for s in self.feature_shape)
        f = self.feature_len
        d = self.latent_dim
        if self.encoder.in_size != f or self.encoder.out_size != 2 * d:
            raise ShapeError(f"encoder {self.encoder.sizes} does not map {f} -> {2 * d}")
        if self.feature_decoder.sizes[0] != d or self.feature_decoder.out_size != f:
            raise ShapeError(f"feature decoder {self.feature_decoder.sizes} does not map {d} -> {f}")
        if self.image_decoder.in_size != f or self.image_decoder.out_size != self.image_len:
            raise ShapeError(
                f"image decoder {self.image_decoder.sizes} does not map {f} -> {self.image_len}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_size // 2

    @property
    def feature_len(self) -> int:
        return int(np.prod(self.feature_shape))

    @property
    def image_len(self) -> int:
        return 3 * self.image_size ** 2

    @classmethod
    def create(cls, feature_shape=(16, 4, 4), image_size=32, latent_dim=8, rng=None,
               encoder_hidden=256, feature_hidden=256, image_hidden=512,
               image_from_true_features=False) -> "ImageVae":
        rng = np.random.default_rng(rng)
        f = int(np.prod(feature_shape))
        enc = MLP.build([f, encoder_hidden, 2 * latent_dim], rng=rng)
        fdec = MLP.build([latent_dim, feature_hidden, f], rng=rng)
        idec = MLP.build([f, image_hidden, 3 * image_size ** 2], output=Activation.SIGMOID, rng=rng)
        return cls(enc, fdec, idec, tuple(feature_shape), image_size, image_from_true_features)

    def networks(self) -> dict[str, MLP]:
        return {"encoder": self.encoder, "feature_decoder": self.feature_decoder,
                "image_decoder": self.image_decoder}

    def parameters(self) -> list[np.ndarray]:
        return (self.encoder.parameters() + self.feature_decoder.parameters()
                + self.image_decoder.parameters())

    def encode(self, features) -> LatentDistribution:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.feature_len:
            raise ShapeError(f"features have length {features.shape[-1]}, expected {self.feature_len}")
        ld, _ = split_latent(self.encoder(features))
        return ld

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent has length {z.shape[-1]}, expected {self.latent_dim}")
        f_hat = self.feature_decoder(z)
        return f_hat, self.image_decoder(f_hat)


def encode_image(vae: ImageVae, sample: CellImageSample) -> LatentDistribution:
    return vae.encode(sample.features)


def decode_image(vae: ImageVae, z):
    """Returns ``(features_hat, image_hat)``; ``image_hat`` has shape (P, P, 3)."""
    f_hat, i_hat = vae.decode(z)
    p = vae.image_size
    return f_hat, i_hat.reshape(np.shape(z)[:-1] + (p, p, 3))


def masked_recon_loss(image_hat, image, mask):
    """MSE between mask*image_hat and mask*image; the mask broadcasts over RGB.

    Leading axes are treated as a batch.
    """
    image_hat = np.asarray(image_hat, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image_hat.shape != image.shape or image.shape[:-1] != mask.shape:
        raise ShapeError(f"shapes {image_hat.shape}, {image.shape}, mask {mask.shape} disagree")
    m = mask[..., None]
    d = m * image_hat - m * image
    return np.mean((d * d).reshape(d.shape[:-3] + (-1,)), axis=-1)


@dataclass
class ImageLossTerms:
    recon_feat: float
    recon_img: float
    kl: float
    align: float
    total: float


def image_loss_terms(vae: ImageVae, sample: CellImageSample, weights: ImageLossWeights,
                     align_term: float = 0.0, noise=None) -> ImageLossTerms:
    ld = encode_image(vae, sample)
    noise = np.zeros(vae.latent_dim) if noise is None else noise
    z = reparameterize(ld, noise)
    f_hat = vae.feature_decoder(z)
    dec_in = sample.features if vae.image_from_true_features else f_hat
    i_hat = vae.image_decoder(dec_in).reshape(sample.image.shape)
    rf = float(mse(f_hat, sample.features))
    ri = float(masked_recon_loss(i_hat, sample.image, sample.mask))
    kl = float(kl_standard_normal(ld))
    total = (weights.alpha * rf + weights.gamma * ri + weights.beta * kl
             + weights.delta * align_term)
    return ImageLossTerms(rf, ri, kl, align_term, total)


def image_vae_loss(vae: ImageVae, sample: CellImageSample, weights: ImageLossWeights,
                   align_term: float = 0.0, noise=None) -> float:
    """Weighted image loss for one sample.

    ``noise`` is the reparameterization draw; ``None`` decodes from the mean.
    ``align_term`` is the cross-modal penalty computed elsewhere.
    """
    return image_loss_terms(vae, sample, weights, align_term, noise).total


# Callback type: (labels, mu batch) -> (align value, d align / d mu)
AlignFn = Callable[[np.ndarray, np.ndarray], tuple]


def batch_loss_and_grads(vae: ImageVae, features, masks, images, labels, noise,
                         weights: ImageLossWeights, align_fn: AlignFn | None = None):
    """Batch objective and its exact gradients.

    The objective is the batch mean of the per-sample alpha/gamma/beta terms
    plus ``delta * align_fn(labels, mu)``.  Returns ``(terms, grads)`` where
    ``terms`` holds batch-mean components and ``grads`` follows
    ``vae.parameters()``.
    """
    b = len(features)
    t_enc, t_fdec, t_idec = GradTape(), GradTape(), GradTape()
    raw = vae.encoder.forward(features, t_enc)
    ld, inside = split_latent(raw)
    z = reparameterize(ld, noise)
    f_hat = vae.feature_decoder.forward(z, t_fdec)
    dec_in = features if vae.image_from_true_features else f_hat
    i_hat = vae.image_decoder.forward(dec_in, t_idec)

    img_flat = images.reshape(b, -1)
    m = masks[..., None].repeat(3, axis=-1).reshape(b, -1)
    diff_f = f_hat - features
    diff_i = m * i_hat - m * img_flat
    rf = np.mean(diff_f * diff_f, axis=1)
    ri = np.mean(diff_i * diff_i, axis=1)
    kl = kl_standard_normal(ld)

    align_val = 0.0
    g_mu_align = None
    if align_fn is not None and weights.delta != 0.0:
        align_val, g_mu_align = align_fn(labels, ld.mu)

    total = (weights.alpha * rf.mean() + weights.gamma * ri.mean() + weights.beta * kl.mean()
             + weights.delta * align_val)

    g_ihat = (weights.gamma * 2.0 / (img_flat.shape[1] * b)) * (m * diff_i)
    g_idec, g_dec_in = vae.image_decoder.backward(t_idec, g_ihat)
    g_fhat = (weights.alpha * 2.0 / (features.shape[1] * b)) * diff_f
    if not vae.image_from_true_features:
        g_fhat = g_fhat + g_dec_in
    g_fdec, g_z = vae.feature_decoder.backward(t_fdec, g_fhat)

    kmu, klv = kl_standard_normal_grad(ld)
    g_mu = g_z + (weights.beta / b) * kmu
    if g_mu_align is not None:
        g_mu = g_mu + weights.delta * g_mu_align
    g_lv = g_z * noise * 0.5 * np.exp(0.5 * ld.logvar) + (weights.beta / b) * klv
    g_lv = g_lv * inside
    g_enc, _ = vae.encoder.backward(t_enc, np.concatenate([g_mu, g_lv], axis=1))

    terms = ImageLossTerms(float(rf.mean()), float(ri.mean()), float(kl.mean()),
                           float(align_val), float(total))
    return terms, g_enc + g_fdec + g_idec


def stratified_batches(labels, batch_size: int, rng: np.random.Generator):
    """Shuffle and split indices so that every batch holds every class.

    Each class's shuffled members are split into the same number of chunks;
    classes too small for that are cycled.
    """
    labels = np.asarray(labels)
    n = len(labels)
    n_batches = max(1, -(-n // batch_size))
    classes = np.unique(labels)
    per_class = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < n_batches:
            idx = np.resize(idx, n_batches)
        per_class.append(np.array_split(idx, n_batches))
    return [np.sort(np.concatenate([chunks[i] for chunks in per_class]))
            for i in range(n_batches)]


@dataclass
class TrainHistory:
    """Per-epoch batch-averaged loss components."""

    columns: tuple
    rows: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    @property
    def total(self) -> np.ndarray:
        return self.column("total")


IMAGE_HISTORY_COLUMNS = ("epoch", "total", "recon_img", "recon_feat", "kl", "align")


def train_image_vae(vae: ImageVae, dataset: ImageDataset, weights: ImageLossWeights = ImageLossWeights(),
                    epochs: int = 160, lr: float = 1e-3, seed: int = 0, batch_size: int = 32,
                    align_fn: AlignFn | None = None):
    """Adam training of ``vae`` in place; returns ``(vae, history)``.

    One standard-normal draw per sample per epoch.  Batches are
    class-stratified so that ``align_fn`` always sees every class.
    """
    if len(dataset) == 0:
        raise UsageError("cannot train on an empty dataset")
    if epochs < 1:
        raise UsageError("epochs must be >= 1")
    rng = np.random.default_rng(seed)
    opt = Adam(vae.parameters(), lr=lr)
    hist = TrainHistory(IMAGE_HISTORY_COLUMNS)
    d = vae.latent_dim
    for epoch in range(1, epochs + 1):
        noise = rng.standard_normal((len(dataset), d))
        acc = np.zeros(5)
        batches = stratified_batches(dataset.labels, batch_size, rng)
        for idx in batches:
            terms, grads = batch_loss_and_grads(
                vae, dataset.features[idx], dataset.masks[idx], dataset.images[idx],
                dataset.labels[idx], noise[idx], weights, align_fn)
            opt.step(grads)
            acc += [terms.total, terms.recon_img, terms.recon_feat, terms.kl, terms.align]
        hist.rows.append((epoch, *(acc / len(batches))))
    return vae, hist
