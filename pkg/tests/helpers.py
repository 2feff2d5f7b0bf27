"""Small fixtures shared by the test modules."""
import numpy as np

from latentbridge.image_vae import ImageDataset, ImageVae
from latentbridge.rna_vae import RnaDataset, RnaVae


def _jitter_biases(vae, seed):
    # zero biases can put pre-activations exactly on a ReLU kink
    rng = np.random.default_rng(seed + 1000)
    for net in vae.networks().values():
        for layer in net.layers:
            layer.bias += rng.normal(scale=0.1, size=layer.bias.shape)
    return vae


def tiny_image_vae(seed=0, latent_dim=2, from_true=False):
    return _jitter_biases(ImageVae.create(feature_shape=(2, 2, 2), image_size=3, latent_dim=latent_dim, rng=seed,
                           encoder_hidden=4, feature_hidden=4, image_hidden=5,
                           image_from_true_features=from_true), seed)


def tiny_image_batch(rng, n=6, classes=3, feature_len=8, size=3):
    feats = rng.normal(size=(n, feature_len))
    masks = (rng.random((n, size, size)) > 0.4).astype(float)
    images = rng.random((n, size, size, 3))
    labels = np.arange(n) % classes
    return ImageDataset(feats, masks, images, labels)


def tiny_rna_vae(seed=0, genes=6, latent_dim=3, cosine_on_mu=False):
    return _jitter_biases(RnaVae.create(genes, latent_dim, hidden=5, rng=seed, cosine_on_mu=cosine_on_mu), seed)


def tiny_rna_batch(rng, n=5, genes=6, latent_dim=3, classes=2):
    labels = np.arange(n) % classes
    anchors = rng.normal(size=(classes, latent_dim))
    return RnaDataset.with_class_anchors(rng.random((n, genes)) * 2, labels, anchors)
