"""
Checking hand-written gradients
===============================

Every network in the package backpropagates through a hand-written tape.
Here we compare those gradients with central finite differences on a small
image VAE, then break one gradient on purpose to see the check fail.
"""

import numpy as np

from latentbridge.image_vae import ImageLossWeights, ImageVae, batch_loss_and_grads
from latentbridge.nn_core import grad_check

rng = np.random.default_rng(0)
vae = ImageVae.create(feature_shape=(2, 2, 2), image_size=4, latent_dim=2, rng=rng,
                      encoder_hidden=6, feature_hidden=6, image_hidden=6)
for net in vae.networks().values():
    for layer in net.layers:
        layer.bias += rng.normal(scale=0.1, size=layer.bias.shape)

n = 6
features = rng.normal(size=(n, 8))
masks = (rng.random((n, 4, 4)) > 0.3).astype(float)
images = rng.random((n, 4, 4, 3))
labels = np.arange(n) % 3
noise = rng.standard_normal((n, 2))
weights = ImageLossWeights(alpha=1.0, gamma=1.0, beta=0.5, delta=0.0)


def loss_fn(model):
    terms, grads = batch_loss_and_grads(model, features, masks, images, labels, noise, weights)
    return terms.total, grads


report = grad_check(vae, loss_fn)
print(f"{report.n_checked} parameters, max relative error {report.max_rel_error:.2e}")

###############################################################################
# A gradient that is off by a constant is caught immediately.


def broken(model):
    loss, grads = loss_fn(model)
    grads[0] = grads[0] + 0.1
    return loss, grads


print("corrupted gradient passes?", grad_check(vae, broken).passed)
