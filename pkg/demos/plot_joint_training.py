"""
Aligning the image latent space to the expression latent space
==============================================================

The expression VAE trains first.  Its per-class latent moments are then
frozen and the image VAE is trained with an extra penalty that pulls its
class means and covariance structure onto them.  A short schedule on a
small dataset is enough to see the alignment loss fall.
"""

import numpy as np

from latentbridge.alignment import TrainSchedule, train_joint
from latentbridge.datagen import SyntheticSpec, generate_synthetic
from latentbridge.image_vae import ImageLossWeights, ImageVae
from latentbridge.rna_vae import RnaLossWeights, RnaVae

data = generate_synthetic(SyntheticSpec(samples_per_class=60, seed=1))
image_vae = ImageVae.create(rng=1)
rna_vae = RnaVae.create(rng=2)

model, hist = train_joint(image_vae, rna_vae, data.image, data.rna,
                          ImageLossWeights(delta=10.0), RnaLossWeights(),
                          TrainSchedule(rna_epochs=60, image_epochs=20), seed=0)

align = hist.image.column("align")
print(f"alignment loss: epoch 1 {align[0]:.4f} -> epoch {len(align)} {align[-1]:.4f}")

###############################################################################
# Nearest-centroid classification in the shared space, with centroids
# pooled over both modalities.

img_mu, rna_mu = model.embed(data.image, data.rna)
mus = np.concatenate([img_mu, rna_mu])
labels = np.concatenate([data.image.labels, data.rna.labels])
centroids = np.stack([mus[labels == c].mean(0) for c in model.classes])
for name, m, lab in (("image", img_mu, data.image.labels), ("rna", rna_mu, data.rna.labels)):
    pred = np.argmin(((m[:, None] - centroids[None]) ** 2).sum(-1), axis=1)
    print(f"{name:5s} accuracy {np.mean(pred == lab):.3f}")
