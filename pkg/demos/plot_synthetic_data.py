"""
A seeded two-modality toy dataset
=================================

Three classes lie along a maturity axis.  Each class yields cell images
(a disk whose lobe count grows with maturity, on a cluttered background)
and expression profiles whose genes go up, down or stay flat along the
same axis.
"""

from pathlib import Path

import numpy as np

from latentbridge.datagen import SyntheticSpec, generate_synthetic
from latentbridge.fileio import write_ppm

spec = SyntheticSpec(samples_per_class=20, seed=7)
data = generate_synthetic(spec)

print("image features", data.image.features.shape)
print("images        ", data.image.images.shape)
print("expression    ", data.rna.expression.shape)
print("gene kinetics ", dict(zip(*np.unique(data.truth.gene_kinetics, return_counts=True))))

###############################################################################
# Class means of one gene of each kind follow the maturity ordering.

for kind in ("up", "down", "flat"):
    g = int(np.flatnonzero(data.truth.gene_kinetics == kind)[0])
    means = [data.rna.expression[data.rna.labels == c, g].mean() for c in range(3)]
    print(f"{data.gene_names[g]} ({kind}):", np.round(means, 3))

###############################################################################
# One example image per class, written as PPM.

out = Path("demo_out")
out.mkdir(exist_ok=True)
for c in range(3):
    i = int(np.flatnonzero(data.image.labels == c)[0])
    write_ppm(out / f"cell_class{c}.ppm", data.image.images[i])
print("wrote", sorted(p.name for p in out.glob("cell_*.ppm")))
