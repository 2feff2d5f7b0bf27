"""Joint image/expression latent embedding, GP trajectories and k-Shape kinetics."""
__version__ = "0.1.0"
