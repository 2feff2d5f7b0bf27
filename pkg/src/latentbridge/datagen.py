"""Seeded synthetic multimodal cells with known ground truth.

Each class sits at a point in a small factor space.  Factor 0 is maturity
(class 0 is the progenitor analog, the last class the mature analog); the
remaining factors are random per class.  From the factors we render a cell
image (a disk whose nucleus lobe count, size and colors track the factors,
over a class-independent distractor background), derive RoI-style features
with a fixed stub extractor, and produce expression profiles in which
"up" genes rise with maturity, "down" genes fall and "flat" genes stay
constant.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, UsageError
from .fileio import read_csv_table, read_matrix, write_csv_table, write_matrix
from .image_vae import ImageDataset
from .rna_vae import RnaDataset

KINETICS = ("up", "down", "flat")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 3
    samples_per_class: int = 300
    latent_factors: int = 2
    n_genes: int = 50
    feature_shape: tuple = (16, 4, 4)
    image_size: int = 32
    latent_dim: int = 8
    n_up: int | None = None  # None: a third of the genes
    n_down: int | None = None
    noise: float = 0.1
    factor_spread: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "samples_per_class", "latent_factors", "n_genes",
                     "image_size", "latent_dim"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")
        if len(self.feature_shape) != 3 or min(self.feature_shape) < 1:
            raise UsageError(f"feature_shape must be three positive ints, got {self.feature_shape}")
        _, h, w = self.feature_shape
        if h > self.image_size or w > self.image_size:
            raise UsageError("feature grid cannot be finer than the image")
        up, down, flat = self.partition
        if min(up, down, flat) < 0:
            raise UsageError(f"gene partition {up}/{down}/{flat} does not fit {self.n_genes} genes")
        if self.noise < 0 or self.factor_spread < 0:
            raise UsageError("noise levels must be non-negative")

    @property
    def partition(self):
        up = self.n_genes // 3 if self.n_up is None else self.n_up
        down = self.n_genes // 3 if self.n_down is None else self.n_down
        return up, down, self.n_genes - up - down


@dataclass
class GroundTruth:
    class_centers: np.ndarray  # (J, f)
    image_factors: np.ndarray  # (N_img, f)
    rna_factors: np.ndarray  # (N_rna, f)
    gene_kinetics: np.ndarray  # (G,) of "up" / "down" / "flat"
    gene_base: np.ndarray
    gene_slope: np.ndarray

    @property
    def kinetic_labels(self) -> np.ndarray:
        """Gene kinetics as integers 0 = up, 1 = down, 2 = flat."""
        return np.array([KINETICS.index(k) for k in self.gene_kinetics])


@dataclass
class SyntheticData:
    image: ImageDataset
    rna: RnaDataset
    class_anchors: np.ndarray  # (J, d)
    truth: GroundTruth | None
    class_names: list
    gene_names: list
    feature_shape: tuple
    projection: np.ndarray = field(repr=False, default=None)


# -- stub feature extractor -------------------------------------------------


def stub_projection(channels: int, seed: int) -> np.ndarray:
    """Fixed (channels, 3) mixing matrix shared by a whole dataset."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    return rng.standard_normal((channels, 3)) / np.sqrt(3.0)


def _bin_edges(size, bins):
    return (np.arange(bins) * size) // bins


def stub_roi_features(image, mask, projection, grid=(4, 4)) -> np.ndarray:
    """Masked, average-pooled, channel-projected features, flattened C*H*W.

    Linear in ``image``.  Pooling bins are as even as the integer grid allows.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if image.shape[:-1] != mask.shape or image.shape[-1] != 3:
        raise ShapeError(f"image {image.shape} and mask {mask.shape} disagree")
    h, w = grid
    p, q = mask.shape
    masked = image * mask[..., None]
    er, ec = _bin_edges(p, h), _bin_edges(q, w)
    sums = np.add.reduceat(np.add.reduceat(masked, er, axis=0), ec, axis=1)  # (h, w, 3)
    counts = np.outer(np.diff(np.append(er, p)), np.diff(np.append(ec, q)))
    pooled = sums / counts[..., None]
    return np.einsum("ck,hwk->chw", projection, pooled).reshape(-1)


# -- generator --------------------------------------------------------------


def _class_centers(spec: SyntheticSpec, rng):
    j, f = spec.n_classes, spec.latent_factors
    centers = np.empty((j, f))
    centers[:, 0] = np.linspace(-1.0, 1.0, j) if j > 1 else 0.0
    if f > 1:
        # keep the extra factors away from zero so anchor directions are distinct
        mag = rng.uniform(0.5, 1.0, size=(j, f - 1))
        sign = rng.choice([-1.0, 1.0], size=(j, f - 1))
        centers[:, 1:] = mag * sign
    return centers


def _anchors(centers, d, seed):
    j, f = centers.shape
    if f <= d:
        out = np.zeros((j, d))
        out[:, :f] = centers
        return out
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA7C4]))
    q, _ = np.linalg.qr(rng.standard_normal((f, d)))
    return centers @ q


def maturity(factors) -> np.ndarray:
    """Factor 0 mapped from [-1, 1] to [0, 1]."""
    return (np.asarray(factors)[..., 0] + 1.0) / 2.0


def render_cell(factors, size, noise, rng_cell, rng_background):
    """One (image, mask) pair.  The background only uses ``rng_background``."""
    m = float(np.clip(maturity(factors), 0.0, 1.0))
    extra = float(np.tanh(factors[1])) if len(factors) > 1 else 0.0
    yy, xx = np.mgrid[0:size, 0:size] + 0.5

    bg = np.empty((size, size, 3))
    bg[:] = (0.92, 0.88, 0.88)
    for _ in range(int(rng_background.integers(2, 5))):
        cy, cx = rng_background.uniform(0, size, 2)
        r = rng_background.uniform(0.08, 0.16) * size
        bg[(yy - cy) ** 2 + (xx - cx) ** 2 < r * r] = (0.85, 0.35, 0.35)
    bg += rng_background.normal(0.0, noise / 2, bg.shape)

    cy, cx = size / 2 + rng_cell.normal(0, size * 0.02, 2)
    radius = size * (0.30 + 0.04 * extra)
    mask = ((yy - cy) ** 2 + (xx - cx) ** 2 < radius ** 2).astype(np.float64)
    cell = np.empty((size, size, 3))
    cell[:] = (0.55 + 0.35 * m, 0.55 + 0.1 * extra, 0.85 - 0.3 * m)
    lobes = 1 + int(round(3 * m))
    ring = 0.0 if lobes == 1 else radius * 0.38
    lobe_r = radius * (0.55 - 0.07 * lobes)
    phase = rng_cell.uniform(0, 2 * np.pi)
    for i in range(lobes):
        a = phase + 2 * np.pi * i / lobes
        ly, lx = cy + ring * np.sin(a), cx + ring * np.cos(a)
        cell[(yy - ly) ** 2 + (xx - lx) ** 2 < lobe_r ** 2] = (0.30 + 0.15 * m, 0.12, 0.45 - 0.1 * m)
    cell += rng_cell.normal(0.0, noise / 2, cell.shape)

    image = np.where(mask[..., None] > 0, cell, bg)
    return np.clip(image, 0.0, 1.0), mask


def expression_profiles(factors, kinetics, base, slope, noise, rng):
    mat = np.clip(maturity(factors), 0.0, 1.0)[:, None]
    up = kinetics == "up"
    down = kinetics == "down"
    x = np.tile(base, (len(mat), 1))
    x[:, up] += slope[up] * mat
    x[:, down] += slope[down] * (1.0 - mat)
    if noise > 0:
        x += rng.normal(0.0, noise, x.shape)
    return np.clip(x, 0.0, None)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    """All outputs are a pure function of ``spec`` (seed included)."""
    ss = np.random.SeedSequence(spec.seed)
    s_centers, s_img, s_rna, s_genes, s_bg = ss.spawn(5)
    centers = _class_centers(spec, np.random.default_rng(s_centers))

    n_up, n_down, n_flat = spec.partition
    g_rng = np.random.default_rng(s_genes)
    kinetics = np.array(["up"] * n_up + ["down"] * n_down + ["flat"] * n_flat)
    kinetics = kinetics[g_rng.permutation(spec.n_genes)]
    base = g_rng.uniform(0.5, 1.5, spec.n_genes)
    slope = g_rng.uniform(1.0, 1.5, spec.n_genes)

    per = spec.samples_per_class
    labels = np.repeat(np.arange(spec.n_classes), per)
    jitter_dims = centers.shape[1]

    img_rng = np.random.default_rng(s_img)
    img_factors = centers[labels] + img_rng.normal(0, spec.factor_spread, (len(labels), jitter_dims))
    projection = stub_projection(spec.feature_shape[0], spec.seed)
    grid = spec.feature_shape[1:]
    bg_seqs = s_bg.spawn(len(labels))
    images, masks, feats = [], [], []
    for i, f in enumerate(img_factors):
        img, msk = render_cell(f, spec.image_size, spec.noise, img_rng,
                               np.random.default_rng(bg_seqs[i]))
        images.append(img)
        masks.append(msk)
        feats.append(stub_roi_features(img, msk, projection, grid))
    image = ImageDataset(np.stack(feats), np.stack(masks), np.stack(images), labels)

    rna_rng = np.random.default_rng(s_rna)
    rna_factors = centers[labels] + rna_rng.normal(0, spec.factor_spread, (len(labels), jitter_dims))
    expr = expression_profiles(rna_factors, kinetics, base, slope, spec.noise, rna_rng)
    anchors = _anchors(centers, spec.latent_dim, spec.seed)
    rna = RnaDataset.with_class_anchors(expr, labels, anchors)

    truth = GroundTruth(centers, img_factors, rna_factors, kinetics, base, slope)
    return SyntheticData(image, rna, anchors, truth,
                         [f"class{j}" for j in range(spec.n_classes)],
                         [f"gene{g:03d}" for g in range(spec.n_genes)],
                         tuple(spec.feature_shape), projection)


# -- dataset directories ----------------------------------------------------

DATASET_FILES = {
    "image_features": "image_features.lbmx",
    "image_masks": "image_masks.lbmx",
    "images": "images.lbmx",
    "rna_expression": "rna_expression.lbmx",
    "anchors": "anchors.lbmx",
}


def save_dataset(out_dir, data: SyntheticData) -> dict:
    """Write every matrix and table; returns {file name: (rows, cols)}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(data.image)
    p = data.image.masks.shape[1]
    mats = {
        "image_features": data.image.features,
        "image_masks": data.image.masks.reshape(n, -1),
        "images": data.image.images.reshape(n, -1),
        "rna_expression": data.rna.expression,
        "anchors": data.class_anchors,
    }
    listing = {}
    for key, m in mats.items():
        write_matrix(out / DATASET_FILES[key], m)
        listing[DATASET_FILES[key]] = m.shape
    tables = {
        "image_labels.csv": (["id", "class"], [(i, int(c)) for i, c in enumerate(data.image.labels)]),
        "rna_labels.csv": (["id", "class"], [(i, int(c)) for i, c in enumerate(data.rna.labels)]),
        "classes.csv": (["class", "name"], list(enumerate(data.class_names))),
    }
    if data.truth is not None:
        tables["genes.csv"] = (["gene", "kinetics"], list(zip(data.gene_names, data.truth.gene_kinetics)))
    else:
        tables["genes.csv"] = (["gene", "kinetics"], [(g, "") for g in data.gene_names])
    for name, (header, rows) in tables.items():
        write_csv_table(out / name, header, rows)
        listing[name] = (len(rows), len(header))

    cfg = configparser.ConfigParser()
    cfg["dataset"] = {
        "feature_shape": ",".join(str(s) for s in data.feature_shape),
        "image_size": str(p),
        "n_genes": str(data.rna.expression.shape[1]),
        "latent_dim": str(data.class_anchors.shape[1]),
        "n_classes": str(len(data.class_names)),
    }
    cfg["files"] = {name: f"{r}x{c}" for name, (r, c) in listing.items()}
    with open(out / "manifest.ini", "w", encoding="utf-8") as fh:
        cfg.write(fh)
    return listing


def load_dataset(data_dir) -> SyntheticData:
    root = Path(data_dir)
    missing = [root / f for f in list(DATASET_FILES.values())
               + ["manifest.ini", "image_labels.csv", "rna_labels.csv", "classes.csv", "genes.csv"]
               if not (root / f).exists()]
    if missing:
        raise FileNotFoundError(f"dataset file not found: {missing[0]}")
    cfg = configparser.ConfigParser()
    cfg.read(root / "manifest.ini", encoding="utf-8")
    feature_shape = tuple(int(s) for s in cfg["dataset"]["feature_shape"].split(","))
    p = int(cfg["dataset"]["image_size"])

    def mat(key):
        return read_matrix(root / DATASET_FILES[key]).astype(np.float64)

    img_labels = read_csv_table(root / "image_labels.csv").column("class", int)
    rna_labels = read_csv_table(root / "rna_labels.csv").column("class", int)
    feats = mat("image_features")
    n = len(feats)
    image = ImageDataset(feats, mat("image_masks").reshape(n, p, p),
                         mat("images").reshape(n, p, p, 3), img_labels)
    anchors = mat("anchors")
    rna = RnaDataset.with_class_anchors(mat("rna_expression"), rna_labels, anchors)
    classes = read_csv_table(root / "classes.csv")
    genes = read_csv_table(root / "genes.csv")
    kin = np.array(genes.column("kinetics"))
    truth = None
    if np.all(np.isin(kin, KINETICS)):
        truth = GroundTruth(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)), kin,
                            np.zeros(len(kin)), np.zeros(len(kin)))
    return SyntheticData(image, rna, anchors, truth, classes.column("name"),
                         genes.column("gene"), feature_shape)
