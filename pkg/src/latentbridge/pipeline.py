"""End-to-end operations behind the command-line subcommands.

Each ``run_*`` function takes a :class:`RunConfig` plus paths and writes its
outputs; they raise library exceptions and leave exit-code mapping to
:mod:`latentbridge.cli`.
"""
from __future__ import annotations

import configparser
import logging
from pathlib import Path

import numpy as np

from .alignment import JointModel, TrainSchedule, class_moments, align_loss, train_joint
from .config import RunConfig
from .datagen import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import UsageError
from .fileio import read_csv_table, write_csv_table, write_ppm
from .image_vae import ImageLossWeights, ImageVae
from .kshape import kshape_cluster, znormalize
from .nn_core import read_checkpoint, write_checkpoint
from .rna_vae import RnaLossWeights, RnaVae
from .svgplot import line_plot_svg
from .trajectory import expression_kinetics, interpolate_classes

log = logging.getLogger(__name__)

CHECKPOINTS = {
    "image_encoder": "image_encoder.lbnn",
    "image_feature_decoder": "image_feature_decoder.lbnn",
    "image_decoder": "image_decoder.lbnn",
    "rna_encoder": "rna_encoder.lbnn",
    "rna_decoder": "rna_decoder.lbnn",
}


def synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(n_classes=cfg.classes, samples_per_class=cfg.samples_per_class,
                         latent_factors=cfg.latent_factors, n_genes=cfg.genes,
                         feature_shape=cfg.feature_shape, image_size=cfg.image_size,
                         latent_dim=cfg.latent_dim, noise=cfg.noise, seed=cfg.seed)


def build_models(cfg: RunConfig, seed: int | None = None):
    """Freshly initialized ``(ImageVae, RnaVae)`` for ``cfg``."""
    seed = cfg.seed if seed is None else seed
    s_img, s_rna = np.random.SeedSequence(seed).spawn(2)
    img = ImageVae.create(cfg.feature_shape, cfg.image_size, cfg.latent_dim,
                          np.random.default_rng(s_img),
                          image_from_true_features=cfg.image_from_true_features)
    rna = RnaVae.create(cfg.genes, cfg.latent_dim, rng=np.random.default_rng(s_rna),
                        cosine_on_mu=cfg.cosine_on_mu)
    return img, rna


def loss_weights(cfg: RunConfig):
    return (ImageLossWeights(cfg.alpha, cfg.gamma, cfg.beta, cfg.delta),
            RnaLossWeights(cfg.lam, cfg.phi, cfg.rna_beta))


def schedule(cfg: RunConfig) -> TrainSchedule:
    return TrainSchedule(cfg.rna_epochs, cfg.image_epochs, cfg.lr, cfg.batch_size)


# -- checkpoints ------------------------------------------------------------


def save_joint_model(model_dir, model: JointModel) -> None:
    out = Path(model_dir)
    out.mkdir(parents=True, exist_ok=True)
    nets = {
        "image_encoder": model.image_vae.encoder,
        "image_feature_decoder": model.image_vae.feature_decoder,
        "image_decoder": model.image_vae.image_decoder,
        "rna_encoder": model.rna_vae.encoder,
        "rna_decoder": model.rna_vae.decoder,
    }
    cfg = configparser.ConfigParser()
    cfg["model"] = {
        "latent_dim": str(model.latent_dim),
        "feature_shape": ",".join(map(str, model.image_vae.feature_shape)),
        "image_size": str(model.image_vae.image_size),
        "genes": str(model.rna_vae.n_genes),
        "classes": ",".join(map(str, model.classes)),
        "image_from_true_features": str(model.image_vae.image_from_true_features).lower(),
        "cosine_on_mu": str(model.rna_vae.cosine_on_mu).lower(),
    }
    for key, net in nets.items():
        write_checkpoint(out / CHECKPOINTS[key], net)
        cfg[key] = {"file": CHECKPOINTS[key], "sizes": ",".join(map(str, net.sizes)),
                    "activations": ",".join(l.activation.name.lower() for l in net.layers),
                    "parameters": str(net.n_parameters())}
    with open(out / "manifest.ini", "w", encoding="utf-8") as fh:
        cfg.write(fh)


def load_joint_model(model_dir) -> JointModel:
    root = Path(model_dir)
    for name in ["manifest.ini", *CHECKPOINTS.values()]:
        if not (root / name).exists():
            raise FileNotFoundError(f"checkpoint file not found: {root / name}")
    cfg = configparser.ConfigParser()
    cfg.read(root / "manifest.ini", encoding="utf-8")
    m = cfg["model"]
    nets = {k: read_checkpoint(root / f) for k, f in CHECKPOINTS.items()}
    img = ImageVae(nets["image_encoder"], nets["image_feature_decoder"], nets["image_decoder"],
                   tuple(int(s) for s in m["feature_shape"].split(",")), int(m["image_size"]),
                   m.getboolean("image_from_true_features"))
    rna = RnaVae(nets["rna_encoder"], nets["rna_decoder"], m.getboolean("cosine_on_mu"))
    classes = [int(c) for c in m["classes"].split(",") if c]
    return JointModel(img, rna, classes)


def check_model_matches(cfg: RunConfig, model: JointModel) -> None:
    got = (model.latent_dim, tuple(model.image_vae.feature_shape), model.image_vae.image_size,
           model.rna_vae.n_genes)
    want = (cfg.latent_dim, tuple(cfg.feature_shape), cfg.image_size, cfg.genes)
    if got != want:
        raise UsageError(
            f"checkpoint shapes (latent_dim, feature_shape, image_size, genes) = {got} "
            f"do not match the config {want}")


# -- subcommands --------------------------------------------------------------


def run_gen(cfg: RunConfig, out_dir, force: bool = False) -> dict:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    data = generate_synthetic(synthetic_spec(cfg))
    return save_dataset(out, data)


def run_train(cfg: RunConfig, data_dir, model_dir):
    data = load_dataset(data_dir)
    if data.rna.expression.shape[1] != cfg.genes or tuple(data.feature_shape) != tuple(cfg.feature_shape):
        raise UsageError("dataset shapes do not match the config (genes / feature_shape)")
    if data.class_anchors.shape[1] != cfg.latent_dim:
        raise UsageError(
            f"anchors have dimension {data.class_anchors.shape[1]}, config latent_dim is {cfg.latent_dim}")
    img, rna = build_models(cfg)
    iw, rw = loss_weights(cfg)
    model, hist = train_joint(img, rna, data.image, data.rna, iw, rw, schedule(cfg), cfg.seed)
    save_joint_model(model_dir, model)
    out = Path(model_dir)
    write_csv_table(out / "loss_rna.csv", hist.rna.columns, hist.rna.rows)
    write_csv_table(out / "loss_image.csv", hist.image.columns, hist.image.rows)
    return model, hist


def pca(x, n_components: int = 2):
    """Returns ``(scores, components, mean)``; components are orthonormal rows."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:n_components]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(comps[np.arange(len(comps)), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return (x - mean) @ comps.T, comps, mean


def class_embeddings(model: JointModel, data) -> dict:
    """Class id -> stacked image and RNA posterior means."""
    img_mu, rna_mu = model.embed(data.image, data.rna)
    return {c: np.concatenate([img_mu[data.image.labels == c], rna_mu[data.rna.labels == c]])
            for c in model.classes}


def run_embed(cfg: RunConfig, data_dir, model_dir, out_dir):
    model = load_joint_model(model_dir)
    check_model_matches(cfg, model)
    data = load_dataset(data_dir)
    img_mu, rna_mu = model.embed(data.image, data.rna)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = model.latent_dim
    rows, ids = [], []
    for modality, mus, labels in (("image", img_mu, data.image.labels),
                                  ("rna", rna_mu, data.rna.labels)):
        for i, (mu, c) in enumerate(zip(mus, labels)):
            ids.append((f"{modality}{i}", data.class_names[c], modality))
            rows.append(mu)
    mus = np.stack(rows)
    write_csv_table(out / "embedding.csv", ["id", "class", "modality"] + [f"mu{j}" for j in range(d)],
                    [list(meta) + list(mu) for meta, mu in zip(ids, mus)])
    scores, comps, _ = pca(mus, 2)
    write_csv_table(out / "pca.csv", ["id", "class", "modality", "pc1", "pc2"],
                    [list(meta) + list(s) for meta, s in zip(ids, scores)])
    write_csv_table(out / "pca_components.csv", ["component"] + [f"dim{j}" for j in range(d)],
                    [[f"pc{i + 1}"] + list(c) for i, c in enumerate(comps)])
    return mus, scores, comps


def resolve_class(name, class_names) -> int:
    if name in class_names:
        return class_names.index(name)
    raise UsageError(f"unknown class {name!r}; valid classes: {', '.join(class_names)}")


def run_interpolate(cfg: RunConfig, class_a, class_b, data_dir, model_dir, out_dir, genes=None):
    model = load_joint_model(model_dir)
    check_model_matches(cfg, model)
    data = load_dataset(data_dir)
    a = resolve_class(class_a, data.class_names)
    b = resolve_class(class_b, data.class_names)
    if genes is None:
        genes = data.gene_names[:6]
    unknown = [g for g in genes if g not in data.gene_names]
    if unknown:
        raise UsageError(f"unknown genes: {', '.join(unknown)}")
    emb = class_embeddings(model, data)
    traj = interpolate_classes(model, a, b, emb, cfg.anchors_per_class or None, cfg.steps,
                               cfg.gp_sigma, cfg.seed, cfg.jitter)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_table(out / "trajectory_latent.csv", ["t", "dim", "value"],
                    [(t, j, v) for t, z in zip(traj.times, traj.latent_points)
                     for j, v in enumerate(z)])
    write_csv_table(out / "trajectory_expr.csv", ["t", "gene", "value"],
                    [(t, g, v) for t, x in zip(traj.times, traj.decoded_expression)
                     for g, v in zip(data.gene_names, x)])
    for i, frame in enumerate(traj.decoded_images):
        write_ppm(out / f"frame_{i:03d}.ppm", frame)
    kin = expression_kinetics(traj)
    series = {g: (traj.times, kin[data.gene_names.index(g)]) for g in genes}
    (out / "expression.svg").write_text(
        line_plot_svg(series, f"{class_a} -> {class_b}", ylabel="expression"), encoding="utf-8")
    return traj


def read_trajectory_expr(path):
    """Long ``(t, gene, value)`` table -> (gene names, times, (G, T) matrix)."""
    table = read_csv_table(path)
    t = table.column("t", float)
    genes = table.column("gene")
    vals = table.column("value", float)
    times = np.unique(t)
    names = list(dict.fromkeys(genes))
    gi = {g: i for i, g in enumerate(names)}
    mat = np.full((len(names), len(times)), np.nan)
    mat[[gi[g] for g in genes], np.searchsorted(times, t)] = vals
    if np.isnan(mat).any():
        raise UsageError(f"{path}: every gene needs a value at every time point")
    return names, times, mat


def run_cluster(cfg: RunConfig, traj_expr_csv, out_dir, k: int | None = None):
    path = Path(traj_expr_csv)
    if not path.exists():
        raise FileNotFoundError(f"trajectory file not found: {path}")
    names, times, mat = read_trajectory_expr(path)
    k = cfg.k if k is None else k
    if k > len(names):
        raise UsageError(f"k={k} exceeds the number of genes ({len(names)})")
    res = kshape_cluster(mat, k, cfg.max_iter, cfg.seed, cfg.n_init, cfg.flat_tol)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_table(out / "clusters.csv", ["gene", "cluster"], zip(names, res.labels.tolist()))
    write_csv_table(out / "centroids.csv", ["cluster", "t", "value"],
                    [(j, t, v) for j, c in enumerate(res.centroids) for t, v in zip(times, c)])
    z = znormalize(mat)
    for j in range(k):
        members = [i for i in range(len(names)) if res.labels[i] == j]
        series = {names[i]: (times, z[i]) for i in members[:9]}
        series[f"centroid {j}"] = (times, res.centroids[j])
        (out / f"cluster_{j}.svg").write_text(
            line_plot_svg(series, f"cluster {j} ({len(members)} genes)", ylabel="z-score"),
            encoding="utf-8")
    return names, res


def alignment_report(model: JointModel, data) -> float:
    img_mu, rna_mu = model.embed(data.image, data.rna)
    return align_loss(class_moments(data.image.labels, img_mu),
                      class_moments(data.rna.labels, rna_mu))
