"""Dense-network primitives with hand-written reverse-mode gradients.

Everything here works on float64 numpy arrays.  Networks are plain
sequential MLPs; a forward pass optionally records its intermediates on a
:class:`GradTape`, and :func:`backward` replays the tape in reverse to get
exact parameter gradients plus the gradient with respect to the network
input (needed to chain encoder and decoder through the reparameterization).

Batched inputs have shape ``(n, in)``; single vectors ``(in,)`` are also
accepted.  Loss helpers reduce over the last axis, so a batch yields one
value per sample.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import FormatError, ShapeError, UsageError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


class Activation(enum.IntEnum):
    IDENTITY = 0
    RELU = 1
    SIGMOID = 2
    TANH = 3


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply(act, pre):
    if act == Activation.IDENTITY:
        return pre
    if act == Activation.RELU:
        return np.maximum(pre, 0.0)
    if act == Activation.SIGMOID:
        return _sigmoid(pre)
    if act == Activation.TANH:
        return np.tanh(pre)
    raise UsageError(f"unknown activation {act!r}")


def _apply_grad(act, pre, out, grad_out):
    if act == Activation.IDENTITY:
        return grad_out
    if act == Activation.RELU:
        return grad_out * (pre > 0)
    if act == Activation.SIGMOID:
        return grad_out * out * (1.0 - out)
    if act == Activation.TANH:
        return grad_out * (1.0 - out * out)
    raise UsageError(f"unknown activation {act!r}")


@dataclass
class DenseLayer:
    """Affine map followed by an elementwise activation."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_size: int, out_size: int, activation=Activation.IDENTITY,
             rng: np.random.Generator | None = None) -> "DenseLayer":
        """Glorot-uniform weights, zero bias."""
        rng = np.random.default_rng(rng)
        limit = np.sqrt(6.0 / (in_size + out_size))
        w = rng.uniform(-limit, limit, size=(out_size, in_size))
        return cls(w, np.zeros(out_size), activation)


@dataclass
class GradTape:
    """Forward intermediates of one loss evaluation, consumed by ``backward``."""

    records: list = field(default_factory=list)
    consumed: bool = False

    def record(self, layer, x, pre, out):
        if self.consumed:
            raise UsageError("cannot record on a tape that was already consumed")
        self.records.append((layer, x, pre, out))


@dataclass
class LayerGrad:
    layer: DenseLayer
    weights: np.ndarray
    bias: np.ndarray


def dense_forward(layer: DenseLayer, x, tape: GradTape | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.in_size:
        raise ShapeError(f"input has size {x.shape[-1]}, layer expects {layer.in_size}")
    pre = x @ layer.weights.T + layer.bias
    out = _apply(layer.activation, pre)
    if tape is not None:
        tape.record(layer, x, pre, out)
    return out


def backward(tape: GradTape, grad_output, loss_seed: float = 1.0):
    """Reverse pass over ``tape``.

    ``grad_output`` is dL/d(output of the last recorded layer); it is scaled
    by ``loss_seed``.  Returns ``(layer_grads, grad_input)`` where
    ``layer_grads`` follows forward order and ``grad_input`` is dL/d(input of
    the first recorded layer).  A tape can be consumed only once.
    """
    if tape.consumed:
        raise UsageError("GradTape has already been consumed by backward()")
    if not tape.records:
        raise UsageError("GradTape is empty")
    tape.consumed = True
    g = np.asarray(grad_output, dtype=np.float64) * loss_seed
    grads = []
    for layer, x, pre, out in reversed(tape.records):
        if g.shape != out.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match output {out.shape}")
        g_pre = _apply_grad(layer.activation, pre, out, g)
        if x.ndim == 1:
            gw = np.outer(g_pre, x)
            gb = g_pre.copy()
        else:
            gw = g_pre.T @ x
            gb = g_pre.sum(axis=0)
        grads.append(LayerGrad(layer, gw, gb))
        g = g_pre @ layer.weights
    grads.reverse()
    return grads, g


class MLP:
    """Sequential stack of :class:`DenseLayer`."""

    def __init__(self, layers: Sequence[DenseLayer]):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_size != b.in_size:
                raise ShapeError(f"layer sizes {a.out_size} -> {b.in_size} do not chain")

    @classmethod
    def build(cls, sizes: Sequence[int], hidden=Activation.RELU, output=Activation.IDENTITY,
              rng=None) -> "MLP":
        rng = np.random.default_rng(rng)
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output if i == len(sizes) - 2 else hidden
            layers.append(DenseLayer.init(a, b, act, rng))
        return cls(layers)

    @property
    def in_size(self):
        return self.layers[0].in_size

    @property
    def out_size(self):
        return self.layers[-1].out_size

    @property
    def sizes(self):
        return [self.in_size] + [l.out_size for l in self.layers]

    def forward(self, x, tape: GradTape | None = None) -> np.ndarray:
        for layer in self.layers:
            x = dense_forward(layer, x, tape)
        return x

    __call__ = forward

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params += [layer.weights, layer.bias]
        return params

    def backward(self, tape: GradTape, grad_output):
        """Gradients in :meth:`parameters` order, plus dL/dinput."""
        layer_grads, g_in = backward(tape, grad_output)
        flat = []
        for lg in layer_grads:
            flat += [lg.weights, lg.bias]
        return flat, g_in

    def zero_(self):
        for p in self.parameters():
            p[...] = 0.0
        return self

    def copy(self) -> "MLP":
        return MLP([DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
                    for l in self.layers])

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


# -- losses -----------------------------------------------------------------


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def mse(a, b):
    """Mean squared error, reduced over the last axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    d = a - b
    return np.mean(d * d, axis=-1)


def mse_grad(a, b):
    """d mse(a, b) / da."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same(a, b)
    return 2.0 * (a - b) / a.shape[-1]


@dataclass
class LatentDistribution:
    """Diagonal Gaussian N(mu, exp(logvar))."""

    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        _check_same(self.mu, self.logvar)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    @property
    def sigma(self):
        return np.exp(0.5 * self.logvar)


def kl_standard_normal(ld: LatentDistribution):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over the last axis."""
    # expm1 keeps the variance part non-negative for tiny logvar
    return 0.5 * np.sum((np.expm1(ld.logvar) - ld.logvar) + ld.mu ** 2, axis=-1)


def kl_standard_normal_grad(ld: LatentDistribution):
    """Returns (dKL/dmu, dKL/dlogvar)."""
    return ld.mu.copy(), 0.5 * np.expm1(ld.logvar)


def reparameterize(ld: LatentDistribution, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    _check_same(ld.mu, noise)
    return ld.mu + np.exp(0.5 * ld.logvar) * noise


def split_latent(raw):
    """Split encoder output into (LatentDistribution, clamp mask).

    The second half of ``raw`` is the log-variance, clamped to
    [LOGVAR_MIN, LOGVAR_MAX]; the mask is 1 where the clamp is inactive so
    that callers can zero the gradient of clamped entries.
    """
    d = raw.shape[-1] // 2
    raw_lv = raw[..., d:]
    logvar = np.clip(raw_lv, LOGVAR_MIN, LOGVAR_MAX)
    inside = (raw_lv >= LOGVAR_MIN) & (raw_lv <= LOGVAR_MAX)
    return LatentDistribution(raw[..., :d].copy(), logvar), inside


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if lr <= 0:
            raise UsageError("learning rate must be positive")
        return cls(np.zeros(shape), np.zeros(shape), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update, applied to ``params`` and ``state`` in place.

    Returns ``(params, state)`` for convenience.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"params {params.shape}, grads {grads.shape}, state "
            f"{state.first_moment.shape} must agree"
        )
    state.step += 1
    m, v = state.first_moment, state.second_moment
    m *= state.beta1
    m += (1.0 - state.beta1) * grads
    v *= state.beta2
    v += (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1 ** state.step)
    denom = np.sqrt(v / (1.0 - state.beta2 ** state.step))
    denom += state.eps
    m_hat /= denom
    m_hat *= state.lr
    params -= m_hat
    return params, state


class Adam:
    """Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = list(params)
        self.states = [AdamState.fresh(p.shape, lr, beta1, beta2, eps) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]):
        if len(grads) != len(self.params):
            raise ShapeError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for p, g, s in zip(self.params, grads, self.states):
            adam_step(s, p, g)


# -- gradient verification --------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)


def relative_error(analytic, numeric, floor=1e-6):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(network, loss_fn: Callable, tolerance: float = 1e-4, h: float = 1e-5,
               max_params: int = 10_000) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``network`` exposes ``parameters()`` (arrays mutated in place during the
    check and restored afterwards).  ``loss_fn(network)`` returns
    ``(loss, grads)`` with ``grads`` aligned to ``parameters()``.
    """
    params = network.parameters()
    total = sum(p.size for p in params)
    if total > max_params:
        raise UsageError(f"{total} parameters is too many for a finite-difference check")
    _, analytic = loss_fn(network)
    analytic = [np.array(g, dtype=np.float64) for g in analytic]
    worst, worst_idx = 0.0, ()
    for pi, p in enumerate(params):
        flat = p.reshape(-1)
        ga = analytic[pi].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = loss_fn(network)
            flat[j] = orig - h
            lm, _ = loss_fn(network)
            flat[j] = orig
            err = float(relative_error(ga[j], (lp - lm) / (2 * h)))
            if err > worst:
                worst, worst_idx = err, (pi, j)
    return GradCheckReport(worst, worst_idx, total, tolerance)


# -- checkpoint file --------------------------------------------------------

CHECKPOINT_MAGIC = b"LBNN1"
_LAYER_HEADER = struct.Struct("<IIB")


def checkpoint_bytes(mlp: MLP) -> bytes:
    chunks = [CHECKPOINT_MAGIC]
    for layer in mlp.layers:
        chunks.append(_LAYER_HEADER.pack(layer.out_size, layer.in_size, int(layer.activation)))
        chunks.append(layer.weights.astype("<f4").tobytes(order="C"))
        chunks.append(layer.bias.astype("<f4").tobytes())
    return b"".join(chunks)


def write_checkpoint(path, mlp: MLP) -> None:
    Path(path).write_bytes(checkpoint_bytes(mlp))


def parse_checkpoint(data: bytes) -> MLP:
    if data[:5] != CHECKPOINT_MAGIC:
        raise FormatError(f"expected magic {CHECKPOINT_MAGIC!r}, found {data[:5]!r}", offset=0)
    pos = 5
    layers = []
    while pos < len(data):
        if pos + _LAYER_HEADER.size > len(data):
            raise FormatError("truncated layer header", offset=pos)
        out, inp, code = _LAYER_HEADER.unpack_from(data, pos)
        pos += _LAYER_HEADER.size
        try:
            act = Activation(code)
        except ValueError:
            raise FormatError(f"unknown activation code {code}", offset=pos - 1) from None
        nbytes = 4 * (out * inp + out)
        if pos + nbytes > len(data):
            raise FormatError(f"truncated payload for {out}x{inp} layer", offset=pos)
        w = np.frombuffer(data, "<f4", out * inp, pos).reshape(out, inp)
        pos += 4 * out * inp
        b = np.frombuffer(data, "<f4", out, pos)
        pos += 4 * out
        layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64), act))
    if not layers:
        raise FormatError("checkpoint contains no layers", offset=pos)
    return MLP(layers)


def read_checkpoint(path) -> MLP:
    return parse_checkpoint(Path(path).read_bytes())
