"""A small fully-connected GAN in plain numpy.

Generator maps latent noise to points in data space, discriminator maps points
to a single logit. Both are leaky-ReLU MLPs with a linear output layer. The
loss is the non-saturating logistic GAN loss written with softplus:

    loss_d = mean(softplus(-D(x_real))) + mean(softplus(D(G(z))))
    loss_g = mean(softplus(-D(G(z))))
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyDataset, InvalidArchitecture, NumericalFailure, ShapeError


@dataclass
class MLPParams:
    weights: list[np.ndarray]  # weights[l] has shape (out, in)
    biases: list[np.ndarray]
    slope: float = 0.2

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        """Canonical tensor order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_tensors(cls, tensors: Sequence[np.ndarray], slope: float) -> "MLPParams":
        return cls(list(tensors[0::2]), list(tensors[1::2]), slope)

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope)

    def num_params(self) -> int:
        return sum(t.size for t in self.tensors())


@dataclass
class ModelPair:
    generator: MLPParams
    discriminator: MLPParams

    def copy(self) -> "ModelPair":
        return ModelPair(self.generator.copy(), self.discriminator.copy())


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class TrainConfig:
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    batch_size: int = 64
    latent_dim: int = 8
    local_steps: int = 200
    seed: int = 0
    gen_hidden: list[int] = field(default_factory=lambda: [64, 64])
    disc_hidden: list[int] = field(default_factory=lambda: [64, 64])
    slope: float = 0.2

    def problems(self) -> list[str]:
        out = []
        for name in ("lr_g", "lr_d"):
            if not getattr(self, name) > 0:
                out.append(f"train.{name} must be > 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                out.append(f"train.{name} must lie in [0, 1)")
        if not self.adam_eps > 0:
            out.append("train.adam_eps must be > 0")
        for name in ("batch_size", "latent_dim", "local_steps"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1):
                out.append(f"train.{name} must be an integer >= 1")
        for name in ("gen_hidden", "disc_hidden"):
            if any(not isinstance(h, int) or h < 1 for h in getattr(self, name)):
                out.append(f"train.{name} entries must be integers >= 1")
        if self.slope < 0:
            out.append("train.slope must be >= 0")
        return out

    def arch(self, data_dim: int) -> tuple[list[int], list[int]]:
        gen = [self.latent_dim, *self.gen_hidden, data_dim]
        disc = [data_dim, *self.disc_hidden, 1]
        return gen, disc


def _init_mlp(sizes: Sequence[int], rng: np.random.Generator, slope: float) -> MLPParams:
    weights, biases = [], []
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = gain * np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases, slope)


def init_model(gen_sizes: Sequence[int], disc_sizes: Sequence[int], seed: int, slope: float = 0.2) -> ModelPair:
    """Deterministic Kaiming-uniform weights, zero biases."""
    for name, sizes in (("generator", gen_sizes), ("discriminator", disc_sizes)):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise InvalidArchitecture(f"{name} layer sizes {list(sizes)} are invalid")
    if gen_sizes[-1] != disc_sizes[0]:
        raise InvalidArchitecture(
            f"generator output {gen_sizes[-1]} != discriminator input {disc_sizes[0]}")
    if disc_sizes[-1] != 1:
        raise InvalidArchitecture("discriminator must output a single logit")
    rng = np.random.default_rng(seed)
    return ModelPair(_init_mlp(gen_sizes, rng, slope), _init_mlp(disc_sizes, rng, slope))


def _forward(p: MLPParams, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.in_dim:
        raise ShapeError(f"expected input of width {p.in_dim}, got shape {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        a = h @ w.T + b
        pre.append(a)
        h = a if i == last else np.where(a > 0, a, p.slope * a)
    return h, (inputs, pre)


def _backward(p: MLPParams, cache, grad_out: np.ndarray, need_params: bool = True):
    """Backprop ``grad_out`` (d loss / d output) through the MLP.

    Returns (param grads in canonical order or None, d loss / d input).
    """
    inputs, pre = cache
    g = grad_out
    grads = [None] * (2 * len(p.weights))
    last = len(p.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = np.where(pre[i] > 0, g, p.slope * g)
        if need_params:
            grads[2 * i] = g.T @ inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ p.weights[i]
    return (grads if need_params else None), g


def gen_forward(g: MLPParams, z) -> np.ndarray:
    return _forward(g, z)[0]


def disc_forward(d: MLPParams, x) -> np.ndarray:
    return _forward(d, x)[0]


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalFailure("non-finite activation or loss")


def disc_grads(model: ModelPair, real, z):
    """Gradient of loss_d with respect to discriminator parameters."""
    real = np.asarray(real, dtype=np.float64)
    fake = gen_forward(model.generator, z)
    n_real = len(real)
    # one pass over the stacked batch; the per-row output grads keep the two means separate
    logits, cache = _forward(model.discriminator, np.concatenate([real, fake], axis=0))
    _check_finite(logits)
    logit_r, logit_f = logits[:n_real], logits[n_real:]
    loss_d = float(np.mean(_softplus(-logit_r)) + np.mean(_softplus(logit_f)))
    grad_out = np.concatenate([-_sigmoid(-logit_r) / len(logit_r), _sigmoid(logit_f) / len(logit_f)])
    grads, _ = _backward(model.discriminator, cache, grad_out)
    return grads, loss_d


def gen_grads(model: ModelPair, z):
    """Gradient of loss_g with respect to generator parameters."""
    fake, cache_g = _forward(model.generator, z)
    logit_f, cache_f = _forward(model.discriminator, fake)
    _check_finite(fake, logit_f)
    loss_g = float(np.mean(_softplus(-logit_f)))
    _, g_fake = _backward(model.discriminator, cache_f, -_sigmoid(-logit_f) / len(logit_f), need_params=False)
    grads, _ = _backward(model.generator, cache_g, g_fake)
    return grads, loss_g


def gan_backward(model: ModelPair, real_batch, z_batch):
    """Returns (grad_g, grad_d, loss_g, loss_d); grads are lists in canonical tensor order."""
    real_batch = np.asarray(real_batch, dtype=np.float64)
    z_batch = np.asarray(z_batch, dtype=np.float64)
    if len(real_batch) != len(z_batch):
        raise ShapeError(f"batch sizes differ: {len(real_batch)} real vs {len(z_batch)} latent")
    grad_d, loss_d = disc_grads(model, real_batch, z_batch)
    grad_g, loss_g = gen_grads(model, z_batch)
    return grad_g, grad_d, loss_g, loss_d


def adam_update(params, grads, state: AdamState, lr: float, beta1: float, beta2: float, eps: float):
    """One bias-corrected Adam step. Inputs are not modified."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state have different tensor counts")
    t = state.step_count + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def local_train(model: ModelPair, dataset, cfg: TrainConfig, round_seed):
    """Run ``cfg.local_steps`` alternating D then G Adam steps from fresh optimizer state.

    ``round_seed`` is anything accepted by ``numpy.random.default_rng``.
    Returns the trained ModelPair and ``(mean loss_g, mean loss_d)``.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise EmptyDataset("local dataset is empty")
    if cfg.local_steps < 1:
        raise ValueError("local_steps must be >= 1")
    rng = np.random.default_rng(round_seed)
    g = model.generator.copy()
    d = model.discriminator.copy()
    g_params, d_params = g.tensors(), d.tensors()
    g_state, d_state = AdamState.zeros_like(g_params), AdamState.zeros_like(d_params)
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    loss_g_sum = loss_d_sum = 0.0

    for _ in range(cfg.local_steps):
        idx = rng.integers(0, len(data), size=cfg.batch_size)
        z = rng.standard_normal((cfg.batch_size, g.in_dim))
        current = ModelPair(MLPParams.from_tensors(g_params, g.slope), MLPParams.from_tensors(d_params, d.slope))
        grad_d, loss_d = disc_grads(current, data[idx], z)
        d_params, d_state = adam_update(d_params, grad_d, d_state, cfg.lr_d, b1, b2, eps)

        z = rng.standard_normal((cfg.batch_size, g.in_dim))
        current.discriminator = MLPParams.from_tensors(d_params, d.slope)
        grad_g, loss_g = gen_grads(current, z)
        g_params, g_state = adam_update(g_params, grad_g, g_state, cfg.lr_g, b1, b2, eps)

        loss_d_sum += loss_d
        loss_g_sum += loss_g

    n = cfg.local_steps
    trained = ModelPair(MLPParams.from_tensors(g_params, g.slope), MLPParams.from_tensors(d_params, d.slope))
    return trained, (loss_g_sum / n, loss_d_sum / n)
