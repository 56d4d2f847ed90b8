"""Server-side aggregation strategies: FedAvg, FedOpt (FedAdam / server SGD) and FedCAR.

All strategies share one call signature so the round loop can treat them
interchangeably::

    new_global, info = strategy.aggregate(global_model, updates, fake_sets)

``fake_sets`` is only consumed by strategies with ``needs_fakes = True``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .codec import ParamsCodec, flat_to_model, model_to_flat
from .errors import NoUpdates, ShapeError
from .frechet import client_total_fid, pairwise_fid
from .tinygan import AdamState, MLPParams, ModelPair, adam_update

FEDCAR_EPS_FLOOR = 1e-6


@dataclass
class ClientUpdate:
    client_id: int
    model: ModelPair
    dataset_size: int


@dataclass
class WeightVector:
    alphas: np.ndarray  # normalized, sums to 1
    raw_totals: np.ndarray  # per-client total FID
    raw_alphas: np.ndarray  # 1 / total
    fid_matrix: np.ndarray | None = None


def _shapes(p: MLPParams):
    return [t.shape for t in p.tensors()]


def _check_updates(updates: Sequence[ClientUpdate]) -> None:
    if not updates:
        raise NoUpdates("no client updates to aggregate")
    g0, d0 = _shapes(updates[0].model.generator), _shapes(updates[0].model.discriminator)
    for u in updates[1:]:
        if _shapes(u.model.generator) != g0 or _shapes(u.model.discriminator) != d0:
            raise ShapeError(f"client {u.client_id} model shapes differ from client {updates[0].client_id}")
    for u in updates:
        if u.dataset_size < 1:
            raise ShapeError(f"client {u.client_id} reports dataset_size {u.dataset_size}")


def weighted_average(nets: Sequence[MLPParams], weights: Sequence[float]) -> MLPParams:
    """Parameter-wise sum of ``weights[i] * nets[i]``; weights are used as given."""
    if len(nets) != len(weights):
        raise ShapeError(f"{len(weights)} weights for {len(nets)} networks")
    tensors = [net.tensors() for net in nets]
    out = []
    for k in range(len(tensors[0])):
        acc = np.zeros_like(tensors[0][k])
        for w, ts in zip(weights, tensors):
            acc = acc + w * ts[k]
        out.append(acc)
    return MLPParams.from_tensors(out, nets[0].slope)


def size_weights(updates: Sequence[ClientUpdate]) -> np.ndarray:
    sizes = np.array([u.dataset_size for u in updates], dtype=np.float64)
    return sizes / sizes.sum()


def fedavg(updates: Sequence[ClientUpdate]) -> ModelPair:
    """Dataset-size weighted mean, applied separately to generator and discriminator."""
    _check_updates(updates)
    w = size_weights(updates)
    return ModelPair(weighted_average([u.model.generator for u in updates], w),
                     weighted_average([u.model.discriminator for u in updates], w))


@dataclass
class ServerOptState:
    adam: AdamState | None
    server_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    kind: str = "adam"  # "adam" or "sgd"

    @property
    def step_count(self) -> int:
        return self.adam.step_count if self.adam is not None else 0

    @classmethod
    def fresh(cls, num_params: int, **kwargs) -> "ServerOptState":
        zeros = np.zeros(num_params)
        return cls(AdamState([zeros.copy()], [zeros.copy()], 0), **kwargs)


def fedopt_round(global_model: ModelPair, updates: Sequence[ClientUpdate], state: ServerOptState):
    """One FedOpt server step over the concatenated parameter vector.

    The mean client delta is negated into a pseudo-gradient and handed to the
    server optimizer. Returns ``(new_global, new_state)``.
    """
    _check_updates(updates)
    codec = ParamsCodec.for_model(global_model)
    theta = model_to_flat(global_model, codec)
    deltas = []
    for u in updates:
        if ParamsCodec.for_model(u.model) != codec:
            raise ShapeError(f"client {u.client_id} model does not match the global model")
        deltas.append(model_to_flat(u.model, codec) - theta)
    delta = np.mean(deltas, axis=0)
    if state.adam is None or state.adam.first_moment[0].shape != theta.shape:
        raise ShapeError("server optimizer state is not shaped like the global parameter vector")

    if state.kind == "sgd":
        new_theta = theta + state.server_lr * delta
        new_adam = AdamState(state.adam.first_moment, state.adam.second_moment, state.adam.step_count + 1)
    else:
        (new_theta,), new_adam = adam_update([theta], [-delta], state.adam, state.server_lr,
                                             state.beta1, state.beta2, state.eps)
    new_state = ServerOptState(new_adam, state.server_lr, state.beta1, state.beta2, state.eps, state.kind)
    return flat_to_model(new_theta, codec), new_state


def weights_from_fid_matrix(m, eps_floor: float = FEDCAR_EPS_FLOOR) -> WeightVector:
    totals = client_total_fid(m)
    raw = 1.0 / np.maximum(totals, eps_floor)
    return WeightVector(raw / raw.sum(), totals, raw, np.asarray(m, dtype=np.float64))


def fedcar_weights(fake_sets: Sequence, eps_floor: float = FEDCAR_EPS_FLOOR) -> WeightVector:
    """Cross-client weights: inverse per-client total FID, normalized to sum to 1."""
    return weights_from_fid_matrix(pairwise_fid(fake_sets), eps_floor)


def fedcar_aggregate(updates: Sequence[ClientUpdate], w: WeightVector, disc_policy: str = "size") -> ModelPair:
    """Generator: FID-derived weights. Discriminator: size-weighted FedAvg, or the
    same FID weights when ``disc_policy == "alpha"``."""
    _check_updates(updates)
    alphas = np.asarray(w.alphas, dtype=np.float64)
    if alphas.shape != (len(updates),):
        raise ShapeError(f"{alphas.size} weights for {len(updates)} updates")
    gen = weighted_average([u.model.generator for u in updates], alphas)
    if disc_policy == "alpha":
        dw = alphas
    elif disc_policy == "size":
        dw = size_weights(updates)
    else:
        raise ValueError(f"unknown discriminator policy {disc_policy!r}")
    return ModelPair(gen, weighted_average([u.model.discriminator for u in updates], dw))


# --- pluggable strategy objects -------------------------------------------------

class Aggregator:
    name = "base"
    needs_fakes = False

    def aggregate(self, global_model: ModelPair, updates: Sequence[ClientUpdate], fake_sets=None):
        raise NotImplementedError


class FedAvg(Aggregator):
    name = "fedavg"

    def aggregate(self, global_model, updates, fake_sets=None):
        return fedavg(updates), {}


@dataclass
class FedOpt(Aggregator):
    server_lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    kind: str = "adam"
    state: ServerOptState | None = field(default=None, repr=False)

    @property
    def name(self):
        return "fedadam" if self.kind == "adam" else "fedsgd"

    def aggregate(self, global_model, updates, fake_sets=None):
        if self.state is None:
            n = model_to_flat(global_model).size
            self.state = ServerOptState.fresh(n, server_lr=self.server_lr, beta1=self.beta1,
                                              beta2=self.beta2, eps=self.eps, kind=self.kind)
        new_global, self.state = fedopt_round(global_model, updates, self.state)
        return new_global, {}


@dataclass
class FedCAR(Aggregator):
    disc_policy: str = "size"
    eps_floor: float = FEDCAR_EPS_FLOOR
    name = "fedcar"
    needs_fakes = True

    def aggregate(self, global_model, updates, fake_sets=None):
        _check_updates(updates)
        if len(updates) == 1:
            return updates[0].model.copy(), {"alphas": np.ones(1)}
        if fake_sets is None or len(fake_sets) != len(updates):
            raise ShapeError("FedCAR needs one server-side fake set per client update")
        w = fedcar_weights(fake_sets, self.eps_floor)
        info = {"fid_matrix": w.fid_matrix, "totals": w.raw_totals, "alphas": w.alphas}
        return fedcar_aggregate(updates, w, self.disc_policy), info


AGGREGATORS = ("fedavg", "fedadam", "fedsgd", "fedcar")


def make_aggregator(name: str, **options) -> Aggregator:
    """Build a fresh strategy by name. Options: server_lr/beta1/beta2/eps for
    FedOpt variants, disc_policy for FedCAR."""
    if name == "fedavg":
        return FedAvg()
    if name in ("fedadam", "fedsgd"):
        keys = ("server_lr", "beta1", "beta2", "eps")
        return FedOpt(kind="adam" if name == "fedadam" else "sgd",
                      **{k: options[k] for k in keys if k in options})
    if name == "fedcar":
        return FedCAR(disc_policy=options.get("disc_policy", "size"))
    raise ValueError(f"unknown aggregator {name!r}; choose from {', '.join(AGGREGATORS)}")
