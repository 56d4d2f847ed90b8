"""Synthetic non-i.i.d. client datasets built from 2-D Gaussian mixtures.

Every client ("institution") gets its own mixture. In the default layouts all
clients share one three-component template with unequal component weights;
client ``k`` of ``N`` sees it rotated by ``360 * k / N`` degrees, so each
client has a different dominant lobe while all pairwise client distances
stay equal.

* ``mild``: every client holds ``base_size`` points.
* ``severe``: as mild, except one client keeps only ``severe_ratio`` of them.
* ``custom``: mixtures and sizes are given explicitly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import InvalidSpec

# default template: three components on a circle, elongated tangentially
TEMPLATE_RADIUS = 2.0
TEMPLATE_ANGLES = (90.0, 210.0, 330.0)
TEMPLATE_VARIANCES = (0.30, 0.08)  # (along tangent, along radius)
TEMPLATE_WEIGHTS = (0.47, 0.30, 0.23)


@dataclass
class Component:
    mean: np.ndarray
    covariance: np.ndarray
    weight: float


@dataclass
class MixtureSpec:
    components: list[Component]

    def validate(self) -> None:
        if not self.components:
            raise InvalidSpec("mixture has no components")
        weights = np.array([c.weight for c in self.components], dtype=float)
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidSpec(f"mixture weights must be positive and sum to 1, got {weights.tolist()}")
        dim = len(self.components[0].mean)
        for c in self.components:
            cov = np.asarray(c.covariance, dtype=float)
            if np.shape(c.mean) != (dim,) or cov.shape != (dim, dim):
                raise InvalidSpec("component mean/covariance shapes are inconsistent")
            if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-12:
                raise InvalidSpec("component covariance must be symmetric PSD")

    def to_dict(self) -> dict[str, Any]:
        return {"components": [
            {"mean": np.asarray(c.mean).tolist(), "covariance": np.asarray(c.covariance).tolist(), "weight": c.weight}
            for c in self.components]}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls([Component(np.asarray(c["mean"], dtype=float), np.asarray(c["covariance"], dtype=float),
                              float(c["weight"])) for c in d["components"]])


@dataclass
class ClientDatasetSpec:
    client_id: int
    mixture: MixtureSpec
    size: int


@dataclass
class ScenarioConfig:
    kind: str = "mild"
    num_clients: int = 3
    base_size: int = 2048
    severe_ratio: float = 0.1
    small_client_index: int = 1
    seed: int = 0
    clients: list[dict] = field(default_factory=list)  # only for kind = "custom"

    def problems(self) -> list[str]:
        out = []
        if self.kind not in ("mild", "severe", "custom"):
            out.append(f"scenario.kind must be one of mild/severe/custom, got {self.kind!r}")
        if self.kind == "custom":
            if len(self.clients) < 1:
                out.append("scenario.clients must list at least one client for kind = custom")
            return out
        if not (isinstance(self.num_clients, int) and self.num_clients >= 2):
            out.append(f"scenario.num_clients must be an integer >= 2, got {self.num_clients!r}")
        if not (isinstance(self.base_size, int) and self.base_size >= 2):
            out.append(f"scenario.base_size must be an integer >= 2, got {self.base_size!r}")
        if not (0 < self.severe_ratio <= 1):
            out.append(f"scenario.severe_ratio must lie in (0, 1], got {self.severe_ratio!r}")
        if not (isinstance(self.small_client_index, int) and 0 <= self.small_client_index
                and (not isinstance(self.num_clients, int) or self.small_client_index < self.num_clients)):
            out.append(f"scenario.small_client_index must lie in [0, num_clients), got {self.small_client_index!r}")
        if self.kind == "severe" and not out and _half_up(self.base_size * self.severe_ratio) < 1:
            out.append("scenario.severe_ratio leaves the small client with 0 points")
        if self.clients:
            out.append("scenario.clients is only allowed for kind = custom")
        return out


@dataclass
class Scenario:
    specs: list[ClientDatasetSpec]
    datasets: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [s.size for s in self.specs]

    @property
    def num_clients(self) -> int:
        return len(self.specs)

    def pooled(self) -> np.ndarray:
        return np.concatenate(self.datasets, axis=0)

    def subset(self, index: int) -> "Scenario":
        return Scenario([self.specs[index]], [self.datasets[index]])


def _half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _rotation(deg: float) -> np.ndarray:
    t = math.radians(deg)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


def default_mixture(client_index: int, num_clients: int) -> MixtureSpec:
    """Template mixture rotated for one client."""
    rot = _rotation(360.0 * client_index / num_clients)
    comps = []
    for angle, weight in zip(TEMPLATE_ANGLES, TEMPLATE_WEIGHTS):
        local_rot = _rotation(angle)
        mean = local_rot @ np.array([TEMPLATE_RADIUS, 0.0])
        # tangent axis first, then radial axis
        axes = local_rot @ np.array([[0.0, 1.0], [1.0, 0.0]])
        cov = axes @ np.diag(TEMPLATE_VARIANCES) @ axes.T
        comps.append(Component(rot @ mean, rot @ cov @ rot.T, weight))
    return MixtureSpec(comps)


def sample_mixture(spec: MixtureSpec, n: int, seed) -> np.ndarray:
    """Draw ``n`` points: pick a component by weight, then a Gaussian draw from it."""
    spec.validate()
    if n < 1:
        raise InvalidSpec(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    weights = np.array([c.weight for c in spec.components])
    labels = rng.choice(len(weights), size=n, p=weights / weights.sum())
    dim = len(spec.components[0].mean)
    noise = rng.standard_normal((n, dim))
    out = np.empty((n, dim))
    for k, comp in enumerate(spec.components):
        mask = labels == k
        # eigen-factor instead of Cholesky so singular covariances are allowed
        w, v = np.linalg.eigh(np.asarray(comp.covariance, dtype=float))
        factor = v * np.sqrt(np.clip(w, 0.0, None))
        out[mask] = comp.mean + noise[mask] @ factor.T
    return out


def _client_seed(seed: int, client_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(0x5CE7, client_index))


def _build(cfg: ScenarioConfig, sizes: list[int]) -> Scenario:
    specs, datasets = [], []
    for i, size in enumerate(sizes):
        mix = default_mixture(i, cfg.num_clients)
        specs.append(ClientDatasetSpec(i, mix, size))
        datasets.append(sample_mixture(mix, size, _client_seed(cfg.seed, i)))
    return Scenario(specs, datasets)


def _check(cfg: ScenarioConfig, kind: str) -> None:
    if cfg.kind != kind:
        raise InvalidSpec(f"expected scenario kind {kind!r}, got {cfg.kind!r}")
    problems = cfg.problems()
    if problems:
        raise InvalidSpec("; ".join(problems))


def build_mild(cfg: ScenarioConfig) -> Scenario:
    _check(cfg, "mild")
    return _build(cfg, [cfg.base_size] * cfg.num_clients)


def build_severe(cfg: ScenarioConfig) -> Scenario:
    _check(cfg, "severe")
    sizes = [cfg.base_size] * cfg.num_clients
    sizes[cfg.small_client_index] = _half_up(cfg.base_size * cfg.severe_ratio)
    if sizes[cfg.small_client_index] < 1:
        raise InvalidSpec("severe_ratio leaves the small client with 0 points")
    return _build(cfg, sizes)


def build_custom(cfg: ScenarioConfig) -> Scenario:
    _check(cfg, "custom")
    specs, datasets = [], []
    for i, entry in enumerate(cfg.clients):
        mix = MixtureSpec.from_dict(entry["mixture"])
        size = int(entry["size"])
        if size < 1:
            raise InvalidSpec(f"client {i} size must be >= 1")
        specs.append(ClientDatasetSpec(i, mix, size))
        datasets.append(sample_mixture(mix, size, _client_seed(cfg.seed, i)))
    return Scenario(specs, datasets)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    builders = {"mild": build_mild, "severe": build_severe, "custom": build_custom}
    if cfg.kind not in builders:
        raise InvalidSpec(f"unknown scenario kind {cfg.kind!r}")
    return builders[cfg.kind](cfg)


def dump_scenario(scenario: Scenario, path) -> None:
    """Write one JSON record per client (id, size, mixture) for audits."""
    with Path(path).open("w") as fh:
        for spec in scenario.specs:
            fh.write(json.dumps({"client_id": spec.client_id, "size": spec.size,
                                 "mixture": spec.mixture.to_dict()}, sort_keys=True) + "\n")


def load_scenario_specs(path) -> list[ClientDatasetSpec]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(ClientDatasetSpec(rec["client_id"], MixtureSpec.from_dict(rec["mixture"]), rec["size"]))
    return out
