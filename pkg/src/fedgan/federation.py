"""Round orchestration for the federated GAN simulator.

Each round: the global model is broadcast as a flat parameter list, every
client splits it, trains locally and sends back its own flat list, and the
server aggregates. FedCAR additionally samples fakes from every client
generator on the server. Only flat float64 vectors cross the boundary; no
optimizer state does.

All randomness is drawn from ``numpy.random.SeedSequence`` keyed by
(master seed, purpose, round, client), so the result does not depend on the
order in which clients happen to run.
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import AGGREGATORS, Aggregator, ClientUpdate, make_aggregator
from .codec import ParamsCodec, flat_to_model, model_to_flat
from .errors import ClientFailure, ConfigError
from .frechet import sample_fd
from .scenarios import Scenario, ScenarioConfig, build_scenario
from .tinygan import ModelPair, TrainConfig, gen_forward, init_model, local_train

log = logging.getLogger(__name__)

THREADS_ENV = "FEDGAN_THREADS"

# SeedSequence spawn-key tags
_INIT, _TRAIN, _SERVER_FAKES, _EVAL = 1, 2, 3, 4


@dataclass
class FederationConfig:
    num_rounds_max: int = 60
    server_fake_count: int = 512
    eval_fake_count: int = 1024
    convergence_tol: float = 0.02
    convergence_window: int = 5
    aggregator: str = "fedcar"
    server_lr: float = 1e-2
    server_beta1: float = 0.9
    server_beta2: float = 0.99
    server_eps: float = 1e-8
    disc_policy: str = "size"
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)

    def problems(self) -> list[str]:
        out = []
        for name in ("num_rounds_max", "server_fake_count", "eval_fake_count", "convergence_window"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                out.append(f"federation.{name} must be an integer >= 1, got {v!r}")
        for name in ("server_fake_count", "eval_fake_count"):
            v = getattr(self, name)
            if isinstance(v, int) and v == 1:
                out.append(f"federation.{name} must be >= 2 to fit a covariance")
        if not self.convergence_tol > 0:
            out.append(f"federation.convergence_tol must be > 0, got {self.convergence_tol!r}")
        if self.aggregator not in AGGREGATORS:
            out.append(f"federation.aggregator must be one of {', '.join(AGGREGATORS)}, got {self.aggregator!r}")
        if not self.server_lr >= 0:
            out.append("federation.server_lr must be >= 0")
        for name in ("server_beta1", "server_beta2"):
            if not 0 <= getattr(self, name) < 1:
                out.append(f"federation.{name} must lie in [0, 1)")
        if self.disc_policy not in ("size", "alpha"):
            out.append(f"federation.disc_policy must be 'size' or 'alpha', got {self.disc_policy!r}")
        if not isinstance(self.master_seed, int):
            out.append("federation.master_seed must be an integer")
        return out + self.train.problems() + self.scenario.problems()

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def make_aggregator(self) -> Aggregator:
        return make_aggregator(self.aggregator, server_lr=self.server_lr, beta1=self.server_beta1,
                               beta2=self.server_beta2, eps=self.server_eps, disc_policy=self.disc_policy)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoundRecord:
    round: int
    eval_fd: list[float]
    losses: list[list[float]]  # per client [loss_g, loss_d]
    alphas: list[float] | None = None
    totals: list[float] | None = None
    fid_matrix: list[list[float]] | None = None
    wall_time: float = 0.0
    server_fakes: list[np.ndarray] | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        # wall_time and server_fakes stay out of the history log so reruns are byte-identical
        return {"round": self.round, "fid_matrix": self.fid_matrix, "totals": self.totals,
                "alphas": self.alphas, "losses": self.losses, "eval_fd": self.eval_fd}


@dataclass
class FederationState:
    cfg: FederationConfig
    scenario: Scenario
    aggregator: Aggregator
    global_model: ModelPair
    codec: ParamsCodec
    eval_sets: list[np.ndarray]
    history: list[RoundRecord] = field(default_factory=list)


def _seed(cfg: FederationConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=[cfg.master_seed, cfg.train.seed], spawn_key=key)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def init_state(cfg: FederationConfig, scenario: Scenario | None = None, aggregator: Aggregator | None = None,
               eval_sets: Sequence[np.ndarray] | None = None) -> FederationState:
    cfg.validate()
    scenario = scenario if scenario is not None else build_scenario(cfg.scenario)
    data_dim = scenario.datasets[0].shape[1]
    gen_sizes, disc_sizes = cfg.train.arch(data_dim)
    model = init_model(gen_sizes, disc_sizes, _seed(cfg, _INIT), cfg.train.slope)
    return FederationState(cfg, scenario, aggregator or cfg.make_aggregator(), model,
                           ParamsCodec.for_model(model),
                           list(eval_sets) if eval_sets is not None else list(scenario.datasets))


def sample_generator(model: ModelPair, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return gen_forward(model.generator, rng.standard_normal((n, model.generator.in_dim)))


def evaluate_global(global_model: ModelPair, datasets: Sequence[np.ndarray], eval_fake_count: int, seed) -> list[float]:
    """FD between ``eval_fake_count`` generator samples and each client's real data."""
    fakes = sample_generator(global_model, eval_fake_count, seed)
    return [sample_fd(fakes, real) for real in datasets]


def _client_round(flat_global, codec, data, train_cfg, seed):
    # client side: only the flat vector arrives, only a flat vector leaves
    model = flat_to_model(flat_global, codec)
    trained, losses = local_train(model, data, train_cfg, seed)
    return model_to_flat(trained, codec), losses


def run_round(state: FederationState, round_index: int) -> RoundRecord:
    cfg = state.cfg
    start = time.perf_counter()
    flat_global = model_to_flat(state.global_model, state.codec)
    flat_global.setflags(write=False)

    jobs = [(i, spec.client_id, data) for i, (spec, data) in enumerate(zip(state.scenario.specs, state.scenario.datasets))]

    def work(job):
        i, cid, data = job
        try:
            return _client_round(flat_global, state.codec, data, cfg.train, _seed(cfg, _TRAIN, round_index, cid))
        except Exception as exc:
            raise ClientFailure(cid, exc) from exc

    threads = _thread_count()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    updates = [ClientUpdate(spec.client_id, flat_to_model(flat, state.codec), spec.size)
               for spec, (flat, _) in zip(state.scenario.specs, results)]
    fakes = None
    if state.aggregator.needs_fakes:
        fakes = [sample_generator(u.model, cfg.server_fake_count, _seed(cfg, _SERVER_FAKES, round_index, u.client_id))
                 for u in updates]
    new_global, info = state.aggregator.aggregate(state.global_model, updates, fakes)
    state.global_model = new_global

    eval_fd = evaluate_global(new_global, state.eval_sets, cfg.eval_fake_count, _seed(cfg, _EVAL, round_index))
    record = RoundRecord(
        round=round_index,
        eval_fd=eval_fd,
        losses=[[float(lg), float(ld)] for _, (lg, ld) in results],
        alphas=_listify(info.get("alphas")),
        totals=_listify(info.get("totals")),
        fid_matrix=_listify(info.get("fid_matrix")),
        wall_time=time.perf_counter() - start,
        server_fakes=fakes,
    )
    state.history.append(record)
    return record


def _listify(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


def has_converged(history: Sequence[RoundRecord], tol: float, window: int) -> bool:
    """True once every client's eval FD moved by less than ``tol`` (relative,
    round over round) throughout the last ``window`` rounds."""
    if len(history) < window:
        return False
    recent = np.array([r.eval_fd for r in history[-window:]], dtype=float)
    if len(recent) < 2:
        return True
    prev, cur = recent[:-1], recent[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(cur == prev, 0.0, np.abs(cur - prev) / np.abs(prev))
    return bool(np.max(rel) < tol)


@dataclass
class ExperimentResult:
    history: list[RoundRecord]
    final_fd: list[float]
    avg_fd: float
    converged: bool
    global_model: ModelPair
    codec: ParamsCodec

    def summary(self) -> dict:
        return {"rounds": len(self.history), "converged": self.converged,
                "final_eval_fd": self.final_fd, "avg_eval_fd": self.avg_fd}


def run_experiment(cfg: FederationConfig, scenario: Scenario | None = None, aggregator: Aggregator | None = None,
                   eval_sets: Sequence[np.ndarray] | None = None, on_round=None) -> ExperimentResult:
    """Rounds until convergence or ``num_rounds_max``."""
    state = init_state(cfg, scenario, aggregator, eval_sets)
    converged = False
    for r in range(cfg.num_rounds_max):
        rec = run_round(state, r)
        if on_round is not None:
            on_round(rec, state)
        log.info("round %d eval_fd=%s alphas=%s", r, np.round(rec.eval_fd, 4).tolist(), rec.alphas)
        if has_converged(state.history, cfg.convergence_tol, cfg.convergence_window):
            converged = True
            break
    final = list(state.history[-1].eval_fd)
    return ExperimentResult(state.history, final, float(np.mean(final)), converged, state.global_model, state.codec)


def run_individual(cfg: FederationConfig, scenario: Scenario | None = None) -> list[ExperimentResult]:
    """Local-only baseline: each client trains alone under the same round budget
    and is evaluated against its own data only."""
    scenario = scenario if scenario is not None else build_scenario(cfg.scenario)
    return [run_experiment(cfg, scenario.subset(i), make_aggregator("fedavg"))
            for i in range(scenario.num_clients)]


def run_centralized(cfg: FederationConfig, scenario: Scenario | None = None) -> ExperimentResult:
    """Pooled-data baseline: one GAN on the union of all client data, evaluated
    against every client's data."""
    from .scenarios import ClientDatasetSpec

    scenario = scenario if scenario is not None else build_scenario(cfg.scenario)
    pooled = scenario.pooled()
    mixture = scenario.specs[0].mixture
    single = Scenario([ClientDatasetSpec(0, mixture, len(pooled))], [pooled])
    return run_experiment(cfg, single, make_aggregator("fedavg"), eval_sets=scenario.datasets)


def write_history(history: Sequence[RoundRecord], path) -> None:
    with Path(path).open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def read_history(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]
