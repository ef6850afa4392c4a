"""Experiment orchestration: build clients, run rounds, collect artifacts.

A run is fully determined by its config: data generation, parameter
initialization and every per-round random draw use streams derived from
``(config.seed, domain, round, client)`` via ``numpy.random.SeedSequence``,
so reruns are bit-identical and clients can be processed in parallel within
a round without perturbing results. Rounds are synchronous: every client
reads the previous round's immutable snapshot and all updates commit at a
barrier.

Artifacts written per run: ``accuracy.csv`` (client_id, cluster_id,
test_accuracy, best_val_loss), ``heatmap.csv`` (K x K merge counts),
``metrics.jsonl`` (one record per client per round) and ``config.echo``
(the resolved config, re-parseable).
"""

from __future__ import annotations

import csv
import io
import json
import pickle
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import datagen, model, protocols, similarity
from .config import ExperimentConfig, format_config, parse_config_text
from .datagen import ClientShard
from .errors import ConfigurationError, IngestionError, TrainingError
from .model import Arch
from .protocols import ClientRuntime, ProtocolKind, RoundResult
from .similarity import TauSchedule

CHECKPOINT_FORMAT_VERSION = 1

# Domains for deriving independent random streams from the config seed.
_DOMAIN_BASE_TASK = 0
_DOMAIN_PARTITION = 1
_DOMAIN_INIT = 2
_DOMAIN_ROUND = 3

SWEEPABLE = {
    "tau", "tau_max", "m", "T", "E", "batch_size", "learning_rate",
    "train_n", "val_n", "test_n", "hidden_dim",
}


def derive_seed(seed: int, *key: int) -> int:
    """A stable 64-bit seed for the (seed, *key) stream."""
    ss = np.random.SeedSequence([seed, *key])
    return int(ss.generate_state(1, np.uint64)[0])


def round_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([seed, _DOMAIN_ROUND, round_index, client_id])
    )


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    client_id: int
    val_loss: float
    val_accuracy: float
    in_cluster_probability_mass: float
    tau_used: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "round": self.round,
                "client_id": self.client_id,
                "val_loss": self.val_loss,
                "val_accuracy": self.val_accuracy,
                "in_cluster_probability_mass": self.in_cluster_probability_mass,
                "tau_used": self.tau_used,
            }
        )


@dataclass(frozen=True)
class ExperimentResult:
    """Final per-client test metrics plus everything needed for diagnostics."""

    config: ExperimentConfig
    cluster_ids: np.ndarray
    test_accuracy: np.ndarray
    best_val_loss: np.ndarray
    cluster_accuracies: list[float]
    mean_over_clusters: float
    std_over_clusters: float
    comm_counts: np.ndarray
    comm_events: list[tuple[int, int, int]]
    metrics: list[MetricsRecord]
    final_probabilities: np.ndarray
    final_in_cluster_mass: np.ndarray


def pool_size_for(config: ExperimentConfig) -> int:
    """Samples the base pool must contain so every cluster can be carved."""
    per_client = config.train_n + config.val_n + config.test_n
    needed = 0
    for spec in config.layout.clusters:
        want = spec.count * per_client
        if spec.labels is not None:
            # the label filter keeps roughly |subset|/n_classes of the pool
            want = int(np.ceil(want * config.n_classes / len(spec.labels)))
        needed = max(needed, want)
    # headroom for label-balance rounding
    return needed + config.n_classes


def build_shards(config: ExperimentConfig) -> list[ClientShard]:
    pool = datagen.generate_base_task(
        config.n_classes,
        config.input_dim,
        pool_size_for(config),
        derive_seed(config.seed, _DOMAIN_BASE_TASK),
    )
    return datagen.partition_clients(
        pool,
        config.layout,
        config.train_n,
        config.val_n,
        config.test_n,
        derive_seed(config.seed, _DOMAIN_PARTITION),
    )


def _build_protocol(config: ExperimentConfig) -> ProtocolKind:
    if config.protocol == "dac_var":
        schedule = TauSchedule("sigmoid", tau_max=config.tau_max, total_rounds=config.T)
    else:
        schedule = TauSchedule("constant", tau=config.tau, total_rounds=config.T)
    return ProtocolKind(
        name=config.protocol,
        m=config.m,
        epochs=config.E,
        batch_size=config.batch_size,
        schedule=schedule,
        pens_selection_rounds=config.pens_selection_rounds,
        pens_top_fraction=config.pens_top_fraction,
        two_hop=config.two_hop,
        two_hop_rule=config.two_hop_rule,
    )


def _initial_clients(config: ExperimentConfig, shards: list[ClientShard]) -> list[ClientRuntime]:
    arch = Arch(config.input_dim, config.hidden_dim, config.n_classes)
    clients = []
    for shard in shards:
        params = model.init_params(arch, derive_seed(config.seed, _DOMAIN_INIT, shard.client_id))
        clients.append(
            ClientRuntime(
                shard=shard,
                params=params,
                optimizer=model.init_optimizer(arch, config.learning_rate),
                similarity=similarity.fresh_state(shard.client_id, config.K),
                best_params=params,
                best_val_loss=float("inf"),
            )
        )
    return clients


class Simulation:
    """A stepped experiment: run rounds, checkpoint at barriers, finalize."""

    def __init__(self, config: ExperimentConfig, workers: int = 1):
        config.validate()
        self.config = config
        self.workers = max(1, workers)
        self.protocol = _build_protocol(config)
        self.clients = _initial_clients(config, build_shards(config))
        self.cluster_ids = np.array([c.shard.cluster_id for c in self.clients])
        self.round = 0
        self.comm_counts = np.zeros((config.K, config.K), dtype=np.int64)
        self.comm_events: list[tuple[int, int, int]] = []
        self.metrics: list[MetricsRecord] = []

    def _round_fn(self, round_index: int) -> Callable[..., RoundResult]:
        name = self.config.protocol
        if name in ("dac", "dac_var"):
            return protocols.dac_round
        if name == "random":
            return protocols.random_round
        if name == "oracle":
            return protocols.oracle_round
        if name == "local":
            return protocols.local_round
        if name == "pens":
            if round_index < self.config.pens_selection_rounds:
                return protocols.pens_selection_round
            return protocols.pens_round
        raise ConfigurationError(f"unknown protocol {name!r}")

    def _maybe_fix_pens_neighbors(self) -> None:
        if self.config.protocol != "pens":
            return
        if self.round != self.config.pens_selection_rounds:
            return
        fixed = []
        for c in self.clients:
            counts = (
                c.pens_selection_counts
                if c.pens_selection_counts is not None
                else np.zeros(self.config.K, dtype=np.int64)
            )
            neighbors = protocols.pens_finalize_neighbors(
                counts,
                self.config.pens_selection_rounds,
                self.config.m,
                self.config.pens_top_fraction,
                c.shard.client_id,
            )
            fixed.append(replace(c, pens_neighbors=neighbors))
        self.clients = fixed

    def run_round(self) -> None:
        t = self.round
        if t >= self.config.T:
            raise RuntimeError("run is already complete")
        self._maybe_fix_pens_neighbors()
        snapshot = self.clients
        fn = self._round_fn(t)

        def step(i: int) -> RoundResult:
            try:
                return fn(snapshot, i, t, self.protocol, round_rng(self.config.seed, t, i))
            except TrainingError as exc:
                raise TrainingError(f"client {i} diverged at round {t}: {exc}") from exc

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(step, range(self.config.K)))
        else:
            results = [step(i) for i in range(self.config.K)]

        # barrier: commit all new states at once
        self.clients = [r.runtime for r in results]
        for i, r in enumerate(results):
            for k in r.sampled:
                self.comm_counts[i, k] += 1
                self.comm_events.append((t, i, k))
            mass = float(r.probabilities[self.cluster_ids == self.cluster_ids[i]].sum())
            self.metrics.append(
                MetricsRecord(
                    round=t,
                    client_id=i,
                    val_loss=r.val_loss,
                    val_accuracy=r.val_accuracy,
                    in_cluster_probability_mass=mass,
                    tau_used=r.tau_used,
                )
            )
        self.round += 1

    def run(self, until: int | None = None) -> "Simulation":
        stop = self.config.T if until is None else min(until, self.config.T)
        while self.round < stop:
            self.run_round()
        return self

    def sampling_distribution(self, i: int, round_index: int | None = None) -> np.ndarray:
        """The distribution client i would sample from right now."""
        t = self.round if round_index is None else round_index
        c = self.clients[i]
        name = self.config.protocol
        k = self.config.K
        if name in ("dac", "dac_var"):
            tau = similarity.tau_at(self.protocol.schedule, min(t, self.config.T))
            return similarity.sampling_probabilities(c.similarity, tau)
        if name == "random":
            return protocols.uniform_over([j for j in range(k) if j != i], k)
        if name == "oracle":
            peers = [j for j in range(k) if j != i and self.cluster_ids[j] == self.cluster_ids[i]]
            return protocols.uniform_over(peers, k)
        if name == "pens":
            if c.pens_neighbors is not None:
                return protocols.uniform_over(sorted(c.pens_neighbors), k)
            return protocols.uniform_over([j for j in range(k) if j != i], k)
        return np.zeros(k)

    def finalize(self) -> ExperimentResult:
        if self.round < self.config.T:
            raise RuntimeError(f"run stopped at round {self.round} of {self.config.T}")
        test_accuracy = np.zeros(self.config.K)
        best_val_loss = np.zeros(self.config.K)
        for i, c in enumerate(self.clients):
            acc, _ = model.evaluate(c.best_params, c.shard.test)
            test_accuracy[i] = acc
            best_val_loss[i] = c.best_val_loss

        n_clusters = len(self.config.layout.clusters)
        cluster_accuracies = [
            float(test_accuracy[self.cluster_ids == cid].mean()) for cid in range(n_clusters)
        ]
        final_probabilities = np.vstack(
            [self.sampling_distribution(i) for i in range(self.config.K)]
        )
        final_mass = np.array(
            [
                float(final_probabilities[i, self.cluster_ids == self.cluster_ids[i]].sum())
                for i in range(self.config.K)
            ]
        )
        return ExperimentResult(
            config=self.config,
            cluster_ids=self.cluster_ids.copy(),
            test_accuracy=test_accuracy,
            best_val_loss=best_val_loss,
            cluster_accuracies=cluster_accuracies,
            mean_over_clusters=float(np.mean(cluster_accuracies)),
            std_over_clusters=float(np.std(cluster_accuracies)),
            comm_counts=self.comm_counts.copy(),
            comm_events=list(self.comm_events),
            metrics=list(self.metrics),
            final_probabilities=final_probabilities,
            final_in_cluster_mass=final_mass,
        )

    # -- checkpointing -------------------------------------------------

    def checkpoint(self, path: str | Path) -> None:
        """Persist the run at the current round barrier."""
        clients = []
        for c in self.clients:
            clients.append(
                {
                    "params": c.params.values,
                    "best_params": c.best_params.values,
                    "best_val_loss": c.best_val_loss,
                    "opt_m": c.optimizer.first_moment,
                    "opt_v": c.optimizer.second_moment,
                    "opt_step": c.optimizer.step_count,
                    "sim_scores": c.similarity.scores,
                    "sim_provenance": c.similarity.provenance,
                    "sim_history": sorted(c.similarity.history),
                    "sim_last_measured": c.similarity.last_measured_round,
                    "pens_neighbors": (
                        sorted(c.pens_neighbors) if c.pens_neighbors is not None else None
                    ),
                    "pens_counts": c.pens_selection_counts,
                }
            )
        payload = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config_echo": format_config(self.config),
            "round": self.round,
            "clients": clients,
            "comm_counts": self.comm_counts,
            "comm_events": self.comm_events,
            "metrics": self.metrics,
        }
        with open(path, "wb") as handle:
            pickle.dump(payload, handle, protocol=4)

    @classmethod
    def resume(cls, path: str | Path, workers: int = 1) -> "Simulation":
        """Restore a checkpointed run; continues bit-identically."""
        try:
            with open(path, "rb") as handle:
                payload = pickle.load(handle)
        except (OSError, pickle.UnpicklingError, EOFError, AttributeError) as exc:
            raise IngestionError(f"{path}: cannot read checkpoint: {exc}") from exc
        if not isinstance(payload, dict) or "format_version" not in payload:
            raise IngestionError(f"{path}: not a checkpoint file")
        if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
            raise IngestionError(
                f"{path}: checkpoint format {payload['format_version']} "
                f"!= supported {CHECKPOINT_FORMAT_VERSION}"
            )
        try:
            config = parse_config_text(payload["config_echo"], source=str(path))
        except ConfigurationError as exc:
            raise IngestionError(f"{path}: embedded config is invalid: {exc}") from exc

        sim = cls(config, workers=workers)
        arch = Arch(config.input_dim, config.hidden_dim, config.n_classes)
        if len(payload["clients"]) != config.K:
            raise IngestionError(f"{path}: checkpoint has {len(payload['clients'])} clients, config K={config.K}")
        restored = []
        for i, (c, saved) in enumerate(zip(sim.clients, payload["clients"])):
            if saved["params"].shape != (arch.n_params,):
                raise IngestionError(
                    f"{path}: client {i} parameter vector does not match architecture {arch}"
                )
            restored.append(
                replace(
                    c,
                    params=model.ModelParams(arch, saved["params"]),
                    best_params=model.ModelParams(arch, saved["best_params"]),
                    best_val_loss=saved["best_val_loss"],
                    optimizer=model.OptimizerState(
                        saved["opt_m"], saved["opt_v"], saved["opt_step"], config.learning_rate
                    ),
                    similarity=similarity.SimilarityState(
                        owner=i,
                        scores=saved["sim_scores"],
                        provenance=saved["sim_provenance"],
                        history=frozenset(saved["sim_history"]),
                        last_measured_round=saved["sim_last_measured"],
                    ),
                    pens_neighbors=(
                        frozenset(saved["pens_neighbors"])
                        if saved["pens_neighbors"] is not None
                        else None
                    ),
                    pens_selection_counts=saved["pens_counts"],
                )
            )
        sim.clients = restored
        sim.round = payload["round"]
        sim.comm_counts = payload["comm_counts"]
        sim.comm_events = payload["comm_events"]
        sim.metrics = payload["metrics"]
        return sim


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Build, run T rounds, and evaluate best-validation snapshots on test data."""
    return Simulation(config, workers=workers).run().finalize()


def run_sweep(
    base: ExperimentConfig, parameter: str, values: Sequence, workers: int = 1
) -> list[ExperimentResult]:
    """One run per value, all with the same seed, for comparison curves."""
    if parameter not in SWEEPABLE:
        raise ConfigurationError(
            f"cannot sweep {parameter!r}; sweepable: {', '.join(sorted(SWEEPABLE))}"
        )
    results = []
    for value in values:
        cast = type(getattr(base, parameter))(value)
        results.append(run_experiment(replace(base, **{parameter: cast}), workers=workers))
    return results


# -- artifact files ------------------------------------------------------


def write_artifacts(result: ExperimentResult, output_dir: str | Path) -> Path:
    """Write accuracy.csv, heatmap.csv, metrics.jsonl and config.echo."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client_id", "cluster_id", "test_accuracy", "best_val_loss"])
    for i in range(result.config.K):
        writer.writerow(
            [
                i,
                int(result.cluster_ids[i]),
                repr(float(result.test_accuracy[i])),
                repr(float(result.best_val_loss[i])),
            ]
        )
    (out / "accuracy.csv").write_text(buf.getvalue(), encoding="utf-8")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in result.comm_counts:
        writer.writerow([int(v) for v in row])
    (out / "heatmap.csv").write_text(buf.getvalue(), encoding="utf-8")

    lines = [record.to_json() for record in result.metrics]
    (out / "metrics.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")

    (out / "config.echo").write_text(format_config(result.config), encoding="utf-8")
    return out
