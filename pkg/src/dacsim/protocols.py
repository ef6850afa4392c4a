"""One communication round per strategy, plus the shared FedAvg merge.

Every protocol follows the same skeleton: pick peers, optionally update
similarity bookkeeping, merge the picked models into the own model by
federated averaging, then train locally and refresh the best-validation
snapshot. Round functions are pure: they read an immutable snapshot of all
clients from the previous round barrier and return the calling client's new
runtime plus the list of peers whose models were merged.

Strategies:

* ``dac``      — similarity-weighted softmax sampling with two-hop estimates
* ``dac_var``  — same, with the temperature growing along a sigmoid schedule
* ``random``   — uniform peer sampling, no similarity bookkeeping
* ``pens``     — a neighbor-selection phase fixes a hard neighbor set, then
                 communication stays inside it
* ``oracle``   — samples only within the ground-truth cluster
* ``local``    — no communication at all
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import model, similarity
from .datagen import ClientShard
from .model import ModelParams, OptimizerState
from .similarity import SimilarityState, TauSchedule

logger = logging.getLogger(__name__)

PROTOCOL_NAMES = ("dac", "dac_var", "random", "pens", "oracle", "local")


@dataclass(frozen=True)
class ProtocolKind:
    """A strategy name plus the knobs the round functions need."""

    name: str
    m: int = 5
    epochs: int = 3
    batch_size: int = 8
    schedule: TauSchedule | None = None
    pens_selection_rounds: int = 20
    pens_top_fraction: float = 0.5
    two_hop: bool = True
    two_hop_rule: str = "max"


@dataclass(frozen=True)
class ClientRuntime:
    """Everything one client carries between rounds."""

    shard: ClientShard
    params: ModelParams
    optimizer: OptimizerState
    similarity: SimilarityState
    best_params: ModelParams
    best_val_loss: float
    pens_neighbors: frozenset[int] | None = None
    pens_selection_counts: np.ndarray | None = None


@dataclass(frozen=True)
class RoundResult:
    """Outcome of one client's round: new state plus what the metrics need."""

    runtime: ClientRuntime
    sampled: tuple[int, ...]
    probabilities: np.ndarray
    tau_used: float
    val_loss: float
    val_accuracy: float


def fedavg_merge(
    own: ModelParams, own_count: int, received: list[tuple[ModelParams, int]]
) -> ModelParams:
    """Sample-count-weighted coordinate-wise average of own + received models."""
    if own_count <= 0 or any(count <= 0 for _, count in received):
        raise ValueError("sample counts must be positive")
    if any(p.arch != own.arch for p, _ in received):
        raise ValueError("cannot merge models with different architectures")
    total = own_count + sum(count for _, count in received)
    merged = own.values * (own_count / total)
    for params, count in received:
        merged = merged + params.values * (count / total)
    return ModelParams(own.arch, merged)


def effective_m(m: int, n_clients: int) -> int:
    if m > n_clients - 1:
        logger.warning("m=%d exceeds K-1=%d, clamping", m, n_clients - 1)
        return n_clients - 1
    return m


def _finish(
    snapshot: Sequence[ClientRuntime],
    i: int,
    sampled: Sequence[int],
    probabilities: np.ndarray,
    tau_used: float,
    proto: ProtocolKind,
    rng: np.random.Generator,
    *,
    similarity_state: SimilarityState | None = None,
    pens_counts: np.ndarray | None = None,
    pens_neighbors: frozenset[int] | None = None,
) -> RoundResult:
    """Shared round tail: FedAvg with the sampled peers, local training, best snapshot."""
    me = snapshot[i]
    params = me.params
    if sampled:
        received = [(snapshot[k].params, len(snapshot[k].shard.train)) for k in sampled]
        params = fedavg_merge(params, len(me.shard.train), received)
    params, optimizer = model.train_local(
        params, me.shard, proto.epochs, proto.batch_size, me.optimizer, rng
    )
    val_accuracy, val_loss = model.evaluate(params, me.shard.val)
    best_params, best_val_loss = me.best_params, me.best_val_loss
    if val_loss < best_val_loss:
        best_params, best_val_loss = params, val_loss
    runtime = replace(
        me,
        params=params,
        optimizer=optimizer,
        similarity=similarity_state if similarity_state is not None else me.similarity,
        best_params=best_params,
        best_val_loss=best_val_loss,
        pens_neighbors=pens_neighbors if pens_neighbors is not None else me.pens_neighbors,
        pens_selection_counts=pens_counts if pens_counts is not None else me.pens_selection_counts,
    )
    return RoundResult(
        runtime=runtime,
        sampled=tuple(sampled),
        probabilities=probabilities,
        tau_used=tau_used,
        val_loss=val_loss,
        val_accuracy=val_accuracy,
    )


def uniform_over(indices: Sequence[int], n_clients: int) -> np.ndarray:
    probs = np.zeros(n_clients)
    if indices:
        probs[list(indices)] = 1.0 / len(indices)
    return probs


def dac_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """One adaptive round for client i.

    1. sample m peers from the softmax of the similarity scores at tau(t);
    2. measure the own model's loss on each sampled peer's full train set
       and store the inverse as that peer's similarity;
    3. re-derive two-hop estimates for unmeasured peers;
    4. FedAvg-merge the sampled models into the own model;
    5. train locally and update the best-validation snapshot.

    At round 0 every score is unknown, so step 1 is uniform sampling.
    """
    me = snapshot[i]
    n = len(snapshot)
    m = effective_m(proto.m, n)
    tau = similarity.tau_at(proto.schedule, round_index)
    if m == 0:
        return _finish(snapshot, i, [], np.zeros(n), tau, proto, rng)

    probs = similarity.sampling_probabilities(me.similarity, tau)
    sampled = similarity.weighted_sample_without_replacement(probs, m, rng)

    sim = me.similarity
    for k in sampled:
        loss = model.dataset_loss(me.params, snapshot[k].shard.train)
        sim = similarity.update_measured(sim, k, loss, round_index)
    if proto.two_hop:
        states = [c.similarity for c in snapshot]
        states[i] = sim
        sim = similarity.propagate_two_hop(states, i, proto.two_hop_rule)

    return _finish(snapshot, i, sampled, probs, tau, proto, rng, similarity_state=sim)


def random_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """Uniform peer sampling; merge and local training as in the adaptive round."""
    n = len(snapshot)
    m = effective_m(proto.m, n)
    others = [j for j in range(n) if j != i]
    probs = uniform_over(others, n)
    sampled = similarity.weighted_sample_without_replacement(probs, m, rng) if m else []
    return _finish(snapshot, i, sampled, probs, 0.0, proto, rng)


def oracle_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """Sample only within the ground-truth cluster; singletons just train locally."""
    me = snapshot[i]
    peers = [
        j
        for j, c in enumerate(snapshot)
        if j != i and c.shard.cluster_id == me.shard.cluster_id
    ]
    probs = uniform_over(peers, len(snapshot))
    m = min(proto.m, len(peers))
    sampled = similarity.weighted_sample_without_replacement(probs, m, rng) if m else []
    return _finish(snapshot, i, sampled, probs, 0.0, proto, rng)


def pens_selection_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """One neighbor-selection round: sample uniformly, score peers, mark the best.

    Each sampled peer's model is evaluated on the own train set; the
    floor(top_fraction * m) lowest-loss peers of the round get their
    selection count incremented. Merging and training proceed as usual with
    all sampled peers.
    """
    me = snapshot[i]
    n = len(snapshot)
    m = effective_m(proto.m, n)
    others = [j for j in range(n) if j != i]
    probs = uniform_over(others, n)
    sampled = similarity.weighted_sample_without_replacement(probs, m, rng) if m else []

    counts = (
        me.pens_selection_counts.copy()
        if me.pens_selection_counts is not None
        else np.zeros(n, dtype=np.int64)
    )
    n_marked = int(proto.pens_top_fraction * m)
    if n_marked > 0 and sampled:
        losses = [
            (model.dataset_loss(snapshot[k].params, me.shard.train), k) for k in sampled
        ]
        losses.sort()
        for _, k in losses[:n_marked]:
            counts[k] += 1

    return _finish(snapshot, i, sampled, probs, 0.0, proto, rng, pens_counts=counts)


def pens_finalize_neighbors(
    counts: np.ndarray, selection_rounds: int, m: int, top_fraction: float, owner: int
) -> frozenset[int]:
    """Fix the neighbor set: peers marked more often than uniform chance predicts."""
    n = counts.shape[0]
    m = effective_m(m, n)
    expected = selection_rounds * int(top_fraction * m) / max(n - 1, 1)
    return frozenset(
        k for k in range(n) if k != owner and counts[k] > expected
    )


def pens_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """Post-selection round: uniform sampling restricted to the fixed neighbor set."""
    me = snapshot[i]
    neighbors = sorted(me.pens_neighbors or ())
    if not neighbors:
        logger.warning("client %d has an empty neighbor set, training locally", i)
        return _finish(snapshot, i, [], np.zeros(len(snapshot)), 0.0, proto, rng)
    probs = uniform_over(neighbors, len(snapshot))
    m = min(effective_m(proto.m, len(snapshot)), len(neighbors))
    sampled = similarity.weighted_sample_without_replacement(probs, m, rng)
    return _finish(snapshot, i, sampled, probs, 0.0, proto, rng)


def local_round(
    snapshot: Sequence[ClientRuntime],
    i: int,
    round_index: int,
    proto: ProtocolKind,
    rng: np.random.Generator,
) -> RoundResult:
    """Local training only; no communication, no merge events."""
    return _finish(snapshot, i, [], np.zeros(len(snapshot)), 0.0, proto, rng)
