"""Similarity scores, temperature softmax sampling and two-hop propagation.

Each client keeps a score vector over all peers: entry j is the inverse of
its own model's loss on peer j's training data, measured directly when the
peer was sampled or estimated through a shared intermediary otherwise. A
temperature softmax turns the scores into the per-round sampling
distribution; the temperature either stays constant or grows along a
sigmoid from 1 to its maximum over the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

UNKNOWN, MEASURED, ESTIMATED = 0, 1, 2

# Losses below this are treated as saturated; caps scores at 1e8 so the
# softmax exponent stays representable.
LOSS_FLOOR = 1e-8

# Smallest positive float64; applied to softmax entries that underflow so
# every peer keeps a non-zero sampling probability.
_TINY = np.nextafter(0.0, 1.0)


@dataclass(frozen=True)
class SimilarityState:
    """One client's view of how similar every peer's task is to its own.

    ``provenance`` tags each score as unknown, directly measured, or
    estimated via two-hop propagation. ``history`` is the set of peers ever
    measured directly. Treat the arrays as immutable; updates return copies.
    """

    owner: int
    scores: np.ndarray
    provenance: np.ndarray
    history: frozenset[int]
    last_measured_round: np.ndarray


def fresh_state(owner: int, n_clients: int) -> SimilarityState:
    if not 0 <= owner < n_clients:
        raise ValueError(f"owner {owner} outside [0, {n_clients})")
    return SimilarityState(
        owner=owner,
        scores=np.zeros(n_clients),
        provenance=np.full(n_clients, UNKNOWN, dtype=np.int8),
        history=frozenset(),
        last_measured_round=np.full(n_clients, -1, dtype=np.int64),
    )


def similarity_score(loss: float) -> float:
    """Inverse loss, clamped when the loss is implausibly small or non-positive."""
    if loss < LOSS_FLOOR:
        logger.warning(
            "similarity loss %.3g below floor %.1g, clamping (saturated model?)",
            loss,
            LOSS_FLOOR,
        )
        loss = LOSS_FLOOR
    return 1.0 / loss


def sampling_probabilities(state: SimilarityState, tau: float) -> np.ndarray:
    """Temperature softmax over effective scores; owner gets probability 0.

    Unknown entries are imputed with the mean of the known (measured or
    estimated) scores so they keep a neutral sampling weight; with nothing
    known the distribution is uniform over the other clients. Entries that
    underflow at large tau are floored at the smallest positive float so
    every peer stays reachable.
    """
    k = state.scores.shape[0]
    if k < 2:
        raise ConfigurationError("sampling needs at least 2 clients")
    if tau < 0.0:
        raise ConfigurationError("tau must be >= 0")

    others = np.arange(k) != state.owner
    known = (state.provenance != UNKNOWN) & others
    effective = state.scores.copy()
    effective[~known] = effective[known].mean() if known.any() else 0.0

    z = tau * effective[others]
    z -= z.max()
    weights = np.exp(z)
    probs = np.zeros(k)
    probs[others] = weights / weights.sum()
    probs[others & (probs == 0.0)] = _TINY
    return probs


def update_measured(
    state: SimilarityState, peer: int, loss: float, round_index: int
) -> SimilarityState:
    """Record a direct measurement of the owner's model loss on ``peer``'s data.

    A new measurement replaces the previous one outright; there is no
    smoothing or averaging across rounds.
    """
    if peer == state.owner:
        raise ValueError("a client never measures similarity with itself")
    scores = state.scores.copy()
    provenance = state.provenance.copy()
    last = state.last_measured_round.copy()
    scores[peer] = similarity_score(loss)
    provenance[peer] = MEASURED
    last[peer] = round_index
    return replace(
        state,
        scores=scores,
        provenance=provenance,
        history=state.history | {peer},
        last_measured_round=last,
    )


def propagate_two_hop(
    states: Sequence[SimilarityState], i: int, rule: str = "max"
) -> SimilarityState:
    """Estimate client i's unmeasured scores through two-hop intermediaries.

    For every peer j that i has not measured, look at the clients k in i's
    history that measured j directly, pick the intermediary whose similarity
    to i is highest (``rule="max"``; ``"min"`` flips the choice) and copy its
    measured score for j. Direct measurements are never overwritten, and
    existing estimates are re-derived from the current states on every call.
    """
    if rule not in ("max", "min"):
        raise ConfigurationError(f"unknown two-hop rule {rule!r}")
    me = states[i]
    intermediaries = sorted(me.history)
    if not intermediaries:
        return me

    k = me.scores.shape[0]
    scores = me.scores.copy()
    provenance = me.provenance.copy()
    changed = False
    for j in range(k):
        if j == i or me.provenance[j] == MEASURED:
            continue
        best_k = -1
        best_sim = 0.0
        for cand in intermediaries:
            if cand == j or states[cand].provenance[j] != MEASURED:
                continue
            sim = me.scores[cand]
            better = sim > best_sim if rule == "max" else sim < best_sim
            if best_k < 0 or better:
                best_k, best_sim = cand, sim
        if best_k >= 0:
            scores[j] = states[best_k].scores[j]
            provenance[j] = ESTIMATED
            changed = True
    if not changed:
        return me
    return replace(me, scores=scores, provenance=provenance)


def weighted_sample_without_replacement(
    probabilities: np.ndarray, m: int, rng: np.random.Generator
) -> list[int]:
    """Draw m distinct indices sequentially: sample, remove, renormalize, repeat."""
    p = np.asarray(probabilities, dtype=np.float64).copy()
    if np.any(p < 0.0):
        raise ConfigurationError("probabilities must be non-negative")
    positive = int(np.count_nonzero(p > 0.0))
    if m > positive:
        raise ConfigurationError(
            f"cannot draw {m} distinct ids from {positive} positive-probability entries"
        )
    picked: list[int] = []
    for _ in range(m):
        cumulative = np.cumsum(p)
        r = rng.random() * cumulative[-1]
        idx = int(np.searchsorted(cumulative, r, side="right"))
        if idx >= p.shape[0] or p[idx] == 0.0:
            # float edge: r landed at/after the last positive entry
            idx = int(np.flatnonzero(p > 0.0)[-1])
        picked.append(idx)
        p[idx] = 0.0
    return picked


@dataclass(frozen=True)
class TauSchedule:
    """Constant temperature, or a sigmoid ramp from 1 at round 0 to tau_max.

    The sigmoid is affinely rescaled so the endpoints are exact: value 1 at
    round 0 and tau_max at ``total_rounds``. Defaults put the midpoint at
    half the run with a gentle slope (steepness 10/total_rounds).
    """

    kind: str
    tau: float = 30.0
    tau_max: float = 30.0
    total_rounds: int = 200
    midpoint_round: float | None = None
    steepness: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "sigmoid"):
            raise ConfigurationError(f"unknown tau schedule kind {self.kind!r}")
        if self.kind == "constant" and self.tau < 0.0:
            raise ConfigurationError("constant tau must be >= 0")
        if self.kind == "sigmoid":
            if self.tau_max < 1.0:
                raise ConfigurationError("tau_max must be >= 1")
            if self.total_rounds < 1:
                raise ConfigurationError("sigmoid schedule needs total_rounds >= 1")


def tau_at(schedule: TauSchedule, round_index: int) -> float:
    if schedule.kind == "constant":
        return schedule.tau
    total = schedule.total_rounds
    if not 0 <= round_index <= total:
        raise ValueError(f"round {round_index} outside [0, {total}]")
    mid = schedule.midpoint_round if schedule.midpoint_round is not None else total / 2.0
    steep = schedule.steepness if schedule.steepness is not None else 10.0 / total

    def logistic(t: float) -> float:
        return 1.0 / (1.0 + np.exp(-steep * (t - mid)))

    u0, u_end = logistic(0.0), logistic(float(total))
    u = logistic(float(round_index))
    fraction = (u - u0) / (u_end - u0)
    return 1.0 + (schedule.tau_max - 1.0) * fraction
