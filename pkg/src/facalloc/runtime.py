"""Simulated parallel execution of one solver iteration.

Per-user subproblems are sharded across a thread pool, results are combined
with a fixed-order reduction, and the shared residual vector is broadcast
back.  Everything is deterministic for a fixed seed: fault draws are keyed
by (iteration, user) through a counter-style hash, never by scheduling, so
any worker count reproduces the same trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import ParameterError, column_sums
from .prox import prox_user

REDUCE_BROADCAST = "reduce-broadcast"
ALLREDUCE = "allreduce"


@dataclass(frozen=True)
class FaultPolicy:
    """Per-user per-iteration update-failure model.

    Each user independently fails to update with probability ``fail_prob``
    at each iteration; a failed user reuses its previous allocation.  Draws
    come from a shared uniform stream keyed by (seed, iteration, user), so
    raising the probability only ever adds failures (experiments nest).
    """
    fail_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fail_prob <= 1.0:
            raise ParameterError(
                f"failure probability must lie in [0, 1], got {self.fail_prob}")

    def draw(self, iteration: int, user: int) -> float:
        return uniform_draw(self.seed, iteration, user)

    def fails(self, iteration: int, user: int) -> bool:
        return self.draw(iteration, user) < self.fail_prob


def uniform_draw(seed: int, iteration: int, user: int) -> float:
    """Deterministic uniform in [0, 1) from a (seed, iteration, user) key."""
    msg = struct.pack(">qqq", seed, iteration, user)
    digest = hashlib.sha256(msg).digest()
    return int.from_bytes(digest[:8], "big") / 2.0 ** 64


@dataclass(frozen=True)
class AggregationPlan:
    """How per-user results are combined and redistributed.

    ``reduce-broadcast`` charges two communication rounds per iteration,
    ``allreduce`` one; both modes produce identical sums because the
    accumulation order is fixed regardless of sharding.
    """
    mode: str = REDUCE_BROADCAST
    shard_count: int = 1

    def __post_init__(self):
        if self.mode not in (REDUCE_BROADCAST, ALLREDUCE):
            raise ParameterError(f"unknown aggregation mode '{self.mode}'")
        if self.shard_count < 1:
            raise ParameterError("shard count must be at least 1")

    @property
    def rounds_per_iteration(self) -> int:
        return 2 if self.mode == REDUCE_BROADCAST else 1


@dataclass(frozen=True)
class RuntimeOptions:
    """Execution knobs for a run: worker threads, aggregation, faults."""
    worker_count: int = 1
    plan: AggregationPlan = AggregationPlan()
    fault_policy: FaultPolicy | None = None

    def __post_init__(self):
        if self.worker_count < 1:
            raise ParameterError("worker count must be at least 1")


@dataclass(frozen=True)
class DeliveryRecord:
    """What a broadcast delivered and what it cost in message rounds."""
    copies: tuple
    reduce_rounds: int
    broadcast_rounds: int

    @property
    def total_rounds(self) -> int:
        return self.reduce_rounds + self.broadcast_rounds


def parallel_user_map(n_users: int, solve_user, prev_x, iteration: int,
                      fault_policy: FaultPolicy | None,
                      worker_count: int = 1):
    """Run per-user updates across shards with optional fault injection.

    ``solve_user(i)`` computes user i's new allocation; faulted users copy
    their row of ``prev_x`` instead.  Results are assembled by user index,
    so the output is independent of sharding and thread scheduling.

    Returns (new_x, fault_mask).
    """
    if worker_count < 1:
        raise ParameterError("worker count must be at least 1")
    prev_x = np.asarray(prev_x, dtype=float)
    mask = np.zeros(n_users, dtype=bool)
    if fault_policy is not None and fault_policy.fail_prob > 0.0:
        for i in range(n_users):
            mask[i] = fault_policy.fails(iteration, i)

    results = [None] * n_users

    def run_shard(indices):
        for i in indices:
            if mask[i]:
                results[i] = prev_x[i].copy()
            else:
                results[i] = solve_user(i)

    if worker_count == 1:
        run_shard(range(n_users))
    else:
        shards = np.array_split(np.arange(n_users), worker_count)
        with ThreadPoolExecutor(max_workers=worker_count) as pool:
            futures = [pool.submit(run_shard, shard) for shard in shards
                       if shard.size]
            for fut in futures:
                fut.result()

    return np.array(results, dtype=float), mask


def execute_x_updates(inst, state, rho: float, plan: AggregationPlan,
                      fault_policy: FaultPolicy | None,
                      worker_count: int = 1):
    """Sharded per-user prox updates with anchor x_i - d.

    Every non-faulted user solves its anchored subproblem; faulted users
    keep their previous allocation.  Returns (new_x, fault_mask).
    """
    x, d = state.x, state.d

    def solve_user(i):
        user = inst.users[i]
        return prox_user(user.utility, user.feasible_set, x[i] - d, rho).minimizer

    return parallel_user_map(inst.n_users, solve_user, x, state.k,
                             fault_policy, worker_count)


def aggregate(x, plan: AggregationPlan) -> np.ndarray:
    """Per-facility sums of an allocation matrix.

    Accumulation runs in ascending user order whatever the mode or shard
    count: reproducibility is worth more here than parallel-summation
    speed, and it keeps both aggregation modes bitwise interchangeable.
    """
    return column_sums(x)


def broadcast(d, plan: AggregationPlan) -> DeliveryRecord:
    """Deliver the shared residual vector to every shard.

    Each shard receives an identical copy; the record charges one reduce
    plus one broadcast round (or a single allreduce round) so traces can
    account for message passing.
    """
    d = np.asarray(d, dtype=float)
    copies = tuple(d.copy() for _ in range(plan.shard_count))
    if plan.mode == REDUCE_BROADCAST:
        return DeliveryRecord(copies, reduce_rounds=1, broadcast_rounds=1)
    return DeliveryRecord(copies, reduce_rounds=1, broadcast_rounds=0)
