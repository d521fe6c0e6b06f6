"""Wall-clock scaling of the workspace block vs pairwise self-attention.

The workspace block routes all communication through L fixed slots, so one
stage costs O(N * L * d). The reference block computes explicit pairwise
interactions between all assemblers (additive attention scores over every
ordered pair), the O(N^2 * d) structure the workspace replaces. Timings are
min-of-trials with auto-calibrated repeat counts; slopes are least-squares
fits on log time vs log N.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .nn import Rng, Tensor, no_grad
from .workspace import AssemblerStates, WorkspaceBlock, WorkspaceState

__all__ = ["BenchResult", "PairwiseAttentionReference", "bench_workspace_scaling", "fit_loglog_slope"]


@dataclass
class BenchResult:
    sizes: list[int]
    workspace_times: list[float]
    reference_times: list[float]
    workspace_slope: float
    reference_slope: float

    def to_csv(self) -> str:
        rows = ["n,workspace_seconds,reference_seconds"]
        for n, tw, tr in zip(self.sizes, self.workspace_times, self.reference_times):
            rows.append(f"{n},{tw!r},{tr!r}")
        rows.append(f"slope,{self.workspace_slope!r},{self.reference_slope!r}")
        return "\n".join(rows) + "\n"


class PairwiseAttentionReference:
    """Additive self-attention over all assembler pairs: O(N^2 d) work.

    score[i, j] = v . tanh(W_q a_i + W_k a_j), realized by broadcasting the
    (N, 1, d) query grid against the (1, N, d) key grid; outputs are the
    softmax-weighted value sums. Used only as the quadratic-cost baseline in
    the scaling benchmark.
    """

    def __init__(self, d: int, rng: Rng):
        self.w_query = rng.derive("q").normal((d, d)) / math.sqrt(d)
        self.w_key = rng.derive("k").normal((d, d)) / math.sqrt(d)
        self.w_value = rng.derive("v").normal((d, d)) / math.sqrt(d)
        self.score_vec = rng.derive("s").normal((d,)) / math.sqrt(d)

    def __call__(self, assemblers: np.ndarray) -> np.ndarray:
        q = assemblers @ self.w_query
        k = assemblers @ self.w_key
        pair = np.tanh(q[:, None, :] + k[None, :, :])  # (N, N, d): the quadratic core
        logits = pair @ self.score_vec
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=1, keepdims=True)
        return weights @ (assemblers @ self.w_value)


def fit_loglog_slope(sizes, times) -> float:
    return float(np.polyfit(np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float)), 1)[0])


def _timed(fn, min_time: float = 0.02, trials: int = 5) -> float:
    """Per-call seconds: repeats auto-calibrated to min_time, min over trials."""
    fn()  # warmup
    t0 = time.perf_counter()
    fn()
    once = time.perf_counter() - t0
    repeats = max(1, int(math.ceil(min_time / max(once, 1e-9))))
    best = math.inf
    for _ in range(trials):
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeats)
    return best


def bench_workspace_scaling(
    sizes=(16, 32, 64, 128),
    d: int = 128,
    n_slots: int = 8,
    heads: int = 4,
    k: int = 10,
    seed: int = 0,
    min_time: float = 0.02,
    trials: int = 5,
) -> BenchResult:
    """Time one workspace stage and the pairwise reference across part counts."""
    block = WorkspaceBlock(d_a=d, d_l=d, d_e=d, n_slots=n_slots, heads=heads, rng=Rng(seed))
    reference = PairwiseAttentionReference(d, Rng(seed, ("ref",)))
    state0 = Rng(seed, ("state",)).normal((n_slots, d))

    ws_times = []
    ref_times = []
    for n in sizes:
        a = Rng(seed, ("a", n)).normal((n, d))

        def run_workspace():
            with no_grad():
                block(AssemblerStates(Tensor(a)), WorkspaceState(Tensor(state0)), k)

        def run_reference():
            reference(a)

        ws_times.append(_timed(run_workspace, min_time, trials))
        ref_times.append(_timed(run_reference, min_time, trials))

    return BenchResult(
        sizes=list(sizes),
        workspace_times=ws_times,
        reference_times=ref_times,
        workspace_slope=fit_loglog_slope(sizes, ws_times),
        reference_slope=fit_loglog_slope(sizes, ref_times),
    )
