"""Shared-workspace attention: competitive write, broadcast read, state update.

A fixed set of L slots mediates all communication between the per-part
assembler states. Each stage: (1) assembler messages compete for write access
into the slots through a top-k restricted attention (at most k writers per
slot), (2) every assembler reads the slot contents back through a full
softmax attention, (3) each assembler state passes through a residual
feedforward update. Cost per stage is O(N * L * d): linear in the number of
assemblers since L is fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import (
    LayerNorm,
    Linear,
    Module,
    Rng,
    Tensor,
    concat,
    matmul,
    relu,
    softmax,
    top_k_softmax,
    transpose,
    xavier,
)

__all__ = [
    "WorkspaceState",
    "AssemblerStates",
    "WriteParams",
    "ReadParams",
    "FeedForwardParams",
    "write_step",
    "read_step",
    "ff_update",
    "WorkspaceBlock",
]


@dataclass
class WorkspaceState:
    """The shared memory: an (L, d_l) slot matrix."""

    slots: Tensor

    @property
    def n_slots(self) -> int:
        return self.slots.shape[0]


@dataclass
class AssemblerStates:
    """One row of width d_a per assembler (= per part)."""

    states: Tensor

    @property
    def n(self) -> int:
        return self.states.shape[0]


@dataclass
class WriteParams:
    """Projections for one write head: query (d_l, d_e), key (d_a, d_e), value (d_a, d_l)."""

    query: Tensor
    key: Tensor
    value: Tensor


@dataclass
class ReadParams:
    """Projections for one read head: query (d_a, d_e), key (d_l, d_e), value (d_l, d_a)."""

    query: Tensor
    key: Tensor
    value: Tensor


@dataclass
class FeedForwardParams:
    norm_in: LayerNorm
    ff1: Linear
    ff2: Linear
    norm_out: LayerNorm


def write_step(
    state: WorkspaceState,
    messages: AssemblerStates,
    params: WriteParams,
    k: int,
    attention_out: list | None = None,
) -> WorkspaceState:
    """Competitive write: slots attend over messages, top-k writers per slot.

    Logits are scaled by the key width of ``params``. The returned state
    replaces the previous one (pure assignment, no residual). The effective
    k is min(k, N) so small part counts admit every writer.
    """
    if k < 1:
        raise ValueError(f"write_step: k must be >= 1, got {k}")
    d_e = params.query.shape[1]
    queries = matmul(state.slots, params.query)
    keys = matmul(messages.states, params.key)
    logits = matmul(queries, transpose(keys)) * (1.0 / math.sqrt(d_e))
    attention = top_k_softmax(logits, min(k, messages.n), axis=-1)
    if attention_out is not None:
        attention_out.append(attention)
    values = matmul(messages.states, params.value)
    return WorkspaceState(matmul(attention, values))


def read_step(state: WorkspaceState, assemblers: AssemblerStates, params: ReadParams) -> AssemblerStates:
    """Broadcast read: every assembler attends over all slots (full softmax)."""
    d_e = params.query.shape[1]
    queries = matmul(assemblers.states, params.query)
    keys = matmul(state.slots, params.key)
    logits = matmul(queries, transpose(keys)) * (1.0 / math.sqrt(d_e))
    attention = softmax(logits, axis=-1)
    values = matmul(state.slots, params.value)
    return AssemblerStates(matmul(attention, values))


def ff_update(assemblers: AssemblerStates, read_out: AssemblerStates, params: FeedForwardParams) -> AssemblerStates:
    """Residual feedforward refresh of each assembler state.

    h = norm_in(a + read); out = norm_out(h + ff(h)). With zero read and zero
    feedforward weights this reduces to norm_out(norm_in(a)).
    """
    h = params.norm_in(assemblers.states + read_out.states)
    return AssemblerStates(params.norm_out(h + params.ff2(relu(params.ff1(h)))))


class WorkspaceBlock(Module):
    """One full write/read/update stage with multi-head attention.

    Heads act in disjoint column subspaces of the projection matrices and are
    concatenated before the feedforward update. ``head_count`` must divide
    d_e, d_l, and d_a.
    """

    def __init__(self, d_a: int, d_l: int, d_e: int, n_slots: int, heads: int, rng: Rng):
        if d_e % heads or d_l % heads or d_a % heads:
            raise ValueError(f"heads={heads} must divide d_e={d_e}, d_l={d_l}, d_a={d_a}")
        self.heads = heads
        self.write_query = Tensor(xavier(rng.derive("wq"), d_l, d_e), requires_grad=True)
        self.write_key = Tensor(xavier(rng.derive("wk"), d_a, d_e), requires_grad=True)
        self.write_value = Tensor(xavier(rng.derive("wv"), d_a, d_l), requires_grad=True)
        self.read_query = Tensor(xavier(rng.derive("rq"), d_a, d_e), requires_grad=True)
        self.read_key = Tensor(xavier(rng.derive("rk"), d_l, d_e), requires_grad=True)
        self.read_value = Tensor(xavier(rng.derive("rv"), d_l, d_a), requires_grad=True)
        self.ff_norm_in = LayerNorm(d_a)
        self.ff1 = Linear(d_a, 4 * d_a, rng.derive("ff1"))
        self.ff2 = Linear(4 * d_a, d_a, rng.derive("ff2"))
        self.ff_norm_out = LayerNorm(d_a)

    @property
    def ff(self) -> FeedForwardParams:
        return FeedForwardParams(self.ff_norm_in, self.ff1, self.ff2, self.ff_norm_out)

    def _head_cols(self, dim: int, head: int) -> slice:
        width = dim // self.heads
        return slice(head * width, (head + 1) * width)

    def write_params(self, head: int) -> WriteParams:
        ce = self._head_cols(self.write_query.shape[1], head)
        cl = self._head_cols(self.write_value.shape[1], head)
        return WriteParams(self.write_query[:, ce], self.write_key[:, ce], self.write_value[:, cl])

    def read_params(self, head: int) -> ReadParams:
        ce = self._head_cols(self.read_query.shape[1], head)
        ca = self._head_cols(self.read_value.shape[1], head)
        return ReadParams(self.read_query[:, ce], self.read_key[:, ce], self.read_value[:, ca])

    def __call__(
        self,
        assemblers: AssemblerStates,
        state: WorkspaceState,
        k: int,
        trace: list | None = None,
        stage: int = 0,
    ) -> tuple[AssemblerStates, WorkspaceState]:
        slot_parts = []
        for h in range(self.heads):
            sink: list | None = [] if trace is not None else None
            written = write_step(state, assemblers, self.write_params(h), k, attention_out=sink)
            slot_parts.append(written.slots)
            if trace is not None:
                trace.append(
                    {"stage": stage, "head": h, "write_attention": sink[0].data.tolist()}
                )
        new_state = WorkspaceState(concat(slot_parts, axis=1))
        read_parts = [read_step(new_state, assemblers, self.read_params(h)).states for h in range(self.heads)]
        read_out = AssemblerStates(concat(read_parts, axis=1))
        return ff_update(assemblers, read_out, self.ff), new_state
