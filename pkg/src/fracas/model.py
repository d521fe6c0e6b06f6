"""End-to-end assembly network.

Pipeline: shared per-point encoder with max pooling -> noise-conditioned
routing block -> stacked workspace stages over one evolving slot state ->
shared MLP pose head emitting a unit quaternion and a translation per part.
A coarse-to-fine wrapper chains independently parameterized networks, each
refining the clouds transformed by the previous stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .errors import ContractError, NumericError
from .geometry import Pose, Quaternion, apply_pose, quat_normalize
from .nn import (
    MLP,
    Linear,
    Module,
    Rng,
    Tensor,
    concat,
    derive_seed,
    max_pool_points,
    sqrt,
    stack,
    tsum,
)
from .workspace import AssemblerStates, WorkspaceBlock, WorkspaceState

__all__ = ["ModelConfig", "PosePrediction", "AssemblyModel", "coarse_to_fine"]


@dataclass
class ModelConfig:
    """Architecture and loss hyperparameters; everything overridable."""

    n_pc: int = 1000
    d_a: int = 128
    d_l: int = 128
    d_e: int = 128
    workspace_slots: int = 8
    heads: int = 4
    stages: int = 4
    top_k: int = 10
    noise_dim: int = 32
    ctf_stages: int = 1
    encoder_widths: tuple = (64, 128)
    predictor_hidden: int = 256
    predictor_init_scale: float = 1e-3
    max_parts: int = 20
    # loss weights and collision shape
    w_collision: float = 0.10
    w_translation: float = 1.0
    w_rotation: float = 10.0
    w_shape: float = 10.0
    collision_scale: float = 30.0
    epsilon_d: float = 1e-6
    clamp_negative_collision: bool = False

    def __post_init__(self):
        for name in ("n_pc", "d_a", "d_l", "d_e", "workspace_slots", "heads", "stages",
                     "top_k", "predictor_hidden", "max_parts"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.noise_dim < 0:
            raise ValueError("ModelConfig.noise_dim must be non-negative")
        if self.ctf_stages < 1:
            raise ValueError("ModelConfig.ctf_stages must be >= 1")
        if self.d_e % self.heads or self.d_l % self.heads or self.d_a % self.heads:
            raise ValueError(f"heads={self.heads} must divide d_a, d_l, d_e")
        self.encoder_widths = tuple(self.encoder_widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**{**d, "encoder_widths": tuple(d.get("encoder_widths", (64, 128)))})


@dataclass
class PosePrediction:
    """Predicted poses plus the graph-attached (N, 7) head output.

    ``raw_head_output`` rows are [unit quaternion (4), translation (3)] with
    the quaternion normalized in-graph, so losses on it train the raw head.
    ``poses`` are the detached values with the quaternion sign canonicalized.
    For composed coarse-to-fine predictions the raw tensor is None.
    """

    poses: list[Pose]
    raw_head_output: Tensor | None


class PointEncoder(Module):
    """Shared per-point MLP followed by a per-feature max over points."""

    def __init__(self, widths: Sequence[int], d_a: int, rng: Rng):
        self.mlp = MLP([3, *widths, d_a], rng)

    def __call__(self, clouds: Sequence[np.ndarray]) -> AssemblerStates:
        sizes = {np.asarray(c).shape for c in clouds}
        if len(sizes) != 1 or next(iter(sizes))[1] != 3:
            raise ContractError(f"encode_parts: ragged or non-(n,3) clouds: {sorted(sizes)}")
        feats = [max_pool_points(self.mlp(Tensor(np.asarray(c)))) for c in clouds]
        return AssemblerStates(stack(feats, axis=0))


class Router(Module):
    """Feature mixing and relation reasoning before assembly proper.

    Same block structure as the assembly workspace, its own parameters and
    its own learned initial slots. Per-part noise is concatenated to the
    encoder features and projected back to d_a.
    """

    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.noise_proj = Linear(cfg.d_a + cfg.noise_dim, cfg.d_a, rng.derive("proj"))
        self.block = WorkspaceBlock(cfg.d_a, cfg.d_l, cfg.d_e, cfg.workspace_slots, cfg.heads, rng.derive("block"))
        self.init_slots = Tensor(rng.derive("slots").normal((cfg.workspace_slots, cfg.d_l)) * 0.1, requires_grad=True)
        self.top_k = cfg.top_k

    def __call__(self, features: AssemblerStates, noise: Tensor, trace: list | None = None) -> AssemblerStates:
        mixed = self.noise_proj(concat([features.states, noise], axis=1))
        out, _ = self.block(AssemblerStates(mixed), WorkspaceState(self.init_slots), self.top_k,
                            trace=trace, stage=-1)
        return out


class PoseHead(Module):
    """Shared MLP d_a -> hidden -> 7; quaternion part normalized in-graph.

    The final layer starts near zero with an identity-quaternion bias so the
    initial prediction is the identity pose.
    """

    def __init__(self, d_a: int, hidden: int, rng: Rng, init_scale: float):
        self.mlp = MLP([d_a, hidden, 7], rng, final_init_scale=init_scale)
        self.mlp.layers[-1].bias.data[...] = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def __call__(self, assemblers: AssemblerStates) -> Tensor:
        out = self.mlp(assemblers.states)
        quat = out[:, :4]
        norm = sqrt(tsum(quat * quat, axis=1, keepdims=True))
        if np.any(norm.data < 1e-12):
            raise NumericError("pose head produced a near-zero quaternion")
        return concat([quat / norm, out[:, 4:]], axis=1)


class AssemblyModel(Module):
    """Encoder -> router -> stacked workspace stages -> pose head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = Rng(seed, ("init",))
        self.config = config
        self.seed = seed
        self.encoder = PointEncoder(config.encoder_widths, config.d_a, rng.derive("encoder"))
        self.router = Router(config, rng.derive("router"))
        self.blocks = [
            WorkspaceBlock(config.d_a, config.d_l, config.d_e, config.workspace_slots,
                           config.heads, rng.derive("stage", t))
            for t in range(config.stages)
        ]
        self.init_slots = Tensor(
            rng.derive("slots").normal((config.workspace_slots, config.d_l)) * 0.1, requires_grad=True
        )
        self.pose_head = PoseHead(config.d_a, config.predictor_hidden, rng.derive("head"),
                                  config.predictor_init_scale)

    def sample_noise(self, n_parts: int, seed: int) -> Tensor:
        return Tensor(Rng(seed, ("noise",)).normal((n_parts, self.config.noise_dim)))

    def forward(
        self,
        clouds: Sequence[np.ndarray],
        seed: int = 0,
        noise: Tensor | None = None,
        trace: list | None = None,
    ) -> PosePrediction:
        """Deterministic given (parameters, clouds, seed).

        ``noise`` overrides the seed-derived draw; noise rows are positional,
        so permutation equivariance is over (cloud, noise-row) pairs.
        """
        n = len(clouds)
        if n < 2:
            raise ContractError(f"forward: need at least 2 parts, got {n}")
        if n > self.config.max_parts:
            raise ContractError(f"forward: {n} parts exceeds configured max {self.config.max_parts}")
        if noise is None:
            noise = self.sample_noise(n, seed)
        features = self.encoder(clouds)
        assemblers = self.router(features, noise, trace=trace)
        state = WorkspaceState(self.init_slots)
        for t, block in enumerate(self.blocks):
            assemblers, state = block(assemblers, state, self.config.top_k, trace=trace, stage=t)
        raw = self.pose_head(assemblers)
        poses = [
            Pose(quat_normalize(raw.data[i, :4]), raw.data[i, 4:].copy())
            for i in range(n)
        ]
        return PosePrediction(poses=poses, raw_head_output=raw)

    def __call__(self, clouds, seed: int = 0, **kw) -> PosePrediction:
        return self.forward(clouds, seed, **kw)


def coarse_to_fine(
    clouds: Sequence[np.ndarray],
    seed: int,
    models: Sequence[AssemblyModel],
) -> PosePrediction:
    """Chain stage networks; each consumes the previous stage's transformed clouds.

    The returned pose per part is the left-to-right composition of all stage
    poses (stage 1 applied first). With a single stage this is exactly
    ``models[0].forward(clouds, seed)``.
    """
    if not models:
        raise ContractError("coarse_to_fine: need at least one stage model")
    current = [np.asarray(c, dtype=np.float64) for c in clouds]
    total: list[Pose] | None = None
    prediction = None
    for s, model in enumerate(models):
        stage_seed = seed if s == 0 else derive_seed(seed, "ctf", s)
        prediction = model.forward(current, stage_seed)
        if s == 0:
            total = list(prediction.poses)
        else:
            total = [t.then(p) for t, p in zip(total, prediction.poses)]
        if s + 1 < len(models):
            current = [apply_pose(p, c) for p, c in zip(prediction.poses, current)]
    if len(models) == 1:
        return prediction
    return PosePrediction(poses=total, raw_head_output=None)
