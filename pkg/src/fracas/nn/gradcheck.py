"""Analytic-vs-numeric gradient comparison for any scalar loss function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .modules import Parameter
from .tensor import Tensor, backward


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if e.max_rel_err > self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [f"grad check: tol {self.tol:g}, {len(self.entries)} parameters"]
        for e in self.entries:
            status = "ok  " if e.max_rel_err <= self.tol else "FAIL"
            lines.append(
                f"  {status} {e.name}: max rel err {e.max_rel_err:.3e} at {e.worst_index} "
                f"(analytic {e.analytic:.6e}, numeric {e.numeric:.6e})"
            )
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    tol: float = 1e-4,
    step: float = 1e-5,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare backward() gradients against central finite differences.

    ``loss_fn`` must be deterministic and rebuild its graph from the current
    parameter values on every call. Every element of every parameter is
    perturbed by ``step``; keep the model tiny. The per-element relative
    error denominator is floored at ``floor`` so finite-difference rounding
    noise on near-zero gradients does not register as failure.
    """
    for _, tensor in params:
        tensor.grad = None
    backward(loss_fn())
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in params
    }

    report = GradCheckReport(tol=tol)
    for name, tensor in params:
        flat = tensor.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric[i] = (f_plus - f_minus) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        rel = np.abs(a - numeric) / denom
        worst = int(np.argmax(rel))
        report.entries.append(
            GradCheckEntry(
                name=name,
                max_rel_err=float(rel[worst]),
                worst_index=np.unravel_index(worst, tensor.shape),
                analytic=float(a[worst]),
                numeric=float(numeric[worst]),
            )
        )
    return report
