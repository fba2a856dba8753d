"""Finite-difference validation of analytic gradients.

Central differences, ``(f(t + e) - f(t - e)) / 2e``, compared elementwise
against the tape's gradient.  Relative error uses a floored denominator
so near-zero gradients do not blow up the ratio:

    rel = |analytic - numeric| / max(1e-6, |analytic| + |numeric|)

Large tensors are subsampled at fixed seeded positions; checking every
element of a conv kernel stack would dominate the runtime without
buying extra coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

__all__ = ["GradEntry", "GradReport", "grad_check"]

REL_FLOOR = 1e-6


@dataclass
class GradEntry:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    n_checked: int
    passed: bool


@dataclass
class GradReport:
    tol: float
    eps: float
    entries: list[GradEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [f"grad check: tol={self.tol:g} eps={self.eps:g}"]
        for e in self.entries:
            mark = "ok " if e.passed else "FAIL"
            lines.append(
                f"  [{mark}] {e.name}: max_rel={e.max_rel_err:.3e} "
                f"at {e.worst_index} ({e.n_checked} elems)")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor],
               params: Sequence[tuple[str, Tensor]],
               eps: float = 1e-5,
               tol: float = 1e-4,
               max_elems_per_tensor: int = 64,
               seed: int = 0) -> GradReport:
    """Compare tape gradients of scalar ``f()`` against central differences.

    ``f`` is re-evaluated with each checked element nudged by ``+/- eps``,
    so it must be a pure function of the parameter values.  Parameters
    should be float64; float32 loses too many digits at eps = 1e-5.
    """
    for name, p in params:
        if p.dtype != np.float64:
            raise ValueError(
                f"grad_check: parameter {name!r} is {p.dtype}, needs float64")

    for _, p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params}

    rng = np.random.default_rng(seed)
    report = GradReport(tol=tol, eps=eps)
    for name, p in params:
        flat = p.data.reshape(-1)
        if flat.size > max_elems_per_tensor:
            picks = rng.choice(flat.size, size=max_elems_per_tensor, replace=False)
        else:
            picks = np.arange(flat.size)
        ga = analytic[name].reshape(-1)
        worst = 0.0
        worst_flat = 0
        for i in picks:
            keep = flat[i]
            flat[i] = keep + eps
            hi = f().item()
            flat[i] = keep - eps
            lo = f().item()
            flat[i] = keep
            fd = (hi - lo) / (2.0 * eps)
            rel = abs(ga[i] - fd) / max(REL_FLOOR, abs(ga[i]) + abs(fd))
            if rel > worst:
                worst, worst_flat = rel, int(i)
        report.entries.append(GradEntry(
            name=name,
            max_rel_err=float(worst),
            worst_index=tuple(int(v) for v in np.unravel_index(worst_flat, p.shape)),
            n_checked=len(picks),
            passed=worst <= tol,
        ))
    return report
