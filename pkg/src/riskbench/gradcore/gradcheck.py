"""Finite-difference audit of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GradCheckReport:
    passed: bool
    worst_rel: float
    worst_param: str
    n_checked: int

    def __str__(self):
        tag = "pass" if self.passed else "FAIL"
        return (f"gradcheck {tag}: worst rel err {self.worst_rel:.3e} "
                f"at {self.worst_param} ({self.n_checked} entries)")


def grad_check(build, tolerance: float = 1e-4, h: float = 1e-5,
               max_entries_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `build()` must return (graph, loss_fn) where loss_fn() evaluates the
    model deterministically and returns a scalar Tensor on a fresh tape.
    Every parameter entry is perturbed by +-h unless a per-parameter cap
    is given, in which case entries are sampled with `rng`.
    """
    graph, loss_fn = build()
    graph.zero_grad()
    loss_fn().backward()
    analytic = {name: t.grad.copy() for name, t in graph.params.items()}

    worst_rel, worst_param, n_checked = 0.0, "", 0
    for name, t in graph.params.items():
        flat = t.data.reshape(-1)
        indices = range(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            if rng is None:
                raise ValueError("sampling entries requires an rng")
            indices = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            ana = analytic[name].reshape(-1)[idx]
            # Floor guards against FD cancellation noise on zero-gradient
            # entries (e.g. parameters the loss is structurally flat in).
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-5)
            n_checked += 1
            if rel > worst_rel:
                worst_rel, worst_param = rel, f"{name}[{idx}]"
    return GradCheckReport(worst_rel <= tolerance, worst_rel, worst_param, n_checked)
