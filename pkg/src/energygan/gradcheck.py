"""Finite-difference verification of analytic gradients."""
from dataclasses import dataclass, field

import numpy as np

from energygan.tensor import Tape, Tensor, mul, no_grad, tsum


@dataclass
class GradCheckReport:
    max_rel_errors: list
    tolerance: float
    details: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.max_rel_errors)

    def __str__(self):
        errs = ", ".join(f"{e:.2e}" for e in self.max_rel_errors)
        return f"{'PASS' if self.passed else 'FAIL'} max rel err [{errs}] (tol {self.tolerance:g})"


def grad_check(op, input_shapes, tolerance=1e-4, seed=0, step=1e-6, sampler=None):
    """Compare ``op``'s tape gradients with 64-bit central differences.

    ``op`` maps float64 Tensors (one per entry of ``input_shapes``) to a
    Tensor. It is scalarized by a fixed random projection, so every output
    element contributes. ``sampler(rng, shape)`` overrides the default
    standard-normal inputs, e.g. to keep ``log`` arguments positive.

    The error for each input is ``max|analytic - numeric| / max|numeric|``.
    """
    rng = np.random.default_rng(seed)
    sampler = sampler or (lambda r, s: r.standard_normal(s))
    values = [np.asarray(sampler(rng, s), dtype=np.float64) for s in input_shapes]

    with no_grad():
        probe = op(*[Tensor(v) for v in values])
    proj = rng.standard_normal(probe.shape)

    def scalar(arrays):
        with no_grad():
            return float((op(*[Tensor(a) for a in arrays]).data * proj).sum())

    with Tape():
        inputs = [Tensor(v.copy(), requires_grad=True) for v in values]
        loss = tsum(mul(op(*inputs), Tensor(proj)))
        loss.backward()
        analytic = [t.grad.copy() for t in inputs]

    errors, details = [], []
    for idx, base in enumerate(values):
        numeric = np.zeros_like(base)
        work = [v.copy() for v in values]
        flat = work[idx].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = scalar(work)
            flat[j] = orig - step
            down = scalar(work)
            flat[j] = orig
            numeric.reshape(-1)[j] = (up - down) / (2 * step)
        scale = max(np.abs(numeric).max(), 1e-12)
        err = float(np.abs(analytic[idx] - numeric).max() / scale)
        errors.append(err)
        details.append({"input": idx, "shape": tuple(base.shape), "max_rel_error": err})
    return GradCheckReport(errors, tolerance, details)
