"""Levenberg-Marquardt over an abstract manifold.

The solver only needs three callables: ``linearize(x) -> (r, J, cost)``,
``cost(x)`` and ``retract(x, delta)``, so the same loop serves the batch
estimator, the initialization stages and small dense problems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse.linalg import spsolve

from ..sensors import NumericalError

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    max_iterations: int = 100
    function_tolerance: float = 1e-8
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    # the relative-decrease test only counts once no parameter moves by more than this
    # fraction of its own scale (1 / sqrt of the Gauss-Newton diagonal)
    parameter_tolerance: float = 0.1
    initial_damping: float = 1e-5
    max_damping: float = 1e16

    @classmethod
    def from_config(cls, d: dict | None):
        d = d or {}
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in keys})


@dataclass
class SolveReport:
    status: str
    iterations: int
    costs: list[float] = field(default_factory=list)
    gradient_norm: float = float("nan")  # max |g_i| / ||J_i||, unit-free
    raw_gradient_norm: float = float("nan")
    snapshots: list[Any] = field(default_factory=list)

    @property
    def initial_cost(self) -> float:
        return self.costs[0]

    @property
    def final_cost(self) -> float:
        return self.costs[-1]


def scaled_gradient_norm(g, diag) -> float:
    """Largest gradient entry after scaling each column to unit Jacobian norm.

    This is the gradient in the coordinates the damped step works in, so it
    does not depend on the units chosen for each parameter.
    """
    if g.size == 0:
        return 0.0
    return float(np.max(np.abs(g) / np.sqrt(diag)))


# above this many unknowns the dense factorisation needs too much memory
_DENSE_LIMIT = 5000


def _solve_damped(H, g, mu, diag):
    A = H + sparse.diags(mu * diag)
    if A.shape[0] <= _DENSE_LIMIT:
        try:
            return cho_solve(cho_factor(A.toarray()), -g)
        except np.linalg.LinAlgError:
            return None
    with np.errstate(all="ignore"):
        try:
            return spsolve(A.tocsc(), -g)
        except RuntimeError:
            return None


def levenberg_marquardt(x0, linearize: Callable, cost: Callable, retract: Callable,
                        options: SolverOptions | None = None, snapshot: Callable | None = None):
    """Minimise ``0.5 * |r(x)|^2``; returns ``(x, SolveReport)``.

    ``linearize(x)`` returns ``(r, J, cost)`` with J sparse or dense. Accepted
    steps never increase the cost.
    """
    opt = options or SolverOptions()
    x = x0
    r, J, f = linearize(x)
    J = sparse.csr_matrix(J)
    report = SolveReport(status="max_iterations", iterations=0, costs=[f])
    if snapshot is not None:
        report.snapshots.append(snapshot(x))
    mu = opt.initial_damping
    nu = 2.0
    relinearize = False
    for it in range(opt.max_iterations):
        if relinearize:
            r, J, f = linearize(x)
            J = sparse.csr_matrix(J)
            relinearize = False
        g = J.T @ r
        H = (J.T @ J).tocsr()
        diag = H.diagonal().copy()
        floor = 1e-12 * max(float(diag.max()), 1e-300) if diag.size else 1.0
        diag = np.maximum(diag, floor)
        gnorm = scaled_gradient_norm(g, diag)
        report.gradient_norm = gnorm
        report.raw_gradient_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < opt.gradient_tolerance or f == 0.0:
            report.status = "gradient"
            break
        delta = _solve_damped(H, g, mu, diag)
        report.iterations = it + 1
        if delta is None or not np.all(np.isfinite(delta)) or float(g @ delta) >= 0.0:
            mu *= nu
            nu *= 2.0
            if mu > opt.max_damping:
                raise NumericalError(
                    f"damped normal equations stayed indefinite (damping {mu:.3g}, gradient {gnorm:.3g})")
            continue
        predicted = -(float(g @ delta) + 0.5 * float(delta @ (H @ delta)))
        x_new = retract(x, delta)
        f_new = cost(x_new)
        if np.isfinite(f_new) and f_new < f:
            rho = (f - f_new) / max(predicted, 1e-300)
            rel = (f - f_new) / f
            x, f = x_new, f_new
            report.costs.append(f)
            if snapshot is not None:
                report.snapshots.append(snapshot(x))
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            mu = max(mu, 1e-15)
            nu = 2.0
            relinearize = True
            scaled_step = float(np.max(np.abs(delta) * np.sqrt(diag)))
            log.debug("iteration %d: cost %.9g rel %.3g rho %.3f mu %.3g scaled step %.3g at %d", it + 1, f, rel, rho,
                      mu, scaled_step, int(np.argmax(np.abs(delta) * np.sqrt(diag))))
            if rel < opt.function_tolerance and scaled_step < opt.parameter_tolerance:
                report.status = "function"
                break
            if float(np.max(np.abs(delta))) < opt.step_tolerance:
                report.status = "step"
                break
        else:
            if float(np.max(np.abs(delta))) < opt.step_tolerance:
                report.status = "step"
                break
            mu *= nu
            nu *= 2.0
            if mu > opt.max_damping:
                report.status = "no_progress"
                break
    return x, report
