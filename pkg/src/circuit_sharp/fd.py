"""Finite-difference ground truth for gradients and Hessians on small circuits.

Perturbations act on raw sum weights without renormalization: that is the
unconstrained partial derivative the flow identities express.  Second
derivatives difference the analytic gradient (one level of truncation error),
not the scalar twice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, ParamSet
from .errors import CostGuardExceeded
from .evaluate import forward
from .flows import backward, loglik_gradient

GRADIENT_EDGE_CAP = 10_000
HESSIAN_EDGE_CAP = 500


@dataclass
class FdConfig:
    """Central-difference steps: one decade coarser for second derivatives."""

    step_gradient: float = 1e-5
    step_hessian: float = 1e-4


DEFAULTS = FdConfig()


def batch_loglik(circuit: Circuit, params: ParamSet, batch: np.ndarray) -> float:
    return float(forward(circuit, params, batch).root_log_p.sum())


def analytic_gradient(circuit: Circuit, params: ParamSet, batch: np.ndarray) -> np.ndarray:
    flows = backward(circuit, params, forward(circuit, params, batch))
    return loglik_gradient(flows, params)


def fd_gradient(
    circuit: Circuit, params: ParamSet, batch: np.ndarray, h: float = DEFAULTS.step_gradient
) -> np.ndarray:
    """Central difference of the batch log-likelihood per raw sum weight."""
    e = circuit.num_sum_edges
    if e > GRADIENT_EDGE_CAP:
        raise CostGuardExceeded(f"{e} edges exceeds FD gradient cap {GRADIENT_EDGE_CAP}")
    work = params.copy()
    theta = params.edge_vector(circuit)
    grad = np.zeros(e)
    for i in range(e):
        vec = theta.copy()
        vec[i] = theta[i] + h
        work.set_edge_vector(circuit, vec)
        up = batch_loglik(circuit, work, batch)
        vec[i] = theta[i] - h
        work.set_edge_vector(circuit, vec)
        down = batch_loglik(circuit, work, batch)
        grad[i] = (up - down) / (2.0 * h)
    return grad


def fd_hessian(
    circuit: Circuit,
    params: ParamSet,
    batch: np.ndarray,
    h: float = DEFAULTS.step_hessian,
    symmetrize: bool = True,
) -> np.ndarray:
    """Central difference of the analytic gradient, symmetrized as (H + H^T)/2.

    Pass symmetrize=False to inspect the raw column-wise estimate (its
    asymmetry is itself a smoothness check).
    """
    e = circuit.num_sum_edges
    if e > HESSIAN_EDGE_CAP:
        raise CostGuardExceeded(f"{e} edges exceeds FD Hessian cap {HESSIAN_EDGE_CAP}")
    work = params.copy()
    theta = params.edge_vector(circuit)
    hess = np.zeros((e, e))
    for i in range(e):
        vec = theta.copy()
        vec[i] = theta[i] + h
        work.set_edge_vector(circuit, vec)
        up = analytic_gradient(circuit, work, batch)
        vec[i] = theta[i] - h
        work.set_edge_vector(circuit, vec)
        down = analytic_gradient(circuit, work, batch)
        hess[:, i] = (up - down) / (2.0 * h)
    return 0.5 * (hess + hess.T) if symmetrize else hess


def central_diff(fn, x0: np.ndarray, h: float) -> np.ndarray:
    """Generic central-difference gradient of a scalar function of a vector."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        x = x0.copy()
        x[i] += h
        up = fn(x)
        x[i] -= 2.0 * h
        down = fn(x)
        grad[i] = (up - down) / (2.0 * h)
    return grad
