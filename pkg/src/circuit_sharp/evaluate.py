"""Forward evaluation of a circuit on a data batch, in log space end to end.

Sum nodes use the log-sum-exp trick; -inf log-probabilities are legal values
(deterministic-style supports) and are propagated, never raised.  Evaluation
is vectorized per topological level: all edges whose parent sits at the same
level are processed with gather/scatter primitives, so the pass is O(edges)
numpy work regardless of circuit shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, ParamSet
from .errors import NotAChild, ScopeMismatch

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class EvalTrace:
    """Per-sample, per-node log outputs of one forward pass.

    log_p has shape [num_samples, num_nodes]; the root column holds the
    per-sample log-likelihood.
    """

    log_p: np.ndarray
    batch: np.ndarray
    circuit: Circuit

    @property
    def root_log_p(self) -> np.ndarray:
        return self.log_p[:, self.circuit.root]


def _leaf_log_probs(circuit: Circuit, params: ParamSet, batch: np.ndarray, out: np.ndarray) -> None:
    """Fill out[node] rows for every leaf, grouped by family."""
    groups = circuit.leaf_groups()
    bern_ids, bern_var = groups["bern"]
    gauss_ids, gauss_var = groups["gauss"]

    # divide: log 0 at indicator leaves; invalid: diverged (inf) parameters,
    # whose NaN rows are the DivergedNaN signal handled by the trainers
    with np.errstate(divide="ignore", invalid="ignore"):
        if bern_ids.size:
            x = batch[:, bern_var]
            p = np.concatenate([params.leaf_params[i] for i in bern_ids])
            out[bern_ids] = np.where(x > 0.5, np.log(p), np.log1p(-p)).T
        if gauss_ids.size:
            x = batch[:, gauss_var]
            ms = np.concatenate([params.leaf_params[i] for i in gauss_ids]).reshape(-1, 2)
            z = (x - ms[:, 0]) / ms[:, 1]
            out[gauss_ids] = (-np.log(ms[:, 1]) - 0.5 * _LOG_2PI - 0.5 * z * z).T
        for i, var in groups["cat"]:
            idx = batch[:, var].astype(np.int64)
            out[i] = np.log(params.leaf_params[i])[idx]


def forward(circuit: Circuit, params: ParamSet, batch: np.ndarray) -> EvalTrace:
    """Evaluate the circuit bottom-up on a batch of complete assignments.

    The batch must have one column per root-scope variable, indexed by
    variable id; raises ScopeMismatch otherwise.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[1] != len(circuit.root_scope):
        raise ScopeMismatch(
            f"batch width {batch.shape[1]} != root scope size {len(circuit.root_scope)}"
        )
    n = batch.shape[0]
    lp = np.zeros((circuit.num_nodes, n))
    _leaf_log_probs(circuit, params, batch, lp)

    theta = params.edge_vector(circuit)
    for _level, edges in circuit.level_edges:
        if edges.prod_parent.size:
            # product rows start at zero and are written only at their level
            np.add.at(lp, edges.prod_parent, lp[edges.prod_child])
        if edges.sum_parent.size:
            child_lp = lp[edges.sum_child]
            starts = edges.sum_starts
            m = np.maximum.reduceat(child_lp, starts, axis=0)
            m_safe = np.where(np.isfinite(m), m, 0.0)
            lengths = np.diff(np.append(starts, len(edges.sum_child)))
            contrib = theta[edges.sum_edge, None] * np.exp(
                child_lp - np.repeat(m_safe, lengths, axis=0)
            )
            s = np.add.reduceat(contrib, starts, axis=0)
            with np.errstate(divide="ignore"):
                lp[edges.sum_parent_nodes] = np.where(
                    np.isfinite(m), m_safe + np.log(s), -np.inf
                )

    return EvalTrace(np.ascontiguousarray(lp.T), batch, circuit)


def product_complement(trace: EvalTrace, product: int, child: int, sample: int) -> float:
    """log prod_{k != child} p_k(x) for one sample, via log_p(product) - log_p(child).

    Falls back to direct summation over siblings when the child underflowed to
    log 0, where the subtraction would be indeterminate.
    """
    node = trace.circuit.nodes[product]
    if node.kind != "product":
        raise NotAChild(f"node {product} is not a product node")
    if child not in node.children:
        raise NotAChild(f"node {child} is not a child of {product}")
    lp_child = trace.log_p[sample, child]
    if np.isfinite(lp_child):
        return float(trace.log_p[sample, product] - lp_child)
    seen_child = False
    total = 0.0
    for c in node.children:
        if c == child and not seen_child:
            seen_child = True  # skip exactly one occurrence
            continue
        total += trace.log_p[sample, c]
    return float(total)
