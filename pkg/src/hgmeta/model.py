"""Two-branch hypergraph classifier sharing one set of weight matrices.

Each layer runs two-stage message passing: hyperedge features are the mean
of their member nodes, then every node combines its own projection with a
coefficient-weighted sum of incident hyperedge projections. The two branches
differ only in where the coefficients come from:

* structural branch ("ss"): 1 / (node degree * mean member degree of the
  hyperedge), fixed for the lifetime of a graph;
* feature branch ("fs"): a learned score over [node_proj | edge_proj],
  softmax-normalized over each node's incident hyperedges, recomputed from
  the current hidden state at every layer.

Weight matrices are shared between branches; the attention vectors are only
consumed by the feature branch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError
from .hypergraph import Hypergraph
from .tensor import Array, Tape, Tensor

BRANCHES = ("ss", "fs")
FS_SLOPE = 0.2


@dataclass
class HGNNParams:
    """Per-layer weight matrices and attention vectors.

    ``weights[t]`` has shape (d_in, d_out); ``attn[t]`` has shape
    (2 * d_out, 1) and scores the concatenated node/edge projections.
    """

    weights: list[Array]
    attn: list[Array]

    def __post_init__(self):
        if len(self.weights) != len(self.attn):
            raise ContractError("one attention vector per layer is required")
        for t, (w, a) in enumerate(zip(self.weights, self.attn)):
            if a.shape != (2 * w.shape[1], 1):
                raise ContractError(f"layer {t}: attn shape {a.shape} does not match weight {w.shape}")
            if t and self.weights[t - 1].shape[1] != w.shape[0]:
                raise ContractError(f"layer {t}: input dim does not chain from layer {t - 1}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a))):
                raise ContractError("parameters must be finite")

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, dims: Sequence[int], rng_w: np.random.Generator, rng_a: np.random.Generator) -> "HGNNParams":
        """Glorot-uniform init for the layer dims [d_in, h1, ..., C]."""
        if len(dims) < 2:
            raise ContractError("need at least input and output dims")
        weights, attn = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound_w = np.sqrt(6.0 / (d_in + d_out))
            weights.append(rng_w.uniform(-bound_w, bound_w, size=(d_in, d_out)))
            bound_a = np.sqrt(6.0 / (2 * d_out + 1))
            attn.append(rng_a.uniform(-bound_a, bound_a, size=(2 * d_out, 1)))
        return cls(weights=weights, attn=attn)

    def param_items(self) -> list[tuple[str, Array]]:
        items: list[tuple[str, Array]] = []
        for t, (w, a) in enumerate(zip(self.weights, self.attn)):
            items.append((f"w{t}", w))
            items.append((f"a{t}", a))
        return items

    def flatten(self) -> Array:
        return np.concatenate([arr.ravel() for _, arr in self.param_items()])

    def with_vec(self, vec: Array) -> "HGNNParams":
        """Rebuild parameters from a flat vector in param_items() order."""
        weights, attn, offset = [], [], 0
        for t in range(self.num_layers):
            w = self.weights[t]
            a = self.attn[t]
            weights.append(vec[offset : offset + w.size].reshape(w.shape).copy())
            offset += w.size
            attn.append(vec[offset : offset + a.size].reshape(a.shape).copy())
            offset += a.size
        if offset != vec.size:
            raise ContractError("flat vector size does not match parameter count")
        return HGNNParams(weights=weights, attn=attn)


@dataclass
class ForwardOutput:
    """Evaluated logits and per-sample losses for both branches."""

    logits_ss: Array
    logits_fs: Array
    loss_ss: Array
    loss_fs: Array


@dataclass
class BranchGraph:
    """A taped forward pass: per-sample loss column, logits, and mean loss."""

    tape: Tape
    branch: str
    loss_vec: Tensor
    logits: Tensor
    mean_loss: Tensor


def ss_coefficients(g: Hypergraph) -> Array:
    """Structural coefficients 1/(d_i * d_e) over node-major incidence pairs."""
    arrays = g.incidence_arrays()
    pair_nodes, pair_edges = arrays["pair_nodes"], arrays["pair_edges"]
    out = np.empty(pair_nodes.size)
    for i in range(pair_nodes.size):
        out[i] = 1.0 / (g.node_degree(int(pair_nodes[i])) * g.hyperedge_avg_degree(int(pair_edges[i])))
    return out


def aggregate_hyperedges(g: Hypergraph, node_feats: Array) -> Array:
    """Stage-1 aggregation: mean member feature per hyperedge."""
    if node_feats.shape[0] != g.num_nodes:
        raise ContractError("node_feats must have one row per node")
    arrays = g.incidence_arrays()
    gathered = T.gather_rows(T.as_tensor(node_feats), arrays["member_nodes"])
    return T.segment_mean(gathered, arrays["member_edges"], g.num_hyperedges).data


def fs_coefficients(g: Hypergraph, node_proj: Array, edge_proj: Array, a: Array) -> Array:
    """Feature coefficients per incidence pair, softmaxed per node."""
    if a.shape != (node_proj.shape[1] + edge_proj.shape[1], 1):
        raise ContractError("attention vector length must match the concatenated projections")
    arrays = g.incidence_arrays()
    out = _fs_coefficients_t(
        arrays,
        T.as_tensor(node_proj),
        T.as_tensor(edge_proj),
        T.as_tensor(a),
    )
    return out.data[:, 0]


def _fs_coefficients_t(arrays, node_proj: Tensor, edge_proj: Tensor, a: Tensor) -> Tensor:
    pair_feats = T.concat_cols(
        T.gather_rows(node_proj, arrays["pair_nodes"]),
        T.gather_rows(edge_proj, arrays["pair_edges"]),
    )
    scores = T.leaky_relu(T.matmul(pair_feats, a), FS_SLOPE)
    return T.segment_softmax(scores, arrays["pair_nodes"])


def node_update(g: Hypergraph, node_feats: Array, edge_feats: Array, coeffs: Array, w: Array, activate: bool = True) -> Array:
    """Stage-2 update: sigma(x_i w + sum_e coeff_ie * x_e w)."""
    arrays = g.incidence_arrays()
    out = _node_update_t(
        g.num_nodes,
        arrays,
        T.as_tensor(node_feats),
        T.as_tensor(edge_feats),
        T.as_tensor(T.column(np.asarray(coeffs, dtype=np.float64))),
        T.as_tensor(w),
        activate,
    )
    return out.data


def _node_update_t(num_nodes, arrays, x: Tensor, edge_feats: Tensor, coeff_col: Tensor, w: Tensor, activate: bool) -> Tensor:
    xw = T.matmul(x, w)
    ew = T.matmul(edge_feats, w)
    messages = T.scale_rows(T.gather_rows(ew, arrays["pair_edges"]), coeff_col)
    aggregated = T.segment_sum(messages, arrays["pair_nodes"], num_nodes)
    combined = T.add(xw, aggregated)
    return T.elu(combined) if activate else combined


def _forward_t(
    g: Hypergraph,
    x: Tensor,
    weights: list[Tensor],
    attn: list[Tensor],
    branch: str,
    ss_col: Array | None = None,
    dropout_masks: list[Array] | None = None,
) -> Tensor:
    if branch not in BRANCHES:
        raise ContractError(f"unknown branch {branch!r}")
    arrays = g.incidence_arrays()
    tape = x.tape
    if branch == "ss":
        if ss_col is None:
            ss_col = ss_coefficients(g)
        ss_coeff = T.as_tensor(ss_col.reshape(-1, 1), tape)
    h = x
    last = len(weights) - 1
    for t, (w, a) in enumerate(zip(weights, attn)):
        gathered = T.gather_rows(h, arrays["member_nodes"])
        edge_feats = T.segment_mean(gathered, arrays["member_edges"], g.num_hyperedges)
        hw = T.matmul(h, w)
        ew = T.matmul(edge_feats, w)
        if branch == "ss":
            coeff = ss_coeff
        else:
            pair_feats = T.concat_cols(
                T.gather_rows(hw, arrays["pair_nodes"]),
                T.gather_rows(ew, arrays["pair_edges"]),
            )
            scores = T.leaky_relu(T.matmul(pair_feats, a), FS_SLOPE)
            coeff = T.segment_softmax(scores, arrays["pair_nodes"])
        messages = T.scale_rows(T.gather_rows(ew, arrays["pair_edges"]), coeff)
        aggregated = T.segment_sum(messages, arrays["pair_nodes"], g.num_nodes)
        h = T.add(hw, aggregated)
        if t < last:
            h = T.elu(h)
            if dropout_masks is not None:
                h = T.mul(h, T.as_tensor(dropout_masks[t], tape))
    return h


def forward(g: Hypergraph, X: Array, params: HGNNParams, branch: str, eval_ids) -> Array:
    """Untaped forward pass; returns logits rows for eval_ids."""
    if X.shape[0] != g.num_nodes:
        raise ContractError("X must have one row per node")
    hidden = _forward_t(
        g,
        T.as_tensor(X),
        [T.as_tensor(w) for w in params.weights],
        [T.as_tensor(a) for a in params.attn],
        branch,
    )
    return hidden.data[np.asarray(eval_ids, dtype=np.int64)]


def ce_loss(logits_row: Array, onehot: Array) -> float:
    """Cross entropy of one logits row against a one-hot label (log-sum-exp form)."""
    logits_row = np.asarray(logits_row, dtype=np.float64).ravel()
    onehot = np.asarray(onehot, dtype=np.float64).ravel()
    if logits_row.shape != onehot.shape:
        raise ContractError("logits and one-hot label must have the same length")
    m = logits_row.max()
    lse = m + np.log(np.exp(logits_row - m).sum())
    return float(lse - (onehot * logits_row).sum())


def register_params(tape: Tape, params: HGNNParams, prefix: str = "") -> tuple[list[Tensor], list[Tensor]]:
    """Register all layer parameters on a tape; returns (weights, attn) tensors."""
    weights = [tape.param(f"{prefix}w{t}", w) for t, w in enumerate(params.weights)]
    attn = [tape.param(f"{prefix}a{t}", a) for t, a in enumerate(params.attn)]
    return weights, attn


def build_branch_graph(
    g: Hypergraph,
    X: Array,
    y_onehot: Array,
    eval_ids,
    branch: str,
    tape: Tape,
    weights: list[Tensor],
    attn: list[Tensor],
    ss_col: Array | None = None,
    dropout_masks: list[Array] | None = None,
) -> BranchGraph:
    """Taped forward to per-sample CE losses for eval_ids on one branch.

    ``y_onehot`` must carry one row per eval id. Parameters are passed as
    tape tensors so both branches of one step can share a single tape (and
    therefore accumulate gradients into the same shared weights).
    """
    eval_ids = np.asarray(eval_ids, dtype=np.int64)
    if y_onehot.shape[0] != eval_ids.size:
        raise ContractError("one-hot labels must align with eval_ids")
    hidden = _forward_t(g, tape.constant(X), weights, attn, branch, ss_col, dropout_masks)
    logits = T.gather_rows(hidden, eval_ids)
    logp = T.row_log_softmax(logits)
    picked = T.row_sum(T.mul(logp, tape.constant(y_onehot)))
    loss_vec = T.scale(picked, -1.0)
    mean_loss = T.scale(T.sum_all(loss_vec), 1.0 / max(eval_ids.size, 1))
    return BranchGraph(tape=tape, branch=branch, loss_vec=loss_vec, logits=logits, mean_loss=mean_loss)


def branch_losses(g: Hypergraph, X: Array, y: Array, params: HGNNParams, ids) -> ForwardOutput:
    """Per-sample losses for both branches with shared weights (no tape)."""
    ids = np.asarray(ids, dtype=np.int64)
    onehot = one_hot(np.asarray(y, dtype=np.int64)[ids], params.out_dim)
    tape = Tape()
    weights, attn = register_params(tape, params)
    ss_col = ss_coefficients(g)
    out = {}
    for branch in BRANCHES:
        graph = build_branch_graph(g, X, onehot, ids, branch, tape, weights, attn, ss_col)
        out[branch] = (graph.logits.data, graph.loss_vec.data[:, 0])
    return ForwardOutput(
        logits_ss=out["ss"][0],
        logits_fs=out["fs"][0],
        loss_ss=out["ss"][1],
        loss_fs=out["fs"][1],
    )


def one_hot(labels: Array, num_classes: int) -> Array:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ContractError("label outside [0, num_classes)")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
