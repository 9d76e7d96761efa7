"""Multi-task weight net mapping per-sample branch losses to (alpha, beta).

A shared hidden layer reads the two losses; one small head per overlap level
produces the blend weights for samples of that level. In the default
complementary mode a head emits a single logit and beta = 1 - alpha, which is
the form the analytic meta-gradient assumes. Independent mode gives each head
two outputs passed through separate sigmoids.

Heads are zero-initialized so training starts with alpha = beta = 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Array, Tape, Tensor

OUTPUT_MODES = ("complementary", "independent")


@dataclass
class MWNParams:
    """Shared layer plus per-task heads."""

    w_shared: Array  # (2, hidden)
    b_shared: Array  # (1, hidden)
    head_w: list[Array]  # (hidden, 1) or (hidden, 2) per task
    head_b: list[Array]  # (1, 1) or (1, 2) per task
    mode: str = "complementary"
    log1p_inputs: bool = False

    def __post_init__(self):
        if self.mode not in OUTPUT_MODES:
            raise ContractError(f"unknown output mode {self.mode!r}")
        if len(self.head_w) != len(self.head_b) or not self.head_w:
            raise ContractError("need one (weight, bias) pair per task")
        out_cols = 1 if self.mode == "complementary" else 2
        hidden = self.w_shared.shape[1]
        if self.w_shared.shape != (2, hidden) or self.b_shared.shape != (1, hidden):
            raise ContractError("shared layer shapes are inconsistent")
        for w, b in zip(self.head_w, self.head_b):
            if w.shape != (hidden, out_cols) or b.shape != (1, out_cols):
                raise ContractError("head shapes are inconsistent with the mode")
        for arr in [self.w_shared, self.b_shared, *self.head_w, *self.head_b]:
            if not np.all(np.isfinite(arr)):
                raise ContractError("parameters must be finite")

    @property
    def k(self) -> int:
        return len(self.head_w)

    @property
    def hidden(self) -> int:
        return self.w_shared.shape[1]

    @classmethod
    def init(
        cls,
        k: int,
        hidden: int = 100,
        mode: str = "complementary",
        log1p_inputs: bool = False,
        rng: np.random.Generator | None = None,
    ) -> "MWNParams":
        if k < 1:
            raise ContractError("need at least one task head")
        rng = rng or np.random.default_rng(0)
        bound = np.sqrt(6.0 / (2 + hidden))
        out_cols = 1 if mode == "complementary" else 2
        return cls(
            w_shared=rng.uniform(-bound, bound, size=(2, hidden)),
            b_shared=np.zeros((1, hidden)),
            head_w=[np.zeros((hidden, out_cols)) for _ in range(k)],
            head_b=[np.zeros((1, out_cols)) for _ in range(k)],
            mode=mode,
            log1p_inputs=log1p_inputs,
        )

    def param_items(self) -> list[tuple[str, Array]]:
        items = [("shared_w", self.w_shared), ("shared_b", self.b_shared)]
        for c in range(self.k):
            items.append((f"head{c}_w", self.head_w[c]))
            items.append((f"head{c}_b", self.head_b[c]))
        return items

    def flatten(self) -> Array:
        return np.concatenate([arr.ravel() for _, arr in self.param_items()])

    def with_vec(self, vec: Array) -> "MWNParams":
        arrays = []
        offset = 0
        for _, arr in self.param_items():
            arrays.append(vec[offset : offset + arr.size].reshape(arr.shape).copy())
            offset += arr.size
        if offset != vec.size:
            raise ContractError("flat vector size does not match parameter count")
        return MWNParams(
            w_shared=arrays[0],
            b_shared=arrays[1],
            head_w=arrays[2::2],
            head_b=arrays[3::2],
            mode=self.mode,
            log1p_inputs=self.log1p_inputs,
        )


def register_mwn(tape: Tape, params: MWNParams, prefix: str = "") -> dict[str, Tensor]:
    return {name: tape.param(prefix + name, arr) for name, arr in params.param_items()}


def _check_tasks(tasks: Array, k: int) -> Array:
    tasks = np.asarray(tasks, dtype=np.int64)
    if tasks.size and (tasks.min() < 0 or tasks.max() >= k):
        raise ContractError(f"task index outside [0, {k})")
    return tasks


def alpha_beta_graph(
    tape: Tape,
    losses: Tensor,
    tasks,
    params: MWNParams,
    ptensors: dict[str, Tensor],
) -> tuple[Tensor, Tensor]:
    """Taped (alpha, beta) columns for an (n, 2) loss tensor and task labels."""
    n = losses.shape[0]
    if losses.shape[1] != 2:
        raise ContractError("losses tensor must have two columns (l1, l2)")
    tasks = _check_tasks(tasks, params.k)
    if params.log1p_inputs:
        losses = T.log1p(losses)
    hidden = T.elu(T.add(T.matmul(losses, ptensors["shared_w"]), ptensors["shared_b"]))
    mask = np.zeros((n, params.k))
    mask[np.arange(n), tasks] = 1.0
    mask_t = tape.constant(mask)
    if params.mode == "complementary":
        raw_cols = [
            T.add(T.matmul(hidden, ptensors[f"head{c}_w"]), ptensors[f"head{c}_b"])
            for c in range(params.k)
        ]
        raw_all = raw_cols[0]
        for col in raw_cols[1:]:
            raw_all = T.concat_cols(raw_all, col)
        raw = T.row_sum(T.mul(raw_all, mask_t))
        alpha = T.sigmoid(raw)
        beta = T.add(T.scale(alpha, -1.0), tape.constant(np.ones((n, 1))))
        return alpha, beta
    cols_a, cols_b = [], []
    for c in range(params.k):
        raw_c = T.add(T.matmul(hidden, ptensors[f"head{c}_w"]), ptensors[f"head{c}_b"])
        cols_a.append(T.slice_cols(raw_c, 0, 1))
        cols_b.append(T.slice_cols(raw_c, 1, 2))
    raw_a, raw_b = cols_a[0], cols_b[0]
    for ca, cb in zip(cols_a[1:], cols_b[1:]):
        raw_a = T.concat_cols(raw_a, ca)
        raw_b = T.concat_cols(raw_b, cb)
    alpha = T.sigmoid(T.row_sum(T.mul(raw_a, mask_t)))
    beta = T.sigmoid(T.row_sum(T.mul(raw_b, mask_t)))
    return alpha, beta


def mwn_forward_batch(l1, l2, tasks, params: MWNParams) -> tuple[Array, Array]:
    """Vectorized (alpha, beta) values for aligned loss arrays and task labels."""
    l1 = np.asarray(l1, dtype=np.float64).ravel()
    l2 = np.asarray(l2, dtype=np.float64).ravel()
    if l1.shape != l2.shape:
        raise ContractError("l1 and l2 must align")
    if np.any(l1 < 0) or np.any(l2 < 0) or not (np.all(np.isfinite(l1)) and np.all(np.isfinite(l2))):
        raise ContractError("losses must be finite and nonnegative")
    tape = Tape()
    ptensors = register_mwn(tape, params)
    losses = tape.constant(np.stack([l1, l2], axis=1))
    alpha, beta = alpha_beta_graph(tape, losses, tasks, params, ptensors)
    return alpha.data[:, 0].copy(), beta.data[:, 0].copy()


def mwn_forward(l1: float, l2: float, task: int, params: MWNParams) -> tuple[float, float]:
    """Blend weights for a single sample."""
    alpha, beta = mwn_forward_batch([l1], [l2], [task], params)
    return float(alpha[0]), float(beta[0])


@dataclass
class MWNGrad:
    """Gradients of one sample's alpha (and beta) w.r.t. parameters and inputs."""

    d_alpha: dict[str, Array]
    d_beta: dict[str, Array]
    d_alpha_inputs: Array  # (2,) gradient w.r.t. (l1, l2)
    d_beta_inputs: Array


def mwn_grad(l1: float, l2: float, task: int, params: MWNParams) -> MWNGrad:
    """Exact tape gradients for one sample, both w.r.t. Theta and (l1, l2)."""
    if not (np.isfinite(l1) and np.isfinite(l2)) or l1 < 0 or l2 < 0:
        raise ContractError("losses must be finite and nonnegative")
    tape = Tape()
    ptensors = register_mwn(tape, params)
    losses = tape.param("inputs", np.array([[float(l1), float(l2)]]))
    alpha, beta = alpha_beta_graph(tape, losses, [task], params, ptensors)
    d_alpha = tape.backward(alpha)
    d_beta = tape.backward(beta)
    return MWNGrad(
        d_alpha={k: v for k, v in d_alpha.items() if k != "inputs"},
        d_beta={k: v for k, v in d_beta.items() if k != "inputs"},
        d_alpha_inputs=d_alpha["inputs"][0].copy(),
        d_beta_inputs=d_beta["inputs"][0].copy(),
    )


def weighted_alpha_theta_grad(l1, l2, tasks, params: MWNParams, coeffs) -> dict[str, Array]:
    """Gradient of sum_j coeffs[j] * alpha_j w.r.t. every Theta parameter.

    This realizes the per-sample chain rule of the analytic meta-update in a
    single backward pass; coeffs are treated as constants.
    """
    l1 = np.asarray(l1, dtype=np.float64).ravel()
    l2 = np.asarray(l2, dtype=np.float64).ravel()
    coeffs = np.asarray(coeffs, dtype=np.float64).ravel()
    if not (l1.shape == l2.shape == coeffs.shape):
        raise ContractError("losses and coefficients must align")
    tape = Tape()
    ptensors = register_mwn(tape, params)
    losses = tape.constant(np.stack([l1, l2], axis=1))
    alpha, _ = alpha_beta_graph(tape, losses, tasks, params, ptensors)
    weighted = T.sum_all(T.scale_rows(alpha, tape.constant(coeffs.reshape(-1, 1))))
    return tape.backward(weighted)
