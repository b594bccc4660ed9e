"""Composite objective, its linear and neural instantiations, and feature partitioning.

The training problem is a finite sum over samples: a server-side head applied
to the concatenated party outputs plus a bounded nonconvex regularizer on the
local parameter blocks,

    f(w0, w) = (1/n) sum_i head(w0, c_{i,1..q}; y_i) + lambda_eff * sum_m g(w_m),

with c_{i,m} the output of party m's local model on its feature block.
Everything here is a pure float64 function of immutable inputs; callers may
evaluate from any worker concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError


@dataclass
class PartitionedDataset:
    """Feature blocks held by q parties plus server-side labels.

    blocks[m] is an (n, dbar_m) float64 matrix; labels is length n.  Labels
    are +/-1 for binary heads and class indices for softmax heads.
    """

    blocks: list[np.ndarray]
    labels: np.ndarray
    block_dims: list[int] = field(init=False)
    n: int = field(init=False)
    q: int = field(init=False)

    def __post_init__(self) -> None:
        if not self.blocks:
            raise ShapeError("dataset needs at least one feature block")
        self.q = len(self.blocks)
        self.n = self.blocks[0].shape[0]
        for m, b in enumerate(self.blocks):
            if b.ndim != 2 or b.shape[0] != self.n:
                raise ShapeError(f"block {m} shape {b.shape} inconsistent with n={self.n}")
        if self.labels.shape[0] != self.n:
            raise ShapeError("label count does not match sample count")
        self.block_dims = [int(b.shape[1]) for b in self.blocks]

    @property
    def total_features(self) -> int:
        return sum(self.block_dims)

    @classmethod
    def from_matrix(cls, X: np.ndarray, y: np.ndarray, block_dims: list[int]) -> "PartitionedDataset":
        """Slice a dense (n, dbar) matrix into contiguous per-party blocks."""
        X = np.asarray(X, dtype=np.float64)
        if sum(block_dims) != X.shape[1]:
            raise ShapeError(f"block dims sum {sum(block_dims)} != feature dim {X.shape[1]}")
        blocks, lo = [], 0
        for d in block_dims:
            blocks.append(np.ascontiguousarray(X[:, lo:lo + d]))
            lo += d
        return cls(blocks=blocks, labels=np.asarray(y))

    def concatenated(self) -> np.ndarray:
        return np.hstack(self.blocks)


@dataclass
class ModelState:
    """Parameter blocks: a global w0 (possibly empty) and one w_m per party."""

    w0: np.ndarray
    w: list[np.ndarray]

    def __post_init__(self) -> None:
        self.w0 = np.asarray(self.w0, dtype=np.float64)
        self.w = [np.asarray(wm, dtype=np.float64) for wm in self.w]

    @property
    def d0(self) -> int:
        return int(self.w0.size)

    @property
    def block_dims(self) -> list[int]:
        return [int(wm.size) for wm in self.w]

    def copy(self) -> "ModelState":
        return ModelState(self.w0.copy(), [wm.copy() for wm in self.w])

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.w0).all()) and all(np.isfinite(wm).all() for wm in self.w)


@dataclass
class LocalModel:
    """Per-party model mapping a feature block to a small output vector.

    kind 'linear': inner product, output_dim 1, parameter dim = feature dim.
    kind 'mlp': fully connected rectifier network; layer_sizes lists the
    hidden and output widths, e.g. (128, 1) for the two-layer case.
    black_box marks the model as gradient-free for baseline applicability
    checks; it does not change the forward map.
    """

    kind: str = "linear"
    layer_sizes: tuple[int, ...] = ()
    black_box: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "mlp"):
            raise DomainError(f"unknown local model kind {self.kind!r}")
        if self.kind == "mlp" and not self.layer_sizes:
            raise DomainError("mlp local model needs layer_sizes")

    @property
    def output_dim(self) -> int:
        return 1 if self.kind == "linear" else int(self.layer_sizes[-1])

    def param_dim(self, input_dim: int) -> int:
        if self.kind == "linear":
            return input_dim
        total, fan_in = 0, input_dim
        for width in self.layer_sizes:
            total += width * fan_in + width
            fan_in = width
        return total

    def layer_shapes(self, input_dim: int) -> list[tuple[int, int]]:
        shapes, fan_in = [], input_dim
        for width in self.layer_sizes:
            shapes.append((width, fan_in))
            fan_in = width
        return shapes

    def init_params(self, input_dim: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """Zero weights for linear; scaled gaussian weights, zero biases for mlp."""
        if self.kind == "linear":
            return np.zeros(input_dim)
        if rng is None:
            raise DomainError("mlp initialization needs an rng")
        chunks = []
        for width, fan_in in self.layer_shapes(input_dim):
            chunks.append(rng.standard_normal(width * fan_in) * np.sqrt(2.0 / fan_in))
            chunks.append(np.zeros(width))
        return np.concatenate(chunks)


@dataclass
class GlobalModel:
    """Server-side head combining the party outputs.

    kind 'logistic': parameter-free binary log loss on the summed outputs.
    kind 'softmax_fcn': one linear layer of shape (q*output_dim, classes)
    followed by softmax cross-entropy; d0 = q * output_dim * classes.
    """

    kind: str = "logistic"
    q: int = 1
    party_output_dim: int = 1
    classes: int = 2
    black_box: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("logistic", "softmax_fcn"):
            raise DomainError(f"unknown global model kind {self.kind!r}")

    @property
    def d0(self) -> int:
        if self.kind == "logistic":
            return 0
        return self.q * self.party_output_dim * self.classes

    def init_params(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "logistic":
            return np.zeros(0)
        if rng is None:
            return np.zeros(self.d0)
        return rng.standard_normal(self.d0) * np.sqrt(1.0 / (self.q * self.party_output_dim))


def local_forward(model: LocalModel, w_m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate one party's local model; returns the output vector c.

    Linear returns the inner product as a length-1 vector; mlp applies the
    layer recursion u_l = relu(W_l u_{l-1} + b_l) with a linear last layer.
    """
    w_m = np.asarray(w_m, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if model.kind == "linear":
        if w_m.size != x.size:
            raise ShapeError(f"linear model: dim(w)={w_m.size} != dim(x)={x.size}")
        return np.array([np.dot(w_m, x)])
    if w_m.size != model.param_dim(x.size):
        raise ShapeError(
            f"mlp parameters have {w_m.size} entries, layout needs {model.param_dim(x.size)}"
        )
    u = x
    off = 0
    shapes = model.layer_shapes(x.size)
    last = len(shapes) - 1
    for l, (width, fan_in) in enumerate(shapes):
        W = w_m[off:off + width * fan_in].reshape(width, fan_in)
        off += width * fan_in
        b = w_m[off:off + width]
        off += width
        u = W @ u + b
        if l != last:
            u = np.maximum(u, 0.0)
    return u


def _softplus(z: float) -> float:
    # log(1 + e^z), stable for large |z|
    return float(max(z, 0.0) + np.log1p(np.exp(-abs(z))))


def global_value(model: GlobalModel, w0: np.ndarray, c: list[np.ndarray], label) -> float:
    """Server head value for one sample given the q party outputs."""
    if len(c) != model.q:
        raise ShapeError(f"expected {model.q} party outputs, got {len(c)}")
    if model.kind == "logistic":
        y = int(label)
        if y not in (-1, 1):
            raise DomainError(f"logistic label must be +/-1, got {label!r}")
        total = np.sum(np.concatenate([np.atleast_1d(ci) for ci in c]))
        return _softplus(-y * float(total))
    y = int(label)
    if not 0 <= y < model.classes:
        raise DomainError(f"label {label!r} outside [0, {model.classes})")
    feats = np.concatenate([np.atleast_1d(ci) for ci in c])
    if w0.size != feats.size * model.classes:
        raise ShapeError(f"head parameters {w0.size} != {feats.size}x{model.classes}")
    logits = feats @ w0.reshape(feats.size, model.classes)
    zmax = float(np.max(logits))
    return float(zmax + np.log(np.sum(np.exp(logits - zmax))) - logits[y])


def nonconvex_reg(w: np.ndarray) -> float:
    """Bounded even regularizer sum_j w_j^2 / (1 + w_j^2); value in [0, dim(w))."""
    w = np.asarray(w, dtype=np.float64)
    sq = w * w
    return float(np.sum(sq / (1.0 + sq)))


def composite_objective(
    state: ModelState,
    data: PartitionedDataset,
    lam_eff: float,
    local_model: LocalModel,
    global_model: GlobalModel,
) -> float:
    """Full training objective: mean per-sample head loss plus the regularizer."""
    if len(state.w) != data.q:
        raise ShapeError(f"{len(state.w)} parameter blocks for {data.q} parties")
    total = 0.0
    for i in range(data.n):
        c = [local_forward(local_model, state.w[m], data.blocks[m][i]) for m in range(data.q)]
        total += global_value(global_model, state.w0, c, data.labels[i])
    reg = sum(nonconvex_reg(wm) for wm in state.w)
    return total / data.n + lam_eff * reg


def partition_features(d_total: int, q: int) -> list[int]:
    """Split d_total features into q contiguous, nearly equal blocks.

    Sizes differ by at most one; the remainder goes to the first blocks.
    """
    if q < 1 or q > d_total:
        raise DomainError(f"need 1 <= q <= features, got q={q}, features={d_total}")
    base, rem = divmod(d_total, q)
    return [base + 1 if m < rem else base for m in range(q)]


def init_state(
    data: PartitionedDataset,
    local_model: LocalModel,
    global_model: GlobalModel,
    seed: int,
) -> ModelState:
    """Seeded initial parameters: one stream per block so layouts replay."""
    from . import streams

    w = [
        local_model.init_params(data.block_dims[m], streams.stream(seed, streams.INIT, party=m + 1))
        for m in range(data.q)
    ]
    w0 = global_model.init_params(streams.stream(seed, streams.INIT, party=0))
    return ModelState(w0=w0, w=w)
