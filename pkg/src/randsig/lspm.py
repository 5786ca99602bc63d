"""Learnable randomized signature layers with exact manual reverse-mode
gradients.

A layer treats its h1 x h2 input as a path with h1 sample points and h2
coordinate paths. For each point j (traversed forward and, with a second
weight set, backward) the signature state evolves as

    z_j = z_{j-1} + W * (sum_i act(A_i z_{j-1} + b_i) * x[j, i]) + o,

with one A_i, b_i per coordinate path, shared between the two directions.
The two directional state sequences are concatenated, projected back to
coordinate space, and added to the input through a residual connection.

A_i defaults to a frozen one-nonzero-per-row sparsity pattern (values stay
trainable), which keeps the A parameter count linear instead of quadratic
in the signature size k.

Inputs may be a single h1 x h2 matrix or a batch (B, h1, h2); caches and
gradients follow the input rank. All reductions across a batch use fixed
index order, so results are bit-reproducible.
"""

from dataclasses import dataclass, field

import numpy as np

from .numkernel import RngState

ACTIVATIONS = ("scaled-identity", "identity", "sigmoid", "tanh")


class NonFiniteStateError(RuntimeError):
    """Signature state left the finite range during a forward pass."""

    def __init__(self, step, direction):
        super().__init__(f"non-finite signature state at step {step} ({direction} pass)")
        self.step = step
        self.direction = direction


@dataclass
class SparseRowMatrix:
    """Row-sparse matrix with exactly one entry per row, pattern frozen.

    `values` is a view into the owning layer's storage, so optimizer updates
    to the layer are visible here and vice versa.
    """

    rows: int
    cols: int
    col_index: np.ndarray  # (rows,)
    values: np.ndarray  # (rows,)

    def matvec(self, z):
        return self.values * z[self.col_index]

    def to_dense(self):
        dense = np.zeros((self.rows, self.cols))
        dense[np.arange(self.rows), self.col_index] = self.values
        return dense

    def entries(self):
        return [(int(r), int(c), float(v)) for r, (c, v) in
                enumerate(zip(self.col_index, self.values))]


@dataclass
class RandSigLayerParams:
    n_coords: int
    k: int
    p: int
    sparse: bool
    a: np.ndarray  # (n_coords, k*p) values if sparse, else (n_coords, k*p, k)
    a_cols: np.ndarray  # (n_coords, k*p) column indices; None when dense
    b: np.ndarray  # (n_coords, k*p)
    w_fwd: np.ndarray  # (k, k*p)
    o_fwd: np.ndarray  # (k,)
    w_bwd: np.ndarray
    o_bwd: np.ndarray
    z0: np.ndarray  # (k,)
    proj: np.ndarray  # (n_coords, 2k)
    activation: str
    scale: float
    trainable: bool = True

    @property
    def kp(self):
        return self.k * self.p

    def a_matrices(self):
        """Per-coordinate maps as SparseRowMatrix views or dense arrays."""
        if self.sparse:
            return [SparseRowMatrix(self.kp, self.k, self.a_cols[i], self.a[i])
                    for i in range(self.n_coords)]
        return [self.a[i] for i in range(self.n_coords)]

    def parameter_dict(self, prefix=""):
        """Trainable tensors by name, in a fixed order."""
        out = {}
        if self.trainable:
            out[prefix + "a"] = self.a
            out[prefix + "b"] = self.b
        out[prefix + "w_fwd"] = self.w_fwd
        out[prefix + "o_fwd"] = self.o_fwd
        out[prefix + "w_bwd"] = self.w_bwd
        out[prefix + "o_bwd"] = self.o_bwd
        out[prefix + "z0"] = self.z0
        out[prefix + "proj"] = self.proj
        return out


@dataclass
class DirectionCache:
    z_prev: np.ndarray  # (B, h1, k) state before consuming row j
    s_act: np.ndarray  # (B, h1, h2, kp) activated per-coordinate values
    s_sum: np.ndarray  # (B, h1, kp) coordinate-weighted sums
    z_rows: np.ndarray  # (B, h1, k) state after consuming row j


@dataclass
class LayerCache:
    params: RandSigLayerParams
    x: np.ndarray  # (B, h1, h2)
    fwd: DirectionCache
    bwd: DirectionCache
    z_cat: np.ndarray  # (B, h1, 2k)
    squeeze: bool


def init_layer(n_coords: int, k: int, p: int, rng: RngState, sparsity: bool = True,
               init: bool = True, activation: bool = True, trainable: bool = True,
               activation_override: str = None) -> RandSigLayerParams:
    """Initialize a layer, with each robustness adjustment toggleable.

    sparsity on: each A_i carries exactly one nonzero per row at a uniform
    random column. init on: A values, b, z0 ~ N(0, 1/k) instead of N(0, 1).
    activation on: identity scaled by 1/n_coords instead of plain identity;
    activation_override ("sigmoid"/"tanh") replaces the activation choice
    entirely. trainable=False freezes A values and b.
    """
    if n_coords < 1 or k < 1 or p < 1:
        raise ValueError("n_coords, k, p must all be >= 1")
    if activation_override is not None and activation_override not in ("sigmoid", "tanh"):
        raise ValueError(f"unsupported activation override: {activation_override}")
    kp = k * p
    gen = rng.generator
    std = np.sqrt(1.0 / k) if init else 1.0

    z0 = gen.normal(0.0, std, size=k)
    if sparsity:
        a_cols = gen.integers(0, k, size=(n_coords, kp))
        a = gen.normal(0.0, std, size=(n_coords, kp))
    else:
        a_cols = None
        a = gen.normal(0.0, std, size=(n_coords, kp, k))
    b = gen.normal(0.0, std, size=(n_coords, kp))
    bound = 1.0 / np.sqrt(kp)
    w_fwd = gen.uniform(-bound, bound, size=(k, kp))
    o_fwd = gen.uniform(-bound, bound, size=k)
    w_bwd = gen.uniform(-bound, bound, size=(k, kp))
    o_bwd = gen.uniform(-bound, bound, size=k)
    pbound = 1.0 / np.sqrt(2 * k)
    proj = gen.uniform(-pbound, pbound, size=(n_coords, 2 * k))

    if activation_override is not None:
        act, scale = activation_override, 1.0
    elif activation:
        act, scale = "scaled-identity", 1.0 / n_coords
    else:
        act, scale = "identity", 1.0

    return RandSigLayerParams(
        n_coords=n_coords, k=k, p=p, sparse=sparsity, a=a, a_cols=a_cols, b=b,
        w_fwd=w_fwd, o_fwd=o_fwd, w_bwd=w_bwd, o_bwd=o_bwd, z0=z0, proj=proj,
        activation=act, scale=scale, trainable=trainable,
    )


def _apply_activation(u, kind, scale):
    if kind == "scaled-identity":
        return u * scale
    if kind == "identity":
        return u
    if kind == "tanh":
        return np.tanh(u)
    if kind == "sigmoid":
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-u))
    raise ValueError(f"unknown activation: {kind}")


def _activation_grad(s_act, kind, scale):
    # derivative expressed through the stored activated values
    if kind == "scaled-identity":
        return scale
    if kind == "identity":
        return 1.0
    if kind == "tanh":
        return 1.0 - s_act * s_act
    if kind == "sigmoid":
        return s_act * (1.0 - s_act)
    raise ValueError(f"unknown activation: {kind}")


def _promote(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, :, :], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected a matrix or a batch of matrices, got ndim={x.ndim}")


def _row_order(h1, reverse):
    return range(h1 - 1, -1, -1) if reverse else range(h1)


def _sig_pass(params, x3, w, o, reverse, direction, check_finite=True):
    batch, h1, h2 = x3.shape
    if h2 != params.n_coords:
        raise ValueError(f"input has {h2} coordinate paths, layer expects {params.n_coords}")
    kp = params.kp
    z = np.broadcast_to(params.z0, (batch, params.k)).copy()
    cache = DirectionCache(
        z_prev=np.empty((batch, h1, params.k)),
        s_act=np.empty((batch, h1, h2, kp)),
        s_sum=np.empty((batch, h1, kp)),
        z_rows=np.empty((batch, h1, params.k)),
    )
    for step, j in enumerate(_row_order(h1, reverse), start=1):
        cache.z_prev[:, j] = z
        if params.sparse:
            u = params.a[None, :, :] * z[:, params.a_cols] + params.b[None]
        else:
            u = np.einsum("ijk,bk->bij", params.a, z) + params.b[None]
        sa = _apply_activation(u, params.activation, params.scale)
        cache.s_act[:, j] = sa
        ssum = np.einsum("bij,bi->bj", sa, x3[:, j])
        cache.s_sum[:, j] = ssum
        z = z + ssum @ w.T + o
        if check_finite and not np.all(np.isfinite(z)):
            raise NonFiniteStateError(step, direction)
        cache.z_rows[:, j] = z
    return cache


def sig_forward(params: RandSigLayerParams, x, direction: str):
    """One directional signature pass; returns per-row states and a cache.

    Output row j holds the state reached right after consuming input row j,
    so the backward direction's rows come out in original row order.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    x3, squeeze = _promote(x)
    if direction == "fwd":
        cache = _sig_pass(params, x3, params.w_fwd, params.o_fwd, False, "fwd")
    else:
        cache = _sig_pass(params, x3, params.w_bwd, params.o_bwd, True, "bwd")
    z_rows = cache.z_rows[0] if squeeze else cache.z_rows
    return z_rows, cache


def layer_forward(params: RandSigLayerParams, x):
    """Bidirectional signature pass, projection, and residual connection."""
    x3, squeeze = _promote(x)
    cf = _sig_pass(params, x3, params.w_fwd, params.o_fwd, False, "fwd")
    cb = _sig_pass(params, x3, params.w_bwd, params.o_bwd, True, "bwd")
    z_cat = np.concatenate([cf.z_rows, cb.z_rows], axis=2)
    x_next = x3 + z_cat @ params.proj.T
    cache = LayerCache(params=params, x=x3, fwd=cf, bwd=cb, z_cat=z_cat, squeeze=squeeze)
    return (x_next[0] if squeeze else x_next), cache


def _sig_pass_backward(params, dcache, x3, d_zrows, w, reverse):
    batch, h1, h2 = x3.shape
    kp = params.kp
    g = np.zeros((batch, params.k))
    d_x = np.zeros_like(x3)
    d_w = np.zeros_like(w)
    d_o = np.zeros(params.k)
    d_b = np.zeros_like(params.b)
    d_a = np.zeros_like(params.a)
    if params.sparse:
        flat_cols = (np.arange(batch)[:, None] * params.k +
                     params.a_cols.ravel()[None, :]).ravel()
    for j in reversed(list(_row_order(h1, reverse))):
        g = g + d_zrows[:, j]
        d_w += np.einsum("bk,bj->kj", g, dcache.s_sum[:, j])
        d_o += g.sum(axis=0)
        d_s = g @ w  # (B, kp)
        sa = dcache.s_act[:, j]
        d_x[:, j] = np.einsum("bij,bj->bi", sa, d_s)
        du = d_s[:, None, :] * x3[:, j][:, :, None]
        du *= _activation_grad(sa, params.activation, params.scale)
        d_b += du.sum(axis=0)
        zb = dcache.z_prev[:, j]
        if params.sparse:
            d_a += (du * zb[:, params.a_cols]).sum(axis=0)
            weights = (du * params.a[None]).reshape(batch, -1).ravel()
            g = g + np.bincount(flat_cols, weights=weights,
                                minlength=batch * params.k).reshape(batch, params.k)
        else:
            d_a += np.einsum("bij,bk->ijk", du, zb)
            g = g + np.einsum("bij,ijk->bk", du, params.a)
    d_z0 = g.sum(axis=0)
    return d_x, {"a": d_a, "b": d_b, "w": d_w, "o": d_o, "z0": d_z0}


def layer_backward(params: RandSigLayerParams, cache: LayerCache, d_x_next):
    """Exact gradients of a downstream scalar loss w.r.t. the layer input
    and all trainable tensors, given d(loss)/d(x_next)."""
    if cache is None or cache.params is not params:
        raise ValueError("cache does not belong to this layer")
    d3, squeeze = _promote(d_x_next)
    if d3.shape != cache.x.shape:
        raise ValueError(f"gradient shape {d3.shape} does not match cached input {cache.x.shape}")
    k = params.k
    d_zcat = d3 @ params.proj  # (B, h1, 2k)
    d_proj = np.einsum("bjc,bjm->cm", d3, cache.z_cat)
    d_x_f, gf = _sig_pass_backward(params, cache.fwd, cache.x, d_zcat[..., :k],
                                   params.w_fwd, False)
    d_x_b, gb = _sig_pass_backward(params, cache.bwd, cache.x, d_zcat[..., k:],
                                   params.w_bwd, True)
    d_x = d3 + d_x_f + d_x_b
    grads = {
        "w_fwd": gf["w"], "o_fwd": gf["o"],
        "w_bwd": gb["w"], "o_bwd": gb["o"],
        "z0": gf["z0"] + gb["z0"],
        "proj": d_proj,
    }
    if params.trainable:
        grads["a"] = gf["a"] + gb["a"]
        grads["b"] = gf["b"] + gb["b"]
    return (d_x[0] if squeeze else d_x), grads


def grad_check(params: RandSigLayerParams, x, eps: float = 1e-5) -> float:
    """Worst relative error of layer_backward against central differences.

    The probe loss is sum(x_next ** 2); the check covers every trainable
    tensor plus the layer input. Relative error uses
    |analytic - numeric| / max(|analytic|, |numeric|, 1).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)

    def loss_of(inp):
        out, _ = layer_forward(params, inp)
        return float(np.sum(out * out))

    out, cache = layer_forward(params, x)
    d_x, grads = layer_backward(params, cache, 2.0 * out)

    worst = 0.0

    def compare(analytic, tensor, perturb_loss):
        nonlocal worst
        flat_t = tensor.reshape(-1)
        flat_a = np.asarray(analytic, dtype=np.float64).reshape(-1)
        for idx in range(flat_t.size):
            keep = flat_t[idx]
            flat_t[idx] = keep + eps
            up = perturb_loss()
            flat_t[idx] = keep - eps
            down = perturb_loss()
            flat_t[idx] = keep
            numeric = (up - down) / (2.0 * eps)
            err = abs(flat_a[idx] - numeric) / max(abs(flat_a[idx]), abs(numeric), 1.0)
            worst = max(worst, err)

    named = params.parameter_dict()
    for name, tensor in named.items():
        compare(grads[name], tensor, lambda: loss_of(x))
    compare(d_x, x, lambda: loss_of(x))
    return worst


def mav_trace(params: RandSigLayerParams, x):
    """Per-step mean absolute signature state (forward direction).

    Returns (mav, per_k): mav is (h1, 1) with the mean |z_j| over all k
    components; per_k is (h1, k) with per-component magnitudes. For batched
    input both are averaged over the batch. Non-finite values propagate
    instead of raising, so exploding configurations stay observable.
    """
    x3, _ = _promote(x)
    with np.errstate(over="ignore", invalid="ignore"):
        cache = _sig_pass(params, x3, params.w_fwd, params.o_fwd, False, "fwd",
                          check_finite=False)
        per_k = np.abs(cache.z_rows).mean(axis=0)
        mav = per_k.mean(axis=1, keepdims=True)
    return mav, per_k
