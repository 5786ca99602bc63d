"""Encode-process-decode assembly around the randomized signature layers.

The encoder maps a stacked (features x nodes) input into the latent path
X in R^{h1 x h2}: first the node axis (n -> h2), then the feature axis
((d+m) -> h1). Each axis map is affine followed by a second affine at the
latent width; both stages are linear so the encoder stays an affine map of
its input. Keeping two stages per axis matches the parameter budget of the
reference configurations this model is checked against. The decoder mirrors
the encoder (feature axis first, then node axis) for the regression heads;
the classification head flattens the latent path and applies one affine map
to the class logits.

A model is bound to a fixed input geometry (feature count and node count);
inputs of any other size are rejected. Forward accepts a single matrix or a
batch with a leading axis.
"""

from dataclasses import dataclass, field

import numpy as np

from .lspm import RandSigLayerParams, init_layer, layer_backward, layer_forward
from .numkernel import RngState

HEADS = ("node-regression", "pairwise-regression", "classification")


@dataclass
class EncodeCache:
    stacked: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    t1: np.ndarray


@dataclass
class DecodeCache:
    x_l: np.ndarray
    y1: np.ndarray = None
    y2: np.ndarray = None
    z1: np.ndarray = None
    flat: np.ndarray = None


@dataclass
class ModelCache:
    model: object
    encode: EncodeCache
    layers: list
    decode: DecodeCache
    squeeze: bool


@dataclass
class RandSigModel:
    """Full model: encoder tensors, signature layers, and one task head.

    head is one of HEADS; out_rows/out_cols describe the regression output
    shape (out_cols doubles as the class count for classification).
    """

    n: int
    in_feats: int
    h1: int
    h2: int
    head: str
    out_rows: int
    out_cols: int
    enc_node_w1: np.ndarray
    enc_node_b1: np.ndarray
    enc_node_w2: np.ndarray
    enc_node_b2: np.ndarray
    enc_feat_w1: np.ndarray
    enc_feat_b1: np.ndarray
    enc_feat_w2: np.ndarray
    enc_feat_b2: np.ndarray
    layers: list
    dec: dict

    def parameters(self):
        """Trainable tensors by name, in a fixed traversal order."""
        out = {
            "enc_node_w1": self.enc_node_w1, "enc_node_b1": self.enc_node_b1,
            "enc_node_w2": self.enc_node_w2, "enc_node_b2": self.enc_node_b2,
            "enc_feat_w1": self.enc_feat_w1, "enc_feat_b1": self.enc_feat_b1,
            "enc_feat_w2": self.enc_feat_w2, "enc_feat_b2": self.enc_feat_b2,
        }
        for idx, layer in enumerate(self.layers):
            out.update(layer.parameter_dict(prefix=f"layers.{idx}."))
        for name, tensor in self.dec.items():
            out[f"dec.{name}"] = tensor
        return out

    def set_parameters(self, values):
        """Copy values (a name -> array mapping) into the model tensors."""
        current = self.parameters()
        for name, tensor in values.items():
            current[name][...] = tensor


def _uniform(gen, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape)


def init_model(n: int, in_feats: int, h1: int, h2: int, k: int, p: int, L: int,
               head: str, rng: RngState, out_rows: int = None, out_cols: int = None,
               n_classes: int = None, sparsity: bool = True, init_adjust: bool = True,
               activation_adjust: bool = True, trainable: bool = True,
               activation_override: str = None) -> RandSigModel:
    """Build a model bound to (in_feats x n) inputs with L signature layers."""
    if head not in HEADS:
        raise ValueError(f"unknown head: {head}")
    if L < 1:
        raise ValueError("need at least one signature layer")
    if head == "pairwise-regression":
        out_rows, out_cols = n, n
    elif head == "node-regression":
        out_rows = in_feats if out_rows is None else out_rows
        out_cols = n if out_cols is None else out_cols
    else:
        if n_classes is None or n_classes < 2:
            raise ValueError("classification head needs n_classes >= 2")
        out_rows, out_cols = 1, n_classes

    gen = rng.generator
    enc_node_w1 = _uniform(gen, n, (h2, n))
    enc_node_w2 = _uniform(gen, h2, (h2, h2))
    enc_feat_w1 = _uniform(gen, in_feats, (h1, in_feats))
    enc_feat_w2 = _uniform(gen, h1, (h1, h1))
    layers = [
        init_layer(h2, k, p, rng, sparsity=sparsity, init=init_adjust,
                   activation=activation_adjust, trainable=trainable,
                   activation_override=activation_override)
        for _ in range(L)
    ]
    if head == "classification":
        dec = {
            "cls_w": _uniform(gen, h1 * h2, (out_cols, h1 * h2)),
            "cls_b": np.zeros(out_cols),
        }
    else:
        dec = {
            "feat_w1": _uniform(gen, h1, (h1, h1)),
            "feat_b1": np.zeros(h1),
            "feat_w2": _uniform(gen, h1, (out_rows, h1)),
            "feat_b2": np.zeros(out_rows),
            "node_w1": _uniform(gen, h2, (h2, h2)),
            "node_b1": np.zeros(h2),
            "node_w2": _uniform(gen, h2, (out_cols, h2)),
            "node_b2": np.zeros(out_cols),
        }
    return RandSigModel(
        n=n, in_feats=in_feats, h1=h1, h2=h2, head=head,
        out_rows=out_rows, out_cols=out_cols,
        enc_node_w1=enc_node_w1, enc_node_b1=np.zeros(h2),
        enc_node_w2=enc_node_w2, enc_node_b2=np.zeros(h2),
        enc_feat_w1=enc_feat_w1, enc_feat_b1=np.zeros(h1),
        enc_feat_w2=enc_feat_w2, enc_feat_b2=np.zeros(h1),
        layers=layers, dec=dec,
    )


def _promote(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ValueError(f"expected matrix or batch, got ndim={x.ndim}")


def encode(model: RandSigModel, stacked):
    """Map a stacked (in_feats x n) input to the latent path (h1 x h2)."""
    x3, squeeze = _promote(stacked)
    if x3.shape[1:] != (model.in_feats, model.n):
        raise ValueError(
            f"input shape {x3.shape[1:]} does not match model ({model.in_feats}, {model.n})")
    s1 = x3 @ model.enc_node_w1.T + model.enc_node_b1
    s2 = s1 @ model.enc_node_w2.T + model.enc_node_b2
    t1 = model.enc_feat_w1 @ s2 + model.enc_feat_b1[:, None]
    out = model.enc_feat_w2 @ t1 + model.enc_feat_b2[:, None]
    cache = EncodeCache(stacked=x3, s1=s1, s2=s2, t1=t1)
    return (out[0] if squeeze else out), cache


def _encode_backward(model, cache, d_out):
    grads = {}
    d_t1 = model.enc_feat_w2.T @ d_out
    grads["enc_feat_w2"] = np.einsum("bij,bkj->ik", d_out, cache.t1)
    grads["enc_feat_b2"] = d_out.sum(axis=(0, 2))
    d_s2 = model.enc_feat_w1.T @ d_t1
    grads["enc_feat_w1"] = np.einsum("bij,bkj->ik", d_t1, cache.s2)
    grads["enc_feat_b1"] = d_t1.sum(axis=(0, 2))
    d_s1 = d_s2 @ model.enc_node_w2
    grads["enc_node_w2"] = np.einsum("bij,bik->jk", d_s2, cache.s1)
    grads["enc_node_b2"] = d_s2.sum(axis=(0, 1))
    d_stacked = d_s1 @ model.enc_node_w1
    grads["enc_node_w1"] = np.einsum("bij,bik->jk", d_s1, cache.stacked)
    grads["enc_node_b1"] = d_s1.sum(axis=(0, 1))
    return d_stacked, grads


def process(model: RandSigModel, x):
    """Sequentially apply every signature layer."""
    x3, squeeze = _promote(x)
    caches = []
    cur = x3
    for layer in model.layers:
        cur, cache = layer_forward(layer, cur)
        caches.append(cache)
    return (cur[0] if squeeze else cur), caches


def _process_backward(model, caches, d_x):
    grads = {}
    for idx in range(len(model.layers) - 1, -1, -1):
        d_x, layer_grads = layer_backward(model.layers[idx], caches[idx], d_x)
        for name, g in layer_grads.items():
            grads[f"layers.{idx}.{name}"] = g
    return d_x, grads


def decode(model: RandSigModel, x_l):
    """Map the latent path to the head's output representation."""
    x3, squeeze = _promote(x_l)
    dec = model.dec
    if model.head == "classification":
        flat = x3.reshape(x3.shape[0], -1)
        logits = flat @ dec["cls_w"].T + dec["cls_b"]
        cache = DecodeCache(x_l=x3, flat=flat)
        return (logits[0] if squeeze else logits), cache
    y1 = dec["feat_w1"] @ x3 + dec["feat_b1"][:, None]
    y2 = dec["feat_w2"] @ y1 + dec["feat_b2"][:, None]
    z1 = y2 @ dec["node_w1"].T + dec["node_b1"]
    out = z1 @ dec["node_w2"].T + dec["node_b2"]
    cache = DecodeCache(x_l=x3, y1=y1, y2=y2, z1=z1)
    return (out[0] if squeeze else out), cache


def _decode_backward(model, cache, d_out):
    dec = model.dec
    grads = {}
    if model.head == "classification":
        grads["dec.cls_w"] = np.einsum("bc,bf->cf", d_out, cache.flat)
        grads["dec.cls_b"] = d_out.sum(axis=0)
        d_flat = d_out @ dec["cls_w"]
        return d_flat.reshape(cache.x_l.shape), grads
    d_z1 = d_out @ dec["node_w2"]
    grads["dec.node_w2"] = np.einsum("bij,bik->jk", d_out, cache.z1)
    grads["dec.node_b2"] = d_out.sum(axis=(0, 1))
    d_y2 = d_z1 @ dec["node_w1"]
    grads["dec.node_w1"] = np.einsum("bij,bik->jk", d_z1, cache.y2)
    grads["dec.node_b1"] = d_z1.sum(axis=(0, 1))
    d_y1 = dec["feat_w2"].T @ d_y2
    grads["dec.feat_w2"] = np.einsum("bij,bkj->ik", d_y2, cache.y1)
    grads["dec.feat_b2"] = d_y2.sum(axis=(0, 2))
    d_xl = dec["feat_w1"].T @ d_y1
    grads["dec.feat_w1"] = np.einsum("bij,bkj->ik", d_y1, cache.x_l)
    grads["dec.feat_b1"] = d_y1.sum(axis=(0, 2))
    return d_xl, grads


def model_forward(model: RandSigModel, graph_input):
    """encode -> process -> decode; returns (prediction, caches)."""
    x3, squeeze = _promote(graph_input)
    latent, enc_cache = encode(model, x3)
    processed, layer_caches = process(model, latent)
    pred, dec_cache = decode(model, processed)
    cache = ModelCache(model=model, encode=enc_cache, layers=layer_caches,
                       decode=dec_cache, squeeze=squeeze)
    return (pred[0] if squeeze else pred), cache


def model_backward(model: RandSigModel, cache: ModelCache, d_prediction):
    """Exact reverse-mode gradients for every trainable tensor."""
    if cache is None or cache.model is not model:
        raise ValueError("cache does not belong to this model")
    d_pred = np.asarray(d_prediction, dtype=np.float64)
    if cache.squeeze:
        d_pred = d_pred[None]
    d_latent, dec_grads = _decode_backward(model, cache.decode, d_pred)
    d_enc_out, layer_grads = _process_backward(model, cache.layers, d_latent)
    _, enc_grads = _encode_backward(model, cache.encode, d_enc_out)
    grads = {}
    grads.update(enc_grads)
    grads.update(layer_grads)
    grads.update(dec_grads)
    return grads


def count_parameters(model: RandSigModel) -> int:
    """Total trainable scalars, respecting sparsity and frozen layers."""
    return int(sum(t.size for t in model.parameters().values()))


def model_grad_check(model: RandSigModel, graph_input, eps: float = 1e-5,
                     grad_transform=None) -> dict:
    """Central-difference check of model_backward per tensor.

    Returns {tensor name: max relative error} for the probe loss
    sum(prediction ** 2). `grad_transform`, when given, may rewrite the
    analytic gradient dict before comparison (negative-control hook).
    """
    x = np.asarray(graph_input, dtype=np.float64)

    def loss():
        pred, _ = model_forward(model, x)
        return float(np.sum(pred * pred))

    pred, cache = model_forward(model, x)
    grads = model_backward(model, cache, 2.0 * pred)
    if grad_transform is not None:
        grads = grad_transform(grads)

    report = {}
    for name, tensor in model.parameters().items():
        flat_t = tensor.reshape(-1)
        flat_g = grads[name].reshape(-1)
        worst = 0.0
        for idx in range(flat_t.size):
            keep = flat_t[idx]
            flat_t[idx] = keep + eps
            up = loss()
            flat_t[idx] = keep - eps
            down = loss()
            flat_t[idx] = keep
            numeric = (up - down) / (2.0 * eps)
            err = abs(flat_g[idx] - numeric) / max(abs(flat_g[idx]), abs(numeric), 1.0)
            worst = max(worst, err)
        report[name] = worst
    return report
