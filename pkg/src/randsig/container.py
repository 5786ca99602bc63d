"""Binary tensor container and checkpoint serialization.

One tensor record is: magic bytes "GSIG", format version as u16, rank as
u16, each dimension as u64, then the data as 32-bit floats; all fields
little-endian. A .gsig file is a plain concatenation of records, read back
until EOF. Computation stays in float64; only the on-disk representation is
32-bit.

All writes go through a temp file in the target directory followed by an
atomic rename, so a failed command never leaves partial output.
"""

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"GSIG"
VERSION = 1


def tensor_record(arr) -> bytes:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64), dtype="<f4")
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    header += b"".join(struct.pack("<Q", d) for d in arr.shape)
    return header + arr.tobytes()


def _read_record(buf, offset):
    if buf[offset:offset + 4] != MAGIC:
        raise ValueError(f"bad magic at offset {offset}")
    version, rank = struct.unpack_from("<HH", buf, offset + 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    offset += 8
    dims = struct.unpack_from("<" + "Q" * rank, buf, offset)
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    offset += 4 * count
    return data.astype(np.float64).reshape(dims), offset


def atomic_write_bytes(path, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_tensors(path, arrays):
    atomic_write_bytes(path, b"".join(tensor_record(a) for a in arrays))


def read_tensors(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    arrays = []
    offset = 0
    while offset < len(buf):
        arr, offset = _read_record(buf, offset)
        arrays.append(arr)
    return arrays


def model_state(model):
    """Every tensor needed to restore a model, frozen ones included."""
    from .model import RandSigModel  # local import to avoid a cycle

    assert isinstance(model, RandSigModel)
    state = {
        "enc_node_w1": model.enc_node_w1, "enc_node_b1": model.enc_node_b1,
        "enc_node_w2": model.enc_node_w2, "enc_node_b2": model.enc_node_b2,
        "enc_feat_w1": model.enc_feat_w1, "enc_feat_b1": model.enc_feat_b1,
        "enc_feat_w2": model.enc_feat_w2, "enc_feat_b2": model.enc_feat_b2,
    }
    for idx, layer in enumerate(model.layers):
        pre = f"layers.{idx}."
        state[pre + "a"] = layer.a
        if layer.sparse:
            state[pre + "a_cols"] = layer.a_cols
        state[pre + "b"] = layer.b
        state[pre + "w_fwd"] = layer.w_fwd
        state[pre + "o_fwd"] = layer.o_fwd
        state[pre + "w_bwd"] = layer.w_bwd
        state[pre + "o_bwd"] = layer.o_bwd
        state[pre + "z0"] = layer.z0
        state[pre + "proj"] = layer.proj
    for name, tensor in model.dec.items():
        state[f"dec.{name}"] = tensor
    return state


def save_model(base_path, model, extra_config=None):
    """Write <base>.gsig (tensors) and <base>.json (architecture + order)."""
    state = model_state(model)
    layer0 = model.layers[0]
    config = {
        "n": model.n, "in_feats": model.in_feats,
        "h1": model.h1, "h2": model.h2,
        "head": model.head, "out_rows": model.out_rows, "out_cols": model.out_cols,
        "L": len(model.layers),
        "k": layer0.k, "p": layer0.p,
        "layers": [
            {"sparse": l.sparse, "activation": l.activation, "scale": l.scale,
             "trainable": l.trainable}
            for l in model.layers
        ],
        "tensor_order": list(state.keys()),
    }
    if extra_config:
        config["run"] = extra_config
    write_tensors(base_path + ".gsig", list(state.values()))
    atomic_write_json(base_path + ".json", config)


def load_model(base_path):
    """Rebuild a model from save_model output."""
    from .lspm import RandSigLayerParams
    from .model import RandSigModel

    with open(base_path + ".json") as fh:
        config = json.load(fh)
    arrays = read_tensors(base_path + ".gsig")
    state = dict(zip(config["tensor_order"], arrays))

    k, p = config["k"], config["p"]
    layers = []
    for idx, lcfg in enumerate(config["layers"]):
        pre = f"layers.{idx}."
        sparse = lcfg["sparse"]
        layers.append(RandSigLayerParams(
            n_coords=config["h2"], k=k, p=p, sparse=sparse,
            a=state[pre + "a"],
            a_cols=state[pre + "a_cols"].astype(np.intp) if sparse else None,
            b=state[pre + "b"],
            w_fwd=state[pre + "w_fwd"], o_fwd=state[pre + "o_fwd"],
            w_bwd=state[pre + "w_bwd"], o_bwd=state[pre + "o_bwd"],
            z0=state[pre + "z0"], proj=state[pre + "proj"],
            activation=lcfg["activation"], scale=lcfg["scale"],
            trainable=lcfg["trainable"],
        ))
    dec = {name.split(".", 1)[1]: state[name]
           for name in config["tensor_order"] if name.startswith("dec.")}
    return RandSigModel(
        n=config["n"], in_feats=config["in_feats"], h1=config["h1"], h2=config["h2"],
        head=config["head"], out_rows=config["out_rows"], out_cols=config["out_cols"],
        enc_node_w1=state["enc_node_w1"], enc_node_b1=state["enc_node_b1"],
        enc_node_w2=state["enc_node_w2"], enc_node_b2=state["enc_node_b2"],
        enc_feat_w1=state["enc_feat_w1"], enc_feat_b1=state["enc_feat_b1"],
        enc_feat_w2=state["enc_feat_w2"], enc_feat_b2=state["enc_feat_b2"],
        layers=layers, dec=dec,
    )
