"""Task pipelines: turn generator output into (input, target) datasets and
build the matching model for each task.

Every sample draws from its own rng sub-stream derived from (seed, index),
so datasets are reproducible and order-independent to generate.
"""

import numpy as np

from .datagen import (
    DatasetSplit,
    gen_eta_graph,
    gen_kpz_trajectory,
    gen_pointcloud_classes,
    floyd_warshall,
    split_dataset,
    window_samples,
)
from .graphconv import edge_embedding, sanitize_adjacency, stack_inputs
from .model import init_model
from .numkernel import RngState

KPZ_NOISE_PRESETS = {"high": 5e-3, "low": 1e-3, "zero": 0.0}


def eta_input(graph, m, cap=None):
    """Edge-embedding input for one travel-time graph.

    The capped adjacency is embedded directly as a dissimilarity matrix;
    the default cap is n times the largest edge weight.
    """
    adj = graph.adjacency
    finite = np.isfinite(adj)
    max_w = np.max(adj[finite]) if np.any(finite) else 1.0
    use_cap = cap if cap is not None else graph.n * max_w
    sanitized = sanitize_adjacency(graph, use_cap)
    emb = edge_embedding(sanitized, m)
    return stack_inputs(graph, emb, mode="edges-only")


def build_eta_dataset(n, num_edges, sizes, m, seed, cap=None):
    """Shortest-travel-time regression dataset.

    Samples are (edge-embedding input (m, n), all-pairs shortest times
    (n, n)); sizes is (train, val, test).
    """
    base = RngState(seed)
    total = sum(sizes)
    samples = []
    for i in range(total):
        rng = base.derive(i)
        graph = gen_eta_graph(n, num_edges, rng)
        target = floyd_warshall(graph.adjacency)
        samples.append((eta_input(graph, m, cap=cap), target))
    split = split_dataset(samples, sizes, base.derive(total))
    split.meta.update({"task": "eta", "n": n, "num_edges": num_edges, "m": m,
                       "cap": cap, "seed": seed,
                       "edge_fraction": num_edges / (n * (n - 1) / 2)})
    return split


def build_kpz_dataset(n_x, noise_std, trajectories, seed, nu=0.5, lam=1.0,
                      dt_solver=1e-3, dt_out=0.2, out_steps=120,
                      window_in=10, window_out=10):
    """Stochastic-PDE surrogate dataset, split at the trajectory level so
    windows of one trajectory never straddle splits.

    Samples are (10 x n_x input steps, 10 x n_x target steps) by default.
    """
    base = RngState(seed)
    total = sum(trajectories)
    trajs = []
    for i in range(total):
        rng = base.derive(i)
        trajs.append(gen_kpz_trajectory(
            n_x=n_x, nu=nu, lam=lam, noise_std=noise_std,
            dt_solver=dt_solver, dt_out=dt_out, n_out_steps=out_steps, rng=rng))
    traj_split = split_dataset(trajs, trajectories, base.derive(total))

    def expand(traj_list):
        out = []
        for traj in traj_list:
            out.extend(window_samples(traj, window_in, window_out))
        return out

    split = DatasetSplit(
        train=expand(traj_split.train),
        val=expand(traj_split.val),
        test=expand(traj_split.test),
        seed=seed,
        meta={"task": "kpz", "n_x": n_x, "nu": nu, "lam": lam,
              "noise_std": noise_std, "dt_solver": dt_solver, "dt_out": dt_out,
              "out_steps": out_steps, "window_in": window_in,
              "window_out": window_out, "trajectories": list(trajectories),
              "seed": seed},
    )
    return split


def build_pointcloud_dataset(n_points, n_classes, samples_per_class, sizes, seed,
                             jitter=0.02, m=3):
    """Point-cloud classification dataset: inputs are the m-dimensional
    edge embedding of each cloud's squared-distance matrix."""
    base = RngState(seed)
    graphs, labels = gen_pointcloud_classes(n_points, n_classes, samples_per_class,
                                            base.derive(0), jitter=jitter)
    samples = []
    for graph, label in zip(graphs, labels):
        emb = edge_embedding(graph.adjacency, m)
        samples.append((stack_inputs(graph, emb, mode="edges-only"), label))
    split = split_dataset(samples, sizes, base.derive(1))
    split.meta.update({"task": "pointcloud", "n_points": n_points,
                       "n_classes": n_classes, "m": m, "jitter": jitter,
                       "seed": seed})
    return split


def model_for_task(task, split_meta, model_cfg, seed, layer_flags=None):
    """Fresh model matching a dataset's geometry."""
    flags = dict(sparsity=True, init_adjust=True, activation_adjust=True,
                 trainable=True, activation_override=None)
    if layer_flags:
        flags.update(layer_flags)
    rng = RngState(seed)
    common = dict(h1=model_cfg["h1"], h2=model_cfg["h2"], k=model_cfg["k"],
                  p=model_cfg["p"], L=model_cfg["L"], rng=rng, **flags)
    if task == "eta":
        return init_model(n=split_meta["n"], in_feats=split_meta["m"],
                          head="pairwise-regression", **common)
    if task == "kpz":
        return init_model(n=split_meta["n_x"], in_feats=split_meta["window_in"],
                          head="node-regression", out_rows=split_meta["window_out"],
                          **common)
    if task == "pointcloud":
        return init_model(n=split_meta["n_points"], in_feats=split_meta["m"],
                          head="classification", n_classes=split_meta["n_classes"],
                          **common)
    raise ValueError(f"unknown task: {task}")
