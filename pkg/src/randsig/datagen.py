"""Synthetic dataset construction: shortest-travel-time graphs with
all-pairs targets, stochastic PDE trajectories for a node-regression
surrogate task, a small point-cloud classification task, and deterministic
splits.

Edge weights are snapped to the dyadic grid (multiples of 2^-20) so that
sums of up to a few dozen weights are exact in float64; min-plus shortest
path arithmetic then commutes exactly with node permutations and with the
brute-force enumeration oracle used in the tests.
"""

from dataclasses import dataclass, field

import numpy as np

from .graphconv import NO_EDGE, Graph
from .numkernel import RngState

WEIGHT_GRID = 2.0 ** 20


@dataclass
class EtaSample:
    graph: Graph
    target: np.ndarray  # (n, n) shortest travel times


@dataclass
class KpzTrajectory:
    u: np.ndarray  # (steps, n_x); row 0 is the initial condition
    nu: float
    lam: float
    noise_std: float
    dt_out: float


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list
    seed: int
    meta: dict = field(default_factory=dict)


def gen_eta_graph(n: int, num_edges: int, rng: RngState) -> Graph:
    """Connected undirected graph with uniform (0, 1] travel times.

    A random spanning tree guarantees connectivity; the remaining edges are
    drawn uniformly from the unused node pairs.
    """
    max_edges = n * (n - 1) // 2
    if not n - 1 <= num_edges <= max_edges:
        raise ValueError(f"num_edges={num_edges} infeasible for n={n}")
    gen = rng.generator
    adj = np.full((n, n), NO_EDGE)
    np.fill_diagonal(adj, 0.0)

    order = gen.permutation(n)
    pairs = []
    for i in range(1, n):
        j = int(gen.integers(0, i))
        pairs.append((int(order[i]), int(order[j])))
    tree = {(min(a, b), max(a, b)) for a, b in pairs}

    extra = num_edges - (n - 1)
    if extra > 0:
        iu, ju = np.triu_indices(n, k=1)
        free = [idx for idx, (a, b) in enumerate(zip(iu, ju)) if (a, b) not in tree]
        chosen = gen.choice(len(free), size=extra, replace=False)
        pairs.extend((int(iu[free[c]]), int(ju[free[c]])) for c in chosen)

    weights = (np.floor(gen.uniform(0.0, 1.0, size=len(pairs)) * WEIGHT_GRID) + 1.0) / WEIGHT_GRID
    for (a, b), w in zip(pairs, weights):
        adj[a, b] = w
        adj[b, a] = w
    return Graph(adjacency=adj)


def floyd_warshall(adjacency: np.ndarray) -> np.ndarray:
    """All-pairs shortest path costs; NO_EDGE entries act as +inf."""
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    finite = np.isfinite(adj)
    if np.any(adj[finite] < 0):
        raise ValueError("negative edge weights are not supported")
    dist = adj.copy()
    np.fill_diagonal(dist, 0.0)
    for k in range(dist.shape[0]):
        via = dist[:, k, None] + dist[None, k, :]
        np.minimum(dist, via, out=dist)
    return dist


def permute_graph(g: Graph, perm, target: np.ndarray = None):
    """Apply a node permutation consistently to adjacency, features, and an
    optional (n, n) target. perm[i] gives the new index of node i."""
    perm = np.asarray(perm, dtype=np.intp)
    n = g.n
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ValueError("perm must be a bijection on the node indices")
    inv = np.empty(n, dtype=np.intp)
    inv[perm] = np.arange(n)
    adj = g.adjacency[np.ix_(inv, inv)]
    feats = g.node_features[:, inv]
    out = Graph(adjacency=adj, node_features=feats)
    if target is None:
        return out, None
    target = np.asarray(target)
    return out, target[np.ix_(inv, inv)]


def gen_kpz_trajectory(n_x: int, nu: float, lam: float, noise_std: float,
                       dt_solver: float, dt_out: float, n_out_steps: int,
                       rng: RngState, domain_length: float = 16.0,
                       init_modes: int = 4, init_amplitude: float = 0.5) -> KpzTrajectory:
    """Integrate du/dt = nu*Lap(u) + lam/2*(grad u)^2 + noise on a periodic
    grid with explicit Euler-Maruyama.

    Central differences for both operators; per-substep noise is
    sqrt(dt)*noise_std*N(0,1) per grid point. The initial condition is
    low-pass-filtered Gaussian noise (Fourier modes up to init_modes),
    rescaled to init_amplitude RMS. Rows are recorded every
    dt_out/dt_solver substeps, with row 0 the initial condition.
    """
    if n_x < 8:
        raise ValueError("n_x must be >= 8")
    dx = domain_length / n_x
    if nu * dt_solver / dx ** 2 > 0.25:
        raise ValueError(
            f"stability bound violated: nu*dt/dx^2 = {nu * dt_solver / dx**2:.3f} > 0.25")
    substeps = int(round(dt_out / dt_solver))
    if substeps < 1 or abs(substeps * dt_solver - dt_out) > 1e-9 * dt_out:
        raise ValueError("dt_out must be an integer multiple of dt_solver")

    gen = rng.generator
    spectrum = np.fft.rfft(gen.normal(size=n_x))
    spectrum[init_modes + 1:] = 0.0
    spectrum[0] = 0.0
    u = np.fft.irfft(spectrum, n=n_x)
    rms = np.sqrt(np.mean(u * u))
    if rms > 0:
        u = u * (init_amplitude / rms)

    traj = np.zeros((n_out_steps, n_x))
    traj[0] = u
    sqrt_dt = np.sqrt(dt_solver)
    for row in range(1, n_out_steps):
        for sub in range(substeps):
            up = np.roll(u, -1)
            um = np.roll(u, 1)
            lap = (up - 2.0 * u + um) / dx ** 2
            grad = (up - um) / (2.0 * dx)
            u = u + dt_solver * (nu * lap + 0.5 * lam * grad * grad)
            if noise_std > 0:
                u = u + sqrt_dt * noise_std * gen.normal(size=n_x)
            if np.max(np.abs(u)) > 1e6:
                raise RuntimeError(
                    f"field blew up at output row {row}, substep {sub}")
        traj[row] = u
    return KpzTrajectory(u=traj, nu=nu, lam=lam, noise_std=noise_std, dt_out=dt_out)


def window_samples(traj: KpzTrajectory, in_steps: int = 10, out_steps: int = 10):
    """Every stride-1 window of the trajectory as an (input, target) pair."""
    total = traj.u.shape[0]
    if total < in_steps + out_steps:
        raise ValueError(
            f"trajectory of {total} steps too short for {in_steps}+{out_steps} windows")
    samples = []
    for start in range(total - in_steps - out_steps + 1):
        samples.append((traj.u[start:start + in_steps].copy(),
                        traj.u[start + in_steps:start + in_steps + out_steps].copy()))
    return samples


_SPHERE_POINTS = {}


def _class_directions(n_points, class_id):
    # base shape per class is fixed so that jitter-free samples coincide
    key = (n_points, class_id)
    if key not in _SPHERE_POINTS:
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(
            entropy=90210, spawn_key=(n_points, class_id))))
        dirs = gen.normal(size=(n_points, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        _SPHERE_POINTS[key] = dirs
    return _SPHERE_POINTS[key]


def gen_pointcloud_classes(n_points: int, n_classes: int, samples_per_class: int,
                           rng: RngState, jitter: float = 0.02):
    """Labeled point-cloud graphs: each class is an ellipsoid with its own
    axis ratios, sampled as n_points with optional jitter. The adjacency is
    the pairwise squared-Euclidean dissimilarity matrix."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    gen = rng.generator
    graphs, labels = [], []
    for class_id in range(n_classes):
        axes = np.array([1.0, 1.0 + 0.6 * (class_id + 1), 1.0 / (1.0 + 0.4 * (class_id + 1))])
        dirs = _class_directions(n_points, class_id)
        for _ in range(samples_per_class):
            pts = dirs * axes
            if jitter > 0:
                pts = pts + jitter * gen.normal(size=pts.shape)
            diff = pts[:, None, :] - pts[None, :, :]
            dissim = np.sum(diff * diff, axis=2)
            np.fill_diagonal(dissim, 0.0)
            graphs.append(Graph(adjacency=dissim))
            labels.append(class_id)
    return graphs, labels


def split_dataset(samples, sizes, rng: RngState) -> DatasetSplit:
    """Deterministic shuffled partition into train/val/test."""
    n_train, n_val, n_test = sizes
    total = n_train + n_val + n_test
    if total > len(samples):
        raise ValueError(f"requested {total} samples but only {len(samples)} available")
    perm = rng.generator.permutation(len(samples))
    picks = [samples[i] for i in perm[:total]]
    return DatasetSplit(
        train=picks[:n_train],
        val=picks[n_train:n_train + n_val],
        test=picks[n_train + n_val:total],
        seed=rng.seed,
        meta={"sizes": [n_train, n_val, n_test]},
    )
