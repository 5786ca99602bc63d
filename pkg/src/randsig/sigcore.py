"""Reference signature machinery: exact truncated signatures, the classical
randomized signature, the cumulative lead-lag embedding, and moment recovery.

The truncated signature of a sampled path is computed exactly for its
piecewise-linear interpolant: every linear segment contributes the tensor
exponential of its increment, and consecutive segments combine through
Chen's identity. No quadrature is involved, so the only error is float64
roundoff.

Multi-indices run over {1..d} and are enumerated lexicographically within
each level; the constant term 1 is level 0.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .numkernel import RngState


@dataclass
class SampledPath:
    """A path sampled at T points in d coordinates: row t = value at step t."""

    values: np.ndarray  # (T, d)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("path values must be a T x d matrix")
        if self.values.shape[0] < 2:
            raise ValueError("a path needs at least 2 sample points")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path contains non-finite values")

    @property
    def steps(self):
        return self.values.shape[0]

    @property
    def coords(self):
        return self.values.shape[1]


@dataclass
class TruncatedSignature:
    """Signature terms up to a truncation level.

    `levels[m]` is the order-m tensor of iterated-integral values, shape
    (d,)*m; `levels[0]` is the scalar 1.
    """

    dim: int
    depth: int
    levels: list

    def term_count(self):
        return signature_term_count(self.dim, self.depth)

    def get(self, index):
        """Value for a multi-index of 1-based coordinates, e.g. (1, 2)."""
        index = tuple(index)
        if len(index) > self.depth:
            raise KeyError(f"multi-index {index} deeper than level {self.depth}")
        if any(not 1 <= i <= self.dim for i in index):
            raise KeyError(f"multi-index {index} out of range for dim {self.dim}")
        if not index:
            return 1.0
        return float(self.levels[len(index)][tuple(i - 1 for i in index)])

    def terms(self):
        """(multi-index, value) pairs, lexicographic within each level."""
        yield (), 1.0
        for m in range(1, self.depth + 1):
            lev = self.levels[m]
            for index in product(range(1, self.dim + 1), repeat=m):
                yield index, float(lev[tuple(i - 1 for i in index)])

    def flat(self):
        return np.concatenate([np.atleast_1d(lev).ravel() for lev in self.levels])


def signature_term_count(d: int, m: int) -> int:
    """Number of signature terms up to level m for a d-dimensional path."""
    if d < 1 or m < 0:
        raise ValueError("need d >= 1 and m >= 0")
    if d == 1:
        return m + 1
    return (d ** (m + 1) - 1) // (d - 1)


def _segment_signature(delta, m):
    # tensor exponential of a linear segment's increment
    levels = [np.float64(1.0)]
    for lev in range(1, m + 1):
        levels.append(np.multiply.outer(levels[-1], delta) / lev)
    return levels


def chen_product(left, right, m):
    """Chen (truncated tensor-algebra) product of two level lists."""
    out = []
    for lev in range(m + 1):
        acc = np.zeros((left[1].shape[0],) * lev) if lev else np.float64(0.0)
        for a in range(lev + 1):
            acc = acc + np.multiply.outer(left[a], right[lev - a])
        out.append(acc)
    return out


def truncated_signature(path: SampledPath, m: int) -> TruncatedSignature:
    """Exact truncated signature of the piecewise-linear interpolant."""
    if m < 1:
        raise ValueError("truncation level must be >= 1")
    d = path.coords
    levels = [np.float64(1.0)] + [np.zeros((d,) * lev) for lev in range(1, m + 1)]
    increments = np.diff(path.values, axis=0)
    for delta in increments:
        levels = chen_product(levels, _segment_signature(delta, m), m)
    return TruncatedSignature(dim=d, depth=m, levels=levels)


def concatenate_paths(p1: SampledPath, p2: SampledPath) -> SampledPath:
    """Join two paths, translating the second to start at the first's end."""
    if p1.coords != p2.coords:
        raise ValueError("coordinate counts differ")
    shifted = p2.values - p2.values[0] + p1.values[-1]
    return SampledPath(np.vstack([p1.values, shifted[1:]]))


def lead_lag_embed(samples) -> SampledPath:
    """Cumulative lead-lag embedding of a scalar dataset as a 2-d path.

    With cumulative sums s_j = x_1 + ... + x_j the path visits
    (0,0), (s_1,0), (s_1,s_1), (s_2,s_1), ... : coordinate 1 (the lead)
    moves to the next cumulative sum first, coordinate 2 (the lag) follows.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("need at least one sample")
    cums = np.concatenate([[0.0], np.cumsum(samples)])
    n = samples.size
    values = np.zeros((2 * n + 1, 2))
    values[1::2, 0] = cums[1:]
    values[2::2, 0] = cums[1:]
    values[1::2, 1] = cums[:-1]
    values[2::2, 1] = cums[1:]
    return SampledPath(values)


def moments_from_signature(samples):
    """Mean and population variance recovered from lead-lag signature terms.

    The variance is ((N-1)*S^{1,2} - (N+1)*S^{2,1}) / N^2. With the
    (lead, lag) component order produced by :func:`lead_lag_embed` this
    reproduces the population variance exactly; assigning the coefficients
    the other way round gives a negative value, so the convention is fixed
    here once and checked against direct moments in the test suite.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    n = samples.size
    if n < 2:
        raise ValueError("need at least 2 samples for moments")
    sig = truncated_signature(lead_lag_embed(samples), 2)
    s1 = sig.get((1,))
    s12 = sig.get((1, 2))
    s21 = sig.get((2, 1))
    mean = s1 / n
    variance = ((n - 1) * s12 - (n + 1) * s21) / n ** 2
    return mean, variance


def randomized_signature_reference(path: SampledPath, k: int, rng: RngState):
    """Classical fixed-weight randomized signature of a sampled path.

    Runs the reservoir recurrence z += sum_i tanh(A_i z + b_i) * dX^i over
    the per-step increments, with dense A_i, b_i, z_0 drawn from N(0, 1).
    Returns (z_T, Z) where Z row t is the reservoir state at sample point t
    (row 0 is the initial state).
    """
    if k < 1:
        raise ValueError("signature size k must be >= 1")
    d = path.coords
    gen = rng.generator
    a = gen.normal(size=(d, k, k))
    b = gen.normal(size=(d, k))
    z = gen.normal(size=k)
    states = np.zeros((path.steps, k))
    states[0] = z
    increments = np.diff(path.values, axis=0)
    for t, delta in enumerate(increments, start=1):
        gates = np.tanh(np.einsum("ijk,k->ij", a, z) + b)  # (d, k)
        z = z + gates.T @ delta
        states[t] = z
    return z.copy(), states
