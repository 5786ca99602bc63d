"""Dense linear algebra, seeded sampling, and a symmetric eigensolver.

Everything computes in float64; a "matrix" is a plain 2-d numpy array in
row-major order. Randomness flows through :class:`RngState`, a thin wrapper
around numpy's Philox bit generator -- a counter-based PRNG with a published
specification -- so every stream is reproducible from (seed, derivation path,
call order) alone.

The eigensolver is a cyclic Jacobi iteration: each sweep visits every
off-diagonal pair exactly once, scheduled round-robin so that the disjoint
rotations of one round can be applied simultaneously with vectorized
row/column updates.
"""

import numpy as np

Matrix = np.ndarray

MAX_JACOBI_SWEEPS = 100


class JacobiConvergenceError(RuntimeError):
    """Jacobi sweeps hit the cap before the off-diagonal norm threshold."""


class RngState:
    """Deterministic random stream; single-owner, never share across threads.

    Sub-streams for per-sample generation come from :meth:`derive`, which
    folds an index into the seed material (numpy SeedSequence spawn keys)
    instead of splitting the parent stream, so parent and child never
    interact.
    """

    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(int(i) for i in _spawn_key)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self._spawn_key)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def derive(self, index):
        """Independent sub-stream for `index`; the parent state is untouched."""
        return RngState(self.seed, self._spawn_key + (index,))

    def __repr__(self):
        return f"RngState(seed={self.seed}, spawn_key={self._spawn_key})"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit conformance check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d arrays")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def sample_gaussian(rng: RngState, rows: int, cols: int, mean: float, variance: float) -> Matrix:
    """I.i.d. normal samples with the given mean and variance."""
    if variance < 0:
        raise ValueError(f"negative variance: {variance}")
    return rng.generator.normal(loc=mean, scale=np.sqrt(variance), size=(rows, cols))


def sample_uniform(rng: RngState, rows: int, cols: int, lo: float, hi: float) -> Matrix:
    """I.i.d. uniform samples on [lo, hi)."""
    if lo > hi:
        raise ValueError(f"empty interval: [{lo}, {hi})")
    return rng.generator.uniform(low=lo, high=hi, size=(rows, cols))


def _rotation_rounds(n):
    """Round-robin schedule: every unordered index pair appears in exactly
    one round, and pairs within a round are disjoint."""
    m = n + (n % 2)
    idx = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = idx[i], idx[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        idx = [idx[0], idx[-1]] + idx[1:-1]
    return rounds


def _fix_signs(vecs):
    # largest-magnitude component of each eigenvector made non-negative
    picks = np.argmax(np.abs(vecs), axis=0)
    flip = vecs[picks, np.arange(vecs.shape[1])] < 0
    vecs[:, flip] *= -1.0
    return vecs


def symmetric_eig(s: Matrix, tol: float = 1e-8):
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.

    Returns (eigenvalues, eigenvectors): eigenvalues sorted in decreasing
    order (exact ties broken by the eigenvector columns, compared
    component-wise), eigenvector columns matching, each with its
    largest-magnitude component non-negative.

    `tol` bounds the allowed input asymmetry max|s - s^T|. Convergence is
    declared when the off-diagonal Frobenius norm drops below
    1e-12 * ||s||_F; more than MAX_JACOBI_SWEEPS sweeps raises
    JacobiConvergenceError.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {s.shape}")
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    asym = np.max(np.abs(s - s.T)) if n > 1 else 0.0
    if asym > tol:
        raise ValueError(f"asymmetry {asym:.3e} exceeds tolerance {tol:.3e}")

    a = (s + s.T) / 2.0
    v = np.eye(n)
    if n > 1:
        threshold = 1e-12 * np.linalg.norm(a)
        # entries below the floor cannot push the off-diagonal norm past the
        # threshold even if every one of them is skipped
        skip_floor = threshold / n
        rounds = _rotation_rounds(n)
        for _sweep in range(MAX_JACOBI_SWEEPS):
            strict = a.copy()
            np.fill_diagonal(strict, 0.0)
            off = np.linalg.norm(strict)
            if off <= threshold:
                break
            for ps, qs in rounds:
                apq = a[ps, qs]
                active = np.abs(apq) > skip_floor
                if not np.any(active):
                    continue
                p, q = ps[active], qs[active]
                apq = apq[active]
                with np.errstate(over="ignore", divide="ignore"):
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                # A <- J^T A J, disjoint pairs rotated simultaneously
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = cp * c - cq * sn
                a[:, q] = cp * sn + cq * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * rp - sn[:, None] * rq
                a[q, :] = sn[:, None] * rp + c[:, None] * rq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = vp * c - vq * sn
                v[:, q] = vp * sn + vq * c
        else:
            raise JacobiConvergenceError(
                f"no convergence after {MAX_JACOBI_SWEEPS} sweeps (off-diagonal {off:.3e})"
            )

    vals = np.diag(a).copy()
    v = _fix_signs(v)
    order = sorted(range(n), key=lambda i: (-vals[i], tuple(v[:, i])))
    return [float(vals[i]) for i in order], v[:, order].copy()
