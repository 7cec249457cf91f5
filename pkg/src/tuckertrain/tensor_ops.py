"""Dense matrix / order-4 tensor kernels: SVD, unfolding, n-mode products.

Everything here is a pure function on numpy arrays.  Matrices are 2-D
float32 arrays, weight tensors are 4-D float32 arrays indexed
(c_out, c_in, kh, kw).  The SVD accumulates in float64 and stores its
factors in float32; downstream rank selection is sensitive to singular
value accuracy, so the 64-bit accumulation is not optional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RankError, ShapeError

SVD_MAX_SWEEPS = 60
SVD_ROTATION_TOL = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(s) @ v.T with s sorted nonincreasing."""

    u: np.ndarray  # (m, k) float32, orthonormal columns
    s: np.ndarray  # (k,) float32, nonincreasing, k = min(m, n)
    v: np.ndarray  # (n, k) float32, orthonormal columns

    @property
    def rank_limit(self) -> int:
        return self.s.shape[0]


def _round_robin_pairs(n: int):
    """Fixed tournament schedule covering every column pair once per sweep.

    Each round pairs disjoint columns, so all rotations of a round commute
    and can be applied in one vectorized step.  The schedule depends only
    on n, which keeps the sweep order (and therefore the result) fixed.
    """
    players = list(range(n)) + ([n] if n % 2 else [])  # n = bye marker
    m = len(players)
    rounds = []
    order = players[:]
    for _ in range(m - 1):
        pairs_p = []
        pairs_q = []
        for i in range(m // 2):
            a, b = order[i], order[m - 1 - i]
            if a < n and b < n:
                pairs_p.append(min(a, b))
                pairs_q.append(max(a, b))
        rounds.append((np.array(pairs_p, dtype=np.intp), np.array(pairs_q, dtype=np.intp)))
        order = [order[0]] + [order[-1]] + order[1:-1]
    return rounds


def _orthonormal_fill(u: np.ndarray, start: int) -> None:
    """Replace u[:, start:] with vectors orthonormal to the leading columns.

    Candidates are taken from the canonical basis in index order, so the
    completion is deterministic.
    """
    m = u.shape[0]
    col = start
    for i in range(m):
        if col >= u.shape[1]:
            break
        cand = np.zeros(m)
        cand[i] = 1.0
        cand -= u[:, :col] @ (u[:, :col].T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            u[:, col] = cand / norm
            col += 1
    if col < u.shape[1]:
        raise ShapeError("could not complete orthonormal basis")


def _jacobi_onesided(b: np.ndarray):
    """One-sided Jacobi on a tall matrix b (m >= n): returns (u, s, v).

    Cyclic sweeps over the round-robin pair schedule; a rotation is applied
    only when the pair's off-diagonal Gram entry exceeds SVD_ROTATION_TOL
    relative to the column norms.  Converged when a full sweep applies no
    rotation.
    """
    b = b.copy()
    m, n = b.shape
    v = np.eye(n)
    if n > 1:
        rounds = _round_robin_pairs(n)
        for _ in range(SVD_MAX_SWEEPS):
            rotated = False
            for p, q in rounds:
                bp = b[:, p]
                bq = b[:, q]
                app = np.einsum("ij,ij->j", bp, bp)
                aqq = np.einsum("ij,ij->j", bq, bq)
                apq = np.einsum("ij,ij->j", bp, bq)
                denom = np.sqrt(app * aqq)
                live = np.abs(apq) > SVD_ROTATION_TOL * denom
                if not live.any():
                    continue
                rotated = True
                pa, qa = p[live], q[live]
                tau = (aqq[live] - app[live]) / (2.0 * apq[live])
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(tau == 0.0, 1.0, t)  # 45-degree rotation at equal norms
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                bp, bq = b[:, pa], b[:, qa]
                b[:, pa] = c * bp - s * bq
                b[:, qa] = s * bp + c * bq
                vp, vq = v[:, pa], v[:, qa]
                v[:, pa] = c * vp - s * vq
                v[:, qa] = s * vp + c * vq
            if not rotated:
                break
    norms = np.linalg.norm(b, axis=0)
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    b = b[:, order]
    v = v[:, order]
    u = np.zeros_like(b)
    nonzero = int(np.count_nonzero(norms > 0.0))
    u[:, :nonzero] = b[:, :nonzero] / norms[:nonzero]
    if nonzero < n:
        _orthonormal_fill(u, nonzero)
    return u, norms, v


def svd(a: np.ndarray) -> SvdResult:
    """Full thin SVD via one-sided Jacobi with a deterministic sign fix.

    The largest-magnitude entry of every u column is made positive (ties
    broken by lowest index), which pins the otherwise arbitrary signs.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"svd expects a nonempty matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("svd input contains non-finite values")
    a64 = a.astype(np.float64)
    m, n = a64.shape
    transposed = m < n
    if transposed:
        u, s, v = _jacobi_onesided(a64.T)
        u, v = v, u
    else:
        u, s, v = _jacobi_onesided(a64)
    # sign convention: dominant entry of each u column positive
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(
        u=u.astype(np.float32),
        s=s.astype(np.float32),
        v=v.astype(np.float32),
    )


def truncate(r: SvdResult, k: int) -> SvdResult:
    """Keep the leading k singular triples (Eckart-Young truncation)."""
    if not 1 <= k <= r.rank_limit:
        raise RankError(f"truncation rank {k} outside [1, {r.rank_limit}]")
    return SvdResult(u=r.u[:, :k].copy(), s=r.s[:k].copy(), v=r.v[:, :k].copy())


def reconstruct(r: SvdResult) -> np.ndarray:
    """u @ diag(s) @ v.T in float64, returned as float32."""
    return (r.u.astype(np.float64) * r.s.astype(np.float64)) @ r.v.T.astype(np.float64)


def extend_orthonormal(u: np.ndarray, k: int) -> np.ndarray:
    """Widen a column-orthonormal (m, j) matrix to (m, k) deterministically.

    Needed when a factorization requests more directions than a thin SVD
    can supply; the added columns are orthonormal completions drawn from
    the canonical basis.
    """
    m, j = u.shape
    if k < j:
        raise RankError(f"cannot extend {j} columns down to {k}")
    if k > m:
        raise RankError(f"cannot fit {k} orthonormal columns in dimension {m}")
    if k == j:
        return u
    out = np.zeros((m, k), dtype=np.float64)
    out[:, :j] = u.astype(np.float64)
    _orthonormal_fill(out, j)
    return out


def _check_mode(t: np.ndarray, mode: int) -> None:
    if t.ndim != 4:
        raise ShapeError(f"expected a 4-D tensor, got {t.ndim}-D")
    if not 0 <= mode <= 3:
        raise ShapeError(f"mode {mode} outside 0..3")


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n unfolding: rows index `mode`, columns run over the remaining
    modes in ascending order with the last one varying fastest."""
    t = np.asarray(t)
    _check_mode(t, mode)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1)


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Exact inverse of unfold for the given 4-D target shape."""
    m = np.asarray(m)
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"fold target must be 4-D, got {shape}")
    if not 0 <= mode <= 3:
        raise ShapeError(f"mode {mode} outside 0..3")
    rest = tuple(shape[i] for i in range(4) if i != mode)
    if m.ndim != 2 or m.shape[0] != shape[mode] or m.shape[1] != int(np.prod(rest)):
        raise ShapeError(
            f"matrix {m.shape} inconsistent with mode-{mode} unfolding of {shape}"
        )
    return np.moveaxis(m.reshape((shape[mode],) + rest), 0, mode)


def mode_multiply(t: np.ndarray, f: np.ndarray, mode: int) -> np.ndarray:
    """n-mode product: contract `f` (k x size_mode) into `t` along `mode`."""
    t = np.asarray(t)
    f = np.asarray(f)
    _check_mode(t, mode)
    if f.ndim != 2 or f.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"factor {f.shape} does not match size {t.shape[mode]} of mode {mode}"
        )
    new_shape = list(t.shape)
    new_shape[mode] = f.shape[0]
    return fold(f @ unfold(t, mode), mode, new_shape)
