"""Analytic empirical variational Bayesian matrix factorization.

Given a matrix, jointly estimates the observation noise variance and the
number of singular values that stand above it.  The noise variance is
found by a 1-D golden-section minimization of the variational objective
over ln(sigma^2); the retained singular values are then shrunk toward
their posterior means.  All arithmetic is float64.

Rank 0 is a legitimate answer (the input is indistinguishable from iid
noise); callers decide what to do with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor_ops
from .errors import DomainError

TAUBAR_COEFF = 2.5129
GOLDEN_ITERS = 100
GOLDEN_RELTOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EvbmfResult:
    rank: int
    noise_variance: float
    shrunk_values: np.ndarray  # (rank,) float64, posterior singular values
    threshold: float


def tau(x: float, alpha: float) -> float:
    """Larger root of t^2 - (x - 1 - alpha) t + alpha = 0.

    Defined for alpha in (0, 1] and x >= (1 + sqrt(alpha))^2, which is the
    point where the discriminant reaches zero.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    lo = (1.0 + math.sqrt(alpha)) ** 2
    if x < lo * (1.0 - 1e-12):
        raise DomainError(f"tau undefined for x={x} < (1+sqrt(alpha))^2={lo}")
    return float(_tau_vec(np.asarray([x], dtype=np.float64), alpha)[0])


def _tau_vec(x: np.ndarray, alpha: float) -> np.ndarray:
    half = x - (1.0 + alpha)
    disc = np.maximum(half * half - 4.0 * alpha, 0.0)
    return 0.5 * (half + np.sqrt(disc))


def evb_objective(sigma2: float, s: np.ndarray, L: int, M: int, residual: float) -> float:
    """Noise-variance objective; smaller is a better fit.

    `s` holds the positive singular values (length H <= L); `residual` is
    ||A||_F^2 minus the energy accounted for by `s`.  Singular values with
    x_h above the detectability bound xbar contribute through tau, the
    rest through x - ln x.
    """
    if sigma2 <= 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    if L > M:
        raise DomainError(f"requires L <= M, got L={L}, M={M}")
    s = np.asarray(s, dtype=np.float64)
    H = s.shape[0]
    alpha = L / M
    taubar = TAUBAR_COEFF * math.sqrt(alpha)
    xbar = (1.0 + taubar) * (1.0 + alpha / taubar)
    x = (s * s) / (M * sigma2)
    z1 = x[x > xbar]
    z2 = x[x <= xbar]
    obj = float(np.sum(z2 - np.log(z2))) if z2.size else 0.0
    if z1.size:
        t1 = _tau_vec(z1, alpha)
        obj += float(np.sum(z1 - t1))
        obj += float(np.sum(np.log((t1 + 1.0) / z1)))
        obj += alpha * float(np.sum(np.log(t1 / alpha + 1.0)))
    obj += residual / (M * sigma2)
    obj += (L - H) * math.log(sigma2)
    return obj


def _golden_section(fn, lo: float, hi: float):
    """Minimize fn over [lo, hi]; returns the bracket midpoint."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(GOLDEN_ITERS):
        if (b - a) <= GOLDEN_RELTOL * max(1.0, abs(a), abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def sigma2_bounds(s_all: np.ndarray, L: int, M: int):
    """Search interval for the noise variance given all L singular values."""
    alpha = L / M
    taubar = TAUBAR_COEFF * math.sqrt(alpha)
    xbar = (1.0 + taubar) * (1.0 + alpha / taubar)
    hbar = min(math.ceil(L / (1.0 + alpha)) - 1, s_all.shape[0])
    tail = s_all[hbar:] ** 2
    lower = max(float(np.mean(tail)) if tail.size else 0.0, float(s_all[hbar] ** 2)) / (M * xbar)
    upper = float(np.sum(s_all**2)) / (L * M)
    return lower, upper


def evbmf(a: np.ndarray, sigma2: float | None = None) -> EvbmfResult:
    """Posterior rank of `a`, with the noise variance estimated unless given.

    The matrix is oriented so rows <= columns; singular values come from
    tensor_ops.svd.  A zero matrix yields rank 0 with the noise variance
    floored at machine epsilon rather than an error.
    """
    if sigma2 is not None and sigma2 <= 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    a = np.asarray(a)
    if a.ndim != 2 or min(a.shape) < 1:
        raise DomainError(f"evbmf expects a nonempty matrix, got shape {a.shape}")
    if a.shape[0] > a.shape[1]:
        a = a.T
    L, M = a.shape
    alpha = L / M
    taubar = TAUBAR_COEFF * math.sqrt(alpha)
    xbar = (1.0 + taubar) * (1.0 + alpha / taubar)

    s_all = tensor_ops.svd(a).s.astype(np.float64)
    s_pos = s_all[s_all > 0.0]
    H = s_pos.shape[0]
    a64 = a.astype(np.float64)
    residual = max(float(np.sum(a64 * a64) - np.sum(s_pos**2)), 0.0)

    if sigma2 is None:
        if H == 0:
            sigma2 = float(np.finfo(np.float64).eps)
        else:
            lower, upper = sigma2_bounds(s_all, L, M)
            if lower >= upper:
                sigma2 = upper  # degenerate bracket on tiny matrices
            else:
                # exactly rank-deficient inputs push the optimum toward 0
                lower = max(lower, upper * 1e-14)
                ln_opt = _golden_section(
                    lambda t: evb_objective(math.exp(t), s_pos, L, M, residual),
                    math.log(lower),
                    math.log(upper),
                )
                sigma2 = math.exp(ln_opt)

    threshold = math.sqrt(M * sigma2 * (1.0 + taubar) * (1.0 + alpha / taubar))
    rank = int(np.count_nonzero(s_all > threshold))
    kept = s_all[:rank]
    if rank:
        u = (L + M) * sigma2 / (kept * kept)
        disc = np.maximum((1.0 - u) ** 2 - 4.0 * L * M * sigma2 * sigma2 / kept**4, 0.0)
        shrunk = 0.5 * kept * (1.0 - u + np.sqrt(disc))
    else:
        shrunk = np.zeros(0)
    return EvbmfResult(
        rank=rank,
        noise_variance=float(sigma2),
        shrunk_values=shrunk,
        threshold=float(threshold),
    )
