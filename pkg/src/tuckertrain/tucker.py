"""Tucker-2 factorization of convolution weights and the chain conversion.

A conv weight (c_out, c_in, kh, kw) factors into a core of shape
(k2, k1, kh, kw) plus two channel-mode matrices, which map onto three
stacked convolutions: a 1x1 channel reduction, the spatial core carrying
the original stride and padding, and a 1x1 channel expansion that also
carries the bias.  Merging the chain back is exact up to float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor_ops
from .errors import RankError, ShapeError
from .evbmf import evbmf

HOOI_MAX_ITERS = 20
HOOI_FIT_TOL = 1e-5


@dataclass(frozen=True)
class ConvSpec:
    """Structural description of one conv layer."""

    c_in: int
    c_out: int
    kh: int
    kw: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.kh, self.kw, self.stride) < 1:
            raise ShapeError(f"conv spec counts must be >= 1: {self}")
        if self.padding < 0:
            raise ShapeError(f"padding must be >= 0: {self}")

    def out_hw(self, in_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = in_hw
        if h + 2 * self.padding < self.kh or w + 2 * self.padding < self.kw:
            raise ShapeError(f"input {in_hw} smaller than kernel of {self}")
        return (
            (h + 2 * self.padding - self.kh) // self.stride + 1,
            (w + 2 * self.padding - self.kw) // self.stride + 1,
        )

    def param_count(self) -> int:
        n = self.c_out * self.c_in * self.kh * self.kw
        return n + self.c_out if self.has_bias else n


@dataclass(frozen=True)
class RankPair:
    k1: int  # input-channel rank
    k2: int  # output-channel rank

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise RankError(f"ranks must be >= 1: {self}")


@dataclass(frozen=True)
class TuckerFactors:
    """Weights of the three-conv chain replacing one convolution."""

    first: np.ndarray  # (k1, c_in, 1, 1) 1x1 reduction
    core: np.ndarray  # (k2, k1, kh, kw) spatial conv
    last: np.ndarray  # (c_out, k2, 1, 1) 1x1 expansion
    bias: np.ndarray | None  # (c_out,) rides on the expansion

    @property
    def ranks(self) -> RankPair:
        return RankPair(k1=self.first.shape[0], k2=self.last.shape[1])

    def param_count(self) -> int:
        n = self.first.size + self.core.size + self.last.size
        return n + self.bias.size if self.bias is not None else n


@dataclass(frozen=True)
class CompressionEstimate:
    m: float  # parameter compression ratio
    e: float  # FLOP speedup ratio (< m for strided convs)


@dataclass
class Tucker2Decomposition:
    core: np.ndarray  # (k2, k1, kh, kw) float32
    u_out: np.ndarray  # (c_out, k2) float32, orthonormal columns
    u_in: np.ndarray  # (c_in, k1) float32, orthonormal columns
    fit_history: list[float] = field(default_factory=list)  # relative error per HOOI iter


def estimate_compression(
    spec: ConvSpec,
    ranks: RankPair,
    in_hw: tuple[int, int] | None = None,
    out_hw: tuple[int, int] | None = None,
) -> CompressionEstimate:
    """Parameter and FLOP ratios of the chain vs the original conv.

    The FLOP ratio needs the input/output spatial sizes; when they are not
    given the output size is derived from the spec, and a missing input
    size degrades e to the stride-1 case (H = H').
    """
    hw = spec.kh * spec.kw
    k1, k2 = ranks.k1, ranks.k2
    denom_m = spec.c_in * k1 + hw * k1 * k2 + spec.c_out * k2
    m = hw * spec.c_in * spec.c_out / denom_m
    if out_hw is None:
        out_hw = spec.out_hw(in_hw) if in_hw is not None else (1, 1)
    if in_hw is None:
        in_hw = out_hw
    hin = in_hw[0] * in_hw[1]
    hout = out_hw[0] * out_hw[1]
    e = (hw * spec.c_in * spec.c_out * hout) / (
        spec.c_in * k1 * hin + hw * k1 * k2 * hout + spec.c_out * k2 * hout
    )
    return CompressionEstimate(m=m, e=e)


def select_ranks(w: np.ndarray, min_compression: float = 1.05) -> RankPair | None:
    """EVBMF ranks of the two channel-mode unfoldings, or None.

    None means "leave this layer alone": either mode looks like pure noise
    (rank 0) or the resulting chain would not actually be smaller.
    """
    w = np.asarray(w)
    if w.ndim != 4:
        raise ShapeError(f"expected a 4-D weight tensor, got shape {w.shape}")
    k2 = evbmf(tensor_ops.unfold(w, 0)).rank
    k1 = evbmf(tensor_ops.unfold(w, 1)).rank
    if k1 == 0 or k2 == 0:
        return None
    ranks = RankPair(k1=k1, k2=k2)
    spec = ConvSpec(
        c_in=w.shape[1], c_out=w.shape[0], kh=w.shape[2], kw=w.shape[3], has_bias=False
    )
    if estimate_compression(spec, ranks).m <= min_compression:
        return None
    return ranks


def _leading_left_vectors(mat: np.ndarray, k: int) -> np.ndarray:
    u = tensor_ops.svd(mat).u.astype(np.float64)
    if k > u.shape[1]:
        # more directions than the unfolding has columns; the extras carry
        # zero core energy but keep the factor shapes as requested
        return tensor_ops.extend_orthonormal(u, k)
    return u[:, :k]


def partial_tucker2(w: np.ndarray, ranks: RankPair) -> Tucker2Decomposition:
    """Tucker-2 over the channel modes: truncated HOSVD init refined by HOOI.

    Each HOOI step recomputes one factor as the leading left singular
    vectors of the tensor contracted with the other factor, so the fit
    error never increases.  Stops when the relative fit error changes by
    less than HOOI_FIT_TOL.
    """
    w = np.asarray(w)
    if w.ndim != 4:
        raise ShapeError(f"expected a 4-D weight tensor, got shape {w.shape}")
    c_out, c_in = w.shape[0], w.shape[1]
    if ranks.k2 > c_out or ranks.k1 > c_in:
        raise RankError(f"ranks {ranks} exceed channel sizes ({c_out}, {c_in})")
    w64 = w.astype(np.float64)
    norm_w = np.linalg.norm(w64)
    if norm_w == 0.0:
        u_out = np.eye(c_out, ranks.k2)
        u_in = np.eye(c_in, ranks.k1)
        core = tensor_ops.mode_multiply(
            tensor_ops.mode_multiply(w64, u_out.T, 0), u_in.T, 1
        )
        return Tucker2Decomposition(
            core=core.astype(np.float32),
            u_out=u_out.astype(np.float32),
            u_in=u_in.astype(np.float32),
            fit_history=[0.0],
        )

    u_out = _leading_left_vectors(tensor_ops.unfold(w, 0), ranks.k2)
    u_in = _leading_left_vectors(tensor_ops.unfold(w, 1), ranks.k1)

    def fit_error() -> float:
        core = tensor_ops.mode_multiply(
            tensor_ops.mode_multiply(w64, u_out.T, 0), u_in.T, 1
        )
        gap = max(norm_w * norm_w - np.linalg.norm(core) ** 2, 0.0)
        return math.sqrt(gap) / norm_w

    fits = [fit_error()]
    for _ in range(HOOI_MAX_ITERS):
        contracted_in = tensor_ops.mode_multiply(w64, u_in.T, 1)
        u_out = _leading_left_vectors(tensor_ops.unfold(contracted_in, 0), ranks.k2)
        contracted_out = tensor_ops.mode_multiply(w64, u_out.T, 0)
        u_in = _leading_left_vectors(tensor_ops.unfold(contracted_out, 1), ranks.k1)
        fits.append(fit_error())
        if abs(fits[-2] - fits[-1]) < HOOI_FIT_TOL:
            break
    core = tensor_ops.mode_multiply(tensor_ops.mode_multiply(w64, u_out.T, 0), u_in.T, 1)
    return Tucker2Decomposition(
        core=core.astype(np.float32),
        u_out=u_out.astype(np.float32),
        u_in=u_in.astype(np.float32),
        fit_history=fits,
    )


def decompose_conv(
    spec: ConvSpec,
    w: np.ndarray,
    bias: np.ndarray | None,
    ranks: RankPair,
) -> TuckerFactors:
    """Factor one conv into the three-conv chain weights."""
    w = np.asarray(w)
    if w.shape != (spec.c_out, spec.c_in, spec.kh, spec.kw):
        raise ShapeError(f"weight shape {w.shape} does not match {spec}")
    dec = partial_tucker2(w, ranks)
    first = np.ascontiguousarray(dec.u_in.T).reshape(ranks.k1, spec.c_in, 1, 1)
    last = dec.u_out.reshape(spec.c_out, ranks.k2, 1, 1)
    bias_arr = None
    if spec.has_bias:
        if bias is None:
            raise ShapeError("spec declares a bias but none was given")
        bias_arr = np.asarray(bias, dtype=np.float32).copy()
    return TuckerFactors(first=first.copy(), core=dec.core, last=last.copy(), bias=bias_arr)


def reconstruct_conv(f: TuckerFactors, spec: ConvSpec) -> tuple[np.ndarray, np.ndarray | None]:
    """Contract the chain back into a single conv weight (lossless merge)."""
    k1, k2 = f.ranks.k1, f.ranks.k2
    if f.first.shape != (k1, spec.c_in, 1, 1):
        raise ShapeError(f"first factor shape {f.first.shape} mismatches {spec}")
    if f.core.shape != (k2, k1, spec.kh, spec.kw):
        raise ShapeError(f"core shape {f.core.shape} mismatches {spec}")
    if f.last.shape != (spec.c_out, k2, 1, 1):
        raise ShapeError(f"last factor shape {f.last.shape} mismatches {spec}")
    last_m = f.last[:, :, 0, 0].astype(np.float64)
    first_m = f.first[:, :, 0, 0].astype(np.float64)
    w = np.einsum("ok,klyx,li->oiyx", last_m, f.core.astype(np.float64), first_m)
    bias = None if f.bias is None else f.bias.astype(np.float32).copy()
    return w.astype(np.float32), bias


def eligible(spec: ConvSpec, min_channels: int = 16) -> bool:
    """Decomposition policy: spatial kernels only, both channel counts at
    least `min_channels`.  Pointwise and tiny convs cannot benefit."""
    return spec.kh * spec.kw > 1 and min(spec.c_in, spec.c_out) >= min_channels
