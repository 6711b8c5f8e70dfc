"""Channel importance scores and column permutations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, SingularGram


@dataclass(frozen=True)
class ChannelPermutation:
    """``forward[p]`` is the original column placed at position ``p``."""

    forward: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_forward(cls, forward) -> "ChannelPermutation":
        forward = np.asarray(forward, dtype=np.int64)
        n = forward.size
        if forward.ndim != 1 or not np.array_equal(np.sort(forward), np.arange(n)):
            raise ValueError("forward is not a permutation of range(N)")
        inverse = np.empty(n, dtype=np.int64)
        inverse[forward] = np.arange(n)
        return cls(forward, inverse)

    @classmethod
    def identity(cls, n: int) -> "ChannelPermutation":
        return cls.from_forward(np.arange(n))

    def __len__(self) -> int:
        return self.forward.size


def important_cols(N: int, lam: float, d: int) -> int:
    """Width of the important region: ``ceil(lam * N / d) * d``, capped at N."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    # absorb float noise such as 0.1 * 80 == 8.000000000000002
    groups = math.ceil(lam * N / d - 1e-9)
    if lam > 0:
        groups = max(groups, 1)
    return min(N, max(0, groups) * d)


def importance_wa(W, W_prequant, gram, *, inverse: bool = False) -> np.ndarray:
    """Quantization-error times activation-energy score per input channel.

    Default scores are ``max_j 0.5 * dw_ji**2 * gram_ii``. With ``inverse``
    the diagonal of the (ridge-regularised) inverse Gram is used as the
    denominator instead.
    """
    W = np.asarray(W, dtype=np.float64)
    Wq = np.asarray(W_prequant, dtype=np.float64)
    gram = np.asarray(gram, dtype=np.float64)
    if W.shape != Wq.shape:
        raise DimMismatch(f"W shape {W.shape} != prequantized shape {Wq.shape}")
    N = W.shape[1]
    if gram.shape != (N, N):
        raise DimMismatch(f"gram shape {gram.shape} does not match N={N}")
    err2 = np.max((W - Wq) ** 2, axis=0) if W.shape[0] else np.zeros(N)
    if not inverse:
        return 0.5 * err2 * np.diag(gram)
    ridge = 1e-6 * float(np.mean(np.diag(gram)))
    H = gram + ridge * np.eye(N)
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise SingularGram("Gram matrix is not invertible; use the direct form") from exc
    Linv = np.linalg.inv(L)
    hinv_diag = np.sum(Linv * Linv, axis=0)
    return 0.5 * err2 / hinv_diag


def importance_wonly(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] == 0:
        return np.zeros(W.shape[1])
    return np.max(W * W, axis=0)


def importance_random(N: int, seed) -> np.ndarray:
    """Distinct pseudo-random scores, i.e. a seeded random ranking."""
    rng = np.random.default_rng(seed)
    return rng.permutation(N).astype(np.float64)


def build_permutation(scores, lam: float, d: int, *, order: str = "full") -> tuple[ChannelPermutation, int]:
    """Move the highest-scoring columns to the front.

    ``order="full"`` sorts every column by descending score (stable on the
    original index). ``order="front"`` only pulls the important columns
    forward, in descending score order, and leaves the others in their
    original relative order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    N = scores.size
    if d <= 0 or N % d != 0:
        raise DimMismatch(f"N not divisible by d (N={N}, d={d})")
    n_imp = important_cols(N, lam, d)
    forward = np.argsort(-scores, kind="stable")
    if order == "front":
        rest = np.ones(N, dtype=bool)
        rest[forward[:n_imp]] = False
        forward = np.concatenate([forward[:n_imp], np.flatnonzero(rest)])
    elif order != "full":
        raise ValueError(f"order must be 'full' or 'front', got {order!r}")
    return ChannelPermutation.from_forward(forward), n_imp


def apply_permutation(W, perm: ChannelPermutation, direction: str = "forward") -> np.ndarray:
    W = np.asarray(W)
    if W.shape[-1] != len(perm):
        raise DimMismatch(f"matrix has {W.shape[-1]} columns, permutation has {len(perm)}")
    if direction == "forward":
        return W[..., perm.forward]
    if direction == "inverse":
        return W[..., perm.inverse]
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def permute_gram(gram, perm: ChannelPermutation) -> np.ndarray:
    gram = np.asarray(gram)
    return gram[np.ix_(perm.forward, perm.forward)]
