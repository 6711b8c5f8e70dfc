"""Configuration, calibration data and the quantized-layer container."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, CorruptCodeStream, DegenerateCalibration, DimMismatch
from .importance import ChannelPermutation, apply_permutation
from .vqcore import gram_of, reconstruct


class Metric(str, Enum):
    WA = "wa"
    WONLY = "wonly"
    RANDOM = "random"


@dataclass(frozen=True)
class QuantConfig:
    d: int = 8
    e: int = 8
    m: int = 1
    lam: float = 0.0
    importance_metric: Metric = Metric.WA
    seed: int = 0
    epsilon: float = 0.0
    max_outer_iters: int = 4
    beam_width: int = 1
    finetune_steps: int = 25
    lr: float = 1e-4
    inverse_importance: bool = False
    reorder: str = "front"

    def __post_init__(self):
        object.__setattr__(self, "importance_metric", Metric(self.importance_metric))
        if self.d < 1:
            raise ConfigError(f"d must be positive, got {self.d}")
        if not 1 <= self.e <= 16:
            raise ConfigError(f"e must lie in [1, 16], got {self.e}")
        if self.m < 1:
            raise ConfigError(f"codebook count must be >= 1, got {self.m}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.beam_width < 1:
            raise ConfigError(f"beam_width must be positive, got {self.beam_width}")
        if self.max_outer_iters < 0 or self.finetune_steps < 0:
            raise ConfigError("max_outer_iters and finetune_steps must be non-negative")
        if self.reorder not in ("full", "front"):
            raise ConfigError(f"reorder must be 'full' or 'front', got {self.reorder!r}")
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be non-negative, got {self.epsilon}")

    def with_(self, **changes) -> "QuantConfig":
        return replace(self, **changes)


@dataclass
class CalibrationSet:
    """Layer input activations ``X`` (N x O) and/or their Gram matrix ``X X^T``."""

    X: np.ndarray | None = None
    gram: np.ndarray | None = None

    def __post_init__(self):
        if self.X is None and self.gram is None:
            raise DegenerateCalibration("calibration needs activations or a Gram matrix")
        if self.X is not None:
            self.X = np.asarray(self.X, dtype=np.float64)
            if self.X.ndim != 2:
                raise DimMismatch(f"activations must be 2-D, got shape {self.X.shape}")
            g = gram_of(self.X)
            if self.gram is not None:
                given = np.asarray(self.gram, dtype=np.float64)
                scale = max(1.0, float(np.abs(g).max()))
                if given.shape != g.shape or np.abs(given - g).max() > 1e-5 * scale:
                    raise DimMismatch("stored Gram matrix does not match X X^T")
            self.gram = g
        else:
            g = np.asarray(self.gram, dtype=np.float64)
            if g.ndim != 2 or g.shape[0] != g.shape[1]:
                raise DimMismatch(f"Gram matrix must be square, got shape {g.shape}")
            if not np.allclose(g, g.T, rtol=1e-6, atol=1e-12 * max(1.0, float(np.abs(g).max()))):
                raise DimMismatch("Gram matrix is not symmetric")
            self.gram = 0.5 * (g + g.T)

    @property
    def n_channels(self) -> int:
        return self.gram.shape[0]

    @classmethod
    def synthetic(cls, N: int, O: int, seed) -> "CalibrationSet":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA11B]))
        return cls(X=rng.standard_normal((N, O)))


@dataclass
class QuantizedLayer:
    """Codebooks and codes in reordered column space, plus the permutation."""

    config: QuantConfig
    perm: ChannelPermutation
    n_important_cols: int
    codebooks: list
    codes: list
    dims: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        self.validate()

    def validate(self):
        M, N = self.dims
        d, e, m = self.config.d, self.config.e, self.config.m
        if len(self.codebooks) != m or len(self.codes) != m:
            raise CorruptCodeStream(f"expected {m} codebooks and code arrays")
        if N % d or self.n_important_cols % d or not 0 <= self.n_important_cols <= N:
            raise CorruptCodeStream("important region is not a whole number of groups")
        if len(self.perm) != N:
            raise CorruptCodeStream("permutation length does not match N")
        for t, (C, q) in enumerate(zip(self.codebooks, self.codes)):
            if np.shape(C) != (1 << e, d):
                raise CorruptCodeStream(f"codebook {t} has shape {np.shape(C)}")
            groups = N // d if t == 0 else self.n_important_cols // d
            if np.shape(q) != (M, groups):
                raise CorruptCodeStream(f"code array {t} has shape {np.shape(q)}, expected {(M, groups)}")
            if q.size and (q.min() < 0 or q.max() >= (1 << e)):
                raise CorruptCodeStream(f"code array {t} holds out-of-range codes")

    @property
    def important_groups(self) -> int:
        return self.n_important_cols // self.config.d

    def decode_reordered(self) -> np.ndarray:
        return reconstruct(self.codebooks, self.codes)

    def decode(self) -> np.ndarray:
        """Reconstructed weights in original column order, float32."""
        W_hat = apply_permutation(self.decode_reordered(), self.perm, "inverse")
        return W_hat.astype(np.float32)
