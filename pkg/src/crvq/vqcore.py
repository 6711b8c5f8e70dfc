"""Vector quantization primitives.

Weight matrices are cut into row segments of ``d`` consecutive columns
("vectors"). A codebook is a ``(2**e, d)`` float32 array. Codes for a
matrix region are stored as an ``(M, G)`` integer array, one code per
row and vector group.

Multi-codebook layouts follow one convention throughout: ``codes[0]``
covers every group of the matrix, while ``codes[t]`` for ``t >= 1``
covers only the leading ``codes[t].shape[1]`` groups (the important
region after channel reordering). Reconstructions are additive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCalibration, DimMismatch, EmptyInput

# Upper bound on the number of float64 scalars materialised per distance chunk.
_CHUNK_ELEMS = 1 << 16


@dataclass
class VectorSet:
    vectors: np.ndarray  # (K, d)
    provenance: np.ndarray  # (K, 2) of (row, start column)
    shape: tuple[int, int]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def partition(W, d: int) -> VectorSet:
    """Split ``W`` into row segments of length ``d``, row-major order."""
    W = np.asarray(W)
    if W.ndim != 2:
        raise DimMismatch(f"expected a 2-D matrix, got shape {W.shape}")
    M, N = W.shape
    if d <= 0 or N % d != 0:
        raise DimMismatch(f"N not divisible by d (N={N}, d={d})")
    G = N // d
    rows = np.repeat(np.arange(M), G)
    cols = np.tile(np.arange(G) * d, M)
    return VectorSet(W.reshape(M * G, d).copy(), np.stack([rows, cols], axis=1), (M, N))


def reassemble(S: VectorSet) -> np.ndarray:
    M, N = S.shape
    out = np.empty((M, N), dtype=S.vectors.dtype)
    d = S.d
    for (r, c), v in zip(S.provenance, S.vectors):
        out[r, c:c + d] = v
    return out


def _as_vectors(S) -> np.ndarray:
    if isinstance(S, VectorSet):
        return S.vectors
    V = np.asarray(S)
    if V.ndim != 2:
        raise DimMismatch(f"expected (K, d) vectors, got shape {V.shape}")
    return V


def nearest(V, C) -> tuple[np.ndarray, np.ndarray]:
    """Index of and squared distance to the closest row of ``C`` for each row of ``V``.

    Distances are exact sums of squared differences; ties go to the lowest index.
    """
    V = np.asarray(V, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if V.shape[1] != C.shape[1]:
        raise DimMismatch(f"vector dim {V.shape[1]} != codebook dim {C.shape[1]}")
    K = V.shape[0]
    codes = np.empty(K, dtype=np.int64)
    dists = np.empty(K, dtype=np.float64)
    step = max(1, _CHUNK_ELEMS // max(1, C.shape[0]))
    Ct = np.ascontiguousarray(C.T)
    for s in range(0, K, step):
        block = V[s:s + step]
        # accumulate one coordinate at a time: same sum of squared
        # differences, without a (chunk, k, d) temporary
        dist = np.subtract.outer(block[:, 0], Ct[0])
        dist *= dist
        for j in range(1, C.shape[1]):
            diff = np.subtract.outer(block[:, j], Ct[j])
            diff *= diff
            dist += diff
        idx = np.argmin(dist, axis=1)
        codes[s:s + step] = idx
        dists[s:s + step] = dist[np.arange(idx.size), idx]
    return codes, dists


def _kmeanspp(X, k, rng, init_zero):
    K, d = X.shape
    centers = np.empty((k, d), dtype=np.float64)
    if init_zero:
        centers[0] = 0.0
    else:
        centers[0] = X[rng.integers(K)]
    diff = X - centers[0]
    d2 = (diff * diff).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # every vector already sits on a centre; pad with copies
            centers[i:] = centers[0]
            break
        idx = rng.choice(K, p=d2 / total)
        centers[i] = X[idx]
        diff = X - centers[i]
        d2 = np.minimum(d2, (diff * diff).sum(axis=1))
    return centers


def _objective(X, centers):
    _, dist = nearest(X, centers)
    return float(dist.sum())


def kmeans_codebook(S, e: int, seed, *, init_zero: bool = False, max_iter: int = 100,
                    tol: float = 1e-6) -> np.ndarray:
    """Fit a ``2**e``-entry codebook to the vectors of ``S`` with Lloyd's algorithm.

    Initialisation is seeded k-means++. With ``init_zero`` the zero vector is
    forced in as the first initial centre, so the final quantization error
    can never exceed the squared norm of the data.

    Empty clusters are moved onto the vector with the largest current error.
    The returned codebook is the best iterate seen, cast to float32.
    """
    X = np.asarray(_as_vectors(S), dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInput("cannot fit a codebook to an empty vector set")
    k = 1 << e
    K, d = X.shape
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng, init_zero)
    rms = float(np.sqrt(np.mean(X * X)))
    best, best_obj = centers.copy(), np.inf

    for _ in range(max_iter):
        labels, dist = nearest(X, centers)
        obj = float(dist.sum())
        if obj < best_obj:
            best, best_obj = centers.copy(), obj
        if obj == 0.0:
            break
        counts = np.bincount(labels, minlength=k)
        new = np.empty_like(centers)
        for j in range(d):
            new[:, j] = np.bincount(labels, weights=X[:, j], minlength=k)
        live = counts > 0
        new[live] /= counts[live, None]
        empty = np.flatnonzero(~live)
        if empty.size:
            err = dist.copy()
            for j in empty:
                worst = int(np.argmax(err))
                if err[worst] <= 0.0:
                    new[j] = new[labels[worst]]
                    continue
                new[j] = X[worst]
                err[worst] = 0.0
        shift = float(np.max(np.sqrt(((new - centers) ** 2).sum(axis=1))))
        centers = new
        if shift < tol * rms:
            break

    if _objective(X, centers) < best_obj:
        best = centers
    return best.astype(np.float32)


def encode(S, C) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-entry codes for ``S`` and the looked-up reconstruction."""
    V = _as_vectors(S)
    C = np.asarray(C)
    codes, _ = nearest(V, C)
    return codes, C[codes]


def lookup(C, codes) -> np.ndarray:
    """Decode an ``(M, G)`` code array into an ``(M, G*d)`` float64 matrix."""
    C = np.asarray(C, dtype=np.float64)
    codes = np.asarray(codes)
    M, G = codes.shape
    return C[codes].reshape(M, G * C.shape[1])


def reconstruct(codebooks, codes) -> np.ndarray:
    """Additive decode of a multi-codebook code set (float64, reordered column space)."""
    out = lookup(codebooks[0], codes[0])
    for C, q in zip(codebooks[1:], codes[1:]):
        if q.shape[1] == 0:
            continue
        width = q.shape[1] * np.asarray(C).shape[1]
        out[:, :width] += lookup(C, q)
    return out


def residual_fit(W_target, W_current, e: int, d: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Fit one extra codebook to ``W_target - W_current``.

    Returns the codebook and an ``(M, G)`` code array for the region.
    """
    T = np.asarray(W_target, dtype=np.float64)
    Cur = np.asarray(W_current, dtype=np.float64)
    if T.shape != Cur.shape:
        raise DimMismatch(f"target shape {T.shape} != current shape {Cur.shape}")
    E = T - Cur
    S = partition(E, d)
    C = kmeans_codebook(S, e, seed, init_zero=True)
    codes, _ = encode(S, C)
    M, N = E.shape
    return C, codes.reshape(M, N // d)


def _rank_candidates(cand, err):
    # order by error, then lexicographically by code tuple (first codebook most significant)
    m = cand.shape[-1]
    keys = [cand[..., t] for t in range(m - 1, -1, -1)] + [err]
    return np.lexsort(keys, axis=-1)


def beam_reassign(W_region, codebooks, codes, beam_width: int = 1, max_passes: int = 8) -> list:
    """Jointly re-select codes of several codebooks covering the same region.

    ``codes`` is a list of ``(M, G)`` arrays, one per codebook, all over
    ``W_region``. Each step fixes all codebooks but one and tries every
    entry of the free one for every beam member; the best ``beam_width``
    distinct code tuples (by error, then lexicographic codes) survive.
    With ``beam_width=1`` this is cyclic coordinate descent. Passes repeat
    until the best tuple stops changing or ``max_passes`` is hit.
    """
    W_region = np.asarray(W_region, dtype=np.float64)
    m = len(codebooks)
    if len(codes) != m:
        raise DimMismatch(f"{m} codebooks but {len(codes)} code arrays")
    M, N = W_region.shape
    d = np.asarray(codebooks[0]).shape[1]
    if N % d != 0:
        raise DimMismatch(f"N not divisible by d (N={N}, d={d})")
    G = N // d
    for q in codes:
        if q.shape != (M, G):
            raise DimMismatch(f"code array shape {q.shape} != {(M, G)}")
    if M * G == 0:
        return [np.asarray(q).copy() for q in codes]
    k = np.asarray(codebooks[0]).shape[0]
    Cs = [np.asarray(C, dtype=np.float64) for C in codebooks]
    V = W_region.reshape(M * G, d)
    K = V.shape[0]
    beams = np.stack([np.asarray(q).reshape(-1) for q in codes], axis=1)[:, None, :].astype(np.int64)

    best = beams[:, 0, :].copy()
    step = max(1, _CHUNK_ELEMS // max(1, beam_width * k * max(d, m)))
    for _ in range(max_passes):
        for t in range(m):
            out = np.empty((K, min(beam_width, beams.shape[1] * k), m), dtype=np.int64)
            for s in range(0, K, step):
                b = beams[s:s + step]
                n, B = b.shape[:2]
                cand = np.repeat(b[:, :, None, :], k, axis=2)
                cand[..., t] = np.arange(k)
                cand = cand.reshape(n, B * k, m)
                err = _errors_chunk(V[s:s + step], Cs, cand)
                order = _rank_candidates(cand, err)
                cand_s = np.take_along_axis(cand, order[:, :, None], axis=1)
                dup = np.zeros(order.shape, dtype=bool)
                dup[:, 1:] = np.all(cand_s[:, 1:] == cand_s[:, :-1], axis=-1)
                if dup.any():
                    err_s = np.where(dup, np.inf, np.take_along_axis(err, order, axis=1))
                    order = np.take_along_axis(order, _rank_candidates(cand_s, err_s), axis=1)
                keep = order[:, :out.shape[1]]
                out[s:s + step] = np.take_along_axis(cand, keep[:, :, None], axis=1)
            beams = out
        new_best = beams[:, 0, :]
        if np.array_equal(new_best, best):
            break
        best = new_best.copy()

    best = beams[:, 0, :]
    return [best[:, t].reshape(M, G).copy() for t in range(m)]


def _errors_chunk(V, Cs, Q):
    recon = Cs[0][Q[..., 0]]
    for t in range(1, len(Cs)):
        recon = recon + Cs[t][Q[..., t]]
    diff = V[:, None, :] - recon
    return (diff * diff).sum(axis=-1)


# -- layer proxy loss -------------------------------------------------------


def gram_of(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X @ X.T


def proxy_loss(W, W_hat, gram) -> float:
    """``||W X - W_hat X||_F^2`` computed from the Gram matrix ``X X^T``."""
    D = np.asarray(W, dtype=np.float64) - np.asarray(W_hat, dtype=np.float64)
    return float(np.sum((D @ gram) * D))


def proxy_loss_grad(W, gram, codebooks, codes) -> tuple[float, list]:
    """Proxy loss and its gradient with respect to every codebook entry."""
    W = np.asarray(W, dtype=np.float64)
    W_hat = reconstruct(codebooks, codes)
    D = W - W_hat
    DG = D @ gram
    loss = float(np.sum(DG * D))
    dW = -2.0 * DG
    grads = []
    for C, q in zip(codebooks, codes):
        C = np.asarray(C)
        k, d = C.shape
        M, G = q.shape
        g = np.zeros((k, d), dtype=np.float64)
        if G:
            blocks = dW[:, :G * d].reshape(M * G, d)
            flat = q.reshape(-1)
            for j in range(d):
                g[:, j] = np.bincount(flat, weights=blocks[:, j], minlength=k)
        grads.append(g)
    return loss, grads


def _check_gram(gram):
    if not np.any(gram) or float(np.trace(gram)) <= 0.0:
        raise DegenerateCalibration("calibration Gram matrix X X^T is zero")


def finetune_codebooks(W, X, codebooks, codes, epsilon: float = 0.0, max_iters: int = 25, *,
                       gram=None, lr: float = 1e-4, beta1: float = 0.90, beta2: float = 0.95,
                       eps_adam: float = 1e-8, max_backtracks: int = 12) -> tuple[list, list]:
    """Adam-style updates of the codebooks against the proxy loss, codes frozen.

    Steps that would raise the loss are halved until they do not; if no
    decreasing step is found the run stops early. Entries are kept at
    float32 precision. Returns ``(codebooks, loss_trace)`` where
    ``loss_trace[0]`` is the starting loss.
    """
    if gram is None:
        gram = gram_of(X)
    gram = np.asarray(gram, dtype=np.float64)
    _check_gram(gram)
    W = np.asarray(W, dtype=np.float64)
    params = [np.asarray(C, dtype=np.float32) for C in codebooks]
    loss, grads = proxy_loss_grad(W, gram, params, codes)
    trace = [loss]
    m1 = [np.zeros_like(g) for g in grads]
    m2 = [np.zeros_like(g) for g in grads]
    for it in range(1, max_iters + 1):
        if loss < epsilon or loss == 0.0:
            break
        if it > 1:
            loss, grads = proxy_loss_grad(W, gram, params, codes)
        steps = []
        for i, g in enumerate(grads):
            m1[i] = beta1 * m1[i] + (1 - beta1) * g
            m2[i] = beta2 * m2[i] + (1 - beta2) * g * g
            mhat = m1[i] / (1 - beta1 ** it)
            vhat = m2[i] / (1 - beta2 ** it)
            steps.append(lr * mhat / (np.sqrt(vhat) + eps_adam))
        scale = 1.0
        accepted = None
        for _ in range(max_backtracks):
            cand = [(p.astype(np.float64) - scale * s).astype(np.float32) for p, s in zip(params, steps)]
            new_loss = proxy_loss(W, reconstruct(cand, codes), gram)
            if new_loss <= loss:
                accepted = cand
                break
            scale *= 0.5
        if accepted is None:
            break
        params = accepted
        loss = new_loss
        trace.append(loss)
    return params, trace
