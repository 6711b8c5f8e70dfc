"""Layer-level channel-relaxed quantization and directory batch driver."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorio
from .bitbudget import avg_bits_crvq
from .errors import CRVQError, DegenerateCalibration, DimMismatch
from .importance import (apply_permutation, build_permutation, importance_random, importance_wa,
                         importance_wonly, permute_gram)
from .layer import CalibrationSet, Metric, QuantConfig, QuantizedLayer
from .vqcore import (beam_reassign, encode, finetune_codebooks, kmeans_codebook, partition,
                     proxy_loss, reconstruct, residual_fit)

log = logging.getLogger(__name__)

INPUT_SUFFIX = ".crvqt"
OUTPUT_SUFFIX = ".crvqp"
SUMMARY_NAME = "summary.json"

# stage tags for derived seeds
PREQUANT, RANDOM_ORDER, BASE = 0, 1, 2


def stage_seed(seed: int, tag: int, index: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), tag, index])


@dataclass
class QuantReport:
    proxy_loss_initial: float
    proxy_loss_final: float
    frobenius_error: float
    avg_bits: float
    iterations_used: int
    trace: list = field(default_factory=list)  # (stage, proxy loss) pairs

    def to_dict(self) -> dict:
        return asdict(self)


def _as_f32(codebooks):
    return [np.asarray(C, dtype=np.float32) for C in codebooks]


def prequantize(W, d: int, e: int, seed: int) -> np.ndarray:
    """Single-codebook VQ reconstruction of ``W`` used to score channels."""
    S = partition(W, d)
    C = kmeans_codebook(S, e, stage_seed(seed, PREQUANT))
    _, recon = encode(S, C)
    return recon.reshape(np.shape(W)).astype(np.float64)


def channel_scores(W, gram, cfg: QuantConfig) -> np.ndarray:
    metric = cfg.importance_metric
    if metric is Metric.WA:
        W_pre = prequantize(W, cfg.d, cfg.e, cfg.seed)
        return importance_wa(W, W_pre, gram, inverse=cfg.inverse_importance)
    if metric is Metric.WONLY:
        return importance_wonly(W)
    return importance_random(np.shape(W)[1], stage_seed(cfg.seed, RANDOM_ORDER))


class _State:
    """Mutable working copy of codebooks and codes in reordered space."""

    def __init__(self, W, gram, codebooks, codes):
        self.W = W
        self.gram = gram
        self.codebooks = _as_f32(codebooks)
        self.codes = codes

    def recon(self, codebooks=None, codes=None):
        return reconstruct(codebooks or self.codebooks, codes or self.codes).astype(np.float32)

    def loss(self, codebooks=None, codes=None):
        return proxy_loss(self.W, self.recon(codebooks, codes), self.gram)


def quantize_layer(W, calib: CalibrationSet | None, cfg: QuantConfig) -> tuple[QuantizedLayer, QuantReport]:
    """Quantize one weight matrix.

    Steps: prequantize and score channels, reorder, fit the basic codebook
    on every group, fit ``m - 1`` extended codebooks to the residual of the
    important groups, then alternate codebook fine-tuning and code
    re-assignment. Any stage that would raise the proxy loss is rolled
    back, so the recorded loss trace never increases.
    """
    W = np.asarray(W, dtype=np.float32)
    if W.ndim != 2:
        raise DimMismatch(f"expected a 2-D weight matrix, got shape {W.shape}")
    M, N = W.shape
    d, e, m = cfg.d, cfg.e, cfg.m
    if N % d != 0:
        raise DimMismatch(f"N not divisible by d (N={N}, d={d})")
    if calib is None:
        calib = CalibrationSet.synthetic(N, 4 * d, cfg.seed)
    if calib.n_channels != N:
        raise DimMismatch(f"calibration has {calib.n_channels} channels, weight has N={N}")
    gram = calib.gram
    if float(np.trace(gram)) <= 0.0:
        raise DegenerateCalibration("calibration Gram matrix X X^T is zero")

    scores = channel_scores(W, gram, cfg)
    perm, n_imp = build_permutation(scores, cfg.lam, d, order=cfg.reorder)
    W_r = apply_permutation(W, perm, "forward").astype(np.float64)
    gram_r = permute_gram(gram, perm)
    Gi = n_imp // d

    S = partition(W_r, d)
    C0 = kmeans_codebook(S, e, stage_seed(cfg.seed, BASE))
    q0, _ = encode(S, C0)
    st = _State(W_r, gram_r, [C0], [q0.reshape(M, N // d)])
    loss = st.loss()
    trace = [("base", loss)]

    for t in range(1, m):
        if Gi == 0:
            C, q = np.zeros((1 << e, d), dtype=np.float32), np.zeros((M, 0), dtype=np.int64)
        else:
            current = st.recon()[:, :n_imp]
            C, q = residual_fit(W_r[:, :n_imp], current, e, d, stage_seed(cfg.seed, BASE, t))
        codebooks, codes = st.codebooks + [C], st.codes + [q]
        new = st.loss(codebooks, codes)
        if new > loss:
            log.debug("extended codebook %d raised the proxy loss; zeroed", t)
            codebooks[-1] = np.zeros_like(C)
            new = st.loss(codebooks, codes)
        st.codebooks, st.codes, loss = codebooks, codes, new
        trace.append((f"ext{t}", loss))

    iterations = 0
    while iterations < cfg.max_outer_iters and loss >= cfg.epsilon and loss > 0.0:
        iterations += 1
        before = loss
        if cfg.finetune_steps:
            books, ft = finetune_codebooks(W_r, None, st.codebooks, st.codes, cfg.epsilon,
                                           cfg.finetune_steps, gram=gram_r, lr=cfg.lr)
            new = st.loss(books)
            if new <= loss:
                st.codebooks, loss = _as_f32(books), new
        trace.append((f"finetune{iterations}", loss))

        codes = _reassign(W_r, st.codebooks, st.codes, n_imp, cfg.beam_width)
        new = st.loss(codes=codes)
        if new <= loss:
            st.codes, loss = codes, new
        trace.append((f"beam{iterations}", loss))
        if before > 0 and (before - loss) / before < 1e-4:
            break

    layer = QuantizedLayer(cfg, perm, n_imp, st.codebooks, st.codes, (M, N))
    W_hat = layer.decode()
    diff = W.astype(np.float64) - W_hat.astype(np.float64)
    report = QuantReport(
        proxy_loss_initial=trace[0][1],
        proxy_loss_final=proxy_loss(W, W_hat, gram),
        frobenius_error=float(np.sqrt(np.sum(diff * diff))),
        avg_bits=avg_bits_crvq(M, N, m, d, e, n_imp / N).avg_bits,
        iterations_used=iterations,
        trace=[(name, float(v)) for name, v in trace],
    )
    return layer, report


def _reassign(W_r, codebooks, codes, n_imp, beam_width):
    """Re-select codes: all codebooks jointly on the important region, basic alone elsewhere."""
    d = codebooks[0].shape[1]
    Gi = n_imp // d
    new = [q.copy() for q in codes]
    if Gi < codes[0].shape[1]:
        rest = beam_reassign(W_r[:, n_imp:], [codebooks[0]], [codes[0][:, Gi:]], beam_width)
        new[0][:, Gi:] = rest[0]
    if Gi:
        imp = beam_reassign(W_r[:, :n_imp], codebooks,
                            [codes[0][:, :Gi]] + [q for q in codes[1:]], beam_width)
        new[0][:, :Gi] = imp[0]
        for t in range(1, len(codes)):
            new[t] = imp[t]
    return new


def decode_layer(layer: QuantizedLayer) -> np.ndarray:
    return layer.decode()


# -- directory driver -------------------------------------------------------------


def _resolve_calibration(calib, name):
    if calib is None or isinstance(calib, CalibrationSet):
        return calib
    if calib == "synthetic":
        return None
    if os.path.isdir(calib):
        return tensorio.load_calibration(os.path.join(calib, name))
    return tensorio.load_calibration(calib)


def _quantize_file(args):
    name, input_dir, output_dir, cfg, calib = args
    start = time.perf_counter()
    try:
        W = tensorio.load_matrix(os.path.join(input_dir, name))
        layer, report = quantize_layer(W, _resolve_calibration(calib, name), cfg)
        out_name = name[: -len(INPUT_SUFFIX)] + OUTPUT_SUFFIX
        tensorio.save_quantized(layer, os.path.join(output_dir, out_name))
    except (CRVQError, OSError) as exc:
        return {"file": name, "error": f"{type(exc).__name__}: {exc}"}
    return {
        "file": name,
        "M": layer.dims[0],
        "N": layer.dims[1],
        "avg_bits": report.avg_bits,
        "proxy_loss_initial": report.proxy_loss_initial,
        "proxy_loss_final": report.proxy_loss_final,
        "frobenius_error": report.frobenius_error,
        "seconds": time.perf_counter() - start,
    }


def list_layers(input_dir) -> list[str]:
    return sorted(n for n in os.listdir(input_dir)
                  if n.endswith(INPUT_SUFFIX) and os.path.isfile(os.path.join(input_dir, n)))


def quantize_dir(input_dir, output_dir, cfg: QuantConfig, parallelism: int = 1,
                 calib=None) -> dict:
    """Quantize every ``*.crvqt`` matrix in ``input_dir`` into ``output_dir``.

    Per-file failures are recorded in the summary instead of aborting.
    ``calib`` is ``None``/``"synthetic"``, a CalibrationSet, a single
    activation file, or a directory holding one activation file per layer
    under the same name. The summary is also written as ``summary.json``.
    """
    os.makedirs(output_dir, exist_ok=True)
    names = list_layers(input_dir)
    jobs = [(n, input_dir, output_dir, cfg, calib) for n in names]
    if parallelism > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_quantize_file, jobs))
    else:
        results = [_quantize_file(j) for j in jobs]
    summary = {
        "layers": [r for r in results if "error" not in r],
        "errors": [r for r in results if "error" in r],
    }
    with open(os.path.join(output_dir, SUMMARY_NAME), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
