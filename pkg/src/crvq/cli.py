"""Command-line front end: ``crvq {quantize,decode,inspect,bits,ablate}``.

Exit codes: 0 success, 1 validation error, 2 partial failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import bitbudget, tensorio
from .errors import ConfigError, CRVQError, DimMismatch
from .layer import QuantConfig
from .pipeline import _resolve_calibration, list_layers, quantize_dir, quantize_layer

EXIT_OK, EXIT_VALIDATION, EXIT_PARTIAL, EXIT_IO = 0, 1, 2, 3

# config-file key -> argparse dest
CONFIG_KEYS = {
    "d": "d", "e": "e", "codebooks": "codebooks", "lambda": "lam", "metric": "metric",
    "seed": "seed", "epsilon": "epsilon", "beam_width": "beam_width", "beam-width": "beam_width",
    "calib": "calib", "jobs": "jobs", "max_outer_iters": "max_outer_iters",
    "max-outer-iters": "max_outer_iters", "finetune_steps": "finetune_steps",
    "finetune-steps": "finetune_steps", "reorder": "reorder", "lr": "lr",
}


class UsageError(Exception):
    pass


def read_config_file(path) -> dict:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[CONFIG_KEYS[key]] = value
    return out


def _int_list(text):
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _float_list(text):
    return [float(p) for p in str(text).split(",") if p.strip()]


def _default_seed():
    raw = os.environ.get("CRVQ_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CRVQ_SEED must be an integer, got {raw!r}") from None


def _add_quant_flags(p):
    p.add_argument("--config", help="key=value file; flags given on the command line win")
    p.add_argument("--d", type=int)
    p.add_argument("--e", type=int)
    p.add_argument("--codebooks", type=int, help="total codebook count m (1 basic + m-1 extended)")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--metric", choices=["wa", "wonly", "random"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--max-outer-iters", dest="max_outer_iters", type=int)
    p.add_argument("--finetune-steps", dest="finetune_steps", type=int)
    p.add_argument("--reorder", choices=["front", "full"])
    p.add_argument("--lr", type=float)
    p.add_argument("--calib", help="'synthetic', an activation file, or a directory of them")
    p.add_argument("--jobs", type=int)


_QUANT_DEFAULTS = {
    "d": 8, "e": 8, "codebooks": 1, "lam": 0.0, "metric": "wa", "seed": None, "epsilon": 0.0,
    "beam_width": 1, "max_outer_iters": 4, "finetune_steps": 25, "reorder": "front", "lr": 1e-4,
    "calib": "synthetic", "jobs": 1,
}
_TYPES = {"d": int, "e": int, "codebooks": int, "lam": float, "seed": int, "epsilon": float,
          "beam_width": int, "max_outer_iters": int, "finetune_steps": int, "lr": float, "jobs": int}


def _resolve_quant_args(args) -> tuple[QuantConfig, str, int]:
    values = dict(_QUANT_DEFAULTS)
    if args.config:
        for k, v in read_config_file(args.config).items():
            try:
                values[k] = _TYPES[k](v) if k in _TYPES else v
            except ValueError:
                raise UsageError(f"{args.config}: bad value {v!r} for {k}") from None
    for k in _QUANT_DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if values["seed"] is None:
        values["seed"] = _default_seed()
    if values["jobs"] < 1:
        raise UsageError("--jobs must be positive")
    try:
        cfg = QuantConfig(d=values["d"], e=values["e"], m=values["codebooks"], lam=values["lam"],
                          importance_metric=values["metric"], seed=values["seed"],
                          epsilon=values["epsilon"], beam_width=values["beam_width"],
                          max_outer_iters=values["max_outer_iters"],
                          finetune_steps=values["finetune_steps"], reorder=values["reorder"],
                          lr=values["lr"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return cfg, values["calib"], values["jobs"]


def cmd_quantize(args, out, err) -> int:
    cfg, calib, jobs = _resolve_quant_args(args)
    if not os.path.isdir(args.input_dir):
        print(f"error: input directory {args.input_dir!r} not found", file=err)
        return EXIT_IO
    try:
        summary = quantize_dir(args.input_dir, args.output_dir, cfg, jobs, calib=calib)
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IO
    for r in summary["errors"]:
        print(f"error: {r['file']}: {r['error']}", file=err)
    n_ok, n_bad = len(summary["layers"]), len(summary["errors"])
    print(f"quantized {n_ok} layer(s), {n_bad} failed -> {args.output_dir}", file=out)
    if not n_bad:
        return EXIT_OK
    if n_ok:
        return EXIT_PARTIAL
    validation = all(r["error"].split(":", 1)[0] in ("DimMismatch", "ConfigError", "DegenerateCalibration")
                     for r in summary["errors"])
    return EXIT_VALIDATION if validation else EXIT_IO


def cmd_decode(args, out, err) -> int:
    layer = tensorio.load_quantized(args.artifact)
    W_hat = layer.decode()
    tensorio.save_matrix(W_hat, args.output)
    result = {"output": args.output, "M": layer.dims[0], "N": layer.dims[1]}
    if args.reference:
        W = tensorio.load_matrix(args.reference)
        if W.shape != W_hat.shape:
            raise DimMismatch(f"reference shape {W.shape} != decoded shape {W_hat.shape}")
        diff = W.astype(np.float64) - W_hat.astype(np.float64)
        result["frobenius_error"] = float(np.sqrt(np.sum(diff * diff)))
    print(json.dumps(result, sort_keys=True), file=out)
    return EXIT_OK


def _entropy_bits(codes, k):
    counts = np.bincount(np.asarray(codes).reshape(-1), minlength=k).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def inspect_layer(path) -> dict:
    layer = tensorio.load_quantized(path)
    cfg = layer.config
    M, N = layer.dims
    measured = tensorio.file_bits(path) / (M * N)
    predicted = bitbudget.avg_bits_crvq(M, N, cfg.m, cfg.d, cfg.e, layer.n_important_cols / N,
                                        value_bits=32, index_bits=32)
    fp16 = bitbudget.avg_bits_crvq(M, N, cfg.m, cfg.d, cfg.e, layer.n_important_cols / N)
    books = []
    for t, (C, q) in enumerate(zip(layer.codebooks, layer.codes)):
        norms = np.linalg.norm(np.asarray(C, dtype=np.float64), axis=1)
        books.append({
            "index": t,
            "kind": "basic" if t == 0 else "extended",
            "entries": int(C.shape[0]),
            "codes": int(q.size),
            "norm_mean": float(norms.mean()),
            "norm_max": float(norms.max()),
            "code_entropy_bits": _entropy_bits(q, C.shape[0]),
        })
    return {
        "file": os.path.basename(path),
        "M": M, "N": N, "d": cfg.d, "e": cfg.e, "m": cfg.m, "seed": cfg.seed,
        "n_important_cols": layer.n_important_cols,
        "measured_bits_per_weight": measured,
        "predicted_bits_per_weight_on_disk": predicted.avg_bits,
        "predicted_bits_per_weight_fp16": fp16.avg_bits,
        "codebooks": books,
    }


def cmd_inspect(args, out, err) -> int:
    print(json.dumps(inspect_layer(args.artifact), indent=2, sort_keys=True), file=out)
    return EXIT_OK


def cmd_bits(args, out, err) -> int:
    lams = _float_list(args.lam)
    for lam in lams:
        if not 0.0 <= lam <= 1.0:
            raise UsageError(f"lambda must lie in [0, 1], got {lam}")
    index_bits = 16 if args.index_bits is None else args.index_bits
    kwargs = {"value_bits": args.value_bits, "index_bits": index_bits}
    try:
        if args.sweep:
            rows = bitbudget.sweep(args.M, args.N, args.codebooks, _int_list(args.d),
                                   _int_list(args.e), lams, **kwargs)
            out.write(bitbudget.to_csv(rows))
            return EXIT_OK
        ds, es = _int_list(args.d), _int_list(args.e)
        if len(ds) != 1 or len(es) != 1 or len(lams) != 1:
            raise UsageError("lists and ranges need --sweep")
        if lams[0] == 0.0 and args.index_bits is None:
            rep = bitbudget.avg_bits_vq(args.M, args.N, args.codebooks, ds[0], es[0],
                                        value_bits=args.value_bits)
        else:
            rep = bitbudget.avg_bits_crvq(args.M, args.N, args.codebooks, ds[0], es[0], lams[0], **kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(json.dumps(rep.to_dict(), sort_keys=True), file=out)
    return EXIT_OK


ABLATE_HEADER = ["file", "lambda", "m", "metric", "proxy_loss", "frobenius_error", "avg_bits"]


def cmd_ablate(args, out, err) -> int:
    cfg, calib, _ = _resolve_quant_args(args)
    if not os.path.isdir(args.input_dir):
        print(f"error: input directory {args.input_dir!r} not found", file=err)
        return EXIT_IO
    lams = _float_list(args.lambdas)
    ms = _int_list(args.ms)
    metrics = [s.strip() for s in args.metrics.split(",") if s.strip()]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATE_HEADER)
    failures = 0
    for name in list_layers(args.input_dir):
        try:
            W = tensorio.load_matrix(os.path.join(args.input_dir, name))
            cal = _resolve_calibration(calib, name)
        except (CRVQError, OSError) as exc:
            print(f"error: {name}: {type(exc).__name__}: {exc}", file=err)
            failures += 1
            continue
        for lam in lams:
            for m in ms:
                for metric in metrics:
                    try:
                        run = cfg.with_(lam=lam, m=m, importance_metric=metric)
                        _, rep = quantize_layer(W, cal, run)
                    except (CRVQError, ValueError) as exc:
                        print(f"error: {name} lambda={lam} m={m} metric={metric}: {exc}", file=err)
                        failures += 1
                        continue
                    writer.writerow([name, repr(lam), m, metric, repr(rep.proxy_loss_final),
                                     repr(rep.frobenius_error), repr(rep.avg_bits)])
    text = buf.getvalue()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_PARTIAL if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crvq", description="Channel-relaxed vector quantization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize every *.crvqt matrix in a directory")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    _add_quant_flags(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("decode", help="decode a .crvqp artifact back to a dense matrix")
    p.add_argument("artifact")
    p.add_argument("output")
    p.add_argument("--reference", help="original matrix; prints the Frobenius error")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("inspect", help="print header, bit usage and codebook statistics")
    p.add_argument("artifact")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bits", help="average bits per weight, or a CSV sweep")
    p.add_argument("--M", type=int, default=4096)
    p.add_argument("--N", type=int, default=4096)
    p.add_argument("--codebooks", type=int, default=1)
    p.add_argument("--d", default="8", help="value, list '4,8,16' or range '4..16' (lists need --sweep)")
    p.add_argument("--e", default="8")
    p.add_argument("--lambda", dest="lam", default="0")
    p.add_argument("--value-bits", dest="value_bits", type=int, default=16)
    p.add_argument("--index-bits", dest="index_bits", type=int,
                   help="bits per stored permutation index (default 16; with lambda 0 and no "
                        "value given, plain VQ accounting without a permutation)")
    p.add_argument("--sweep", action="store_true")
    p.set_defaults(func=cmd_bits)

    p = sub.add_parser("ablate", help="grid of (lambda, m, metric) over a layer directory, CSV out")
    p.add_argument("input_dir")
    p.add_argument("--lambdas", default="0,0.02,0.1")
    p.add_argument("--ms", default="1,2,4")
    p.add_argument("--metrics", default="wa")
    p.add_argument("--output", "-o")
    _add_quant_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    try:
        return args.func(args, out, err)
    except (UsageError, ConfigError, DimMismatch) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_VALIDATION
    except CRVQError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_IO


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
