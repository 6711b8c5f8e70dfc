"""Quantize one layer end to end, save it, and load it back.

The layer has heavy-tailed column scales, the situation where granting a few
important channels extra codebooks pays off.
"""

import os
import tempfile

import numpy as np

from crvq import CalibrationSet, QuantConfig, load_quantized, quantize_layer, save_quantized
from crvq.tensorio import file_bits

rng = np.random.default_rng(3)
M, N = 128, 128
W = (rng.standard_normal((M, N)) * rng.lognormal(0.0, 1.0, N)).astype(np.float32)
calib = CalibrationSet(X=rng.standard_normal((N, 128)))

for label, cfg in [
    ("1 basic codebook", QuantConfig(d=8, e=6, m=1, seed=3)),
    ("1 basic + 3 extended on 2%", QuantConfig(d=8, e=6, m=4, lam=0.02, seed=3)),
    ("1 basic + 3 extended on 10%", QuantConfig(d=8, e=6, m=4, lam=0.1, seed=3)),
]:
    layer, report = quantize_layer(W, calib, cfg)
    print(f"{label:<30} proxy loss {report.proxy_loss_final:12.1f}   "
          f"avg bits {report.avg_bits:.4f}   important columns {layer.n_important_cols}")

# The last layer's loss trace, one entry per stage. It never goes up.
print("\nstage trace:")
for stage, loss in report.trace:
    print(f"  {stage:<10}{loss:12.1f}")

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "layer.crvqp")
    save_quantized(layer, path)
    back = load_quantized(path)
    print("\nreloaded decode identical:", np.array_equal(back.decode(), layer.decode()))
    print(f"file size {os.path.getsize(path)} bytes, {file_bits(path) / (M * N):.3f} bits per weight")
