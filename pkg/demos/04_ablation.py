"""Small ablation over the important-channel ratio and the ordering metric.

Uses the same seed for every configuration of a layer so that differences
come from the configuration, not from k-means initialisation. Takes about
ten seconds.
"""

import numpy as np

from crvq import CalibrationSet, QuantConfig, quantize_layer

layers = []
for seed in range(3):
    rng = np.random.default_rng(100 + seed)
    W = (rng.standard_normal((128, 128)) * rng.lognormal(0.0, 1.0, 128)).astype(np.float32)
    layers.append((seed, W, CalibrationSet(X=rng.standard_normal((128, 128)))))

print("lambda sweep, 1 basic + 3 extended codebooks, W-A ordering")
print("layer  " + "  ".join(f"lam={lam:<5}" for lam in (0.0, 0.02, 0.1)))
for seed, W, calib in layers:
    base = QuantConfig(d=8, e=6, m=4, seed=seed)
    losses = [quantize_layer(W, calib, base.with_(lam=lam))[1].proxy_loss_final for lam in (0.0, 0.02, 0.1)]
    print(f"{seed:<7}" + "  ".join(f"{x:9.1f}" for x in losses))

# The ordering decides which columns get the extended codebooks. W-A scores
# a column by its quantization error times its activation energy; W-only
# looks at weight magnitude; random ignores both.
print("\nordering metric at lambda=0.02")
for seed, W, calib in layers:
    cfg = QuantConfig(d=8, e=6, m=4, lam=0.02, seed=seed)
    row = {m: quantize_layer(W, calib, cfg.with_(importance_metric=m))[1].proxy_loss_final
           for m in ("wa", "wonly", "random")}
    print(f"layer {seed}: " + "  ".join(f"{k}={v:.1f}" for k, v in row.items()))
