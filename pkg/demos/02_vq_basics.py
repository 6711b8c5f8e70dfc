"""Vector quantization of one matrix, step by step.

Splits a weight matrix into 8-dimensional row segments, learns a codebook
with k-means, encodes, then shows how residual codebooks and fine-tuning
reduce the error.
"""

import numpy as np

from crvq import encode, finetune_codebooks, kmeans_codebook, partition, proxy_loss, residual_fit
from crvq.vqcore import gram_of, reconstruct

rng = np.random.default_rng(0)
W = rng.standard_normal((64, 128)).astype(np.float32)
X = rng.standard_normal((128, 256))          # calibration activations, one row per input channel
G = gram_of(X)

S = partition(W, 8)
print("vectors:", S.vectors.shape)           # (64 * 16, 8)

C = kmeans_codebook(S, e=6, seed=1)          # 64 entries
codes, recon = encode(S, C)
codes = codes.reshape(64, -1)
W1 = reconstruct([C], [codes])
print(f"one codebook     rel. Frobenius error {np.linalg.norm(W - W1) / np.linalg.norm(W):.4f}")

# A second codebook fitted to what the first one missed. Reconstruction is
# the sum of one entry from each codebook.
C2, codes2 = residual_fit(W, W1, e=6, d=8, seed=2)
W2 = reconstruct([C, C2], [codes, codes2])
print(f"plus residual    rel. Frobenius error {np.linalg.norm(W - W2) / np.linalg.norm(W):.4f}")

# k-means minimizes the plain weight error. The layer output error
# ||W X - W_hat X||^2 weights channels by activation energy, and the
# fine-tune step moves codebook entries along its gradient.
before = proxy_loss(W, W2, G)
books, trace = finetune_codebooks(W, None, [C, C2], [codes, codes2], max_iters=50, gram=G, lr=1e-3)
after = proxy_loss(W, reconstruct(books, [codes, codes2]), G)
print(f"output-error proxy loss {before:.1f} -> {after:.1f} after {len(trace) - 1} Adam steps")
