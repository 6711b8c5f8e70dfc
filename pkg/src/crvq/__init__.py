"""Channel-relaxed vector quantization (CRVQ) of weight matrices.

A small subset of important input channels is moved to the front of the
matrix and coded with extra additive codebooks on top of a basic VQ
codebook shared by all channels.
"""

from .bitbudget import BitReport, avg_bits_crvq, avg_bits_vq, sweep
from .errors import CRVQError
from .importance import (ChannelPermutation, apply_permutation, build_permutation, importance_random,
                         importance_wa, importance_wonly)
from .layer import CalibrationSet, Metric, QuantConfig, QuantizedLayer
from .pipeline import QuantReport, decode_layer, quantize_dir, quantize_layer
from .tensorio import load_matrix, load_quantized, save_matrix, save_quantized
from .vqcore import (beam_reassign, encode, finetune_codebooks, kmeans_codebook, partition, proxy_loss,
                     residual_fit)

__version__ = "0.1.0"
