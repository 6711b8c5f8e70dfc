"""How many bits does a vector-quantized weight cost?

Run with ``python3 demos/01_bit_budget.py``. Nothing is quantized here; the
script only evaluates the storage formulas.
"""

from crvq import avg_bits_crvq, avg_bits_vq, sweep

# A 4096 x 4096 layer stored as 8-dimensional vectors with one 256-entry
# codebook: every 8 weights share one 8-bit code, so codes cost 1 bit per
# weight. The fp16 codebook adds 256 * 8 * 16 bits spread over 16M weights.
rep = avg_bits_vq(4096, 4096, m=1, d=8, e=8)
print("plain VQ, 1 codebook, d=8, e=8")
print(f"  code bits      {rep.code_bits}")
print(f"  codebook bits  {rep.codebook_bits}")
print(f"  total          {rep.avg_bits}")

# Channel relaxation adds three extended codebooks, but only on the 2% most
# important columns (rounded up to a whole 8-column group, 88 columns here),
# and it has to store the column permutation.
rep = avg_bits_crvq(4096, 4096, m=4, d=8, e=8, lam=0.02)
print("\nbasic + 3 extended codebooks on 2% of the columns")
for key, value in rep.to_dict().items():
    if key.endswith("bits"):
        print(f"  {key:<17}{value:.6f}")

# Widening the codes from 12 to 16 bits quickly makes the codebook itself the
# dominant cost: 2**16 entries of 8 fp16 values.
print("\navg bits per weight vs code width (d=8, m=1, no permutation)")
for r in sweep(4096, 4096, 1, [8], range(10, 17), [0.0], index_bits=0):
    bar = "#" * int(r.avg_bits * 20)
    print(f"  e={r.e:2d}  {r.avg_bits:8.5f}  {bar}")
