"""Learning feedforward on the noisy truth model with three ILC schemes.

Gains are tuned by line search, so this takes roughly 20 seconds.
Run: python3 demos/03_ilc_benchmark.py
"""

from pwainv.printhead import run_benchmark

results = run_benchmark()
print("gains:", results.gains)
print(f"{'scenario':18s} {'NRMSE':>10s} {'peak [um]':>10s}")
for row in results.table:
    print(f"{row['scenario']:18s} {row['nrmse']:10.2e} {row['peak'] * 1e6:10.2f}")
for scheme, curve in results.trials.items():
    print(f"{scheme:9s}", " ".join(f"{n:.1e}" for n, _ in curve))
