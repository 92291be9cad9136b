"""Why the printhead needs stable inversion, and what the pads buy.

Run: python3 demos/02_stable_inversion_printhead.py
"""

import numpy as np

from pwainv.printhead import Benchmark, ReferenceConfig, control_reference, make_reference, padded_self_inversion
from pwainv.stable import naive_forward_propagation, settling_samples

bench = Benchmark()
dec = bench.inverter.dec
print(f"inverse has {dec.n_s} stable and {dec.n_u} unstable modes; unstable eigenvalues {dec.unstable_eigs[(0, 0)]}")

naive = naive_forward_propagation(bench.inverse, bench.r)
print(f"plain forward propagation: |x| reaches {naive.max_state_norm:.2e} by step {naive.diverged_at}")

pad = settling_samples(dec)
si = padded_self_inversion(bench, pad, pad)
print(f"stable inversion with {pad}-sample pads: NRMSE {si.nrmse:.2e}, peak {si.peak * 1e9:.2f} nm")
print(f"largest state norm {np.max(np.linalg.norm(si.result.x.values, axis=1)):.3g}")

# A move that starts and ends at the horizon edges leaves the boundary conditions to the pads.
edge = control_reference(make_reference(ReferenceConfig(start_frac=0.0, stop_frac=1.0))).values
print("pad  chi_u(0)   chi_s(end)  NRMSE")
for p in (0, pad // 2, pad, 2 * pad):
    run = padded_self_inversion(bench, p, p, edge)
    rep = run.result.report
    print(f"{p:3d}  {rep['chi_u_initial_norm']:.2e}  {rep['chi_s_terminal_norm']:.2e}  {run.nrmse:.2e}")
