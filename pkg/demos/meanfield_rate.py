# coding: utf-8

# # How fast does a particle system approach its mean-field limit?
#
# Drive a small system and a much larger one with the same initial positions
# and Brownian increments, then measure how far particle j drifts from its
# twin. The expected squared supremum should decay like 1/J.

# In[1]:

import numpy as np

from consensus import ConvergenceConfig, DynamicsSpec, TimeGrid, run_convergence_study


# The full desk-scale study (J_inf=32768, M=20, J up to 5120) takes a few
# minutes per core. This notebook uses a reduced version; raise the sizes to
# reproduce the full figure.

# In[2]:

cfg = ConvergenceConfig(
    J_list=(10, 20, 40, 80, 160, 320, 640, 1280),
    J_inf=8192,
    M=8,
    grid=TimeGrid(0.01, 100),
    fit_min_J=40,
)
report = run_convergence_study(cfg, threads=0)
print(f"{'J':>6} {'E_hat':>10} {'stderr':>10}")
for J, E, se in zip(report.J_list, report.E_hat, report.stderr):
    print(f"{J:6d} {E:10.3e} {se:10.1e}")
print(f"fitted slope {report.slope:.3f} (expected about -1), {report.runtime_s:.0f}s")


# Plotting is optional; the table alone shows the halving per doubling of J.

# In[3]:

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    lo, hi = report.band
    J = np.array(report.J_list)
    plt.loglog(J, report.E_hat, "o-", label="CBO on Ackley")
    plt.fill_between(J, np.maximum(lo, 1e-12), hi, alpha=0.3)
    plt.loglog(J, report.E_hat[0] * J[0] / J, "k--", label="1/J")
    plt.xlabel("J")
    plt.legend()
    plt.savefig("meanfield_rate.png", dpi=120)
    print("saved meanfield_rate.png")


# The same machinery works for CBS. In optimization mode the weighted
# covariance drives the noise, and the rate is the same.

# In[4]:

cbs = ConvergenceConfig(
    J_list=(10, 20, 40, 80, 160, 320),
    J_inf=4096, M=6, grid=TimeGrid(0.01, 100), fit_min_J=40,
    spec=DynamicsSpec.cbs(3.0, "optimization"), objective="quadratic",
)
r = run_convergence_study(cbs, threads=0)
print(f"CBS slope {r.slope:.3f}")
