# coding: utf-8

# # Auditing the stability estimates
#
# The mean-field argument leans on a handful of inequalities: weighted moments
# are Lipschitz in Wasserstein distance on bounded-moment sets, matrix square
# roots are Hölder continuous, and large excursions of empirical moments are
# rare. None of them come with computable sharp constants, but they can be
# stress-tested.

# In[1]:

from consensus import analysis as A
from consensus import get_objective

f = get_objective("quadratic", 2)


# Weighted mean versus W_1: each trial climbs the ratio
# |M_β(μ) - M_β(ν)| / W_1(μ, ν) with an evolution strategy, starting from a
# measure on the boundary of the moment ball of radius R=5. If the ratio is
# bounded, the running maximum plateaus as trials increase.

# In[2]:

r = A.stability_stress_mean(f, beta=1.0, p=1.0, R=5.0, trials=2000, seed=0)
for n in (100, 500, 1000, 2000):
    print(f"{n:5d} trials  max ratio {r.max_over_first(n):.3f}")


# Matrix square roots: both inequalities are checked on random PSD pairs,
# including near-singular ones.

# In[3]:

report = A.matrix_inequality_checks(trials=2000, dims=(2, 3, 5))
for a in report.audits:
    print(f"{a.name:16s} d={a.dim}  violations={a.violations}  max ratio={a.max_ratio:.4f}")


# Excursions: the probability that the empirical second moment of J standard
# normals exceeds 3 falls off sharply with J.

# In[4]:

ex = A.excursion_probability(lambda rng, n: rng.standard_normal(n), 2.0, 3.0, [5, 10, 20, 40], 20_000)
for J, P in zip(ex.J_list, ex.probabilities):
    print(f"J={J:3d}  P={P:.5f}")


# Finally the CBS covariance does not collapse faster than e^(-2t).

# In[5]:

from consensus import InitSpec, TimeGrid

nc = A.run_no_collapse(f, 1.0, 4096, TimeGrid(0.01, 100), InitSpec.standard_normal(2), seed=0)
print(f"min margin {nc.margin.min():.3f} (needs >= 0.85), covariance ODE residual {nc.residual.max():.3f}")
