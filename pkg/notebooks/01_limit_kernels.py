# %% [markdown]
# # Reservoir-induced kernels
#
# Random oscillator banks induce Gaussian-process priors over impulse
# responses.  Here we compare sampled second moments with the closed-form
# limit kernels and look at how the normalized HqW features approach the
# deep-kernel reference as the reservoir grows.

# %%
import numpy as np

from qwiener.bench import hqw_features
from qwiener.kernels import (KernelFunction, double_convolution, normalize_features,
                             quantum_limit_kernel, tc_kernel)
from qwiener.plotting import emit_plot
from qwiener.reservoirs import HqWConfig, sample_hqw_params

# %% [markdown]
# ## Diagonal of the quantum limit kernel against Monte Carlo

# %%
cfg = HqWConfig(n_c=20_000, d=1, a_m=0.5, a_M=4.0, kappa=2.0)
bank = sample_hqw_params(cfg, np.random.default_rng(0))[0]
t = np.linspace(0.0, 3.0, 61)
a2, w = bank.alpha_sq[:, None], bank.omega[:, None]
g = a2 * np.exp(-0.5 * a2 * t) * (-bank.s1[:, None] * np.cos(w * t)
                                  + bank.s2[:, None] * np.sin(w * t))
empirical = g.var(axis=0)
limit = quantum_limit_kernel(t, t, cfg.a_m, cfg.a_M, cfg.kappa)
print("max abs gap:", np.max(np.abs(empirical - limit)))
emit_plot({"Monte Carlo": empirical, "limit": limit}, None, "kernel_diagonal.svg",
          title="K(t, t)", x=t)

# %% [markdown]
# ## TC and quantum kernels share the slow tail
#
# The ratio settles as t grows, even though the two closed forms differ
# by polynomial prefactors.

# %%
tau = np.linspace(0.5, 10, 40)
ratio = quantum_limit_kernel(tau, tau, 1, 2, 0.0) / tc_kernel(tau, tau, 1, 2)
emit_plot({"ratio": ratio}, None, "kernel_ratio.svg", title="quantum / TC", x=tau)

# %% [markdown]
# ## Feature inner products approach the double convolution

# %%
dt = 0.01
u = np.random.default_rng(1).uniform(0, 1, 100)
base = KernelFunction("quantum-tc", {"a_m": 0.01, "a_M": 20.0, "kappa": 1.0})
ref = double_convolution(lambda a, b: base(a, b), u, 1.0, 0.6, dt, refine=8)
for r in (16, 64, 256):
    errs = []
    for s in range(10):
        banks = sample_hqw_params(HqWConfig(n_c=r, d=r), np.random.default_rng([r, s]))
        Y = normalize_features(hqw_features(banks, u, dt, gain=1.0).T, r)
        errs.append(abs(Y[:, 99] @ Y[:, 59] - ref))
    print(r, np.mean(errs))
