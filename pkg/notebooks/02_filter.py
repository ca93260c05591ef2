# %% [markdown]
# # Continuously measured oscillators
#
# Build a small HqW network, confirm it is physically realizable, and
# simulate its homodyne record with and without measurement noise.

# %%
import numpy as np

from qwiener.kalman import simulate_measured, steady_state, vacuum
from qwiener.plotting import emit_plot
from qwiener.qss import check_physical_realizability, is_completely_passive
from qwiener.reservoirs import (HqWConfig, PadeConfig, hqw_io_vectors, hqw_spec, hqw_system,
                                padeqw_blocks, sample_hqw_params)

# %%
bank = sample_hqw_params(HqWConfig(n_c=4, d=1), np.random.default_rng(3))[0]
sys = hqw_system(bank)
print("residuals:", check_physical_realizability(sys))
print("completely passive:", is_completely_passive(hqw_spec(bank)))

# %% [markdown]
# A passive network in vacuum keeps the vacuum covariance and a zero gain.
# An embedded delay block is not passive and its filter gain is not zero.

# %%
V, G = steady_state(sys, vacuum(2 * sys.s))
print("HqW |G| =", np.abs(G).max())
block = padeqw_blocks(PadeConfig(n_blocks=4, step=0.1, offset=0.5))[3]
print("PadeqW |G| =", np.abs(steady_state(block)[1]).max())

# %%
u = 500 * np.random.default_rng(0).integers(0, 2, 300).astype(float)
b, row = hqw_io_vectors(bank.n_c)
clean = simulate_measured(sys, u, 0.01, input_direction=b)
noisy = simulate_measured(sys, u, 0.01, input_direction=b, noise=True,
                          rng=np.random.default_rng(1))
emit_plot({"noisy": noisy.outputs @ row, "mean": clean.outputs @ row}, None,
          "trajectory.svg", title="summed measured output", x=clean.times)
