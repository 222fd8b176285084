# %% [markdown]
# # Synthetic fixture data
#
# Builds the data files shipped under `data/fixture/`.  Everything is seeded,
# so running this again rewrites identical files.
#
# * a 1128-month decile panel (192607 to 202006) in the French library layout,
#   generated with gamma = 0.0045, mu = 0.0069, rho = 0.052 against decile 1
# * a 194-month fund file with alpha = 0, beta_small = 1.27, beta_mid = 1.15

# %%
from pathlib import Path

import numpy as np

from capmsize.synthetic import generate_funds, generate_panel, write_fixture, write_funds_csv
from capmsize.returns import month_range

OUT = Path(__file__).resolve().parent.parent / "data" / "fixture"

# %%
syn = generate_panel(0.0045, 0.0069, 0.052, benchmark="top", seed=2020)
paths = write_fixture(syn, OUT)
for p in paths.values():
    print(p)

# %% [markdown]
# Funds: July 2004 to August 2020.  The rate column is a flat 1.5% with a
# little noise, in percent per annum.

# %%
months = month_range(200407, 202008)
p_small, p_mid, p_large = generate_funds(len(months), seed=2004)
rates = np.round(1.5 + 0.2 * np.random.default_rng(7).standard_normal(len(months)), 4)
write_funds_csv(OUT / "funds.csv", months, p_small, p_mid, p_large, rates)
print(OUT / "funds.csv", len(months))
