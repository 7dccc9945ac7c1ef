# %% [markdown]
# # Staggered adoption with heterogeneous effects
#
# Three cohorts adopt at periods 3, 6 and 9; effects grow with time since
# adoption. We compare the group-time estimator with the two-way fixed
# effects regression and look at why the latter goes wrong.

# %%
import numpy as np

from gtdid import (
    BootstrapConfig,
    DgpSpec,
    EffectModel,
    NEVER,
    aggregate_event,
    aggregate_overall,
    att_gt_all,
    bacon_decompose,
    bootstrap_bands,
    generate,
    twfe_estimate,
    twfe_weights,
)

spec = DgpSpec(
    n_units=400,
    periods=(1, 10),
    group_shares={3: 0.6, 6: 0.15, 9: 0.1, NEVER: 0.15},
    effect_model=EffectModel("dynamic", delta=1.0, slope=0.5),
    n_clusters=100,
)
ds, truth = generate(spec, seed=1)
print(ds.n_units, "units,", ds.periods.size, "periods")

# %% [markdown]
# ## Group-time effects
#
# Each cell compares the cohort's change since period g-1 with the change
# among never-treated units.

# %%
table = att_gt_all(ds)
cells = table.to_frame()
cells["truth"] = [truth.att(g, t) for g, t in zip(cells["g"], cells["t"])]
print(cells[["g", "t", "att", "se", "truth"]].head(12).to_string(index=False))

# %% [markdown]
# ## Aggregates with simultaneous bands

# %%
boot = BootstrapConfig(n_draws=999, seed=7)
overall = bootstrap_bands(aggregate_overall(table), boot)
event = bootstrap_bands(aggregate_event(table, (-5, 5)), boot)
print(f"overall {overall['overall']:.3f} (se {overall.se[0]:.3f}), truth {truth.implied['overall']:.3f}")
print(event.to_frame().round(3).to_string(index=False))

# %% [markdown]
# ## What the regression does instead
#
# Early adopters serve as controls for later ones after their own effect has
# started to grow, so some treated cells enter with negative weight.

# %%
twfe = twfe_estimate(ds)
weights = twfe_weights(ds)
print(f"TWFE {twfe.coefficient:.3f} (clustered se {twfe.clustered_se:.3f})")
print(f"share of treated mass with negative weight: {weights.negative_share_weighted:.2f}")

dec = bacon_decompose(ds)
print(dec.by_type().round(3).to_string(index=False))
print(f"weighted sum {dec.weighted_sum():.6f} vs TWFE {dec.twfe_coefficient:.6f}")

# %%
# weight by cohort and event time: the early cohort's late cells go negative
treated = weights.cells[weights.cells["treated"]].copy()
treated["event_time"] = treated["period"] - treated["group"]
print(treated.pivot_table(index="event_time", columns="group", values="weight", aggfunc="sum").round(4))
