"""A small simulation study, the bootstrap-count sensitivity check, and the
overlay of an observed gamma on simulated true-gamma bands.

The desk-scale study in the acceptance tests uses 20 replicates per cell and
50 bootstraps; this script is cut down to run in about a minute.
"""
# %%
import tempfile

from kselect.harness import (bootstrap_sensitivity, emit_overlay, emit_report, run_validation,
                             separation_band, true_gamma_reference)
from kselect.popsim import SimConfig, preset_separation, simulate_markers
from kselect.selector import SelectionConfig

out = tempfile.mkdtemp(prefix="kselect_")
summary = run_validation(reps=3, k_set=(1, 3), presets=("LOW", "HIGH"),
                         cfg=SelectionConfig(k_max=5, n_boot=10), seed=0)
print(summary.to_table())
emit_report(summary, out)

# %%
# Selection at increasing bootstrap counts reuses the replicates of the
# largest run, so each level is a prefix of the same experiment.
m = simulate_markers(SimConfig(n_clusters=3, separation=preset_separation("MED"), seed=5)).markers
sens = bootstrap_sensitivity(m, (10, 20, 40), SelectionConfig(k_max=6))
print(sens.to_table())

# %%
# Where would an observed gamma of 0.816 at k=6 sit among simulated data?
ref = true_gamma_reference(k_set=(2, 3, 6), reps=8)
print("band:", separation_band(0.816, 6, ref))
for path in emit_overlay(ref, [("observed", 6, 0.816)], out):
    print("wrote", path)
