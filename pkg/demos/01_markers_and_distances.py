"""Marker matrices: missing cells, mean imputation, Manhattan distances and
bootstrap resamples."""
# %%
import numpy as np

from kselect.mdata import MarkerMatrix, bootstrap_rows, impute_mean, manhattan_distances

# A raw matrix holds 0, 1 or NaN (missing).
raw = MarkerMatrix(
    [[1, 0, np.nan, 1],
     [0, 0, 1, 1],
     [np.nan, 1, 1, 0],
     [1, 1, 0, np.nan]],
    row_ids=["line_a", "line_b", "line_c", "line_d"],
)
print("missing fraction:", raw.missing_fraction)

# %%
# Each missing cell takes the mean of the observed cells in its column, so
# imputed values are fractional.
m = impute_mean(raw)
print(m.cells)

# %%
d = manhattan_distances(m)
print("condensed:", d.values)
print(d.square())

# %%
# Bootstrap streams are keyed by (seed, replicate), so replicate 3 is the
# same whether or not replicates 0-2 were drawn first.
for rep in range(3):
    b = bootstrap_rows(m, rep, master_seed=2024)
    print(rep, b.source_indices)
