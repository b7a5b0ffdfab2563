"""Plot a value slice written by `cargo run --example export_query`.

usage: python plot_value_slice.py value_slice.csv
"""
import sys

import matplotlib.pyplot as plt
import pandas as pd

df = pd.read_csv(sys.argv[1] if len(sys.argv) > 1 else "value_slice.csv")
table = df.pivot(index="z2", columns="z1", values="value")
fig, ax = plt.subplots(figsize=(5, 4))
im = ax.contourf(table.columns, table.index, table.values, levels=30)
fig.colorbar(im, ax=ax, label="V")
ax.set_xlabel("z1")
ax.set_ylabel("z2")
ax.set_title(f"t = {df['t'].iloc[0]}")
fig.tight_layout()
fig.savefig("value_slice.png", dpi=120)
