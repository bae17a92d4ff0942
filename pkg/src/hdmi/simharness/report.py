"""Human-readable report and plot-ready panel files from a scenario directory."""

from __future__ import annotations

import os

import pandas as pd

PANELS = ("rmse", "bias", "variance", "coverage")


def report(out_dir):
    """Write ``report.txt`` and ``panel_<metric>.csv`` files; return the report text."""
    path = os.path.join(out_dir, "summary.csv")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no summary.csv in {out_dir!r}; run the scenario first")
    df = pd.read_csv(path, keep_default_na=False, na_values=["nan"])
    lines = [
        f"{'model':<22} {'n_sim':>5} {'degen':>5}  "
        + "  ".join(f"{m:>26}" for m in PANELS)
    ]
    for _, r in df.iterrows():
        cells = []
        for m in PANELS:
            cells.append(f"{r[m]:8.4f} [{r[m + '_lower']:7.4f},{r[m + '_upper']:7.4f}]")
        lines.append(f"{r['model']:<22} {int(r['n_sim']):>5} {int(r['n_degenerate']):>5}  " + "  ".join(cells))
    lines.append("")
    lines.append("log-HR scale; brackets are Monte Carlo 95% intervals.")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    for m in PANELS:
        panel = df[["model", m, f"{m}_mcse", f"{m}_lower", f"{m}_upper"]].rename(
            columns={m: "estimate", f"{m}_mcse": "mcse", f"{m}_lower": "lower", f"{m}_upper": "upper"}
        )
        panel.to_csv(os.path.join(out_dir, f"panel_{m}.csv"), index=False, lineterminator="\n")
    return text
