"""Optional SVG renderings of the plot-ready CSVs (requires matplotlib)."""
from __future__ import annotations

import csv
from pathlib import Path


def _load(path):
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "lli-ions"  # stable element ids
    return plt


def gate_svg(src, dst):
    plt = _figure()
    d = _load(src)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for key, label in (("p_ss", "SS"), ("p_mix", "SD+DS"), ("p_dd", "DD")):
        ax.plot(d["time_us"], d[key], label=label)
    ax.set_xlabel("time (us)")
    ax.set_ylabel("population")
    ax.legend()
    fig.tight_layout()
    fig.savefig(dst, format="svg", metadata={"Date": None})
    plt.close(fig)


def allan_svg(src, dst, prefactor: float | None = None):
    plt = _figure()
    d = _load(src)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.loglog(d["tau_s"], d["sigma_hz"], "o")
    if prefactor:
        ax.loglog(d["tau_s"], [prefactor / t**0.5 for t in d["tau_s"]], "--")
    ax.set_xlabel("averaging time (s)")
    ax.set_ylabel("Allan deviation (Hz)")
    fig.tight_layout()
    fig.savefig(dst, format="svg", metadata={"Date": None})
    plt.close(fig)


def series_svg(src, dst):
    plt = _figure()
    d = _load(src)
    t0 = d["utc_seconds"][0]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.errorbar([(t - t0) / 3600 for t in d["utc_seconds"]], [1e3 * f for f in d["f_hz"]],
                yerr=[1e3 * s for s in d["sigma_f_hz"]], fmt="o", ms=3)
    ax.set_xlabel("hours since first bin")
    ax.set_ylabel("frequency (mHz)")
    fig.tight_layout()
    fig.savefig(dst, format="svg", metadata={"Date": None})
    plt.close(fig)
