"""Optional figures for a finished run (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .qnsd import Trace  # noqa: E402


def plot_trace(trace: Trace, path: str | Path, reference: float | None = None) -> Path:
    """Cost and violation of the running average against iteration."""
    fig, (ax_c, ax_v) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    it = trace.column("iteration")
    ax_c.plot(it, trace.column("cost_avg"), lw=1.2, label="averaged cost")
    if reference is not None:
        ax_c.axhline(reference, color="k", ls="--", lw=0.8, label="LP optimum")
    ax_c.set_ylabel("cost")
    ax_c.legend(loc="best")
    ax_v.plot(it, trace.column("max_violation"), lw=1.2, color="tab:red")
    ax_v.set_yscale("symlog", linthresh=1e-3)
    ax_v.set_xlabel("iteration")
    ax_v.set_ylabel("max violation")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_allocation(allocation: dict[int, dict[str, float]], nodes: list[int], path: str | Path,
                    title: str = "") -> Path:
    """Stacked bars of cloud units per node, one colour per function."""
    functions = sorted({f for row in allocation.values() for f in row})
    fig, ax = plt.subplots(figsize=(7, 3.5))
    bottom = [0.0] * len(nodes)
    for fn in functions:
        vals = [allocation.get(u, {}).get(fn, 0.0) for u in nodes]
        ax.bar([str(u) for u in nodes], vals, bottom=bottom, label=f"function {fn}")
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xlabel("node")
    ax.set_ylabel("cloud resource units")
    if title:
        ax.set_title(title)
    if functions:
        ax.legend(loc="best", fontsize="small")
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
