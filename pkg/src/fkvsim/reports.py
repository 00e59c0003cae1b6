"""Report emission: column-oriented text tables, JSON summaries, figures.

Every file carries a header with the package version and the config hash;
the timestamp/wall-time line is the single line allowed to differ between
identical runs.  Figures are rendered with the Agg backend next to the
delimited output they visualize.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__


def _meta_lines(meta: dict) -> list[str]:
    stamp = meta.get("timestamp", datetime.now(timezone.utc).isoformat())
    wall = meta.get("wall_time_s", 0.0)
    return [
        f"# fkvsim {__version__}",
        f"# config-hash: {meta.get('config_hash', 'none')}",
        f"# timestamp: {stamp} wall-time-s: {wall:.3f}",
    ]


def write_table(path, meta: dict, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[k], dtype=float)) for k in names]
    rows = len(arrays[0])
    if any(len(a) != rows for a in arrays):
        raise ValueError("all columns must have equal length")
    with open(path, "w") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        fh.write("# columns: " + " ".join(names) + "\n")
        for i in range(rows):
            fh.write(" ".join(f"{a[i]:.17g}" for a in arrays) + "\n")


def read_table(path) -> dict[str, np.ndarray]:
    names = None
    data = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# columns:"):
                names = line.split(":", 1)[1].split()
            elif not line.startswith("#") and line.strip():
                data.append([float(v) for v in line.split()])
    if names is None:
        raise ValueError(f"{path} has no column header")
    arr = np.array(data)
    return {name: arr[:, i] for i, name in enumerate(names)}


def write_json(path, meta: dict, payload: dict) -> None:
    doc = {"meta": {"version": __version__,
                    "config_hash": meta.get("config_hash", "none"),
                    "timestamp": meta.get("timestamp",
                                          datetime.now(timezone.utc).isoformat()),
                    "wall_time_s": meta.get("wall_time_s", 0.0)},
           **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def savefig(fig, path) -> None:
    fig.savefig(path, dpi=130, bbox_inches="tight")
    plt.close(fig)


def energy_figure(ledger, path) -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    cols = ledger.columns()
    t = cols["t"]
    for name in ("kinetic", "elastic", "memory", "dissipation", "work"):
        ax1.plot(t, cols[name], label=name)
    ax1.set_ylabel("energy")
    ax1.legend(loc="best", fontsize=8)
    ax1.set_title("energy ledger")
    ax2.plot(t, cols["margin"], label="inequality margin")
    ax2.plot(t, cols["eq_residual"], label="equality residual")
    ax2.set_xlabel("t")
    ax2.set_yscale("symlog", linthresh=1e-14)
    ax2.legend(loc="best", fontsize=8)
    savefig(fig, path)


def snapshot_figure(traj, mesh, path, count: int = 5) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    steps = np.unique(np.linspace(0, traj.n, count, dtype=int))
    if mesh.dim == 1:
        x = mesh.nodes[:, 0]
        order = np.argsort(x)
        for j in steps:
            ax.plot(x[order], traj.u_at(int(j))[order], label=f"t = {j * traj.tau:.3g}")
        ax.set_xlabel("x")
        ax.set_ylabel("displacement")
        ax.legend(fontsize=8)
    else:
        u = traj.u_at(traj.n).reshape(-1, 2)
        mag = np.hypot(u[:, 0], u[:, 1])
        tp = ax.tripcolor(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.elements, mag,
                          shading="gouraud")
        fig.colorbar(tp, ax=ax, label="|u| at final time")
        ax.set_aspect("equal")
    ax.set_title("displacement snapshots")
    savefig(fig, path)


def sweep_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    eps_mid = report.epsilons[:-1]
    ax.loglog(eps_mid, report.diffs_uH, "o-", label="L-inf(H) diff")
    ax.loglog(eps_mid, report.diffs_strain, "s--", label="L2(strain) diff")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("successive trajectory difference")
    ax.set_title(f"regularization sweep (n = {report.n})")
    ax.legend(fontsize=8)
    savefig(fig, path)


def convergence_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ns = report.grid_sizes.astype(float)
    errs = np.maximum(report.errors, 1e-16)
    ax.loglog(ns, errs, "o-", label="error")
    ref = errs[0] * ns[0] / ns
    ax.loglog(ns, ref, "k:", label="first order")
    ax.set_xlabel("steps n")
    ax.set_ylabel("final-time error")
    ax.set_title(f"manufactured case: {report.case}")
    ax.legend(fontsize=8)
    savefig(fig, path)


def positivity_figure(report, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ratio = report.min_eigs / report.norms
    ax.semilogx(report.grid_sizes, ratio, "o-")
    ax.axhline(-1e-10, color="r", ls="--", lw=0.8, label="tolerance")
    ax.set_xlabel("grid size n")
    ax.set_ylabel("min eig / matrix norm")
    ax.set_title("double-convolution positivity certificate")
    ax.legend(fontsize=8)
    savefig(fig, path)


def uniqueness_figure(step_diffs, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.semilogy(np.maximum(np.asarray(step_diffs), 1e-300), "o-", ms=2)
    ax.set_xlabel("step")
    ax.set_ylabel("|u_A - u_B|_H")
    ax.set_title("trajectory discrepancy between solver variants")
    savefig(fig, path)


def kernel_figure(table, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(table["t"], table["rho"], label="value")
    ax.plot(table["t"], -table["drho"], label="-first difference")
    ax.plot(table["t"], table["d2rho"], label="second difference")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_title("kernel samples")
    ax.legend(fontsize=8)
    savefig(fig, path)
