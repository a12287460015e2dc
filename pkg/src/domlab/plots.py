"""Figure rendering for the CLI report path.

Every function writes one PNG next to the delimited output and returns the
path.  The Agg backend and fixed rc settings keep the files reproducible.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "figure.figsize": (5.2, 3.4),
    "figure.dpi": 110,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.bbox": "tight",
})


def _finish(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def lyapunov_convergence(steps, estimates, final, path):
    fig, ax = plt.subplots()
    estimates = np.asarray(estimates)
    for i in range(estimates.shape[1]):
        ax.plot(steps, estimates[:, i], marker=".", label=f"chi_{i + 1}")
    for v in final:
        ax.axhline(v, color="k", lw=0.6, ls=":")
    ax.set_xlabel("n")
    ax.set_ylabel("running exponent estimate")
    ax.set_xscale("log")
    ax.legend()
    return _finish(fig, path)


def domination_fit(ns, log_products, slope, intercept, path):
    fig, ax = plt.subplots()
    ax.plot(ns, log_products, "o", ms=3, label="worst-case log product")
    ax.plot(ns, intercept + slope * np.asarray(ns), "-", lw=1,
            label=f"fit slope {slope:.4f}")
    ax.set_xlabel("n")
    ax.set_ylabel("log ||df^n|_E|| ||df^-n|_F||")
    ax.legend()
    return _finish(fig, path)


def entropy_growth(qs, H, h_window, window_q, path):
    fig, ax = plt.subplots()
    ax.plot(qs, H, "o-", ms=3, label="H(alpha^q)")
    ax.plot(qs, H[window_q] + h_window * (np.asarray(qs) - window_q), ":",
            label=f"increment {h_window:.4f} at q={window_q}")
    ax.set_xlabel("q")
    ax.set_ylabel("word entropy (nats)")
    ax.legend()
    return _finish(fig, path)


def pesin_gap_bars(report, path):
    fig, ax = plt.subplots()
    labels = ["h_estimate", "sum_chi_F", "sum_chi_plus", "gap_theorem",
              "ruelle_residual"]
    values = [report.h_estimate, report.sum_chi_F, report.sum_chi_plus,
              report.gap_theorem, report.ruelle_residual]
    ax.bar(labels, values, color=["C0", "C1", "C2", "C3", "C4"])
    ax.axhline(0.0, color="k", lw=0.7)
    ax.set_ylabel("nats")
    ax.tick_params(axis="x", rotation=20)
    return _finish(fig, path)


def basin_fractions(n_schedule, fractions, eps, floor, path):
    fig, ax = plt.subplots()
    ax.plot(n_schedule, fractions, "o-", label=f"fraction in C_n({eps})")
    ax.axhline(floor, color="r", lw=0.8, ls="--", label="floor")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("sample fraction")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    return _finish(fig, path)


def rate_bound(n_schedule, rates, eps_schedule, rhs, tolerance, path):
    fig, ax = plt.subplots()
    for eps, row in zip(eps_schedule, rates):
        finite = np.isfinite(row)
        ax.plot(np.asarray(n_schedule)[finite], row[finite], "o-", ms=3,
                label=f"eps = {eps}")
    ax.axhline(rhs + tolerance, color="r", lw=0.8, ls="--",
               label="h + int psi + tol")
    ax.set_xlabel("n")
    ax.set_ylabel("(1/n) log fraction")
    ax.legend()
    return _finish(fig, path)


def basin_heatmap(dists, eps, grid, path):
    fig, ax = plt.subplots(figsize=(4.4, 3.8))
    img = np.asarray(dists).reshape(grid, grid)
    im = ax.imshow(img.T, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
    fig.colorbar(im, ax=ax, label="dist*(sigma_n, mu)")
    ax.contour(img.T, levels=[eps], origin="lower", extent=(0, 1, 0, 1),
               colors="r", linewidths=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _finish(fig, path)


def dispersion_trace(steps, disps, rhs, path):
    fig, ax = plt.subplots()
    ax.semilogy(steps, disps, "o-", label="disp G_n")
    ax.semilogy(steps[1:], rhs, "s--", ms=3,
                label="||df^n|_E|| disp(G_0) ||df^-n|_F||")
    ax.set_xlabel("step n")
    ax.set_ylabel("dispersion")
    ax.legend()
    return _finish(fig, path)


def property_grid(results, path):
    names = list(results)
    ok = [not results[n] for n in names]
    fig, ax = plt.subplots(figsize=(5.2, 0.25 * len(names) + 0.8))
    ax.barh(range(len(names)), [1] * len(names),
            color=["C2" if o else "C3" for o in ok])
    ax.set_yticks(range(len(names)), names, fontsize=7)
    ax.set_xticks([])
    ax.invert_yaxis()
    ax.set_title("property suite (green = pass)", fontsize=9)
    return _finish(fig, path)
