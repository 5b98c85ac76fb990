"""Figure recipes over the simulation CSV artifacts.

Each recipe names its input files by role, loads them through
:mod:`roughfig.csvio`, and draws one image.  Recipes plot documented
columns only; the sole arithmetic applied here is display smoothing
(running means of an already-plotted column) and axis normalization by
constants taken from the file headers.  Anything resembling physics lives
upstream in the simulation package and arrives via the CSVs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import matplotlib

matplotlib.use("Agg")  # render-only package, must work with no display

import matplotlib.pyplot as plt
import numpy as np

from .csvio import MissingInputError, Table, read_table

DPI = 150
_CYCLE = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _color(index: int) -> str:
    return _CYCLE[index % len(_CYCLE)]


def _save(fig, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=DPI)
    plt.close(fig)


def running_mean(t: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative time average of a sampled curve.

    Display smoothing only: the CSVs carry the raw series and the smoothed
    curve is the trapezoid average of exactly the points being plotted.
    Undefined at the first sample, so the returned arrays start at t[1].
    """
    if t.size < 2:
        raise ValueError("running mean needs at least two samples")
    area = np.concatenate(
        ([0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))
    )
    return t[1:], area[1:] / (t[1:] - t[0])


# -- single-panel helpers ----------------------------------------------------


def _field_sweep_panel(tables: dict[str, Table], out: Path, column: str,
                       ylabel: str) -> None:
    """Overlay one time-series column from several runs.

    Runs at the same field share a color; opacity increases with the bond
    dimension so truncation sensitivity reads directly off the plot.
    """
    runs = []
    for table in tables.values():
        t, y = table.require("t", column)
        runs.append((float(table.meta_value("g")),
                     int(table.meta_value("chi")), t, y))
    runs.sort(key=lambda r: (r[0], r[1]))
    g_index = {g: i for i, g in enumerate(sorted({r[0] for r in runs}))}
    chis = sorted({r[1] for r in runs})
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for g, chi, t, y in runs:
        alpha = 0.45 + 0.55 * chis.index(chi) / max(len(chis) - 1, 1)
        ax.plot(t, y, color=_color(g_index[g]), alpha=alpha,
                label=f"g/J={g:g}, chi={chi}")
    ax.set_xlabel("tJ")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, out)


# -- recipes -----------------------------------------------------------------


def imbalance_history(tables, out):
    """Half-lattice magnetization imbalance: plateau vs rapid melt."""
    _field_sweep_panel(tables, out, "imbalance", "imbalance")


def wall_length_history(tables, out):
    """Total domain wall length over time for the same runs."""
    _field_sweep_panel(tables, out, "D", "domain wall length")


def entanglement_history(tables, out):
    _field_sweep_panel(
        tables, out, "entropy_root", "half-system entanglement entropy"
    )


def ground_state_kink(tables, out):
    """Ground-state kink vs field, one curve per height cutoff."""
    table = tables["scan"]
    g, k, n_max = table.require("g", "K", "n_max")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, (cutoff, mask) in enumerate(table.blocks("n_max")):
        order = np.argsort(g[mask])
        ax.plot(g[mask][order], k[mask][order], marker="x", ms=5,
                color=_color(i), label=f"height cutoff {int(cutoff)}")
    ax.set_xlabel("g/J")
    ax.set_ylabel("ground-state kink")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, out)


def thermal_kink(tables, out):
    """Classical kink vs temperature per chain length, crossover inset.

    The inset overlays the numeric crossover temperature (kink = 1/2) on
    the closed-form prediction carried in the same CSV; both vanish
    logarithmically with the chain length.
    """
    table = tables["scan"]
    table.require("lx", "T", "K_exact", "T_R_numeric", "T_R_analytic")
    fig, ax = plt.subplots(figsize=(6.4, 4.6))
    sizes, tr_num, tr_ana = [], [], []
    for i, (lx, mask) in enumerate(table.blocks("lx")):
        temp = table.columns["T"][mask]
        order = np.argsort(temp)
        ax.plot(temp[order], table.columns["K_exact"][mask][order],
                marker="x", ms=4, color=_color(i), label=f"Lx={int(lx)}")
        sizes.append(lx)
        tr_num.append(table.columns["T_R_numeric"][mask][0])
        tr_ana.append(table.columns["T_R_analytic"][mask][0])
    ax.set_xlabel("T/J")
    ax.set_ylabel("thermal kink")
    ax.legend(frameon=False, fontsize=7, loc="lower left")
    inset = ax.inset_axes([0.58, 0.55, 0.38, 0.4])
    inset.semilogx(sizes, tr_ana, ls="--", color="0.4", label="log law")
    inset.semilogx(sizes, tr_num, ls="none", marker="x", color=_color(0))
    inset.set_xlabel("Lx", fontsize=7)
    inset.set_ylabel("crossover T/J", fontsize=7)
    inset.tick_params(labelsize=6)
    _save(fig, out)


def wall_columns(tables, out):
    """Horizontal wall bonds per column: near one while the wall is intact."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, role in enumerate(sorted(tables)):
        table = tables[role]
        t, dx = table.require("t", "D_x")
        lx = float(table.meta_value("lx"))
        g = float(table.meta_value("g"))
        ax.plot(t, dx / lx, color=_color(i), label=f"g/J={g:g}")
    ax.set_xlabel("tJ")
    ax.set_ylabel("horizontal wall bonds per column")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, out)


def _paired_runs(tables):
    """Match full-lattice runs to height-chain runs with the same field."""
    full = {float(tables[r].meta_value("g")): tables[r]
            for r in tables if r.startswith("full")}
    chain = {float(tables[r].meta_value("g")): tables[r]
             for r in tables if r.startswith("chain")}
    if sorted(full) != sorted(chain):
        raise MissingInputError(
            f"field grids differ between models: {sorted(full)} vs {sorted(chain)}"
        )
    return [(g, full[g], chain[g]) for g in sorted(full)]


def kink_running_mean(tables, out):
    """Running-mean kink: full lattice (bulk-divided) vs height chain."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, (g, full, chain) in enumerate(_paired_runs(tables)):
        tm, km = running_mean(*full.require("t", "K_M"))
        ax.plot(tm, km, color=_color(i), label=f"g/J={g:g} full")
        tc, kc = running_mean(*chain.require("t", "K"))
        ax.plot(tc, kc, color=_color(i), ls="--", label=f"g/J={g:g} chain")
    ax.set_xlabel("tJ")
    ax.set_ylabel("running-mean kink")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, out)


def kink_time_average(tables, out):
    """Late-time kink averages vs field for both models."""
    gs, full_avg, chain_avg = [], [], []
    for g, full, chain in _paired_runs(tables):
        gs.append(g)
        full_avg.append(running_mean(*full.require("t", "K_M"))[1][-1])
        chain_avg.append(running_mean(*chain.require("t", "K"))[1][-1])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(gs, full_avg, marker="o", color=_color(0), label="full lattice")
    ax.plot(gs, chain_avg, marker="x", ls="--", color=_color(1),
            label="height chain")
    ax.set_xlabel("g/J")
    ax.set_ylabel("time-averaged kink")
    ax.legend(frameon=False, fontsize=8)
    _save(fig, out)


def kink_components(tables, out):
    """Raw kink, bulk companion, and their ratio, one panel per field."""
    roles = sorted(tables)
    fig, axes = plt.subplots(
        1, len(roles), figsize=(3.2 * len(roles), 3.4), sharey=True
    )
    axes = np.atleast_1d(axes)
    for ax, role in zip(axes, roles):
        table = tables[role]
        t, k, kb, km = table.require("t", "K", "K_bulk", "K_M")
        g = float(table.meta_value("g"))
        ax.plot(t, k, color=_color(0), lw=1.0, label="kink")
        ax.plot(t, kb, color=_color(2), ls=":", lw=1.0, label="bulk companion")
        ax.plot(t, km, color=_color(3), lw=1.8, label="ratio")
        ax.set_title(f"g/J={g:g}", fontsize=9)
        ax.set_xlabel("tJ")
    axes[0].set_ylabel("kink")
    axes[0].legend(frameon=False, fontsize=7)
    fig.tight_layout()
    _save(fig, out)


def truncation_sensitivity(tables, out):
    """Plateau imbalance at two bond dimensions and their pointwise gap."""
    lo, hi = tables["plateau_lo"], tables["plateau_hi"]
    t_lo, i_lo = lo.require("t", "imbalance")
    t_hi, i_hi = hi.require("t", "imbalance")
    fig, (left, right) = plt.subplots(1, 2, figsize=(8.4, 3.6))
    for table, (t, y), alpha in ((lo, (t_lo, i_lo), 0.45),
                                 (hi, (t_hi, i_hi), 1.0)):
        chi = int(table.meta_value("chi"))
        left.plot(t, y, color=_color(0), alpha=alpha, label=f"chi={chi}")
    left.set_xlabel("tJ")
    left.set_ylabel("imbalance")
    left.legend(frameon=False, fontsize=8)
    gap = np.abs(np.interp(t_hi, t_lo, i_lo) - i_hi)
    right.semilogy(t_hi, np.maximum(gap, 1e-16), color=_color(3))
    right.set_xlabel("tJ")
    right.set_ylabel("|imbalance gap|")
    fig.tight_layout()
    _save(fig, out)


def thermal_asymptotics(tables, out):
    """Exact thermal kink against its small-q closed form at the largest size."""
    table = tables["scan"]
    table.require("lx", "T", "K_exact", "K_asymptotic")
    blocks = list(table.blocks("lx"))
    fig, (left, right) = plt.subplots(1, 2, figsize=(8.4, 3.6))
    lx_big, mask = blocks[-1]
    temp = table.columns["T"][mask]
    order = np.argsort(temp)
    left.plot(temp[order], table.columns["K_asymptotic"][mask][order],
              ls="--", color="0.4", label="closed form")
    left.plot(temp[order], table.columns["K_exact"][mask][order], ls="none",
              marker="x", ms=4, color=_color(0), label="transfer matrix")
    left.set_title(f"Lx={int(lx_big)}", fontsize=9)
    left.set_xlabel("T/J")
    left.set_ylabel("thermal kink")
    left.legend(frameon=False, fontsize=8)
    for i, (lx, mask) in enumerate(blocks):
        temp = table.columns["T"][mask]
        order = np.argsort(temp)
        right.plot(temp[order], table.columns["K_exact"][mask][order],
                   color=_color(i), label=f"Lx={int(lx)}")
    shift = table.meta.get("m_convergence_max_diff")
    if shift is not None:
        right.annotate(f"max height-cutoff shift {float(shift):.1e}",
                       xy=(0.03, 0.05), xycoords="axes fraction", fontsize=7)
    right.set_xlabel("T/J")
    right.legend(frameon=False, fontsize=6)
    fig.tight_layout()
    _save(fig, out)


@dataclass(frozen=True)
class Recipe:
    """One figure: input files by role plus the drawing function."""

    name: str
    description: str
    inputs: tuple[tuple[str, str], ...]  # (role, default filename in data dir)
    draw: Callable[[dict[str, Table], Path], None]

    def render(self, paths: dict[str, Path], out: Path) -> Path:
        missing = [role for role, _ in self.inputs if role not in paths]
        if missing:
            raise MissingInputError(
                f"{self.name}: no CSV given for role(s) {', '.join(missing)}"
            )
        tables = {role: read_table(paths[role]) for role, _ in self.inputs}
        self.draw(tables, Path(out))
        return Path(out)


_SWEEP_INPUTS = (
    ("plateau_lo", "plateau8_g0.5_chi64.csv"),
    ("plateau_hi", "plateau8hi_g0.5_chi128.csv"),
    ("quench", "quench8_g2.5_chi128.csv"),
)
_RATIO_INPUTS = (
    ("full_025", "kinkratio8_g0.25_chi64.csv"),
    ("full_050", "kinkratio8_g0.5_chi64.csv"),
    ("full_075", "kinkratio8_g0.75_chi64.csv"),
)
_CHAIN_INPUTS = (
    ("chain_025", "soskink8_g0.25_chi64.csv"),
    ("chain_050", "soskink8_g0.5_chi64.csv"),
    ("chain_075", "soskink8_g0.75_chi64.csv"),
)

RECIPES: dict[str, Recipe] = {
    r.name: r
    for r in (
        Recipe("imbalance-history",
               "imbalance over time, plateau and melt fields, opacity by chi",
               _SWEEP_INPUTS, imbalance_history),
        Recipe("wall-length-history",
               "domain wall length over time for the same runs",
               _SWEEP_INPUTS, wall_length_history),
        Recipe("entanglement-history",
               "half-system entanglement entropy over time",
               _SWEEP_INPUTS, entanglement_history),
        Recipe("ground-state-kink",
               "ground-state kink vs field per height cutoff",
               (("scan", "gskink64.csv"),), ground_state_kink),
        Recipe("thermal-kink",
               "classical kink vs temperature per size, crossover inset",
               (("scan", "classical.csv"),), thermal_kink),
        Recipe("wall-columns",
               "horizontal wall bonds per column over time",
               _RATIO_INPUTS, wall_columns),
        Recipe("kink-running-mean",
               "running-mean kink, full lattice vs height chain",
               _RATIO_INPUTS + _CHAIN_INPUTS, kink_running_mean),
        Recipe("kink-time-average",
               "late-time kink averages vs field for both models",
               _RATIO_INPUTS + _CHAIN_INPUTS, kink_time_average),
        Recipe("kink-components",
               "raw kink, bulk companion, and ratio per field",
               _RATIO_INPUTS, kink_components),
        Recipe("truncation-sensitivity",
               "plateau imbalance at two bond dimensions and their gap",
               (("plateau_lo", "plateau8_g0.5_chi64.csv"),
                ("plateau_hi", "plateau8hi_g0.5_chi128.csv")),
               truncation_sensitivity),
        Recipe("thermal-asymptotics",
               "exact thermal kink vs small-q closed form",
               (("scan", "classical.csv"),), thermal_asymptotics),
    )
}


def render_all(data_dir: Path | str, out_dir: Path | str) -> list[Path]:
    """Render every recipe from its default filenames under ``data_dir``."""
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    made = []
    for recipe in RECIPES.values():
        paths = {role: data_dir / fname for role, fname in recipe.inputs}
        made.append(recipe.render(paths, out_dir / f"{recipe.name}.png"))
    return made
