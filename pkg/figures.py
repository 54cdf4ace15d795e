"""
SVG rendering of the report figures

Yearly average turnover per company as lines, shares per turnover class as
bars, and Boruta z-score histories as box plots against the shadow band.
Renders are reproducible: fixed hash salt and no date metadata.
"""

import io
import logging

import matplotlib

matplotlib.use("Agg")

import pandas as pd
from matplotlib.figure import Figure
from matplotlib.lines import Line2D

from boruta import BorutaReport, Decision

logger = logging.getLogger(__name__)

DECISION_COLORS = {
    Decision.CONFIRMED: "#2590fa",
    Decision.TENTATIVE: "#f0be00",
    Decision.REJECTED: "gray",
}

matplotlib.rcParams["svg.hashsalt"] = "turnover-forest"


def _to_svg(fig: Figure) -> bytes:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def render_figure3(yearly: pd.DataFrame) -> bytes:
    """One line per company: mean turnover against year."""
    fig = Figure(figsize=(8, 4.5))
    ax = fig.subplots()
    for company, series in yearly.groupby("company", sort=True):
        ax.plot(series["year"], series["mean_turnover"], marker="o", label=str(company))
    ax.set_xlabel("Year")
    ax.set_ylabel("Average turnover")
    ax.set_title("Average turnover per year")
    if not yearly.empty:
        ax.legend(loc="upper left")
    ax.grid(True, color="#d2d2d2")
    fig.tight_layout()
    return _to_svg(fig)


def render_figure4(shares: pd.DataFrame) -> bytes:
    """Bars of total shares traded per turnover class."""
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    ax.bar(shares["class"], shares["sum_no_of_shares"], color="#3969AC")
    ax.set_xlabel("Turnover class")
    ax.set_ylabel("No. of shares")
    ax.set_title("Shares traded per turnover class")
    fig.tight_layout()
    return _to_svg(fig)


def render_boruta(report: BorutaReport) -> bytes:
    """
    Horizontal box per feature over its z-score history, ordered by median,
    coloured by decision, with the shadow min/mean/max band from the last
    iteration as dashed lines.
    """
    ordered = sorted(report.features, key=lambda f: (f.median_z, f.feature))
    histories = [f.z_history or [0.0] for f in ordered]
    fig = Figure(figsize=(9, max(3.0, 0.3 * len(ordered) + 1.5)))
    ax = fig.subplots()
    boxes = ax.boxplot(histories, vert=False, patch_artist=True, showfliers=False)
    for patch, item in zip(boxes["boxes"], ordered):
        patch.set_facecolor(DECISION_COLORS[item.decision])
    ax.set_yticks(range(1, len(ordered) + 1))
    ax.set_yticklabels([f.feature for f in ordered], fontsize=8)

    if report.shadow_history:
        lo, mean, hi = report.shadow_history[-1]
        for value in (lo, mean, hi):
            ax.axvline(value, linestyle="--", color="gray", linewidth=1)
    legend = [Line2D([0], [0], color=DECISION_COLORS[d], lw=5) for d in Decision]
    legend.append(Line2D([0], [0], linestyle="--", color="gray", lw=1))
    ax.legend(legend, [d.value for d in Decision] + ["shadow min/mean/max"], loc="lower right")
    ax.set_xlabel("Importance z-score")
    ax.set_title("Boruta importance")
    fig.tight_layout()
    return _to_svg(fig)
