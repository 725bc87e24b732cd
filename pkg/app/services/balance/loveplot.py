import io
from typing import Optional, Sequence

import matplotlib
from matplotlib.figure import Figure

from app.domain.errors import ReportError
from app.domain.schemas import BalanceReport
from app.utils.logging import get_logger

logger = get_logger(__name__)

SEVERITY_LINES = (0.1, 0.3)
SVG_SALT = "trendweights"


def love_plot_svg(
    report: BalanceReport,
    labels: Optional[Sequence[str]] = None,
    title: Optional[str] = None,
) -> str:
    """
    Standardized differences per functional, raw (open circles) against weighted (crosses).
    Degenerate rows are left out. Output is byte-stable for a fixed report.
    """
    rows = [r for r in report.rows if not r.degenerate]
    if labels is not None:
        wanted = set(labels)
        rows = [r for r in rows if r.label in wanted]
    if not rows:
        raise ReportError("nothing to plot: balance report is empty after filtering")

    n = len(rows)
    fig = Figure(figsize=(6.0, 1.2 + 0.35 * n))
    ax = fig.add_subplot(1, 1, 1)
    ys = list(range(n))[::-1]
    ax.scatter([r.raw_std_diff for r in rows], ys, marker="o", facecolors="none", edgecolors="tab:gray", label="raw")
    ax.scatter([r.weighted_std_diff for r in rows], ys, marker="x", color="tab:blue", label=report.estimator)
    ax.axvline(0.0, color="black", linewidth=0.8)
    for level in SEVERITY_LINES:
        style = ":" if level < 0.2 else "--"
        ax.axvline(level, color="tab:red", linestyle=style, linewidth=0.8)
        ax.axvline(-level, color="tab:red", linestyle=style, linewidth=0.8)
    ax.set_yticks(ys)
    ax.set_yticklabels([r.label for r in rows])
    ax.set_ylim(-0.7, n - 0.3)
    ax.set_xlabel("standardized difference")
    ax.set_title(title or f"Covariate balance: {report.estimator}")
    ax.legend(loc="best", frameon=False)
    fig.tight_layout()

    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    logger.debug(f"Love plot with {n} rows")
    return buf.getvalue()
