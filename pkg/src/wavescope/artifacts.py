"""Writes an experiment report to disk as JSON, CSV and SVG."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from wavescope.utils import resolve_dir, store_csv, store_json  # noqa: E402

if TYPE_CHECKING:
    from wavescope.experiments import ExperimentReport, PlotSpec

module_logger = logging.getLogger(__name__)

REPORT_FILENAME = "report.json"
SVG_STYLE = {
    "svg.hashsalt": "wavescope",
    "svg.fonttype": "none",
    "figure.figsize": (6.4, 4.0),
    "axes.grid": True,
}


def plot_to_svg(plot: PlotSpec, filepath: Path | str) -> Path:
    """One line per series, each carrying the series name as its ``gid``."""
    filepath = Path(filepath)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_STYLE):
        fig, ax = plt.subplots()
        try:
            for series in plot.series:
                ax.plot(series.x, series.y, label=series.name, gid=series.name)
            if plot.logx:
                ax.set_xscale("log")
            if plot.logy:
                ax.set_yscale("log")
            ax.set_title(plot.title)
            ax.set_xlabel(plot.xlabel)
            ax.set_ylabel(plot.ylabel)
            if len(plot.series) > 1:
                ax.legend()
            fig.savefig(filepath, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return filepath


def emit_artifacts(report: ExperimentReport, out_dir: Path | str) -> list[Path]:
    """Writes ``report.json``, one CSV per table and one SVG per plot into ``out_dir``.

    Outputs depend only on the report contents, so identical configurations give byte-identical files.

    Returns:
        The written paths in the order tables, plots, report.

    Raises:
        OSError: If the directory cannot be created or written to.
    """
    directory = resolve_dir(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in report.tables.items():
        filepath = directory / f"{name}.csv"
        n_rows = store_csv(table.rows, table.header, filepath)
        module_logger.debug(f"Wrote {n_rows} rows to {filepath}")
        written.append(filepath)
    for name, plot in report.plots.items():
        written.append(plot_to_svg(plot, directory / f"{name}.svg"))
    report_path = directory / REPORT_FILENAME
    data = report.as_dict()
    data["artifacts"] = [path.name for path in written]
    store_json(data, report_path)
    written.append(report_path)
    module_logger.info(f"Wrote {len(written)} artifacts to {directory}")
    return written
