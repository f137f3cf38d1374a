"""Text tables and plots of a `MetricReport`.

`format_table` mirrors the usual separation results table: one row per system
(the unprocessed baseline and the model) with SI-SDR and STOI column groups for
the anechoic and reverberant conditions.  `plot_report` draws the SNR- and
T60-stratified curves.  Values are rounded for display only.
"""
import os

from matplotlib.figure import Figure

from . import utils
from .errors import MetricError

__all__ = [
    "format_table",
    "format_stratified",
    "plot_data",
    "refuse_existing",
    "plot_report",
    "write_report",
]

_LOGGER = utils.Logger(__name__)
log = _LOGGER.log

METRICS = (("si_sdr", "SI-SDR [dB]"), ("stoi", "STOI"))
AXES = {"snr": ("by_snr", "SNR [dB]"), "t60": ("by_t60", "T60 [s]")}


def _systems(report):
    """Return ``[(row label, aggregate key)]``."""
    systems = [("Unprocessed", "unprocessed")]
    if report.aggregates["overall"].get("model") is not None:
        systems.append((report.model_name or "Model", "model"))
    return systems


def _fmt(value, digits):
    return "-" if value is None else f"{value:.{digits}f}"


def format_table(report):
    """Return the condition table as text."""
    groups = report.aggregates["by_condition"]
    conditions = [_c for _c in ("anechoic", "reverberant") if _c in groups]
    width = max(len(_l) for _l, _k in _systems(report)) + 2
    header = " " * width + "".join(f"{_c.capitalize():^20}" for _c in conditions)
    sub = " " * width + "".join(f"{'SI-SDR':>10}{'STOI':>10}" for _c in conditions)
    lines = [header, sub]
    for label, key in _systems(report):
        row = f"{label:<{width}}"
        for c in conditions:
            stats = groups[c][key] or {}
            row += f"{_fmt(stats.get('si_sdr'), 2):>10}{_fmt(stats.get('stoi'), 3):>10}"
        lines.append(row)
    si_sdri = report.aggregates["overall"].get("si_sdri")
    if si_sdri is not None:
        lines.append(f"SI-SDR improvement (overall): {si_sdri:.2f} dB")
    return "\n".join(lines)


def _sorted_bins(groups):
    numeric = sorted((float(_k), _k) for _k in groups if _k != "none")
    return [_k for (_v, _k) in numeric]


def format_stratified(report, axis):
    """Return the table of means binned along `axis` (``"snr"`` or ``"t60"``)."""
    key, title = AXES[axis]
    groups = report.aggregates[key]
    systems = _systems(report)
    columns = [f"{_l[:12]} {_t.split()[0]}" for _l, _k in systems for _m, _t in METRICS]
    lines = [f"{title:<10}" + "".join(f"{_c:>24}" for _c in columns)]
    for b in _sorted_bins(groups):
        row = f"{b:<10}"
        for _l, k in systems:
            stats = groups[b][k] or {}
            row += f"{_fmt(stats.get('si_sdr'), 2):>24}{_fmt(stats.get('stoi'), 3):>24}"
        lines.append(row)
    return "\n".join(lines)


def plot_data(report, axis):
    """Return the values plotted along `axis`.

    Returns
    -------
    data : dict
       ``{"x": [...], "series": {label: {"si_sdr": [...], "stoi": [...]}}}`` taken
       directly from the report aggregates.
    """
    key, _title = AXES[axis]
    groups = report.aggregates[key]
    bins = _sorted_bins(groups)
    series = {}
    for label, k in _systems(report):
        series[label] = {
            _m: [(groups[_b][k] or {}).get(_m) for _b in bins] for _m, _t in METRICS
        }
    return dict(x=[float(_b) for _b in bins], series=series)


def refuse_existing(paths, overwrite=False):
    """Raise `MetricError` if any of `paths` exists and `overwrite` is False."""
    existing = [_p for _p in paths if os.path.exists(_p)]
    if existing and not overwrite:
        raise MetricError(f"Refusing to overwrite {existing}; pass overwrite")


def plot_report(report, out_dir, overwrite=False):
    """Write ``snr.png`` and ``t60.png`` to `out_dir` and return their paths."""
    if not report.records:
        raise MetricError("Cannot plot an empty report")
    refuse_existing([os.path.join(out_dir, f"{_a}.png") for _a in AXES], overwrite)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for axis, (_key, title) in AXES.items():
        data = plot_data(report, axis)
        fig = Figure(figsize=(8, 3.5))
        for n, (metric, label) in enumerate(METRICS):
            ax = fig.add_subplot(1, 2, n + 1)
            for name, values in data["series"].items():
                y = [float("nan") if _v is None else _v for _v in values[metric]]
                ax.plot(data["x"], y, "o-", label=name)
            ax.set_xlabel(title)
            ax.set_ylabel(label)
            ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"{axis}.png")
        fig.savefig(path, dpi=100)
        paths.append(path)
    return paths


def write_report(report, out_dir, overwrite=False):
    """Write the tables (``tables.txt``) and plots to `out_dir`; return all paths.

    Existing outputs are only replaced if `overwrite` is True.
    """
    if not report.records:
        raise MetricError("Cannot report on an empty report")
    outputs = [os.path.join(out_dir, _f) for _f in ("tables.txt", "snr.png", "t60.png")]
    refuse_existing(outputs, overwrite)
    os.makedirs(out_dir, exist_ok=True)
    text = "\n\n".join(
        [format_table(report)] + [format_stratified(report, _a) for _a in AXES]
    )
    tables = os.path.join(out_dir, "tables.txt")
    with open(tables, "w") as f:
        f.write(text + "\n")
    return [tables] + plot_report(report, out_dir, overwrite=True)
