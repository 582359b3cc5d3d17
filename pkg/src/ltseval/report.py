"""Plot-data export: per-sample error tables and the two static error views."""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SchemaError
from .io import atomic_write_bytes, atomic_write_text
from .metrics import ErrorSamples
from .trajectory import NS_PER_S

ERROR_COLUMNS = [
    "t_ns",
    "eval_pose_id",
    "visit_index",
    "ex_mm",
    "ey_mm",
    "ez_mm",
    "horizontal_error_mm",
    "vertical_error_mm",
    "orientation_error_deg",
    "gt_yaw_deg",
    "gt_speed_mm_s",
]
SCATTER_COLUMNS = ["ex_mm", "ey_mm", "gt_yaw_deg"]
OVER_TIME_COLUMNS = ["t_s", "horizontal_error_mm", "gt_speed_mm_s"]


def _f(v) -> str:
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def _table(header, cols) -> str:
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _opt(col, n):
    return [_f(v) for v in col] if col is not None else [""] * n


def write_error_table(samples: ErrorSamples, path) -> None:
    n = len(samples)
    cols = [
        [str(int(v)) for v in samples.t_ns],
        [str(int(v)) for v in samples.eval_pose_id],
        [str(int(v)) for v in samples.visit_index],
        _opt(samples.ex, n),
        _opt(samples.ey, n),
        _opt(samples.ez, n),
        _opt(samples.horizontal, n),
        _opt(samples.vertical, n),
        _opt(samples.orientation_signed, n),
        _opt(samples.gt_yaw, n),
        _opt(samples.gt_speed, n),
    ]
    atomic_write_text(path, _table(ERROR_COLUMNS, cols))


def read_error_table(path) -> ErrorSamples:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ERROR_COLUMNS:
            raise SchemaError(f"{path}: expected header {','.join(ERROR_COLUMNS)}")
        rows = [r for r in reader if r]
    cols = list(zip(*rows)) if rows else [()] * len(ERROR_COLUMNS)

    def num(i, dtype=float) -> Optional[np.ndarray]:
        c = cols[i]
        if len(c) and any(v == "" for v in c):
            return None
        return np.array([dtype(v) for v in c], dtype=dtype)

    orient = num(8)
    return ErrorSamples(
        t_ns=num(0, int).astype(np.int64),
        eval_pose_id=num(1, int).astype(np.int64),
        visit_index=num(2, int).astype(np.int64),
        ex=num(3),
        ey=num(4),
        horizontal=num(6),
        gt_speed=num(10),
        ez=num(5),
        vertical=num(7),
        orientation_signed=orient,
        orientation_abs=np.abs(orient) if orient is not None else None,
        gt_yaw=num(9),
    )


def _png(fig) -> bytes:
    buf = _io.BytesIO()
    # no Software/date chunks so the bytes only depend on the data
    fig.savefig(buf, format="png", dpi=100, metadata={"Software": None})
    return buf.getvalue()


def write_plot_data(samples: ErrorSamples, out_dir, figures: bool = True) -> list[Path]:
    """Write error_scatter.csv and error_over_time.csv, plus PNG renderings."""
    out = Path(out_dir)
    n = len(samples)
    t0 = int(samples.t_ns[0]) if n else 0
    written = [out / "error_scatter.csv", out / "error_over_time.csv"]
    atomic_write_text(written[0], _table(SCATTER_COLUMNS, [_opt(samples.ex, n), _opt(samples.ey, n), _opt(samples.gt_yaw, n)]))
    t_s = (samples.t_ns - t0) / NS_PER_S
    atomic_write_text(written[1], _table(OVER_TIME_COLUMNS, [_opt(t_s, n), _opt(samples.horizontal, n), _opt(samples.gt_speed, n)]))
    if figures:
        written += _figures(samples, t_s, out)
    return written


def _figures(samples: ErrorSamples, t_s, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = [out / "error_scatter.png", out / "error_over_time.png"]

    fig, ax = plt.subplots(figsize=(6, 5))
    c = samples.gt_yaw if samples.gt_yaw is not None else None
    sc = ax.scatter(samples.ex, samples.ey, c=c, s=6, cmap="twilight", vmin=-180, vmax=180)
    if c is not None:
        fig.colorbar(sc, ax=ax, label="GT yaw [deg]")
    ax.axhline(0, color="0.6", lw=0.8)
    ax.axvline(0, color="0.6", lw=0.8)
    ax.set_xlabel("error x [mm]")
    ax.set_ylabel("error y [mm]")
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    atomic_write_bytes(paths[0], _png(fig))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(t_s, samples.horizontal, lw=0.8, color="C0")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("horizontal error [mm]", color="C0")
    ax2 = ax.twinx()
    ax2.plot(t_s, samples.gt_speed, lw=0.8, color="C1")
    ax2.set_ylabel("GT speed [mm/s]", color="C1")
    ax2.ticklabel_format(axis="y", useOffset=False, style="plain")
    ax2.set_ylim(bottom=0)
    fig.tight_layout()
    atomic_write_bytes(paths[1], _png(fig))
    plt.close(fig)
    return paths


def write_offset_curve(curve, path) -> None:
    rows = [(_f(o * 1000.0), _f(r)) for o, r in curve]
    atomic_write_text(path, _table(["offset_ms", "mean_horizontal_error_mm"], list(zip(*rows)) if rows else [[], []]))
