"""Snapshot files and plot-ready tables.

Binary snapshot files are a sequence of frames. Every frame is a 64-byte little-endian header (magic `NFSF`,
version, d, n_x, n_s, number of frames in the file, t, L, s_max, Δs) followed by the float64 cell values in
row-major (x..., s) order.

CSV tables always use original units and these columns:

- snapshots: `t, x0[, x1], s, rho`
- mean activity: `t, x0[, x1], rho_bar`
- boundary value: `t, x0[, x1], rho_0`
- four-population outputs prefix a `beta` column
"""
import logging
import os
import typing
from contextlib import contextmanager
from struct import error as st_err

import numpy as np
import pandas as pd
import polars as pl

from .core import HEADER, header_p, header_u
from .errors import DomainError
from .gridcell import ORIENTATIONS
from .model.density import DensityField
from .model.grids import ActivityGrid, SpatialGrid

if typing.TYPE_CHECKING:
    from typing import IO, Iterable, Iterator, Literal, Sequence

    from numpy.typing import ArrayLike, NDArray

    Mode = Literal["pl", "pd"]

__all__ = [
    "MAGIC",
    "VERSION",
    "dump",
    "peek",
    "scan",
    "snapshot_table",
    "series_table",
    "population_table",
    "write_csv",
]

logger = logging.getLogger(__name__)

MAGIC = b"NFSF"
VERSION = 1


@contextmanager
def safe_read(io: "IO[bytes]") -> "Iterator[None]":
    ix = io.tell()
    try:
        yield
    except (st_err, ValueError):
        io.seek(ix)
        raise


def _frame(field: DensityField, n_frames: int) -> bytes:
    g, a = field.spatial, field.activity
    head = header_p(MAGIC, VERSION, g.d, g.n_x, a.n_s, n_frames, field.t, g.L, a.s_max, a.ds)
    return head + np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def dump(fields: "Sequence[DensityField]", io: "IO[bytes]") -> int:
    """Write `fields` as frames; returns the stream position after the last one."""
    for f in fields:
        io.write(_frame(f, len(fields)))
    return io.tell()


def peek(io: "IO[bytes]") -> "DensityField | None":
    """Read one frame, or None at end of stream."""
    with safe_read(io):
        raw = io.read(HEADER.size)
        if not raw:
            return None
        magic, version, d, n_x, n_s, _, t, L, s_max, ds = header_u(raw)
        if magic != MAGIC:
            raise DomainError(f"Not a snapshot frame, magic `{magic!r}`")
        if version != VERSION:
            raise DomainError(f"Unsupported snapshot version `{version}`")
        spatial = SpatialGrid(d, L, n_x)
        activity = ActivityGrid(s_max, n_s)
        if abs(activity.ds - ds) > 1e-12 * ds:
            raise DomainError(f"Inconsistent header: s_max/n_s = `{activity.ds}` but Δs = `{ds}`")
        size = spatial.n_points * n_s * 8
        body = io.read(size)
        if len(body) != size:
            raise DomainError(f"Truncated frame: expected `{size}` bytes, got `{len(body)}`")
        values = np.frombuffer(body, dtype="<f8").reshape(spatial.n_points, n_s)
        return DensityField.from_values(spatial, activity, values, t)


def scan(io: "IO[bytes]") -> "Iterator[DensityField]":
    while (field := peek(io)) is not None:
        yield field


def _convert(df: pl.DataFrame, mode: "Mode") -> "pl.DataFrame | pd.DataFrame":
    if mode == "pl":
        return df
    if mode == "pd":
        return df.to_arrow().to_pandas(self_destruct=True)
    raise DomainError(f"Unknown table mode `{mode}`")


def _x_columns(grid: SpatialGrid) -> "dict[str, NDArray[np.float64]]":
    return {f"x{i}": c.ravel() for i, c in enumerate(grid.coords())}


def snapshot_table(fields: "Iterable[DensityField]", mode: "Mode" = "pl") -> "pl.DataFrame | pd.DataFrame":
    frames = []
    for f in fields:
        n_points, n_s = f.values.shape
        xs = {k: np.repeat(v, n_s) for k, v in _x_columns(f.spatial).items()}
        frames.append(
            pl.DataFrame(
                {
                    "t": np.full(n_points * n_s, f.t),
                    **xs,
                    "s": np.tile(f.activity.centers, n_points),
                    "rho": f.values.ravel(),
                }
            )
        )
    if not frames:
        raise DomainError("No snapshots to tabulate")
    return _convert(pl.concat(frames), mode)


def series_table(
    times: "ArrayLike", values: "ArrayLike", grid: SpatialGrid, name: str, mode: "Mode" = "pl"
) -> "pl.DataFrame | pd.DataFrame":
    """Long table of a per-x time series, `values` shaped (time, n_points)."""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64).reshape(t.size, grid.n_points)
    xs = {k: np.tile(c, t.size) for k, c in _x_columns(grid).items()}
    return _convert(pl.DataFrame({"t": np.repeat(t, grid.n_points), **xs, name: v.ravel()}), mode)


def population_table(
    times: "ArrayLike", values: "ArrayLike", grid: SpatialGrid, name: str, mode: "Mode" = "pl"
) -> "pl.DataFrame | pd.DataFrame":
    """As `series_table` for four-population series shaped (time, 4, n_points), with a leading `beta` column."""
    v = np.asarray(values, dtype=np.float64)
    frames = []
    for b, beta in enumerate(ORIENTATIONS):
        df = typing.cast(pl.DataFrame, series_table(times, v[:, b], grid, name))
        frames.append(df.select(pl.lit(beta).alias("beta"), pl.all()))
    return _convert(pl.concat(frames), mode)


def write_csv(df: "pl.DataFrame | pd.DataFrame", path: "str | os.PathLike[str]") -> None:
    table = df if isinstance(df, pl.DataFrame) else pl.from_pandas(df)
    table.write_csv(path)
    logger.debug(f"Wrote {table.height} rows to {path}")
