from io import BytesIO
from pathlib import Path

import numpy as np
import pandas as pd
import polars as pl
import pytest

from ..nfsf.core import HEADER
from ..nfsf.errors import DomainError
from ..nfsf.model.density import DensityField
from ..nfsf.model.grids import ActivityGrid, SpatialGrid
from ..nfsf.snapshot import dump, peek, population_table, scan, series_table, snapshot_table, write_csv


def _fields(d: int = 1) -> "list[DensityField]":
    g = SpatialGrid.create(d, 2.0, 3)
    a = ActivityGrid.create(8.0, 32)
    rho = DensityField.half_gaussian(g, a, 1.0, np.linspace(0.0, 1.0, g.n_points))
    return [rho, rho.with_values(rho.values[::-1], 0.5)]


def test_header_size() -> None:
    assert HEADER.size == 64


def test_dump() -> None:
    fields = _fields()
    with BytesIO() as io:
        i = dump(fields, io)
        b = io.getvalue()
    assert i == len(b) == 2 * (64 + 3 * 32 * 8)
    assert b[:4] == b"NFSF"


def test_dump_and_read() -> None:
    fields = _fields(2)
    with BytesIO() as io:
        dump(fields, io)
        io.seek(0)
        read = list(scan(io))

    assert len(read) == 2
    for a, b in zip(fields, read):
        assert a.t == b.t
        assert a.spatial.same_as(b.spatial) and a.activity.same_as(b.activity)
        np.testing.assert_array_equal(a.values, b.values)


def test_bad_magic_rewinds() -> None:
    with BytesIO() as io:
        dump(_fields()[:1], io)
        raw = bytearray(io.getvalue())
    raw[:4] = b"XXXX"
    with BytesIO(bytes(raw)) as io:
        with pytest.raises(DomainError):
            peek(io)
        assert io.tell() == 0


def test_truncated_frame() -> None:
    with BytesIO() as io:
        dump(_fields()[:1], io)
        raw = io.getvalue()
    with BytesIO(raw[:-8]) as io:
        with pytest.raises(DomainError):
            peek(io)
    with BytesIO(b"") as io:
        assert peek(io) is None


def test_snapshot_table() -> None:
    df = snapshot_table(_fields(2))
    assert isinstance(df, pl.DataFrame)
    assert df.columns == ["t", "x0", "x1", "s", "rho"]
    assert df.height == 2 * 9 * 32
    assert sorted(df["t"].unique().to_list()) == [0.0, 0.5]

    pdf = snapshot_table(_fields(), mode="pd")
    assert isinstance(pdf, pd.DataFrame)
    assert list(pdf.columns) == ["t", "x0", "s", "rho"]
    with pytest.raises(DomainError):
        snapshot_table([])


def test_series_tables(tmp_path: Path) -> None:
    g = SpatialGrid.create(1, 1.0, 4)
    times = np.array([0.0, 1.0, 2.0])
    df = series_table(times, np.arange(12.0).reshape(3, 4), g, "rho_bar")
    assert df.columns == ["t", "x0", "rho_bar"]
    assert df.filter(pl.col("t") == 1.0)["rho_bar"].to_list() == [4.0, 5.0, 6.0, 7.0]

    pop = population_table(times, np.zeros((3, 4, 4)), g, "rho_0")
    assert pop.columns == ["beta", "t", "x0", "rho_0"]
    assert pop["beta"].unique(maintain_order=True).to_list() == ["N", "W", "S", "E"]

    write_csv(pop, tmp_path / "pop.csv")
    back = pl.read_csv(tmp_path / "pop.csv")
    assert back.height == 48
    write_csv(population_table(times, np.zeros((3, 4, 4)), g, "rho_0", mode="pd"), tmp_path / "pop_pd.csv")
    assert (tmp_path / "pop_pd.csv").read_text() == (tmp_path / "pop.csv").read_text()
