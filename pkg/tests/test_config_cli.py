import json
from pathlib import Path

import numpy as np
import polars as pl
import pytest

from ..nfsf import cli
from ..nfsf.config import load_config, parse_config, shifts_array
from ..nfsf.errors import ConfigError, ConvergenceError
from ..nfsf.snapshot import scan

UNKNOWN_KEY = """{
  "model": {
    "sigma": 1.0,
    "bogus": 2
  }
}
"""

NEGATIVE_SIGMA = """{
  "model": {
    "sigma": -1.0
  }
}
"""

TRAILING_COMMA = """{
  "model": {
    "sigma": 1.0,
  }
}
"""

TABULATED_PHI = """{
  "model": {
    "phi": {"form": "custom-tabulated"}
  }
}
"""

KERNEL_OFF_GRID = """{
  "grid": {"n_x": 4},
  "model": {
    "kernel": {"form": "tabulated", "samples": [1.0, 2.0]}
  }
}
"""


def _config(tmp_path: Path, **changes: object) -> Path:
    payload = {
        "model": {"sigma": 1.0, "phi": {"form": "linear"}, "kernel": {"form": "constant", "value": 0.0}, "input": {"value": 0.5}},
        "grid": {"d": 1, "L": 1.0, "n_x": 4, "s_max": 10.0, "n_s": 100},
        "solver": {"dt": 0.01, "t_end": 0.1},
        "output": {"n_times": 5, "n_fields": 2},
        **changes,
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def test_defaults() -> None:
    cfg = parse_config("{}")
    assert cfg.model.sigma == 1.0
    assert cfg.solver_config().scheme == "chang-cooper"
    assert cfg.stefan_config().t_end == cfg.solver.t_end
    assert cfg.resolved()["seed"] == 0
    assert len(cfg.population_inputs()) == 4


def test_unknown_key_line() -> None:
    with pytest.raises(ConfigError) as e:
        parse_config(UNKNOWN_KEY, "run.json")
    assert e.value.line == 4
    assert e.value.path == "run.json"
    assert "model.bogus" in str(e.value)
    assert str(e.value).startswith("run.json:4: Unknown key")


def test_validation_line() -> None:
    with pytest.raises(ConfigError) as e:
        parse_config(NEGATIVE_SIGMA)
    assert e.value.line == 3
    assert "model.sigma" in str(e.value)


def test_invalid_json_line() -> None:
    with pytest.raises(ConfigError) as e:
        parse_config(TRAILING_COMMA)
    assert e.value.line == 4
    with pytest.raises(ConfigError) as e:
        parse_config("[1, 2]")
    assert e.value.line == 1


def test_tabulated_sections_line() -> None:
    with pytest.raises(ConfigError) as e:
        parse_config(TABULATED_PHI, "run.json")
    assert e.value.line == 3
    assert "model.phi" in str(e.value) and "knots" in str(e.value)

    with pytest.raises(ConfigError) as e:
        parse_config(KERNEL_OFF_GRID)
    assert e.value.line == 4
    assert "model.kernel" in str(e.value)

    with pytest.raises(ConfigError) as e:
        parse_config('{"model": {\n"input": {"form": "tabulated", "values": [1.0]}}}')
    assert e.value.line == 2
    with pytest.raises(ConfigError) as e:
        parse_config('{"model": {"input": {"form": "tabulated", "times": [1.0, 0.0], "values": [1.0, 2.0]}}}')
    assert "increasing" in str(e.value)
    with pytest.raises(ConfigError) as e:
        parse_config('{"gridcell": {"inputs": [{}, {}, {},\n{"form": "tabulated"}]}}')
    assert e.value.line == 2

    cfg = parse_config('{"model": {"phi": {"form": "custom-tabulated", "knots": [0.0, 1.0], "values": [0.0, 2.0]}}}')
    assert cfg.params().phi(0.5) == pytest.approx(1.0)


def test_shifts() -> None:
    cfg = parse_config('{"grid": {"d": 2, "n_x": 8}}')
    np.testing.assert_array_equal(shifts_array(cfg), np.zeros((4, 2)))
    cfg = parse_config('{"gridcell": {"shifts": [[0.1], [0.0], [-0.1], [0.0]]}}')
    np.testing.assert_allclose(shifts_array(cfg)[:, 0], [0.1, 0.0, -0.1, 0.0])
    with pytest.raises(ConfigError):
        parse_config('{"gridcell": {"shifts": [[0.1], [0.0], [-0.1]]}}')
    with pytest.raises(ConfigError) as e:
        parse_config('{\n"grid": {"d": 2},\n"gridcell": {"shifts": [[0.0, 0.0], [0.0, 0.0],\n[1.0, 2.0, 3.0], [0.0, 0.0]]}}')
    assert e.value.line == 4


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(ConfigError) as e:
        load_config(tmp_path / "absent.json")
    assert e.value.path is not None and e.value.path.endswith("absent.json")


def test_equilibrium_command(tmp_path: Path) -> None:
    out = tmp_path / "eq"
    assert cli.main(["equilibrium", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
    table = pl.read_csv(out / "equilibrium.csv")
    assert table["Phi0"][0] == pytest.approx(0.5)
    assert json.loads((out / "config.json").read_text())["grid"]["n_x"] == 4
    assert json.loads((out / "summary.json").read_text())["roots"] == [pytest.approx(0.5)]
    assert (out / "profile.csv").exists()
    # a second run replaces the directory
    assert cli.main(["equilibrium", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["eq", "run.json"]


def test_bad_config_exit(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "bad.json"
    path.write_text(UNKNOWN_KEY, encoding="utf-8")
    out = tmp_path / "out"
    assert cli.main(["simulate", "--config", str(path), "--out", str(out)]) == 2
    assert not out.exists()
    assert ":4:" in capsys.readouterr().err
    path.write_text(TABULATED_PHI, encoding="utf-8")
    assert cli.main(["simulate", "--config", str(path), "--out", str(out)]) == 2
    assert not out.exists()
    assert "bad.json:3:" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", str(_config(tmp_path)), "--out", str(out), "--snapshot-stride", "0"]) == 2
    assert not out.exists()


def test_seeded_runs_repeat(tmp_path: Path) -> None:
    path = _config(tmp_path, experiment={"initial": "perturbed-equilibrium", "relative_entropy": 1e-4})
    outs = [tmp_path / name for name in ("a", "b", "c")]
    for out, seed in zip(outs, ("7", "7", "8")):
        assert cli.main(["simulate", "--config", str(path), "--out", str(out), "--seed", seed]) == 0
    a, b, c = ((out / "snapshots.csv").read_text() for out in outs)
    assert a == b
    assert a != c
    with open(outs[0] / "snapshots.nfsf", "rb") as io:
        fields = list(scan(io))
    assert len(fields) == 11
    assert fields[-1].t == pytest.approx(0.1)


def test_stability_command(tmp_path: Path) -> None:
    out = tmp_path / "stab"
    path = _config(tmp_path, stability={"poincare": "conservative", "K_max": 2})
    assert cli.main(["stability-check", "--config", str(path), "--out", str(out)]) == 0
    report = json.loads((out / "stability.json").read_text())
    assert report["conditions"][0]["name"] == "stab1"
    assert report["K"] == pytest.approx(0.5)
    assert pl.read_csv(out / "fourier.csv").height == 5


def test_convergence_failure_exit(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def fail(*args: object, **kwargs: object) -> None:
        raise ConvergenceError("No root", (0.0, 1.0))

    monkeypatch.setattr(cli, "homogeneous_branch", fail)
    out = tmp_path / "fail"
    assert cli.main(["equilibrium", "--config", str(_config(tmp_path)), "--out", str(out)]) == 3
    diagnostics = json.loads((out / "diagnostics.json").read_text())
    assert diagnostics["error"] == "ConvergenceError"
    assert diagnostics["bracket"] == [0.0, 1.0]
    assert not (out / "summary.json").exists()


def test_stefan_and_crosscheck_commands(tmp_path: Path) -> None:
    path = _config(tmp_path, stefan={"dtau": 0.005})
    out = tmp_path / "stefan"
    assert cli.main(["stefan", "--config", str(path), "--out", str(out)]) == 0
    mean = pl.read_csv(out / "mean.csv")
    assert mean.columns == ["t", "x0", "rho_bar"]
    assert mean.height == 5 * 4
    assert pl.read_csv(out / "boundary.csv").columns == ["t", "x0", "rho_0"]
    assert pl.read_csv(out / "snapshots.csv").columns == ["t", "x0", "s", "rho"]
    assert json.loads((out / "summary.json").read_text())["windows"] >= 1

    out = tmp_path / "cross"
    assert cli.main(["crosscheck", "--config", str(path), "--out", str(out)]) == 0
    table = pl.read_csv(out / "agreement.csv")
    assert table.columns == ["t", "l1_field", "mean_max_diff", "boundary_max_diff"]
    assert table["t"].to_list() == pytest.approx([0.0, 0.1])
    assert table["l1_field"][0] < 1e-10
    assert json.loads((out / "summary.json").read_text())["max_l1"] == pytest.approx(table["l1_field"].max())


def test_gridcell_command(tmp_path: Path) -> None:
    path = _config(
        tmp_path,
        model={"phi": {"form": "linear"}, "kernel": {"form": "cosine", "amplitude": 0.2}, "input": {"value": 0.5}},
        gridcell={"shifts": [[0.25], [0.0], [-0.25], [0.0]]},
        experiment={"initial": "perturbed-equilibrium", "relative_entropy": 1e-4},
    )
    out = tmp_path / "grid"
    assert cli.main(["gridcell", "--config", str(path), "--out", str(out)]) == 0
    mean = pl.read_csv(out / "mean.csv")
    assert mean.columns == ["beta", "t", "x0", "rho_bar"]
    assert sorted(mean["beta"].unique().to_list()) == ["E", "N", "S", "W"]
    assert mean.height == 4 * 11 * 4
    assert pl.read_csv(out / "boundary.csv").columns == ["beta", "t", "x0", "rho_0"]
    entropy = pl.read_csv(out / "entropy.csv")
    assert entropy.columns == ["t", "relative_entropy"]
    assert entropy.height == 11
    assert entropy["relative_entropy"][0] == pytest.approx(4e-4, rel=1e-8)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["shifts"] == [[0.25], [0.0], [-0.25], [0.0]]
    assert [c["name"] for c in summary["conditions"]] == ["shift", "nonsymmetric_extra"]


def test_entropy_track_command(tmp_path: Path) -> None:
    path = _config(tmp_path, solver={"dt": 0.01, "t_end": 0.5})
    out = tmp_path / "entropy"
    assert cli.main(["entropy-track", "--config", str(path), "--out", str(out), "--seed", "3"]) == 0
    trace = pl.read_csv(out / "entropy.csv")
    assert trace.columns == ["t", "relative_entropy", "Q"]
    assert trace.height == 51
    assert trace["relative_entropy"][0] == pytest.approx(1e-4, rel=1e-8)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["rate"] > 0.0
    assert summary["K"] > 0.0
    assert summary["q_sandwich_holds"] is True
