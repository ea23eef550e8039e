"""`nfsf` command line: one subcommand per experiment, outputs written atomically into a run directory."""
import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
import typing
from pathlib import Path

import numpy as np
import polars as pl

from .config import RunConfig, load_config, shifts_array
from .equilibrium import EquilibriumState, homogeneous_branch
from .errors import ConditionFailed, ConfigError, ConvergenceError, DivergenceError, DomainError
from .gridcell import PopulationSet, shift_condition, simulate4, snap_shifts, summed_relative_entropy
from .model import ActivityGrid, DensityField
from .numerics import fourier_modes
from .snapshot import dump, population_table, series_table, snapshot_table, write_csv
from .solvers.direct import simulate
from .solvers.stefan import run_stefan
from .stability import (
    check_nonlinear_condition,
    decay_rate_prediction,
    entropy_trace,
    linear_fourier_threshold,
    poincare_constant,
    q_sandwich,
    relative_entropy,
    seeded_perturbation,
    stability_report,
)

if typing.TYPE_CHECKING:
    from typing import Any, Callable, Sequence

    from .model import ModelParams

__all__ = ["main", "COMMANDS"]

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: "Any") -> None:
    def default(o: "Any") -> "Any":
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"Not serializable: `{type(o).__name__}`")

    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=default) + "\n", encoding="utf-8")


def _set_threads(threads: "int | None") -> None:
    n = threads if threads is not None else os.environ.get("NFSF_THREADS")
    if n is None:
        return
    with contextlib.suppress(ImportError):
        import numba

        numba.set_num_threads(int(n))
        logger.info(f"Using {int(n)} numba threads")


class _Setup:
    """Parameters, grids and the stationary state shared by the subcommands."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg
        self.p: "ModelParams" = cfg.params()
        self.rng = np.random.default_rng(cfg.seed)
        self._state: "EquilibriumState | None" = None
        phi_b = float(self.p.phi(self.p.B.value(0.0)))
        phi_max = max(abs(cfg.experiment.center), abs(phi_b))
        if self.p.B.is_constant:
            with contextlib.suppress(ConvergenceError, DomainError):
                coarse = homogeneous_branch(self.p, ActivityGrid.create(1.0, 32))
                phi_max = max(phi_max, float(np.max(np.abs(coarse.roots))))
        self.activity = cfg.activity(phi_max)

    @property
    def state(self) -> EquilibriumState:
        if self._state is None:
            self._state = homogeneous_branch(self.p, self.activity)
        return self._state

    def initial(self) -> DensityField:
        e = self.cfg.experiment
        if e.initial == "half-gaussian":
            return DensityField.half_gaussian(self.p.grid, self.activity, self.p.sigma, e.center)
        if e.initial == "equilibrium":
            return self.state.profile
        return seeded_perturbation(self.state, self.rng, target_re=e.relative_entropy, mode=e.mode, uniform=e.uniform)


def _strided(times: "np.ndarray", values: "np.ndarray", stride: int) -> "tuple[np.ndarray, np.ndarray]":
    idx = np.unique(np.r_[np.arange(0, times.size, stride), times.size - 1])
    return times[idx], values[idx]


def _write_fields(fields: "Sequence[DensityField]", dest: Path, binary: bool) -> None:
    write_csv(snapshot_table(fields), dest / "snapshots.csv")
    if binary:
        with open(dest / "snapshots.nfsf", "wb") as io:
            dump(fields, io)


def cmd_simulate(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    cfg, p = s.cfg, s.p
    run = simulate(s.initial(), p, cfg.solver_config(), with_tqdm=with_tqdm)
    _write_fields(run.snapshots, dest, cfg.output.binary)
    stride = cfg.output.snapshot_stride
    write_csv(series_table(*_strided(run.step_times, run.means, stride), p.grid, "rho_bar"), dest / "mean.csv")
    write_csv(series_table(*_strided(run.step_times, run.boundary, stride), p.grid, "rho_0"), dest / "boundary.csv")
    return {"mass_defect": run.mass_defect, "wall_mass": run.wall_mass, "t_end": run.final.t}


def cmd_stefan(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    cfg, p = s.cfg, s.p
    scfg = cfg.stefan_config()
    run = run_stefan(s.initial(), p, scfg, with_tqdm=with_tqdm)
    times = np.linspace(0.0, scfg.t_end, cfg.output.n_times)
    write_csv(series_table(times, run.mean_trace(times), p.grid, "rho_bar"), dest / "mean.csv")
    write_csv(series_table(times, run.boundary_trace(times), p.grid, "rho_0"), dest / "boundary.csv")
    fields = [run.field(float(t)) for t in np.linspace(0.0, scfg.t_end, cfg.output.n_fields)]
    _write_fields(fields, dest, cfg.output.binary)
    return {
        "windows": len(run.windows),
        "picard_iterations": int(sum(w[2] for w in run.windows)),
        "lipschitz_defect": run.triple.lipschitz_defect(),
    }


def _scalar_table(state: EquilibriumState) -> "dict[str, list[float]]":
    return {k: [v] for k, v in state.scalars().items()}


def cmd_equilibrium(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    state = s.state
    write_csv(pl.DataFrame(_scalar_table(state)), dest / "equilibrium.csv")
    write_csv(pl.DataFrame({"Phi0": list(state.roots)}), dest / "roots.csv")
    write_csv(snapshot_table([state.profile]), dest / "profile.csv")
    return {**state.scalars(), "roots": list(state.roots)}


def cmd_stability_check(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    st = s.cfg.stability
    state = s.state
    report = stability_report(state, s.p, alpha=st.alpha, xi=st.xi, K_max=st.K_max, poincare=st.poincare)
    _write_json(dest / "stability.json", report.to_dict())
    write_csv(report.to_frame(), dest / "conditions.csv")
    if state.homogeneous:
        margins = linear_fourier_threshold(state, fourier_modes(s.p.W, st.K_max))
        write_csv(margins.to_frame(), dest / "fourier.csv")
    return {"passed": [c.name for c in report.conditions if c.passed], "K": report.K}


def cmd_entropy_track(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    cfg, p, st = s.cfg, s.p, s.cfg.stability
    state = s.state
    rho0 = seeded_perturbation(
        state, s.rng, target_re=cfg.experiment.relative_entropy, mode=cfg.experiment.mode, uniform=cfg.experiment.uniform
    )
    run = simulate(rho0, p, cfg.solver_config(), with_tqdm=with_tqdm)
    trace = entropy_trace(run.snapshots, state, p)
    write_csv(trace.to_frame(), dest / "entropy.csv")
    gamma = poincare_constant(state, st.poincare)
    summary: "dict[str, Any]" = {"rate": trace.rate, "r2": trace.r2, "excluded_mass": trace.excluded_mass}
    try:
        summary["K"], summary["K_eps"] = decay_rate_prediction(
            state, p, relative_entropy(rho0, state), eps=st.eps, gamma=gamma
        )
    except ConditionFailed as e:
        summary["K"] = None
        summary["prediction"] = str(e)
    if state.homogeneous and p.W.componentwise_symmetric:
        record, _ = check_nonlinear_condition(state, p, st.alpha, st.K_max)
        if record.passed:
            summary["q_sandwich_holds"] = bool(np.all(q_sandwich(trace, state, p, st.alpha)))
    return summary


def cmd_gridcell(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    cfg, p, st = s.cfg, s.p, s.cfg.stability
    physical = shifts_array(cfg)
    steps = snap_shifts(p.grid, physical)
    inputs = cfg.population_inputs()
    if cfg.experiment.initial == "perturbed-equilibrium":
        fields = [s.initial() for _ in range(4)]
        pop = PopulationSet.create(fields, steps, inputs)
    else:
        pop = PopulationSet.uniform(s.initial(), p, steps, inputs)
    run = simulate4(pop, p, cfg.solver_config(), with_tqdm=with_tqdm)
    stride = cfg.output.snapshot_stride
    idx = np.unique(np.r_[np.arange(0, run.step_times.size, stride), run.step_times.size - 1])
    write_csv(population_table(run.step_times[idx], run.means[idx], p.grid, "rho_bar"), dest / "mean.csv")
    write_csv(population_table(run.step_times[idx], run.boundary[idx], p.grid, "rho_0"), dest / "boundary.csv")
    summary: "dict[str, Any]" = {"shifts": pop.physical_shifts}
    with contextlib.suppress(ConvergenceError, DomainError):
        state = s.state
        if state.homogeneous:
            records = shift_condition(state, p, pop.physical_shifts, st.alpha, st.xi)
            summary["conditions"] = [r.to_dict() for r in records]
            re = [summed_relative_entropy(snap, state) for snap in run.snapshots]
            write_csv(pl.DataFrame({"t": run.times, "relative_entropy": re}), dest / "entropy.csv")
    return summary


def cmd_crosscheck(s: _Setup, dest: Path, with_tqdm: bool) -> "dict[str, Any]":
    cfg, p = s.cfg, s.p
    rho0 = s.initial()
    direct = simulate(rho0, p, cfg.solver_config(), with_tqdm=with_tqdm)
    stefan = run_stefan(rho0, p, cfg.stefan_config(), with_tqdm=with_tqdm)
    snaps = direct.snapshots
    pick = np.unique(np.linspace(0, len(snaps) - 1, min(cfg.output.n_fields, len(snaps))).round().astype(int))
    rows: "dict[str, list[float]]" = {"t": [], "l1_field": [], "mean_max_diff": [], "boundary_max_diff": []}
    for i in pick:
        f = snaps[int(i)]
        k = int(np.argmin(np.abs(direct.step_times - f.t)))
        rows["t"].append(f.t)
        rows["l1_field"].append(f.l1_distance(stefan.field(f.t)))
        rows["mean_max_diff"].append(float(np.max(np.abs(direct.means[k] - stefan.mean_trace([f.t])[0]))))
        rows["boundary_max_diff"].append(float(np.max(np.abs(direct.boundary[k] - stefan.boundary_trace([f.t])[0]))))
    write_csv(pl.DataFrame(rows), dest / "agreement.csv")
    return {"max_l1": max(rows["l1_field"])}


COMMANDS: "dict[str, Callable[[_Setup, Path, bool], dict[str, Any]]]" = {
    "simulate": cmd_simulate,
    "stefan": cmd_stefan,
    "equilibrium": cmd_equilibrium,
    "stability-check": cmd_stability_check,
    "entropy-track": cmd_entropy_track,
    "gridcell": cmd_gridcell,
    "crosscheck": cmd_crosscheck,
}


def _parse_args(argv: "Sequence[str] | None" = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="nfsf", description="Neural-field Fokker–Planck solvers and stability checks.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, required=True)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--snapshot-stride", dest="snapshot_stride", type=int)
    parser.add_argument("--log-level", dest="log_level", default="WARNING")
    parser.add_argument("--progress", action="store_true", help="show tqdm progress bars")
    return parser.parse_args(argv)


def _publish(tmp: Path, out: Path) -> None:
    """Replace `out` by `tmp` with renames only."""
    old = None
    if out.exists():
        old = out.with_name(f".{out.name}.old-{os.getpid()}")
        out.rename(old)
    tmp.rename(out)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.snapshot_stride is not None:
        if args.snapshot_stride < 1:
            raise ConfigError(f"Snapshot stride must be at least 1, got `{args.snapshot_stride}`")
        cfg = cfg.model_copy(update={"output": cfg.output.model_copy(update={"snapshot_stride": args.snapshot_stride})})
    return cfg


def main(argv: "Sequence[str] | None" = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    _set_threads(args.threads)
    try:
        cfg = _resolve(args)
        setup = _Setup(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(f"error: {args.config}: {e}", file=sys.stderr)
        return 2

    out: Path = args.out
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    code = 0
    try:
        _write_json(tmp / "config.json", cfg.resolved())
        try:
            summary = COMMANDS[args.command](setup, tmp, args.progress)
            _write_json(tmp / "summary.json", summary)
        except (DivergenceError, ConvergenceError) as e:
            diagnostics: "dict[str, Any]" = {"error": type(e).__name__, "message": str(e)}
            if isinstance(e, DivergenceError):
                diagnostics.update(e.diagnostics)
            else:
                diagnostics["bracket"] = e.bracket
            _write_json(tmp / "diagnostics.json", diagnostics)
            print(f"error: {e}", file=sys.stderr)
            code = 3
        _publish(tmp, out)
    except DomainError as e:
        shutil.rmtree(tmp, ignore_errors=True)
        print(f"error: {args.config}: {e}", file=sys.stderr)
        return 2
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    logger.info(f"Run `{args.command}` written to {out}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
