"""Command line front end: subcommands, config files, CSV and manifest output.

One executable wires the library into six reporting pipelines:

    dns              field solvers; one nodal CSV per recorded snapshot
    vsi              stepwise operator elimination on a saved library
    graph            non-local calculus pipeline on a labeled point cloud
    idnn             train / eval / convexity-scan for gradient-trained nets
    active-learning  sampling workflow with per-round free-energy slices
    allen-cahn-rom   trajectory ensemble -> observables -> reduced model

Every run writes its artifacts into --out-dir, renders matplotlib figures
next to the delimited output unless --no-figures is passed, and finishes by
writing manifest.json exactly once (config snapshot, seeds, paths, wall
clock, sha256 checksums of the emitted files).

Configs are INI files; command line flags override file values. The graph
subcommand is the exception: its settings file uses flat dotted keys, one
per line, mirroring the nested-mapping structure the pipeline consumes.

Exit codes: 0 success, 1 usage error, 2 data/solver/filesystem error, with
a one-line diagnostic on standard error. Floats are printed with 17
significant digits so every value survives a round trip through text.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import active, dns, fem, graphcalc, nets, observables, regression, util, weakform
from .errors import ConfigurationError, DataError, FieldlearnError

SOLVERS = ("allen-cahn", "schnakenberg", "steady-diffusion")
IDNN_MODES = ("train", "eval", "convexity-scan")
BASIS_NAMES = ("B1", "B2", "B3")


# ---------------------------------------------------------------------------
# Tabular output
# ---------------------------------------------------------------------------

def emit_plot_data(table, path, gnuplot: bool = False) -> Path:
    """Write a rectangular table: CSV with header, or, with `gnuplot` set,
    whitespace-separated columns behind a '#' header line."""
    if not isinstance(table, pd.DataFrame):
        try:
            table = pd.DataFrame(table)
        except ValueError as exc:
            raise DataError(f"plot table is not rectangular: {exc}") from exc
    path = Path(path)
    if not gnuplot:
        table.to_csv(path, index=False, float_format=util.FLOAT_FMT)
        return path
    lines = ["# " + " ".join(str(c) for c in table.columns)]
    for row in table.itertuples(index=False):
        lines.append(" ".join(_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return util.fmt(float(value))
    return str(value)


def write_field_csv(mesh, values, path) -> Path:
    """Nodal field as one row per node: x[, y], value."""
    coords = mesh.node_coords()
    table = {"x": coords[:, 0]}
    if coords.shape[1] == 2:
        table["y"] = coords[:, 1]
    table["value"] = np.asarray(values, dtype=float)
    return emit_plot_data(table, path)


def write_series(series, out_dir: Path, prefix: str) -> list[Path]:
    """One snapshot CSV per recorded time, numbered in time order."""
    return [write_field_csv(series.mesh, series.values[j],
                            out_dir / f"{prefix}_{j:04d}.csv")
            for j in range(series.n_times)]


def write_library(library: weakform.OperatorLibrary, out_dir: Path,
                  target_label: str = "dc/dt") -> list[Path]:
    """Persist a regression system as y.csv / chi.csv / dof_map.csv."""
    out_dir = Path(out_dir)
    paths = [
        emit_plot_data({target_label: library.y}, out_dir / "y.csv"),
        emit_plot_data(pd.DataFrame(library.chi, columns=list(library.labels)),
                       out_dir / "chi.csv"),
        emit_plot_data(pd.DataFrame(library.dof_map, columns=["node", "time"]),
                       out_dir / "dof_map.csv"),
    ]
    return paths


def read_library(y_path, chi_path, dof_path=None) -> weakform.OperatorLibrary:
    """Inverse of write_library; a missing dof_map gets row-index placeholders."""
    y_table = pd.read_csv(y_path, float_precision="round_trip")
    if y_table.shape[1] != 1:
        raise DataError(f"{y_path} must hold exactly one target column, "
                        f"found {y_table.shape[1]}")
    chi_table = pd.read_csv(chi_path, float_precision="round_trip")
    y = y_table.iloc[:, 0].to_numpy(dtype=float)
    if dof_path is not None:
        dof_map = pd.read_csv(dof_path).to_numpy(dtype=int)
    else:
        dof_map = np.column_stack([np.arange(len(y)),
                                   np.zeros(len(y), dtype=int)])
    return weakform.OperatorLibrary(y, chi_table.to_numpy(dtype=float),
                                    tuple(chi_table.columns), dof_map)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunManifest:
    """Provenance record for one CLI run, written once as manifest.json."""

    subcommand: str
    config: dict
    seeds: dict
    inputs: tuple
    outputs: tuple
    wall_clock_s: float
    checksums: dict


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    payload = dataclasses.asdict(manifest)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               default=_jsonable) + "\n")
    return path


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__} into the manifest")


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class _RunResult:
    config: dict
    seeds: dict
    inputs: list
    outputs: list


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _read_ini(path) -> configparser.ConfigParser | None:
    if path is None:
        return None
    parser = configparser.ConfigParser()
    parser.optionxform = str
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"{path} is not valid INI: {exc}") from exc
    return parser


def _section(ini, name: str) -> dict:
    if ini is None or not ini.has_section(name):
        return {}
    return dict(ini.items(name))


def _resolve_seed(args, cfg: dict, default: int = 0) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in cfg:
        return int(cfg["seed"])
    return default


def _numbers(raw: str):
    """'300' -> 300, '1e-3' -> 0.001, '65 65' or '20, 20' -> tuple."""
    parts = [p for chunk in str(raw).split(",") for p in chunk.split()]
    if len(parts) != 1:
        return tuple(_numbers(p) for p in parts)
    text = parts[0]
    try:
        return int(text)
    except ValueError:
        try:
            return float(text)
        except ValueError:
            raise ConfigurationError(f"expected a number, got {text!r}") from None


def _int_tuple(raw: str) -> tuple:
    value = _numbers(raw)
    if isinstance(value, (int, float)):
        value = (value,)
    return tuple(int(v) for v in value)


def _pair(value, key: str) -> tuple:
    if isinstance(value, (int, float)):
        value = (value,)
    if len(value) != 2:
        raise ConfigurationError(f"{key} needs exactly two values, got {value}")
    return tuple(value)


def _params_from(cls, overrides: dict):
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise ConfigurationError(
            f"unknown parameter(s) {unknown}; valid keys: {sorted(valid)}")
    return cls(**overrides)


def _collect_overrides(cfg_section: dict, flag_params: list) -> dict:
    overrides = {}
    for key, raw in cfg_section.items():
        if key in ("solver", "seed", "record_every", "bc_image"):
            continue
        overrides[key] = _numbers(raw)
    for item in flag_params:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--param expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = _numbers(raw)
    return overrides


def _stepwise_from_ini(ini) -> regression.StepwiseConfig:
    """Rebuild the [VSI]/[StepwiseRegression] sections for the shared parser."""
    lines = []
    for section in ("VSI", "StepwiseRegression"):
        if ini is not None and ini.has_section(section):
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in ini.items(section))
    if not lines:
        return regression.StepwiseConfig()
    return regression.parse_config("\n".join(lines))


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save_figure(fig, path: Path) -> Path:
    fig.savefig(path, dpi=130, bbox_inches="tight")
    _pyplot().close(fig)
    return path


def _figure_field(mesh, values, title: str, path: Path) -> Path:
    plt = _pyplot()
    coords = mesh.node_coords()
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    if coords.shape[1] == 1:
        ax.plot(coords[:, 0], values, lw=1.2)
        ax.set_xlabel("x")
        ax.set_ylabel("value")
    else:
        sc = ax.scatter(coords[:, 0], coords[:, 1], c=values, s=6, marker="s")
        fig.colorbar(sc, ax=ax, shrink=0.85)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal")
    ax.set_title(title)
    return _save_figure(fig, path)


def _figure_curve(x, y, labels: tuple, title: str, path: Path,
                  logy: bool = False, marker_at=None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    plot = ax.semilogy if logy else ax.plot
    plot(x, y, lw=1.4)
    if marker_at is not None:
        plot([x[marker_at]], [y[marker_at]], "o", ms=7, mfc="none")
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.set_title(title)
    return _save_figure(fig, path)


def _figure_slice(eta0, eta1, values, samples, centers, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.8, 4.4))
    tc = ax.tricontourf(eta0, eta1, values, levels=30)
    fig.colorbar(tc, ax=ax, shrink=0.85, label="free energy")
    if samples is not None and len(samples):
        ax.plot(samples[:, 0], samples[:, 1], ".", ms=2, color="k", alpha=0.4)
    ax.plot(centers[:, 0], centers[:, 1], "w*", ms=10, mec="k")
    ax.set_xlim(eta0.min(), eta0.max())
    ax.set_ylim(eta1.min(), eta1.max())
    ax.set_xlabel("eta0")
    ax.set_ylabel("eta1")
    ax.set_title("free-energy slice (eta2 = eta3 = 0)")
    return _save_figure(fig, path)


# ---------------------------------------------------------------------------
# dns subcommand
# ---------------------------------------------------------------------------

def _run_dns(args, out_dir: Path) -> _RunResult:
    ini = _read_ini(args.config)
    cfg = _section(ini, "dns")
    solver = args.solver or cfg.get("solver")
    if solver is None:
        raise ConfigurationError("no solver selected (--solver or [dns] solver)")
    if solver not in SOLVERS:
        raise ConfigurationError(f"unknown solver {solver!r}; one of {SOLVERS}")
    seed = _resolve_seed(args, cfg)
    overrides = _collect_overrides(_section(ini, "parameters"), args.param)
    inputs = [args.config] if args.config else []

    if solver == "allen-cahn":
        n_interfaces = _pair(overrides.pop("n_interfaces", (3, 6)),
                             "n_interfaces")
        params = _params_from(dns.AllenCahnParams, overrides)
        record_every = args.record_every or int(cfg.get("record_every", 0)) \
            or max(1, params.n_steps // 20)
        phi0 = dns.allen_cahn_initial_condition(params, seed,
                                                n_interfaces=n_interfaces)
        series = dns.solve_allen_cahn_1d(params, phi0)
        keep = np.arange(0, series.n_times, record_every)
        thinned = dns.FieldSeries(series.mesh, series.times[keep],
                                  series.values[keep])
        outputs = write_series(thinned, out_dir, "snapshot")
        energy = np.array([dns.allen_cahn_energy(series.values[j], series.mesh,
                                                 params.gradient_coeff)
                           for j in range(series.n_times)])
        outputs.append(emit_plot_data(
            {"time": series.times, "free_energy": energy},
            out_dir / "energy.csv", args.gnuplot))
        if not args.no_figures:
            outputs.append(_figure_field(series.mesh, series.values[-1],
                                         "final order parameter",
                                         out_dir / "allen-cahn.png"))
            outputs.append(_figure_curve(series.times, energy,
                                         ("time", "free energy"),
                                         "relaxation", out_dir / "energy.png"))
        snapshot = {"solver": solver, "seed": seed, "record_every": record_every,
                    "n_interfaces": list(n_interfaces),
                    "parameters": dataclasses.asdict(params)}
        return _RunResult(snapshot, {"seed": seed}, inputs, outputs)

    if solver == "schnakenberg":
        params = _params_from(dns.SchnakenbergParams, overrides)
        record_every = args.record_every or int(cfg.get("record_every", 0)) \
            or max(1, params.n_steps // 20)
        mesh = fem.make_grid_mesh(params.nodes, params.lengths)
        c1_0 = dns.perturbed_uniform_ic(mesh, 1.0, 0.01, seed, stream=0)
        c2_0 = dns.perturbed_uniform_ic(mesh, 0.9, 0.01, seed, stream=1)
        record = range(0, params.n_steps + 1, record_every)
        c1, c2 = dns.solve_schnakenberg_2d(params, c1_0, c2_0,
                                           record_steps=record)
        outputs = write_series(c1, out_dir, "snapshot_c1")
        outputs += write_series(c2, out_dir, "snapshot_c2")
        if not args.no_figures:
            outputs.append(_figure_field(mesh, c1.values[-1],
                                         "final activator field",
                                         out_dir / "schnakenberg.png"))
        snapshot = {"solver": solver, "seed": seed, "record_every": record_every,
                    "parameters": dataclasses.asdict(params)}
        return _RunResult(snapshot, {"seed": seed}, inputs, outputs)

    # steady diffusion: Dirichlet/Neumann data from a BC image, or a default
    # left=1 / right=0 pair when none is given
    nodes = _pair(overrides.pop("nodes", (33, 33)), "nodes")
    lengths = tuple(float(v) for v in
                    _pair(overrides.pop("lengths", (1.0, 1.0)), "lengths"))
    diffusivity = float(overrides.pop("diffusivity", 1.0))
    if overrides:
        raise ConfigurationError(
            f"unknown parameter(s) {sorted(overrides)}; valid keys: "
            f"['diffusivity', 'lengths', 'nodes']")
    mesh = fem.make_grid_mesh(nodes, lengths)
    bc_path = args.bc_image or cfg.get("bc_image")
    if bc_path is not None:
        table = pd.read_csv(bc_path, float_precision="round_trip")
        for column in ("dirichlet", "neumann"):
            if column not in table.columns:
                raise DataError(f"{bc_path} needs a '{column}' column")
        if len(table) != mesh.n_nodes:
            raise DataError(f"{bc_path} has {len(table)} rows for "
                            f"{mesh.n_nodes} mesh nodes")
        image = table[["dirichlet", "neumann"]].to_numpy(dtype=float)
        inputs.append(Path(bc_path))
    else:
        coords = mesh.node_coords()
        image = np.full((mesh.n_nodes, 2), -1.0)
        image[coords[:, 0] == 0.0, 0] = 1.0
        image[coords[:, 0] == lengths[0], 0] = 0.0
    mask = fem.boundary_masks_from_input(image, mesh)
    solution = dns.solve_steady_diffusion(mesh, mask, diffusivity)
    outputs = [write_field_csv(mesh, solution, out_dir / "solution.csv")]
    if not args.no_figures:
        outputs.append(_figure_field(mesh, solution, "steady concentration",
                                     out_dir / "steady-diffusion.png"))
    snapshot = {"solver": solver, "nodes": list(nodes),
                "lengths": list(lengths), "diffusivity": diffusivity,
                "bc_image": str(bc_path) if bc_path else None}
    return _RunResult(snapshot, {}, inputs, outputs)


# ---------------------------------------------------------------------------
# vsi subcommand
# ---------------------------------------------------------------------------

def _trace_table(trace: regression.RegressionTrace) -> pd.DataFrame:
    table = pd.DataFrame({
        "iteration": np.arange(len(trace.steps)),
        "n_active": [len(s.active_indices) for s in trace.steps],
        "dropped": [s.dropped for s in trace.steps],
        "loss": [s.loss for s in trace.steps],
        "F": [s.f_stat for s in trace.steps],
    })
    padded = np.stack([trace.padded_coefficients(i)
                       for i in range(len(trace.steps))])
    for j, label in enumerate(trace.labels):
        table[label] = padded[:, j]
    return table


def _model_table(trace: regression.RegressionTrace) -> pd.DataFrame:
    step = trace.identified
    return pd.DataFrame({"label": list(step.active_labels),
                         "coefficient": step.coefficients})


def _emit_trace(trace, out_dir: Path, args) -> list[Path]:
    outputs = [
        emit_plot_data(_trace_table(trace), out_dir / "trace.csv"),
        emit_plot_data(_model_table(trace), out_dir / "model.csv"),
        emit_plot_data({"iteration": np.arange(len(trace.steps)),
                        "n_active": [len(s.active_indices) for s in trace.steps],
                        "loss": [s.loss for s in trace.steps]},
                       out_dir / "loss_curve.csv", args.gnuplot),
    ]
    if not args.no_figures:
        losses = [s.loss for s in trace.steps]
        outputs.append(_figure_curve(
            np.arange(len(losses)), losses, ("iteration", "loss"),
            "stepwise elimination", out_dir / "loss_curve.png",
            logy=all(l > 0 for l in losses), marker_at=trace.identified_index))
    return outputs


def _run_vsi(args, out_dir: Path) -> _RunResult:
    if args.y is None or args.chi is None:
        raise ConfigurationError("vsi needs --y and --chi library files")
    config = regression.parse_config(Path(args.config).read_text()) \
        if args.config else regression.StepwiseConfig()
    if args.target_index is not None:
        config = dataclasses.replace(config, target_index=args.target_index)
    if args.f_criteria is not None:
        config = dataclasses.replace(config, f_criteria=args.f_criteria)
    library = read_library(args.y, args.chi, args.dof_map)
    trace = regression.stepwise_eliminate(library, config)
    outputs = _emit_trace(trace, out_dir, args)
    inputs = [p for p in (args.config, args.y, args.chi, args.dof_map) if p]
    return _RunResult(dataclasses.asdict(config), {}, inputs, outputs)


# ---------------------------------------------------------------------------
# graph subcommand
# ---------------------------------------------------------------------------

def _run_graph(args, out_dir: Path) -> _RunResult:
    if args.config is None:
        raise ConfigurationError("graph needs a dotted-key settings file "
                                 "(--config)")
    settings = graphcalc.parse_settings(Path(args.config).read_text())
    if args.data is not None:
        data = Path(args.data).resolve()
        settings["cwd"] = str(data.parent)
        settings["directories_load"] = "."
        settings["data_filename"] = data.name
    settings.setdefault("cwd", ".")
    settings.setdefault("directories_load", ".")
    # joining an absolute dump path discards the cwd prefix, so input
    # resolution is unaffected
    settings["directories_dump"] = str(out_dir.resolve())
    result_path = graphcalc.run_pipeline(settings)
    outputs = [result_path]
    if not args.no_figures:
        table = pd.read_csv(result_path, float_precision="round_trip")
        for label in table.columns:
            match = re.fullmatch(r"d(.+)/d(.+)", label)
            if match and match.group(2) in table.columns:
                plt = _pyplot()
                fig, ax = plt.subplots(figsize=(5.4, 4.0))
                ax.plot(table[match.group(2)], table[label], ".", ms=3)
                ax.set_xlabel(match.group(2))
                ax.set_ylabel(label)
                ax.set_title("estimated derivative")
                outputs.append(_save_figure(fig, out_dir / "derivative.png"))
                break
    inputs = [args.config,
              Path(settings["cwd"]) / str(settings["directories_load"])
              / str(settings["data_filename"])]
    return _RunResult(settings, {}, inputs, outputs)


# ---------------------------------------------------------------------------
# idnn subcommand
# ---------------------------------------------------------------------------

def _indexed_columns(table: pd.DataFrame, stem: str) -> list[str]:
    found = [(int(m.group(1)), c) for c in table.columns
             if (m := re.fullmatch(rf"{stem}(\d+)", c))]
    return [c for _, c in sorted(found)]


def _run_idnn(args, out_dir: Path) -> _RunResult:
    ini = _read_ini(args.config)
    cfg = _section(ini, "idnn")
    mode = args.mode or cfg.get("mode", "train")
    if mode not in IDNN_MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; one of {IDNN_MODES}")
    data_path = args.data or cfg.get("data")
    if data_path is None:
        raise ConfigurationError("no input table (--data or [idnn] data)")
    table = pd.read_csv(data_path, float_precision="round_trip")
    x_cols = _indexed_columns(table, "x")
    if not x_cols:
        raise DataError(f"{data_path} has no input columns x0, x1, ...")
    points = table[x_cols].to_numpy(dtype=float)
    inputs = [p for p in (args.config, data_path) if p]
    seed = _resolve_seed(args, cfg)

    if mode == "train":
        values = table["y"].to_numpy(dtype=float) if "y" in table.columns else None
        g_cols = _indexed_columns(table, "g")
        gradients = table[g_cols].to_numpy(dtype=float) if g_cols else None
        data = nets.TrainingData(points, values=values, gradients=gradients)
        hidden = _int_tuple(cfg.get("hidden", "20, 20"))
        transforms = None
        if "transforms" in cfg:
            transforms = tuple(nets.transform_from_spec(s.strip())
                               for s in cfg["transforms"].split(","))
        input_dim = len(transforms) if transforms else points.shape[1]
        net = nets.make_idnn(input_dim, hidden,
                             activation=cfg.get("activation", "softplus"),
                             transforms=transforms, seed=seed)
        stage_epochs = _int_tuple(cfg.get("epochs", "1000"))
        rates = _numbers(cfg.get("learning_rate", "0.01"))
        rates = rates if isinstance(rates, tuple) else (rates,)
        if len(rates) == 1:
            rates = rates * len(stage_epochs)
        if len(rates) != len(stage_epochs):
            raise ConfigurationError(
                f"{len(stage_epochs)} epoch stages but {len(rates)} learning "
                f"rates")
        history: list[float] = []
        for stage, (n_epochs, rate) in enumerate(zip(stage_epochs, rates)):
            train_cfg = nets.TrainConfig(
                learning_rate=float(rate), epochs=int(n_epochs),
                batch_size=int(cfg.get("batch_size", 20)), seed=seed + stage)
            _, losses = nets.train_idnn(net, data, train_cfg)
            history.extend(losses)
        net_path = out_dir / cfg.get("net", "net.csv")
        outputs = [nets.save_net(net, net_path),
                   emit_plot_data({"epoch": np.arange(len(history)),
                                   "loss": history},
                                  out_dir / "loss.csv", args.gnuplot)]
        if not args.no_figures:
            outputs.append(_figure_curve(np.arange(len(history)), history,
                                         ("epoch", "loss"), "training",
                                         out_dir / "loss.png", logy=True))
            if points.shape[1] == 1 and gradients is not None:
                grid = np.linspace(points.min(), points.max(), 200)[:, None]
                plt = _pyplot()
                fig, ax = plt.subplots(figsize=(5.4, 4.0))
                ax.plot(points[:, 0], gradients[:, 0], ".", ms=3,
                        label="samples")
                ax.plot(grid[:, 0], nets.gradient_out(net, grid)[:, 0],
                        lw=1.4, label="fit")
                ax.set_xlabel("x0")
                ax.set_ylabel("gradient")
                ax.legend()
                outputs.append(_save_figure(fig, out_dir / "fit.png"))
        snapshot = {"mode": mode, "data": str(data_path), "seed": seed,
                    "hidden": list(hidden),
                    "activation": cfg.get("activation", "softplus"),
                    "transforms": cfg.get("transforms"),
                    "epochs": list(stage_epochs),
                    "learning_rate": [float(r) for r in rates],
                    "batch_size": int(cfg.get("batch_size", 20))}
        return _RunResult(snapshot, {"seed": seed}, inputs, outputs)

    net_path = args.net or cfg.get("net")
    if net_path is None:
        raise ConfigurationError(f"{mode} needs a saved net (--net or "
                                 f"[idnn] net)")
    net = nets.load_net(net_path)
    inputs.append(Path(net_path))
    snapshot = {"mode": mode, "data": str(data_path), "net": str(net_path)}
    if mode == "eval":
        frame = table[x_cols].copy()
        frame["y"] = nets.forward(net, points)
        grads = nets.gradient_out(net, points)
        for j in range(grads.shape[1]):
            frame[f"g{j}"] = grads[:, j]
        outputs = [emit_plot_data(frame, out_dir / "predictions.csv")]
        return _RunResult(snapshot, {}, inputs, outputs)
    frame = table[x_cols].copy()
    frame["convex"] = np.asarray(nets.is_convex(net, points), dtype=int)
    outputs = [emit_plot_data(frame, out_dir / "convexity.csv")]
    if not args.no_figures and points.shape[1] >= 2:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(5.4, 4.2))
        flags = frame["convex"].to_numpy(dtype=bool)
        ax.plot(points[flags, 0], points[flags, 1], ".", ms=4, label="convex")
        ax.plot(points[~flags, 0], points[~flags, 1], "x", ms=4,
                label="not convex")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
        ax.legend()
        outputs.append(_save_figure(fig, out_dir / "convexity.png"))
    return _RunResult(snapshot, {}, inputs, outputs)


# ---------------------------------------------------------------------------
# active-learning subcommand
# ---------------------------------------------------------------------------

_AL_INT_KEYS = ("rounds", "global_batch", "local_batch", "screening_batch",
                "search_epochs", "train_epochs", "polish_epochs",
                "train_batch_size", "seed")
_AL_FLOAT_KEYS = ("perturbation_scale", "convexity_fraction", "learning_rate",
                  "polish_rate")


def _workflow_config(cfg: dict, args) -> tuple[active.WorkflowConfig, int]:
    kwargs = {}
    slice_points = 41
    for key, raw in cfg.items():
        if key == "slice_points":
            slice_points = int(raw)
        elif key == "hidden":
            kwargs[key] = _int_tuple(raw)
        elif key == "search_grid":
            kwargs[key] = tuple(_int_tuple(group) for group in raw.split(","))
        elif key == "down_select_radius":
            kwargs[key] = None if raw.strip().lower() == "none" else float(raw)
        elif key == "use_symmetry_transforms":
            kwargs[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        elif key in _AL_INT_KEYS:
            kwargs[key] = int(raw)
        elif key in _AL_FLOAT_KEYS:
            kwargs[key] = float(raw)
        else:
            raise ConfigurationError(
                f"unknown key {key!r} in [active-learning]")
    if args.seed is not None:
        kwargs["seed"] = args.seed
    return active.WorkflowConfig(**kwargs), slice_points


def _run_active_learning(args, out_dir: Path) -> _RunResult:
    ini = _read_ini(args.config)
    config, slice_points = _workflow_config(_section(ini, "active-learning"),
                                            args)
    outputs: list[Path] = []
    last_slice = {}

    def on_round(state):
        eta0, eta1, values = active.free_energy_slice(state,
                                                      n_points=slice_points)
        last_slice.update(eta0=eta0, eta1=eta1, values=values)
        outputs.append(emit_plot_data(
            {"eta0": eta0, "eta1": eta1, "free_energy": values},
            out_dir / f"slice_round_{state.round_index:02d}.csv",
            args.gnuplot))

    state = active.main_workflow(config, on_round=on_round)

    dim = state.inputs.shape[1]
    samples = pd.DataFrame({f"eta{j}": state.inputs[:, j] for j in range(dim)})
    for j in range(dim):
        samples[f"mu{j}"] = state.targets[:, j]
    samples["tag"] = [tag for tag, _ in state.provenance]
    samples["stream"] = [stream for _, stream in state.provenance]
    outputs.append(emit_plot_data(samples, out_dir / "samples.csv"))
    outputs.append(emit_plot_data(pd.DataFrame(state.training_log),
                                  out_dir / "training_log.csv", args.gnuplot))
    search_log = pd.DataFrame(state.search_log)
    if len(search_log):
        search_log["hidden"] = ["x".join(str(w) for w in h)
                                for h in search_log["hidden"]]
    outputs.append(emit_plot_data(search_log, out_dir / "search_log.csv"))
    centers = state.oracle.well_centers
    wells = pd.DataFrame({f"eta{j}": centers[:, j] for j in range(dim)})
    wells["convex"] = np.asarray(nets.is_convex(state.idnn, centers),
                                 dtype=int)
    outputs.append(emit_plot_data(wells, out_dir / "wells.csv"))
    if not args.no_figures:
        outputs.append(_figure_slice(last_slice["eta0"], last_slice["eta1"],
                                     last_slice["values"], state.inputs,
                                     centers, out_dir / "slice.png"))
    snapshot = dataclasses.asdict(config)
    snapshot["slice_points"] = slice_points
    return _RunResult(snapshot, {"seed": config.seed},
                      [args.config] if args.config else [], outputs)


# ---------------------------------------------------------------------------
# allen-cahn-rom subcommand
# ---------------------------------------------------------------------------

def _run_allen_cahn_rom(args, out_dir: Path) -> _RunResult:
    ini = _read_ini(args.config)
    cfg = _section(ini, "allen-cahn-rom")
    seed = _resolve_seed(args, cfg)
    n_trajectories = int(cfg.get("n_trajectories", 12))
    record_every = int(cfg.get("record_every", 5))
    # default length 32 holds at most 5 interfaces at the 5-unit spacing
    n_interfaces = _int_tuple(cfg.get("n_interfaces", "3, 5"))
    width_factors = _pair(_numbers(cfg.get("width_factors", "0.6, 1.8")),
                          "width_factors")
    basis_name = cfg.get("basis", "B3")
    if basis_name not in BASIS_NAMES:
        raise ConfigurationError(f"unknown basis {basis_name!r}; one of "
                                 f"{BASIS_NAMES}")
    accuracy = int(cfg.get("accuracy", 2))
    neighborhood_size = int(cfg.get("neighborhood_size", 4))
    param_keys = ("mobility", "gradient_coeff", "dt", "n_steps", "n_nodes",
                  "length")
    overrides = {k: _numbers(cfg[k]) for k in param_keys if k in cfg}
    params = _params_from(dns.AllenCahnParams, overrides)
    stepwise = _stepwise_from_ini(ini)

    tables = []
    for index in range(n_trajectories):
        phi0 = dns.allen_cahn_initial_condition(params, seed + index,
                                                n_interfaces=n_interfaces,
                                                width_factors=width_factors)
        series = dns.solve_allen_cahn_1d(params, phi0)
        keep = np.arange(0, series.n_times, record_every)
        thinned = dns.FieldSeries(series.mesh, series.times[keep],
                                  series.values[keep])
        tables.append(observables.phase_averages(
            thinned, gradient_coeff=params.gradient_coeff, trajectory=index))
    pooled = observables.pool_observables(tables)
    expanded = observables.functional_derivatives(
        pooled, accuracy=accuracy, neighborhood_size=neighborhood_size)
    basis = dict(zip(BASIS_NAMES,
                     observables.build_basis_sets(expanded)))[basis_name]
    trace = observables.identify_reduced_model(basis, stepwise)

    outputs = [emit_plot_data(pooled, out_dir / "observables.csv"),
               emit_plot_data(expanded, out_dir / "sensitivities.csv")]
    outputs += _emit_trace(trace, out_dir, args)
    snapshot = {"seed": seed, "n_trajectories": n_trajectories,
                "record_every": record_every,
                "n_interfaces": list(n_interfaces),
                "width_factors": list(width_factors), "basis": basis_name,
                "accuracy": accuracy, "neighborhood_size": neighborhood_size,
                "parameters": dataclasses.asdict(params),
                "stepwise": dataclasses.asdict(stepwise)}
    seeds = {"seed": seed,
             "trajectory_seeds": list(range(seed, seed + n_trajectories))}
    return _RunResult(snapshot, seeds,
                      [args.config] if args.config else [], outputs)


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fieldlearn",
        description="Field solvers, weak-form identification, and "
                    "gradient-trained energy surrogates.")
    sub = parser.add_subparsers(dest="subcommand", required=True,
                                metavar="subcommand")

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file (flags override file values)")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override for every random stream")
        p.add_argument("--out-dir", type=Path, default=Path("."),
                       help="directory for output files (default: .)")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
        p.add_argument("--gnuplot", action="store_true",
                       help="whitespace plot-data files instead of CSV")

    p = sub.add_parser("dns", help="run a field solver and save snapshots")
    common(p)
    p.add_argument("--solver", choices=SOLVERS, default=None)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="solver parameter override (repeatable)")
    p.add_argument("--record-every", type=int, default=None,
                   help="keep every n-th time step")
    p.add_argument("--bc-image", type=Path, default=None,
                   help="boundary-condition image CSV (steady-diffusion)")
    p.set_defaults(handler=_run_dns)

    p = sub.add_parser("vsi", help="stepwise operator elimination on a "
                                   "saved library")
    common(p)
    p.add_argument("--y", type=Path, default=None, help="target column CSV")
    p.add_argument("--chi", type=Path, default=None,
                   help="operator matrix CSV (header = labels)")
    p.add_argument("--dof-map", type=Path, default=None,
                   help="(node, time) row map CSV")
    p.add_argument("--target-index", type=int, default=None)
    p.add_argument("--f-criteria", type=float, default=None)
    p.set_defaults(handler=_run_vsi)

    p = sub.add_parser("graph", help="non-local calculus on a labeled "
                                     "point cloud")
    common(p)
    p.add_argument("--data", type=Path, default=None,
                   help="input table override")
    p.set_defaults(handler=_run_graph)

    p = sub.add_parser("idnn", help="train, evaluate, or convexity-scan a "
                                    "gradient-trained net")
    common(p)
    p.add_argument("--mode", choices=IDNN_MODES, default=None)
    p.add_argument("--data", type=Path, default=None,
                   help="table with x0..; y / g0.. for training")
    p.add_argument("--net", type=Path, default=None,
                   help="saved net (eval and convexity-scan)")
    p.set_defaults(handler=_run_idnn)

    p = sub.add_parser("active-learning",
                       help="sampling workflow on the synthetic oracle")
    common(p)
    p.set_defaults(handler=_run_active_learning)

    p = sub.add_parser("allen-cahn-rom",
                       help="trajectory ensemble to reduced dynamics")
    common(p)
    p.set_defaults(handler=_run_allen_cahn_rom)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 1
    start = time.monotonic()
    try:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result = args.handler(args, out_dir)
        manifest = RunManifest(
            subcommand=args.subcommand,
            config=result.config,
            seeds=result.seeds,
            inputs=tuple(str(p) for p in result.inputs),
            outputs=tuple(Path(p).name for p in result.outputs),
            wall_clock_s=time.monotonic() - start,
            checksums={Path(p).name: _sha256(p) for p in result.outputs})
        write_manifest(manifest, out_dir / "manifest.json")
    except FieldlearnError as exc:
        print(f"fieldlearn {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fieldlearn {args.subcommand}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
