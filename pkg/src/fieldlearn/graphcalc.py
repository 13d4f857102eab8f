"""Non-local calculus on graphs built from scattered data.

A graph is a set of vertices at positions x in R^p carrying labeled scalar
states, with k-nearest-neighbor edges (symmetrically closed). Derivatives
are the non-local sums

    du/dx_mu (x~) = sum over neighbors of (u(x) - u(x~)) * w(x, x~)

where the stencil weights w solve moment (Vandermonde) conditions on the
offset monomials z^alpha, 1 <= |alpha| <= accuracy + order - 1, so the sum
reproduces the requested partial derivative exactly on polynomials up to
the requested accuracy. The division by z^mu in the textbook form of the
operator is folded into the moment system, which keeps neighbors that
share the mu-coordinate from producing a zero division. When a vertex has
more neighbors than conditions the minimum-norm solution is used.

The CSV pipeline reads a named-column table, applies algebraic operations
(pandas expressions) and differential operations in listed order, and
writes the augmented table to the dump directory as data.csv. Settings
come either as a nested mapping or as a flat text file with dot-separated
keys (one ``a.b.c = value`` per line). Per-vertex weight solves are
independent of each other; they are evaluated in vertex order so repeated
runs produce identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import ConfigurationError, DataError, RankError

DUPLICATE_TOL = 1e-12
MOMENT_RESIDUAL_TOL = 1e-8

WEIGHT_FAMILIES = ("stencil",)
ADJACENCY_FAMILIES = ("nearest",)
OPERATIONS = ("partial",)


@dataclass(frozen=True)
class Graph:
    """Vertices with positions, symmetric neighbor lists, and named states."""

    positions: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]
    states: Mapping[str, np.ndarray] = field(default_factory=dict)
    coordinate_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] < 1:
            raise DataError("positions must be a 2D array with p >= 1 columns")
        if not np.all(np.isfinite(pos)):
            raise DataError("positions contain non-finite entries")
        object.__setattr__(self, "positions", pos)
        n = pos.shape[0]
        if len(self.neighbors) != n:
            raise DataError("one neighbor list per vertex required")
        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                raise DataError(f"self-edge at vertex {i}")
            for j in nbrs:
                if not 0 <= j < n:
                    raise DataError(f"edge endpoint {j} outside vertex range")
        states = {}
        for label, values in dict(self.states).items():
            arr = np.asarray(values, dtype=float)
            if arr.shape != (n,):
                raise DataError(f"state '{label}' must have one value per vertex")
            states[label] = arr
        object.__setattr__(self, "states", MappingProxyType(states))
        if self.coordinate_labels is not None:
            labels = tuple(self.coordinate_labels)
            if len(labels) != pos.shape[1]:
                raise DataError("one coordinate label per position column required")
            object.__setattr__(self, "coordinate_labels", labels)

    @property
    def n_vertices(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def degrees(self) -> np.ndarray:
        return np.array([len(nbrs) for nbrs in self.neighbors])

    def with_state(self, label: str, values: np.ndarray) -> "Graph":
        states = dict(self.states)
        states[label] = np.asarray(values, dtype=float)
        return Graph(self.positions, self.neighbors, states, self.coordinate_labels)


def build_graph(points: np.ndarray, adjacency: str = "nearest", k: int = 1,
                labels: Sequence[str] | None = None) -> Graph:
    """k-nearest-neighbor graph with symmetric closure.

    Exactly duplicated points (within 1e-12) are rejected: they carry no
    offset information and make the nearest-neighbor sets ambiguous.
    """
    if adjacency not in ADJACENCY_FAMILIES:
        raise ConfigurationError(
            f"adjacency '{adjacency}' not supported; choose from {ADJACENCY_FAMILIES}")
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise DataError("need at least 2 points to build a graph")
    if not np.all(np.isfinite(points)):
        raise DataError("points contain non-finite entries")
    n = points.shape[0]
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"k must be in [1, {n - 1}], got {k}")
    tree = cKDTree(points)
    dupes = sorted(tuple(sorted(p)) for p in tree.query_pairs(DUPLICATE_TOL))
    if dupes:
        raise DataError(f"duplicate points within {DUPLICATE_TOL}: {dupes}")
    _, idx = tree.query(points, k=k + 1)
    neighbor_sets = [set() for _ in range(n)]
    for i in range(n):
        row = [j for j in idx[i] if j != i][:k]
        neighbor_sets[i].update(row)
        for j in row:
            neighbor_sets[j].add(i)      # symmetric closure
    neighbors = tuple(tuple(sorted(s)) for s in neighbor_sets)
    return Graph(points, neighbors,
                 coordinate_labels=None if labels is None else tuple(labels))


def moment_exponents(p: int, max_degree: int) -> tuple[tuple[int, ...], ...]:
    """Multi-indices alpha with 1 <= |alpha| <= max_degree, in degree order."""
    exps = []
    for degree in range(1, max_degree + 1):
        for combo in combinations_with_replacement(range(p), degree):
            alpha = [0] * p
            for axis in combo:
                alpha[axis] += 1
            exps.append(tuple(alpha))
    return tuple(exps)


def default_neighborhood_size(p: int, accuracy: int, order: int) -> int:
    """Moment-condition count plus two spare neighbors."""
    return len(moment_exponents(p, accuracy + order - 1)) + 2


def _monomial_name(alpha: tuple[int, ...]) -> str:
    parts = [f"z{axis + 1}" + (f"^{e}" if e > 1 else "")
             for axis, e in enumerate(alpha) if e > 0]
    return "*".join(parts)


def stencil_weights(center: np.ndarray, neighbors: np.ndarray, accuracy: int,
                    dimension: int, order: int) -> np.ndarray:
    """Weights reproducing d^order u / dx_mu^order at the center.

    Solves sum_j w_j z_j^alpha = order! * [alpha == order*e_mu] for all
    moments up to degree accuracy + order - 1, on offsets scaled to unit
    size for conditioning. Minimum-norm solution when neighbors exceed
    conditions; a moment the offsets cannot satisfy raises a rank error
    naming it.
    """
    center = np.asarray(center, dtype=float).ravel()
    z = np.asarray(neighbors, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    p = center.size
    if z.shape[1] != p:
        raise DataError(f"neighbor columns {z.shape[1]} do not match center size {p}")
    if not (isinstance(accuracy, (int, np.integer)) and accuracy >= 1):
        raise ConfigurationError(f"accuracy must be an integer >= 1, got {accuracy}")
    if order not in (1, 2):
        raise ConfigurationError(f"order must be 1 or 2, got {order}")
    if not 0 <= dimension < p:
        raise ConfigurationError(f"dimension {dimension} outside axes 0..{p - 1}")
    z = z - center
    exps = moment_exponents(p, accuracy + order - 1)
    if z.shape[0] < len(exps):
        raise RankError(
            f"{z.shape[0]} neighbors cannot satisfy {len(exps)} moment conditions")
    scale = np.max(np.abs(z))
    if scale == 0.0:
        raise RankError("all neighbor offsets vanish")
    zs = z / scale
    target = tuple(order if axis == dimension else 0 for axis in range(p))
    a = np.empty((len(exps), z.shape[0]))
    b = np.zeros(len(exps))
    for row, alpha in enumerate(exps):
        mono = np.ones(z.shape[0])
        for axis, e in enumerate(alpha):
            if e:
                mono *= zs[:, axis] ** e
        a[row] = mono
        if alpha == target:
            b[row] = float(math.factorial(order))
    v = np.linalg.lstsq(a, b, rcond=None)[0]
    resid = a @ v - b
    worst = int(np.argmax(np.abs(resid)))
    if abs(resid[worst]) > MOMENT_RESIDUAL_TOL:
        raise RankError(
            f"offsets cannot satisfy the moment condition for {_monomial_name(exps[worst])}")
    return v / scale ** order


@dataclass(frozen=True)
class DiffOpSpec:
    """One differential-operation request, possibly for several axes.

    The per-axis fields (variable, weight, adjacency, manifold, accuracy,
    dimension, operation) are parallel sequences; scalars broadcast. Each
    entry asks for d^order(function) along manifold[i][dimension[i]], and
    variable[i] must name that same coordinate.
    """

    function: str
    variable: tuple[str, ...]
    manifold: tuple[tuple[str, ...], ...]
    accuracy: tuple[int, ...]
    dimension: tuple[int, ...]
    order: int
    weight: tuple[str, ...] = ("stencil",)
    adjacency: tuple[str, ...] = ("nearest",)
    operation: tuple[str, ...] = ("partial",)

    def __post_init__(self):
        def as_tuple(value):
            if isinstance(value, (str, int, np.integer)):
                return (value,)
            return tuple(value)

        variable = as_tuple(self.variable)
        manifold = self.manifold
        if isinstance(manifold, str):
            manifold = ((manifold,),)
        elif all(isinstance(m, str) for m in manifold):
            manifold = (tuple(manifold),)
        else:
            manifold = tuple(tuple(m) for m in manifold)
        fields = {
            "variable": variable,
            "manifold": manifold,
            "accuracy": as_tuple(self.accuracy),
            "dimension": as_tuple(self.dimension),
            "weight": as_tuple(self.weight),
            "adjacency": as_tuple(self.adjacency),
            "operation": as_tuple(self.operation),
        }
        n = max(len(v) for v in fields.values())
        for name, value in fields.items():
            if len(value) == 1 and n > 1:
                value = value * n
            if len(value) != n:
                raise ConfigurationError(
                    f"field '{name}' has {len(value)} entries, expected {n}")
            object.__setattr__(self, name, value)
        if not isinstance(self.function, str) or not self.function:
            raise ConfigurationError("function must name a state column")
        if self.order not in (1, 2):
            raise ConfigurationError(f"order must be 1 or 2, got {self.order}")
        for i in range(n):
            if self.weight[i] not in WEIGHT_FAMILIES:
                raise ConfigurationError(
                    f"weight '{self.weight[i]}' not supported; choose from {WEIGHT_FAMILIES}")
            if self.adjacency[i] not in ADJACENCY_FAMILIES:
                raise ConfigurationError(
                    f"adjacency '{self.adjacency[i]}' not supported")
            if self.operation[i] not in OPERATIONS:
                raise ConfigurationError(
                    f"operation '{self.operation[i]}' not supported")
            if self.accuracy[i] < 1:
                raise ConfigurationError("accuracy must be >= 1")
            if not 0 <= self.dimension[i] < len(self.manifold[i]):
                raise ConfigurationError(
                    f"dimension {self.dimension[i]} outside manifold "
                    f"{self.manifold[i]}")
            if self.variable[i] != self.manifold[i][self.dimension[i]]:
                raise ConfigurationError(
                    f"variable '{self.variable[i]}' is not manifold axis "
                    f"{self.dimension[i]} ({self.manifold[i][self.dimension[i]]})")

    @property
    def n_entries(self) -> int:
        return len(self.variable)

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "DiffOpSpec":
        known = {"function", "variable", "weight", "adjacency", "manifold",
                 "accuracy", "dimension", "order", "operation"}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigurationError(
                f"unknown differential-operation keys: {sorted(unknown)}")
        missing = {"function", "variable", "manifold", "accuracy",
                   "dimension", "order"} - set(mapping)
        if missing:
            raise ConfigurationError(
                f"differential operation missing keys: {sorted(missing)}")
        return cls(**dict(mapping))


def derivative_label(function: str, variable: str, order: int) -> str:
    if order == 1:
        return f"d{function}/d{variable}"
    return f"d{order}{function}/d{variable}{order}"


def nonlocal_partial(graph: Graph, spec: DiffOpSpec) -> Graph:
    """Evaluate every derivative the spec requests, as new graph states."""
    if spec.function not in graph.states:
        raise DataError(f"state '{spec.function}' not on the graph")
    if graph.coordinate_labels is not None:
        for manifold in spec.manifold:
            if manifold != graph.coordinate_labels:
                raise ConfigurationError(
                    f"spec manifold {manifold} does not match graph coordinates "
                    f"{graph.coordinate_labels}")
    u = graph.states[spec.function]
    out = graph
    for i in range(spec.n_entries):
        if len(spec.manifold[i]) != graph.dim:
            raise ConfigurationError(
                f"manifold {spec.manifold[i]} has {len(spec.manifold[i])} axes "
                f"but graph positions have {graph.dim}")
        deriv = np.empty(graph.n_vertices)
        for v in range(graph.n_vertices):
            nbrs = list(graph.neighbors[v])
            try:
                w = stencil_weights(graph.positions[v], graph.positions[nbrs],
                                    spec.accuracy[i], spec.dimension[i], spec.order)
            except RankError as err:
                raise RankError(f"vertex {v}: {err}") from err
            deriv[v] = (u[nbrs] - u[v]) @ w
        out = out.with_state(
            derivative_label(spec.function, spec.variable[i], spec.order), deriv)
    return out


# ---------------------------------------------------------------------------
# table pipeline
# ---------------------------------------------------------------------------

def algebraic_op(table: pd.DataFrame, expression, label: str) -> pd.DataFrame:
    """Append a pointwise-computed column. `expression` is a pandas
    expression string or a callable taking the table."""
    out = table.copy()
    try:
        if callable(expression):
            values = expression(out)
        else:
            values = out.eval(expression)
    except pd.errors.UndefinedVariableError as err:
        raise DataError(f"expression '{expression}' references a missing column: "
                        f"{err}") from err
    out[label] = values
    return out


def parse_settings(text: str) -> dict:
    """Flat dotted-key settings text to the nested mapping the pipeline takes.

    One `a.b.c = value` per line; '#' starts a comment; integer key segments
    build lists; comma-separated values build lists of scalars.
    """
    root: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        dotted, value = line.split("=", 1)
        parts = [p.strip() for p in dotted.strip().split(".")]
        if any(not p for p in parts):
            raise ConfigurationError(f"line {lineno}: empty key segment")
        node = root
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(
                    f"line {lineno}: key '{dotted.strip()}' conflicts with an "
                    f"earlier value")
        leaf = parts[-1]
        if leaf in node:
            raise ConfigurationError(f"line {lineno}: duplicate key '{dotted.strip()}'")
        node[leaf] = _parse_value(value.strip())
    return _listify(root)


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def _parse_value(text: str):
    if "," in text:
        return [_parse_scalar(part.strip()) for part in text.split(",")]
    return _parse_scalar(text)


def _listify(node):
    if not isinstance(node, dict):
        return node
    converted = {key: _listify(value) for key, value in node.items()}
    if converted and all(key.isdigit() for key in converted):
        indices = sorted(int(k) for k in converted)
        if indices != list(range(len(indices))):
            raise ConfigurationError(
                f"list indices must run 0..{len(indices) - 1}, got {indices}")
        return [converted[str(i)] for i in indices]
    return converted


def _flatten_ops(entries) -> list:
    flat = []
    for entry in entries:
        if isinstance(entry, Mapping):
            flat.append(entry)
        else:
            flat.extend(entry)
    return flat


def run_pipeline(settings: Mapping) -> Path:
    """Read the input CSV, apply the listed operations, write data.csv."""
    required = ("cwd", "directories_load", "directories_dump", "data_filename",
                "model_order", "model_p")
    missing = [key for key in required if key not in settings]
    if missing:
        raise ConfigurationError(f"settings missing keys: {missing}")
    cwd = Path(str(settings["cwd"]))
    src = cwd / str(settings["directories_load"]) / str(settings["data_filename"])
    if not src.exists():
        raise FileNotFoundError(f"input table not found: {src}")
    model_order = int(settings["model_order"])
    model_p = int(settings["model_p"])
    if model_order < 1 or model_p < 1:
        raise ConfigurationError("model_order and model_p must be >= 1")

    table = pd.read_csv(src, float_precision="round_trip")
    coords = [f"x_{i + 1}" for i in range(model_p)]
    absent = [c for c in coords if c not in table.columns]
    if absent:
        raise DataError(
            f"model_p={model_p} expects coordinate columns {coords}; "
            f"missing {absent}")

    for op in _flatten_ops(settings.get("algebraic_operations", [])):
        unknown = set(op) - {"func", "labels"}
        if unknown:
            raise ConfigurationError(
                f"unknown algebraic-operation keys: {sorted(unknown)}")
        if "func" not in op or "labels" not in op:
            raise ConfigurationError(
                "algebraic operation needs 'func' and 'labels'")
        table = algebraic_op(table, op["func"], str(op["labels"]))

    for raw in _flatten_ops(settings.get("differential_operations", [])):
        spec = raw if isinstance(raw, DiffOpSpec) else DiffOpSpec.from_mapping(raw)
        if spec.order > model_order:
            raise ConfigurationError(
                f"operation order {spec.order} exceeds model_order {model_order}")
        if spec.function not in table.columns:
            raise DataError(f"state column '{spec.function}' not in the table")
        for i in range(spec.n_entries):
            manifold = spec.manifold[i]
            absent = [c for c in manifold if c not in table.columns]
            if absent:
                raise DataError(f"manifold columns missing from the table: {absent}")
            points = table[list(manifold)].to_numpy(dtype=float)
            k = min(default_neighborhood_size(len(manifold), spec.accuracy[i],
                                              spec.order),
                    points.shape[0] - 1)
            graph = build_graph(points, spec.adjacency[i], k, labels=manifold)
            graph = graph.with_state(spec.function,
                                     table[spec.function].to_numpy(dtype=float))
            entry = DiffOpSpec(
                function=spec.function, variable=spec.variable[i],
                manifold=(manifold,), accuracy=spec.accuracy[i],
                dimension=spec.dimension[i], order=spec.order,
                weight=spec.weight[i], adjacency=spec.adjacency[i],
                operation=spec.operation[i])
            graph = nonlocal_partial(graph, entry)
            label = derivative_label(spec.function, spec.variable[i], spec.order)
            table[label] = graph.states[label]

    out_dir = cwd / str(settings["directories_dump"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "data.csv"
    table.to_csv(out_path, index=False, float_format="%.17g")
    return out_path
