"""Weak-form regression system assembly.

Turns field snapshots into the linear system y = chi * omega whose rows are
interior test functions and whose columns are candidate operators in weak
form: the time-derivative target y pairs a backward difference with the
consistent mass matrix, laplacian columns arrive integrated by parts
(-integral grad w . grad c), and algebraic columns are quadrature
integrals of pointwise functions of the interpolated fields.

Column evaluation times follow the semi-implicit solver convention by
default: laplacian columns use the snapshot at t_n, algebraic columns the
one at t_{n-1}. With data generated by the solvers in `dns` this makes
y - chi * omega_true vanish to linear-solver roundoff, so identification
quality is limited by the data, not by an avoidable inconsistency between
assembly and time integration. Pass algebraic_eval="current" to put the
algebraic columns at t_n instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import fem
from .dns import FieldSeries
from .errors import ConfigurationError, DataError, ShapeError

OPERATOR_KINDS = ("laplacian", "constant", "linear", "cubic_c1sq_c2", "custom")


@dataclass(frozen=True)
class OperatorSpec:
    """One candidate operator of the weak-form library.

    `kind` picks the column formula; `species` indexes the field a laplacian
    or linear operator acts on. Custom operators supply a pointwise callable
    of all species' values at quadrature points plus an explicit label.
    """

    kind: str
    species: int = 0
    label: str | None = None
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigurationError(
                f"unknown operator kind {self.kind!r}; expected one of {OPERATOR_KINDS}")
        if self.species < 0:
            raise ConfigurationError(f"species index must be >= 0 (got {self.species})")
        if self.kind == "custom":
            if self.func is None:
                raise ConfigurationError("custom operators need a func")
            if self.label is None:
                raise ConfigurationError("custom operators need an explicit label")

    def name(self) -> str:
        if self.label is not None:
            return self.label
        if self.kind == "laplacian":
            return f"lap(c{self.species + 1})"
        if self.kind == "constant":
            return "1"
        if self.kind == "linear":
            return f"c{self.species + 1}"
        return "c1^2*c2"


def schnakenberg_library() -> tuple[OperatorSpec, ...]:
    """The six-operator library for two-species reaction-diffusion data."""
    return (OperatorSpec("laplacian", 0), OperatorSpec("laplacian", 1),
            OperatorSpec("constant"), OperatorSpec("linear", 0),
            OperatorSpec("linear", 1), OperatorSpec("cubic_c1sq_c2"))


@dataclass(frozen=True)
class OperatorLibrary:
    """Assembled regression system with labeled columns.

    `dof_map` records (node index, time index) per row; steady-state rows
    carry the snapshot's time index. Rows at Dirichlet or exterior nodes are
    never included.
    """

    y: np.ndarray
    chi: np.ndarray
    labels: tuple[str, ...]
    dof_map: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        chi = np.asarray(self.chi, dtype=float)
        dof_map = np.asarray(self.dof_map, dtype=int)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "chi", chi)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "dof_map", dof_map)
        if chi.ndim != 2:
            raise ShapeError("chi must be 2D")
        if y.shape != (chi.shape[0],):
            raise ShapeError(f"y has {y.shape[0]} rows, chi has {chi.shape[0]}")
        if dof_map.shape != (chi.shape[0], 2):
            raise ShapeError("dof_map must be (n_rows, 2)")
        if len(self.labels) != chi.shape[1]:
            raise ShapeError(
                f"{len(self.labels)} labels for {chi.shape[1]} columns")
        if len(set(self.labels)) != len(self.labels):
            raise DataError(f"labels must be distinct (got {self.labels})")

    @property
    def n_rows(self) -> int:
        return self.chi.shape[0]

    @property
    def n_cols(self) -> int:
        return self.chi.shape[1]

    def column(self, label: str) -> np.ndarray:
        return self.chi[:, self.labels.index(label)]

    def with_target(self, index: int) -> "OperatorLibrary":
        """Move column `index` to the target side (for steady-state data)."""
        if not 0 <= index < self.n_cols:
            raise ConfigurationError(
                f"target_index {index} out of range for {self.n_cols} columns")
        rest = [j for j in range(self.n_cols) if j != index]
        return OperatorLibrary(self.chi[:, index], self.chi[:, rest],
                               tuple(self.labels[j] for j in rest), self.dof_map)


def _series_tuple(series) -> tuple[FieldSeries, ...]:
    if isinstance(series, FieldSeries):
        return (series,)
    series = tuple(series)
    if not series:
        raise ConfigurationError("need at least one field series")
    mesh = series[0].mesh
    for s in series[1:]:
        if s.mesh is not mesh and (s.mesh.nodes_per_axis != mesh.nodes_per_axis
                                   or s.mesh.spacing != mesh.spacing):
            raise DataError("all species must share one mesh")
        if s.times.shape != series[0].times.shape or not np.array_equal(s.times, series[0].times):
            raise DataError("all species must share the same snapshot times")
    return series


def _test_rows(mesh: fem.StructuredMesh, mask: fem.BoundaryMask | None) -> np.ndarray:
    """Indices of nodes whose test functions stay in the function space."""
    if mask is None:
        return np.arange(mesh.n_nodes)
    return np.nonzero(mask.is_free())[0]


def assemble_time_derivative(series, time_index: int, species: int = 0,
                             mask: fem.BoundaryMask | None = None) -> np.ndarray:
    """Target vector: mass-matrix-weighted backward difference rate.

    y_i = integral of N_i times the interpolated rate (c_n - c_{n-1})/dt,
    restricted to interior test-function rows.
    """
    all_series = _series_tuple(series)
    if not 0 <= species < len(all_series):
        raise ConfigurationError(f"species {species} out of range")
    s = all_series[species]
    if time_index < 1:
        raise ConfigurationError(
            f"time_index must be >= 1 for a backward difference (got {time_index})")
    dt = s.dt(time_index)
    mesh = s.mesh
    rule = fem.gauss_rule(2, mesh.dim)
    mass = fem.assemble_matrix(mesh, "mass", rule=rule, mask=mask)
    rate = (s.values[time_index] - s.values[time_index - 1]) / dt
    return (mass @ rate)[_test_rows(mesh, mask)]


def _algebraic_values(spec: OperatorSpec, vals: list[np.ndarray]) -> np.ndarray:
    if spec.kind == "constant":
        return np.ones_like(vals[0])
    if spec.kind == "linear":
        return vals[spec.species]
    if spec.kind == "cubic_c1sq_c2":
        if len(vals) < 2:
            raise ConfigurationError("cubic_c1sq_c2 needs two species")
        return vals[0] * vals[0] * vals[1]
    return spec.func(*vals)


def _assemble_columns(mesh, fields_lap, fields_alg, specs, mask, time_index):
    if not specs:
        raise ConfigurationError("operator spec list is empty")
    n_species = len(fields_lap)
    rule = fem.gauss_rule(2, mesh.dim)
    sf = fem.shape_eval(mesh, rule)
    stiff = fem.assemble_matrix(mesh, "stiffness", rule=rule, mask=mask)
    active = fem.active_elements(mesh, mask) if mask is not None else None
    rows = _test_rows(mesh, mask)
    vals = [fem.interpolate_at_qp(mesh, sf, f) for f in fields_alg]
    chi = np.empty((rows.shape[0], len(specs)))
    labels = []
    for j, spec in enumerate(specs):
        if spec.kind in ("laplacian", "linear") and spec.species >= n_species:
            raise ConfigurationError(
                f"operator {spec.name()!r} wants species {spec.species} "
                f"but only {n_species} are present")
        if spec.kind == "laplacian":
            col = -(stiff @ fields_lap[spec.species])
        else:
            col = fem.weak_source(mesh, sf, _algebraic_values(spec, vals), active=active)
        chi[:, j] = col[rows]
        labels.append(spec.name())
    dof_map = np.column_stack([rows, np.full(rows.shape[0], time_index, dtype=int)])
    return chi, tuple(labels), dof_map


def assemble_chi(series, time_index: int, specs: Sequence[OperatorSpec],
                 mask: fem.BoundaryMask | None = None, target_species: int = 0,
                 algebraic_eval: str = "previous") -> OperatorLibrary:
    """Assemble target and operator columns for one time sample."""
    if algebraic_eval not in ("previous", "current"):
        raise ConfigurationError(
            f"algebraic_eval must be 'previous' or 'current' (got {algebraic_eval!r})")
    all_series = _series_tuple(series)
    y = assemble_time_derivative(all_series, time_index, species=target_species, mask=mask)
    fields_lap = [s.values[time_index] for s in all_series]
    alg_index = time_index - 1 if algebraic_eval == "previous" else time_index
    fields_alg = [s.values[alg_index] for s in all_series]
    chi, labels, dof_map = _assemble_columns(
        all_series[0].mesh, fields_lap, fields_alg, specs, mask, time_index)
    return OperatorLibrary(y, chi, labels, dof_map)


def assemble_steady_state(fields, specs: Sequence[OperatorSpec],
                          mask: fem.BoundaryMask | None = None,
                          mesh: fem.StructuredMesh | None = None) -> OperatorLibrary:
    """Operator columns for a steady snapshot, with a zero target.

    `fields` is one nodal array or a sequence of them (one per species);
    `mesh` is required when passing bare arrays. Meant for use with
    identify_strategy = specified_target, which moves one column to the
    target side.
    """
    if isinstance(fields, FieldSeries):
        raise ConfigurationError(
            "assemble_steady_state takes nodal arrays; pick a snapshot first")
    if isinstance(fields, np.ndarray) and fields.ndim == 1:
        fields = [fields]
    fields = [np.asarray(f, dtype=float) for f in fields]
    if mesh is None:
        raise ConfigurationError("assemble_steady_state needs the mesh")
    chi, labels, dof_map = _assemble_columns(mesh, fields, fields, specs, mask, 0)
    return OperatorLibrary(np.zeros(chi.shape[0]), chi, labels, dof_map)


def pool_time_samples(libraries: Sequence[OperatorLibrary]) -> OperatorLibrary:
    """Row-concatenate libraries sharing one label set."""
    libraries = list(libraries)
    if not libraries:
        raise ConfigurationError("nothing to pool")
    labels = libraries[0].labels
    for lib in libraries[1:]:
        if lib.labels != labels:
            raise DataError(
                f"label mismatch while pooling: {lib.labels} vs {labels}")
    return OperatorLibrary(
        np.concatenate([lib.y for lib in libraries]),
        np.vstack([lib.chi for lib in libraries]),
        labels,
        np.vstack([lib.dof_map for lib in libraries]))
