"""Phase-split global observables of Allen-Cahn fields and their reduced
dynamics.

Each snapshot is condensed to averages of g(phi) over the positive and
negative phases for nine g functions, plus the total free energy and its
positive-phase part. Trajectory ensembles of those observables are points
scattered in observable space; the graph calculus then estimates the
sensitivities dPsi/dphi_{g+-}, and nested operator bases built from raw
observables and sensitivities feed stepwise identification of the reduced
model for dphi_{phi+}/dt.

The positive phase is phi >= 0 at quadrature points and the negative phase
is its complement, so the two indicators partition the domain exactly: for
any g, the "+" and "-" averages sum to the plain average to roundoff. The
Laplacian observable interpolates the nodal field inv(M_lumped) (-K phi),
whose whole-domain integral vanishes with natural boundaries; the split
pair phi_{lap(phi)+-} therefore sums to ~0, mirroring the zero-flux
identity of the continuum operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import dns, fem, graphcalc, regression
from .errors import (CapabilityError, ConfigurationError, DataError,
                     RankError, ShapeError)

#: the g functions averaged per phase, in column order
FUNCTION_NAMES = ("phi", "phi2", "phi3", "phi4", "phi5",
                  "f(phi)", "f'(phi)", "lap(phi)", "|grad(phi)|2")
PHASE_SIGNS = ("+", "-")
TARGET_LABEL = "dphi_phi+/dt"

_NEIGHBOR_RESOLUTION_REL = 1e-3


def observable_labels() -> tuple[str, ...]:
    """The 18 phase-average column names, g-major, '+' before '-'."""
    return tuple(f"phi_{name}{sign}"
                 for name in FUNCTION_NAMES for sign in PHASE_SIGNS)


def _pointwise_values(vals: np.ndarray) -> dict:
    v2 = vals * vals
    v3 = v2 * vals
    return {
        "phi": vals,
        "phi2": v2,
        "phi3": v3,
        "phi4": v2 * v2,
        "phi5": v2 * v3,
        "f(phi)": dns.double_well(vals),
        "f'(phi)": dns.double_well_prime(vals),
    }


# ---------------------------------------------------------------------------
# phase averages and energies
# ---------------------------------------------------------------------------

def phase_averages(series: dns.FieldSeries, gradient_coeff: float = 1.0,
                   trajectory: int | None = None) -> pd.DataFrame:
    """Per-snapshot phase averages of the g functions, plus Psi and Psi+.

    Every average is (1/|domain|) * integral of g(phi) over one phase, with
    3-point Gauss quadrature on the nodal interpolant (exact through the
    phi^5 term). Psi and Psi+ are unnormalized energies. The returned table
    has one row per snapshot; `trajectory` adds a constant id column for
    later pooling.
    """
    mesh = series.mesh
    if mesh.dim != 1:
        raise CapabilityError(
            f"phase averages require a 1D field series, got dim {mesh.dim}")
    if gradient_coeff <= 0:
        raise ConfigurationError("gradient_coeff must be positive")
    rule = fem.gauss_rule(3, 1)
    sf = fem.shape_eval(mesh, rule)
    stiff = fem.assemble_matrix(mesh, "stiffness", rule=rule)
    mass = fem.assemble_matrix(mesh, "mass", rule=rule)
    lumped = np.asarray(mass @ np.ones(mesh.n_nodes))
    n_elems = mesh.n_nodes - 1
    volume = n_elems * float(np.sum(sf.wdetj))

    columns = {label: np.empty(series.n_times) for label in observable_labels()}
    psi = np.empty(series.n_times)
    psi_plus = np.empty(series.n_times)
    for row, phi in enumerate(series.values):
        vals = fem.interpolate_at_qp(mesh, sf, phi)
        grads = fem.gradient_at_qp(mesh, sf, phi)
        grad2 = np.sum(grads * grads, axis=2)
        lap_nodal = -np.asarray(stiff @ phi) / lumped
        lap = fem.interpolate_at_qp(mesh, sf, lap_nodal)
        plus = vals >= 0.0
        minus = ~plus
        fields = _pointwise_values(vals)
        fields["lap(phi)"] = lap
        fields["|grad(phi)|2"] = grad2
        for name in FUNCTION_NAMES:
            g = fields[name]
            columns[f"phi_{name}+"][row] = np.sum((g * plus) @ sf.wdetj) / volume
            columns[f"phi_{name}-"][row] = np.sum((g * minus) @ sf.wdetj) / volume
        density = dns.double_well(vals) + 0.5 * gradient_coeff * grad2
        psi[row] = np.sum(density @ sf.wdetj)
        psi_plus[row] = np.sum((density * plus) @ sf.wdetj)

    table = pd.DataFrame({"time": series.times, **columns,
                          "Psi": psi, "Psi+": psi_plus})
    if trajectory is not None:
        table.insert(0, "trajectory", int(trajectory))
    return table


def total_energy(series: dns.FieldSeries,
                 gradient_coeff: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Psi(t) and the positive-phase part Psi+(t) along a series."""
    table = phase_averages(series, gradient_coeff)
    return table["Psi"].to_numpy(), table["Psi+"].to_numpy()


def pool_observables(tables) -> pd.DataFrame:
    """Stack per-trajectory tables, assigning trajectory ids where absent."""
    tables = list(tables)
    if not tables:
        raise DataError("no observable tables to pool")
    tagged = []
    for index, table in enumerate(tables):
        if "trajectory" not in table.columns:
            table = table.copy()
            table.insert(0, "trajectory", index)
        tagged.append(table)
    return pd.concat(tagged, ignore_index=True)


# ---------------------------------------------------------------------------
# sensitivities in observable space
# ---------------------------------------------------------------------------

def _positive_distance_neighbors(coords: np.ndarray, k: int,
                                 label: str) -> tuple:
    """k nearest rows at least the manifold resolution away.

    The energies are functionals of whole profiles, so along a single
    phase-average coordinate the pooled rows form a scatter cloud, not a
    curve: rows closer than a resolvable fraction of the column span are
    other trajectories' unrelated states, and difference quotients across
    them amplify that scatter by the reciprocal of a meaningless gap. The
    separation is enforced pairwise, not just from the center: neighbors
    clustered at one nearly common offset leave the curvature moment
    resolved only by their mutual scatter, which is the same amplifier in
    disguise. A constant column, or one too clustered to yield k usable
    neighbors, is a rank problem only more trajectories can fix.
    """
    n = coords.shape[0]
    span = float(np.max(coords) - np.min(coords)) if n else 0.0
    if span <= 0.0:
        raise RankError(
            f"column '{label}' is constant across the dataset; "
            f"provide more trajectories")
    skip = _NEIGHBOR_RESOLUTION_REL * span
    order = np.argsort(coords, kind="stable")
    sorted_vals = coords[order]
    neighbors = []
    for i in range(n):
        pos = int(np.searchsorted(sorted_vals, coords[i]))
        chosen = []
        left, right = pos - 1, pos
        while len(chosen) < k and (left >= 0 or right < n):
            d_left = coords[i] - sorted_vals[left] if left >= 0 else np.inf
            d_right = sorted_vals[right] - coords[i] if right < n else np.inf
            if d_left <= d_right:
                j, step = left, -1
            else:
                j, step = right, +1
            cand = sorted_vals[j]
            separated = all(abs(cand - coords[c]) > skip for c in chosen)
            if min(d_left, d_right) > skip and separated and order[j] != i:
                chosen.append(int(order[j]))
            if step < 0:
                left -= 1
            else:
                right += 1
        if len(chosen) < k:
            raise RankError(
                f"column '{label}' has only {len(chosen)} usable neighbors "
                f"(need {k}); provide more trajectories")
        neighbors.append(tuple(chosen))
    return tuple(neighbors)


def functional_derivatives(table: pd.DataFrame, accuracy: int = 2,
                           neighborhood_size: int = 4) -> pd.DataFrame:
    """Estimate dPsi/dphi_{g+-} and dPsi+/dphi_{g+-} over the pooled rows.

    Each phase-average column is treated as a one-dimensional manifold
    through the scattered trajectory points; the graph-calculus stencil of
    `neighborhood_size` nearest distinct-valued rows gives the derivative
    of Psi and Psi+ along it. Requires rows pooled from at least two
    trajectories.
    """
    if "trajectory" not in table.columns:
        raise DataError("pooled table with a 'trajectory' column required")
    if table["trajectory"].nunique() < 2:
        raise DataError("functional derivatives need at least 2 trajectories")
    missing = [c for c in (*observable_labels(), "Psi", "Psi+")
               if c not in table.columns]
    if missing:
        raise DataError(f"observable columns missing: {missing}")
    out = table.copy()
    states = {"Psi": table["Psi"].to_numpy(),
              "Psi+": table["Psi+"].to_numpy()}
    for label in observable_labels():
        coords = table[label].to_numpy()
        neighbors = _positive_distance_neighbors(coords, neighborhood_size,
                                                 label)
        graph = graphcalc.Graph(coords[:, None], neighbors, states=states,
                                coordinate_labels=(label,))
        for function in ("Psi+", "Psi"):
            spec = graphcalc.DiffOpSpec(function=function, variable=label,
                                        manifold=label, accuracy=accuracy,
                                        dimension=0, order=1)
            try:
                graph = graphcalc.nonlocal_partial(graph, spec)
            except RankError as err:
                raise RankError(
                    f"{err}; provide more trajectories") from err
            name = graphcalc.derivative_label(function, label, 1)
            out[name] = graph.states[name]
    return out


# ---------------------------------------------------------------------------
# basis sets and identification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisSet:
    """Labeled operator columns with the shared time-derivative target."""

    name: str
    labels: tuple
    matrix: np.ndarray
    target: np.ndarray
    dof_map: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        matrix = np.asarray(self.matrix, dtype=float)
        target = np.asarray(self.target, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "target", target)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.labels):
            raise ShapeError(
                f"matrix shape {matrix.shape} does not fit "
                f"{len(self.labels)} labels")
        if target.shape != (matrix.shape[0],):
            raise ShapeError("target length does not match matrix rows")

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def as_library(self) -> regression.OperatorLibrary:
        return regression.OperatorLibrary(self.target, self.matrix,
                                          self.labels, self.dof_map)


def _time_derivative_by_trajectory(table: pd.DataFrame) -> np.ndarray:
    out = np.empty(len(table))
    for _, rows in table.groupby("trajectory", sort=False).groups.items():
        idx = np.asarray(rows)
        times = table.loc[idx, "time"].to_numpy()
        values = table.loc[idx, "phi_phi+"].to_numpy()
        if idx.size < 2:
            raise DataError("each trajectory needs at least 2 snapshots")
        out[idx] = np.gradient(values, times)
    return out


def build_basis_sets(table: pd.DataFrame) -> tuple:
    """The nested operator bases (B1, B2, B3) over the pooled rows.

    B1 holds the sensitivities of Psi+, B2 adds those of Psi, and B3 adds
    the raw phase averages. All three share the target dphi_{phi+}/dt from
    per-trajectory central time differences (one-sided at the ends).
    """
    if "trajectory" not in table.columns:
        raise DataError("pooled table with a 'trajectory' column required")
    base = observable_labels()
    b1 = tuple(graphcalc.derivative_label("Psi+", c, 1) for c in base)
    b2 = b1 + tuple(graphcalc.derivative_label("Psi", c, 1) for c in base)
    b3 = b2 + base
    missing = [c for c in b3 if c not in table.columns]
    if missing:
        raise DataError(f"basis columns missing: {missing}")
    target = _time_derivative_by_trajectory(table)
    trajectories = table["trajectory"].to_numpy(dtype=int)
    step_in_traj = np.zeros(len(table), dtype=int)
    for _, rows in table.groupby("trajectory", sort=False).groups.items():
        idx = np.asarray(rows)
        step_in_traj[idx] = np.arange(idx.size)
    dof_map = np.column_stack([trajectories, step_in_traj])
    sets = []
    for name, labels in (("B1", b1), ("B2", b2), ("B3", b3)):
        matrix = table.loc[:, list(labels)].to_numpy()
        sets.append(BasisSet(name, labels, matrix, target, dof_map))
    return tuple(sets)


def identify_reduced_model(basis: BasisSet,
                           config: regression.StepwiseConfig | None = None
                           ) -> regression.RegressionTrace:
    """Stepwise elimination over the basis columns against its target."""
    if len(basis.labels) < 2:
        raise ConfigurationError("identification needs at least 2 columns")
    if config is None:
        config = regression.StepwiseConfig()
    return regression.stepwise_eliminate(basis.as_library(), config)
