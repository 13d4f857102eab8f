"""Direct numerical solvers that generate field data.

Three solvers live here: a steady-state diffusion boundary-value solver, a
1D Allen-Cahn solver (backward Euler with Newton inner iterations), and a 2D
two-species reaction-diffusion solver with Schnakenberg-type kinetics
(semi-implicit: implicit diffusion, explicit reaction). All of them run on
the structured meshes and linear elements of `fem` with no-flux boundaries
unless a boundary mask says otherwise.

The Allen-Cahn step is the backward-Euler discretization of the Galerkin
gradient flow

    M_c dphi/dt = -mobility * (dPsi/dphi),
    Psi = integral of (phi^2 - 1)^2 + (lam/2)|grad phi|^2,

with M_c the consistent mass matrix and the nonlinear term integrated
exactly (3-point Gauss). Discretized this way the quadrature energy is the
exact Lyapunov function of the scheme, so the energy reported by
`allen_cahn_energy` decreases at every accepted step with a margin of order
Delta t, not merely up to spatial discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .errors import ConfigurationError, DataError, ShapeError, SolverError
from .util import rng_for

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
BLOWUP_LIMIT = 1e6


@dataclass(frozen=True)
class FieldSeries:
    """Time-stamped nodal snapshots of one scalar field.

    `times` is strictly increasing and `values` has one row per time,
    one column per mesh node.
    """

    mesh: fem.StructuredMesh
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 2:
            raise ShapeError("times must be 1D and values 2D")
        if values.shape != (times.shape[0], self.mesh.n_nodes):
            raise ShapeError(
                f"values shape {values.shape} does not match "
                f"(n_times, n_nodes) = ({times.shape[0]}, {self.mesh.n_nodes})")
        if times.shape[0] >= 2 and not np.all(np.diff(times) > 0):
            raise DataError("times must be strictly increasing")

    @property
    def n_times(self) -> int:
        return self.times.shape[0]

    def dt(self, n: int) -> float:
        """Time gap t_n - t_{n-1} between stored snapshots."""
        if n < 1 or n >= self.n_times:
            raise ConfigurationError(f"time index {n} needs 1 <= n < {self.n_times}")
        return float(self.times[n] - self.times[n - 1])


# ---------------------------------------------------------------------------
# Steady-state diffusion
# ---------------------------------------------------------------------------

def solve_steady_diffusion(mesh: fem.StructuredMesh, mask: fem.BoundaryMask,
                           diffusivity: float) -> np.ndarray:
    """Solve steady diffusion with Dirichlet elimination and Neumann loads.

    The weak form is K_D c = F with K_D the diffusivity-scaled stiffness
    matrix over active elements and F_i = +integral(N_i Hbar) on the Neumann
    boundary (outward flux Hbar drives c up its gradient: a 1D bar with
    c(0) = 0 and right-end flux q solves to c = q x / D). Exterior nodes are
    returned as 0. The interior residual is checked before returning.
    """
    if diffusivity <= 0:
        raise ConfigurationError(f"diffusivity must be > 0 (got {diffusivity})")
    if mask.n_nodes != mesh.n_nodes:
        raise ShapeError(f"mask has {mask.n_nodes} nodes, mesh has {mesh.n_nodes}")
    is_dirichlet = mask.classes == fem.DIRICHLET
    if not np.any(is_dirichlet):
        raise ConfigurationError(
            "steady diffusion is ill-posed without at least one Dirichlet node")
    K = diffusivity * fem.assemble_matrix(mesh, "stiffness", mask=mask)
    load = -fem.neumann_residual(mesh, mask)
    free = mask.is_free()
    c = np.zeros(mesh.n_nodes)
    c[is_dirichlet] = mask.dirichlet_values[is_dirichlet]
    rhs = load[free] - K[free][:, is_dirichlet] @ c[is_dirichlet]
    K_ff = K[free][:, free].tocsc()
    try:
        c_free = spla.spsolve(K_ff, rhs)
    except RuntimeError as exc:
        raise SolverError(f"steady diffusion linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(c_free)):
        raise SolverError("steady diffusion system is singular (non-finite solution)")
    c[free] = c_free
    resid = fem.bulk_residual_diffusion(c, mesh, mask, diffusivity) \
        + fem.neumann_residual(mesh, mask)
    interior = mask.classes == fem.INTERIOR
    worst = float(np.max(np.abs(resid[interior]))) if np.any(interior) else 0.0
    if worst >= 1e-8:
        raise SolverError(f"interior residual check failed: |R|_inf = {worst:.3e}")
    return c


def steady_diffusion_residual(field: np.ndarray, mesh: fem.StructuredMesh,
                              mask: fem.BoundaryMask, diffusivity: float) -> np.ndarray:
    """Full weak residual (bulk + Neumann boundary term) of a nodal field."""
    return fem.bulk_residual_diffusion(field, mesh, mask, diffusivity) \
        + fem.neumann_residual(mesh, mask)


# ---------------------------------------------------------------------------
# Allen-Cahn in one dimension
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AllenCahnParams:
    """Allen-Cahn run settings.

    mobility is the kinetic prefactor of the gradient flow, gradient_coeff
    the energy penalty on |grad phi|^2 (lambda), dt the backward-Euler step.
    The mesh is a uniform interval with n_nodes nodes on [0, length];
    length has no default in the source material and is recorded in run
    metadata rather than asserted.
    """

    mobility: float = 1e-3
    gradient_coeff: float = 1.0
    dt: float = 0.01
    n_steps: int = 300
    n_nodes: int = 513
    length: float = 32.0

    def __post_init__(self):
        if self.mobility < 0:
            raise ConfigurationError(f"mobility must be >= 0 (got {self.mobility})")
        if self.gradient_coeff <= 0:
            raise ConfigurationError(f"gradient_coeff must be > 0 (got {self.gradient_coeff})")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0 (got {self.dt})")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1 (got {self.n_steps})")
        if self.n_nodes < 3:
            raise ConfigurationError(f"n_nodes must be >= 3 (got {self.n_nodes})")
        if self.length <= 0:
            raise ConfigurationError(f"length must be > 0 (got {self.length})")

    def mesh(self) -> fem.StructuredMesh:
        return fem.make_interval_mesh(self.n_nodes, self.length)


def double_well(phi: np.ndarray) -> np.ndarray:
    """Landau double-well density f(phi) = (phi^2 - 1)^2."""
    return (phi * phi - 1.0) ** 2


def double_well_prime(phi: np.ndarray) -> np.ndarray:
    """f'(phi) = 4 phi^3 - 4 phi."""
    return 4.0 * phi ** 3 - 4.0 * phi


def double_well_second(phi: np.ndarray) -> np.ndarray:
    """f''(phi) = 12 phi^2 - 4."""
    return 12.0 * phi * phi - 4.0


def allen_cahn_initial_condition(params: AllenCahnParams, seed: int,
                                 n_interfaces: tuple[int, int] = (3, 6),
                                 width_factors: tuple[float, float] | None = None,
                                 ) -> np.ndarray:
    """Seeded multi-well initial profile.

    Draws an interface count in `n_interfaces` (inclusive) and interface
    positions kept at least 5 length units apart from each other and the
    ends, then multiplies equilibrium-width kinks tanh(sqrt(2/lam)(x - x_j)).
    The product alternates between plateaus near +1 and -1, so the profile
    starts near the slow manifold of the dynamics.

    `width_factors = (lo, hi)` scales each kink's width by an independent
    uniform draw from [lo, hi]. Equilibrium-width profiles barely move, so
    ensembles built from them collapse onto a few observable values;
    off-equilibrium widths make each trajectory traverse the relaxation
    toward the slow manifold instead. None keeps the exact equilibrium
    profile (and the draw sequence) of the two-argument form.
    """
    rng = rng_for(seed, 3)
    mesh = params.mesh()
    x = mesh.node_coords()[:, 0]
    lo, hi = n_interfaces
    count = int(rng.integers(lo, hi + 1))
    min_gap = 5.0
    span = params.length - 2 * min_gap
    need = (count - 1) * min_gap
    if span <= need:
        raise ConfigurationError(
            f"domain length {params.length} cannot hold {count} interfaces "
            f"spaced {min_gap} apart")
    # sorted positions with a guaranteed minimum gap
    slack = rng.uniform(0.0, 1.0, size=count + 1)
    slack = slack / slack.sum() * (span - need)
    positions = min_gap + np.cumsum(slack[:-1]) + min_gap * np.arange(count)
    width = np.sqrt(2.0 / params.gradient_coeff)
    phi = np.ones_like(x) * (1.0 if rng.integers(2) else -1.0)
    if width_factors is None:
        factors = np.ones(count)
    else:
        f_lo, f_hi = width_factors
        if not 0.0 < f_lo <= f_hi:
            raise ConfigurationError(
                f"width_factors must satisfy 0 < lo <= hi (got {width_factors})")
        factors = rng.uniform(f_lo, f_hi, size=count)
    for xj, factor in zip(positions, factors):
        phi = phi * np.tanh(factor * width * (x - xj))
    return phi


def allen_cahn_energy(phi: np.ndarray, mesh: fem.StructuredMesh,
                      gradient_coeff: float) -> float:
    """Total free energy of the interpolated field.

    Integral of (phi^2-1)^2 + (lam/2)|grad phi|^2 with 3-point Gauss, exact
    for the quartic bulk density of a linear interpolant.
    """
    rule = fem.gauss_rule(3, mesh.dim)
    sf = fem.shape_eval(mesh, rule)
    vals = fem.interpolate_at_qp(mesh, sf, np.asarray(phi, dtype=float))
    grads = fem.gradient_at_qp(mesh, sf, np.asarray(phi, dtype=float))
    density = double_well(vals) + 0.5 * gradient_coeff * np.sum(grads * grads, axis=2)
    return float(np.sum(density @ sf.wdetj))


def _tridiag_from_csr(mat: sp.csr_matrix, n: int) -> np.ndarray:
    """Pack a tridiagonal sparse matrix into solve_banded's (3, n) layout."""
    ab = np.zeros((3, n))
    coo = mat.tocoo()
    for r, c, v in zip(coo.row, coo.col, coo.data):
        if c == r + 1:
            ab[0, c] += v
        elif c == r:
            ab[1, c] += v
        elif c == r - 1:
            ab[2, c] += v
        else:
            raise ShapeError("matrix is not tridiagonal")
    return ab


def solve_allen_cahn_1d(params: AllenCahnParams, phi0: np.ndarray) -> FieldSeries:
    """March the 1D Allen-Cahn equation with backward Euler plus Newton.

    Each step solves G(phi) = M_c (phi - phi_prev)/dt
    + mobility * (weak f'(phi) + lam K phi) = 0 to |G|_inf < 1e-10, with the
    residual checked before the first Newton update so exact equilibria
    (phi identically 0 or +-1) are preserved bitwise. No-flux boundaries are
    natural to the weak form. Returns every step including t = 0.
    """
    mesh = params.mesh()
    phi0 = np.asarray(phi0, dtype=float)
    if phi0.shape != (mesh.n_nodes,):
        raise ShapeError(f"phi0 shape {phi0.shape} does not match n_nodes {mesh.n_nodes}")
    if not np.all(np.isfinite(phi0)):
        raise DataError("phi0 has non-finite entries")
    rule = fem.gauss_rule(3, 1)
    sf = fem.shape_eval(mesh, rule)
    conn = mesh.connectivity()
    n = mesh.n_nodes
    mass = fem.assemble_matrix(mesh, "mass", rule=rule)
    stiff = fem.assemble_matrix(mesh, "stiffness", rule=rule)
    mass_ab = _tridiag_from_csr(mass, n)
    stiff_ab = _tridiag_from_csr(stiff, n)
    lam = params.gradient_coeff
    mob = params.mobility
    dt = params.dt

    def residual(phi, phi_prev):
        vals = fem.interpolate_at_qp(mesh, sf, phi)
        bulk = fem.weak_source(mesh, sf, double_well_prime(vals))
        return mass @ ((phi - phi_prev) / dt) + mob * (bulk + lam * (stiff @ phi))

    out = np.empty((params.n_steps + 1, n))
    out[0] = phi0
    phi_prev = phi0.copy()
    for step in range(1, params.n_steps + 1):
        phi = phi_prev.copy()
        converged = False
        res_norm = np.inf
        for _ in range(NEWTON_MAX_ITER):
            G = residual(phi, phi_prev)
            res_norm = float(np.max(np.abs(G)))
            if res_norm < NEWTON_TOL:
                converged = True
                break
            # Jacobian: M/dt + mob*(int N_a N_b f''(phi) + lam K), tridiagonal
            vals = fem.interpolate_at_qp(mesh, sf, phi)
            fpp = double_well_second(vals)          # (n_elem, n_q)
            local = np.einsum("q,qa,qb,eq->eab", sf.wdetj, sf.N, sf.N, fpp)
            jac_ab = mass_ab / dt + mob * lam * stiff_ab
            # scatter the 2x2 element blocks into banded storage
            left, right = conn[:, 0], conn[:, 1]
            np.add.at(jac_ab[1], left, mob * local[:, 0, 0])
            np.add.at(jac_ab[1], right, mob * local[:, 1, 1])
            np.add.at(jac_ab[0], right, mob * local[:, 0, 1])
            np.add.at(jac_ab[2], left, mob * local[:, 1, 0])
            delta = scipy.linalg.solve_banded((1, 1), jac_ab, G)
            phi = phi - delta
        if not converged:
            raise SolverError(
                f"Allen-Cahn Newton did not converge at step {step}: "
                f"|G|_inf = {res_norm:.3e} after {NEWTON_MAX_ITER} iterations")
        out[step] = phi
        phi_prev = phi
    times = dt * np.arange(params.n_steps + 1)
    return FieldSeries(mesh, times, out)


# ---------------------------------------------------------------------------
# Schnakenberg reaction-diffusion in two dimensions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchnakenbergParams:
    """Two-species reaction-diffusion settings.

    The kinetics are
        dc1/dt = d11 lap c1 + d12 lap c2 + r10 + r11 c1 + r12 c2 + r13 c1^2 c2
        dc2/dt = d21 lap c1 + d22 lap c2 + r20 + r21 c1 + r22 c2 + r23 c1^2 c2
    with no-flux boundaries. Defaults are a canonical Turing-unstable set
    (uniform state (1.0, 0.9), short-range activator c1, long-range
    inhibitor c2). The fastest unstable wavelength for these constants is
    about 10 length units, so the default domain is a 50 x 50 square meshed
    64 x 64; a unit square would admit no unstable mode under no-flux
    conditions.
    """

    d11: float = 1.0
    d12: float = 0.0
    d21: float = 0.0
    d22: float = 40.0
    r10: float = 0.1
    r11: float = -1.0
    r12: float = 0.0
    r13: float = 1.0
    r20: float = 0.9
    r21: float = 0.0
    r22: float = 0.0
    r23: float = -1.0
    dt: float = 1e-3
    n_steps: int = 1000
    nodes: tuple[int, int] = (65, 65)
    lengths: tuple[float, float] = (50.0, 50.0)

    def __post_init__(self):
        if self.d11 <= 0 or self.d22 <= 0:
            raise ConfigurationError(
                f"own-species diffusivities must be > 0 (got d11={self.d11}, d22={self.d22})")
        for name in ("d12", "d21", "r10", "r11", "r12", "r13",
                     "r20", "r21", "r22", "r23", "dt"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0 (got {self.dt})")
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be >= 1 (got {self.n_steps})")

    def mesh(self) -> fem.StructuredMesh:
        return fem.make_grid_mesh(self.nodes, self.lengths)

    def reaction(self, c1: np.ndarray, c2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise reaction rates for both species."""
        c1sq_c2 = c1 * c1 * c2
        r1 = self.r10 + self.r11 * c1 + self.r12 * c2 + self.r13 * c1sq_c2
        r2 = self.r20 + self.r21 * c1 + self.r22 * c2 + self.r23 * c1sq_c2
        return r1, r2


def perturbed_uniform_ic(mesh: fem.StructuredMesh, base: float, amplitude: float,
                         seed: int, stream: int = 0) -> np.ndarray:
    """Uniform field with seeded multiplicative perturbation of size `amplitude`."""
    rng = rng_for(seed, 4, stream)
    return base * (1.0 + amplitude * rng.uniform(-1.0, 1.0, mesh.n_nodes))


def solve_schnakenberg_2d(params: SchnakenbergParams, c1_0: np.ndarray, c2_0: np.ndarray,
                          record_steps=None, stop_rate: float | None = None,
                          ) -> tuple[FieldSeries, FieldSeries]:
    """Semi-implicit time stepping of the two-species system.

    Diffusion is implicit (one prefactorized sparse solve per species per
    step), reaction explicit via quadrature of the interpolated previous
    state, cross-diffusion explicit. `record_steps` selects which step
    indices to keep (step 0 and the final step are always kept; default all).
    With `stop_rate` set, marching stops once max |c_n - c_{n-1}|_inf / dt
    falls below it.
    """
    mesh = params.mesh()
    c1 = np.asarray(c1_0, dtype=float).copy()
    c2 = np.asarray(c2_0, dtype=float).copy()
    for name, c in (("c1_0", c1), ("c2_0", c2)):
        if c.shape != (mesh.n_nodes,):
            raise ShapeError(f"{name} shape {c.shape} does not match n_nodes {mesh.n_nodes}")
        if not np.all(np.isfinite(c)):
            raise DataError(f"{name} has non-finite entries")
        if np.any(c <= 0):
            raise DataError(f"{name} must be positive everywhere")
    rule = fem.gauss_rule(2, 2)
    sf = fem.shape_eval(mesh, rule)
    mass = fem.assemble_matrix(mesh, "mass", rule=rule)
    stiff = fem.assemble_matrix(mesh, "stiffness", rule=rule)
    dt = params.dt
    lhs1 = spla.splu((mass / dt + params.d11 * stiff).tocsc())
    lhs2 = spla.splu((mass / dt + params.d22 * stiff).tocsc())

    if record_steps is None:
        keep = None
    else:
        keep = set(int(s) for s in record_steps)
        keep.add(0)
    times1, snaps1, snaps2 = [0.0], [c1.copy()], [c2.copy()]
    last_step = 0
    for step in range(1, params.n_steps + 1):
        v1 = fem.interpolate_at_qp(mesh, sf, c1)
        v2 = fem.interpolate_at_qp(mesh, sf, c2)
        r1, r2 = params.reaction(v1, v2)
        rhs1 = mass @ (c1 / dt) + fem.weak_source(mesh, sf, r1)
        rhs2 = mass @ (c2 / dt) + fem.weak_source(mesh, sf, r2)
        if params.d12 != 0.0:
            rhs1 = rhs1 - params.d12 * (stiff @ c2)
        if params.d21 != 0.0:
            rhs2 = rhs2 - params.d21 * (stiff @ c1)
        c1_new = lhs1.solve(rhs1)
        c2_new = lhs2.solve(rhs2)
        if (np.max(np.abs(c1_new)) > BLOWUP_LIMIT or np.max(np.abs(c2_new)) > BLOWUP_LIMIT
                or not np.all(np.isfinite(c1_new)) or not np.all(np.isfinite(c2_new))):
            raise SolverError(f"Schnakenberg solution blew up at step {step}")
        rate = max(float(np.max(np.abs(c1_new - c1))),
                   float(np.max(np.abs(c2_new - c2)))) / dt
        c1, c2 = c1_new, c2_new
        last_step = step
        stopping = stop_rate is not None and rate < stop_rate
        if keep is None or step in keep or stopping or step == params.n_steps:
            times1.append(step * dt)
            snaps1.append(c1.copy())
            snaps2.append(c2.copy())
        if stopping:
            break
    times = np.array(times1)
    return (FieldSeries(mesh, times, np.array(snaps1)),
            FieldSeries(mesh, times, np.array(snaps2)))
