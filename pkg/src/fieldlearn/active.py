"""Active-learning loop for free-energy surrogates.

The loop alternates exploration, training, and exploitation: Latin-hypercube
batches cover the whole domain, the surrogate is (re)trained on everything
collected so far, and local batches concentrate points where the surrogate
looks interesting - near its convex regions (well refinement) and where its
gradient disagrees most with the oracle (error refinement).

The bundled synthetic oracle is an analytic four-component free energy
f(eta) with one disordered well at the origin and ordered wells at
composition 1/4 in the sign variants of the order parameters. Its chemical
potentials mu_k = df/deta_k are exact polynomials, so every sample is
noise-free and the well geometry is known in closed form.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import nets
from .errors import ConfigurationError, DataError, ShapeError
from .util import rng_for

# rng_for stream ids used by this module (3..6 are taken by dns and nets)
_STREAM_GLOBAL = 7
_STREAM_LOCAL = 8
_STREAM_SEARCH = 9
_STREAM_TRAIN = 10


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Oracle:
    """Free energy and its exact gradient on a bounded box.

    `chemical_potential` maps (n, d) order parameters to the (n, d) gradient
    mu_k = df/deta_k; `free_energy` returns the (n,) energy itself. Both
    reject points outside `bounds` (rows are (low, high) per axis).
    """

    free_energy: object
    chemical_potential: object
    bounds: np.ndarray
    well_centers: np.ndarray

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"expected points with {dim} columns, got {x.shape}")
    return x, squeeze


def synthetic_oracle(barrier_scale: float = 8.0, order_scale: float = 8.0,
                     disorder_curvature: float = 0.2,
                     order_parameter: float = 0.3) -> Oracle:
    """Four-component multi-well free energy with an exact gradient.

    f(eta) = A*w(eta0) + B*sum_k (eta_k^4 - s(eta0)*eta_k^2), where
    w(c) = 16 c^2 (4c - 1)^2 is a composition double well with minima at
    c = 0 and c = 1/4, and the onset function s ramps from -sigma (single
    order well at 0) to +2 eta*^2 (wells at +-eta*) as c goes 0 -> 1/4 via
    the cubic 3t^2 - 2t^3 in t = 4c. The ramp's slope vanishes at both well
    compositions, so the five designated centers are exact critical points
    with positive-definite Hessians. f is even in each of eta_1..eta_3, so
    all sign variants of an ordered well are equivalent; the four with a
    positive product are reported.
    """
    a, b = float(barrier_scale), float(order_scale)
    sigma, eta_star = float(disorder_curvature), float(order_parameter)
    if a <= 0 or b <= 0 or sigma <= 0 or eta_star <= 0:
        raise ConfigurationError("oracle scales must be positive")
    ramp_gain = 2 * eta_star**2 + sigma

    def onset(c):
        t = 4.0 * c
        return -sigma + ramp_gain * t * t * (3.0 - 2.0 * t)

    def onset_prime(c):
        t = 4.0 * c
        return ramp_gain * 4.0 * 6.0 * t * (1.0 - t)

    bounds = np.array([[-0.10, 0.35]] + [[-0.5, 0.5]] * 3)

    def check(x):
        pts, squeeze = _as_points(x, 4)
        low = pts < bounds[:, 0] - 1e-12
        high = pts > bounds[:, 1] + 1e-12
        if np.any(low | high):
            row = int(np.nonzero(np.any(low | high, axis=1))[0][0])
            raise DataError(f"point {pts[row]} outside the oracle domain")
        return pts, squeeze

    # odd powers via explicit products: pow() is not sign-symmetric to the ulp
    def free_energy(x):
        pts, squeeze = check(x)
        c = pts[:, 0]
        order = pts[:, 1:]
        order2 = order * order
        w = 16.0 * c**2 * (4.0 * c - 1.0)**2
        s = onset(c)
        f = a * w + b * np.sum(order2 * order2 - s[:, None] * order2, axis=1)
        return f[0] if squeeze else f

    def chemical_potential(x):
        pts, squeeze = check(x)
        c = pts[:, 0]
        order = pts[:, 1:]
        order2 = order * order
        mu = np.empty_like(pts)
        w_prime = 32.0 * c * (4.0 * c - 1.0) * (8.0 * c - 1.0)
        mu[:, 0] = a * w_prime - b * onset_prime(c) * np.sum(order2, axis=1)
        s = onset(c)
        mu[:, 1:] = b * (4.0 * order2 * order - 2.0 * s[:, None] * order)
        return mu[0] if squeeze else mu

    e = eta_star
    centers = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.25, e, e, e],
        [0.25, e, -e, -e],
        [0.25, -e, e, -e],
        [0.25, -e, -e, e],
    ])
    return Oracle(free_energy, chemical_potential, bounds, centers)


def default_transforms() -> tuple:
    """Input layer matching the oracle symmetry: even in each order parameter."""
    return (nets.take(0), nets.square(1), nets.square(2), nets.square(3))


# ---------------------------------------------------------------------------
# Workflow configuration and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkflowConfig:
    rounds: int = 12
    global_batch: int = 40
    local_batch: int = 40
    screening_batch: int = 256
    perturbation_scale: float = 0.05
    convexity_fraction: float = 0.5
    hidden: tuple = (20, 20)
    search_grid: tuple = ((10, 10), (20, 20), (30, 30))
    search_epochs: int = 100
    train_epochs: int = 400
    polish_epochs: int = 200
    learning_rate: float = 0.01
    polish_rate: float = 0.002
    train_batch_size: int = 20
    seed: int = 0
    down_select_radius: float | None = None
    use_symmetry_transforms: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")
        for name in ("global_batch", "local_batch", "screening_batch",
                     "search_epochs", "train_epochs", "polish_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if not 0.0 <= self.convexity_fraction <= 1.0:
            raise ConfigurationError("convexity_fraction must be in [0, 1]")
        if self.learning_rate <= 0 or self.polish_rate <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.perturbation_scale <= 0:
            raise ConfigurationError("perturbation_scale must be positive")
        if self.down_select_radius is not None and self.down_select_radius <= 0:
            raise ConfigurationError("down_select_radius must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "search_grid",
                           tuple(tuple(int(h) for h in grid)
                                 for grid in self.search_grid))


@dataclass
class WorkflowState:
    """Accumulated dataset, the working surrogate, and per-round logs.

    `provenance` carries one (tag, stream) pair per dataset row; streams are
    "global", "convexity", and "error". The dataset only ever grows.
    """

    oracle: Oracle
    config: WorkflowConfig
    idnn: nets.IDNN
    inputs: np.ndarray
    targets: np.ndarray
    provenance: list = field(default_factory=list)
    round_index: int = 0
    training_log: list = field(default_factory=list)
    search_log: list = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def new_state(config: WorkflowConfig, oracle: Oracle | None = None) -> WorkflowState:
    oracle = synthetic_oracle() if oracle is None else oracle
    transforms = default_transforms() if config.use_symmetry_transforms else None
    idnn = nets.make_idnn(oracle.dim, list(config.hidden),
                          transforms=transforms, seed=config.seed)
    d = oracle.dim
    return WorkflowState(oracle, config, idnn,
                         np.empty((0, d)), np.empty((0, d)))


def _append(state: WorkflowState, points: np.ndarray, tag: int, stream: str):
    """Query the oracle on `points` and grow the dataset, honoring the
    optional duplicate-radius down-selection."""
    if points.shape[0] == 0:
        return
    radius = state.config.down_select_radius
    if radius is not None and state.n_samples > 0:
        from scipy.spatial import cKDTree
        tree = cKDTree(state.inputs)
        near = tree.query_ball_point(points, r=radius)
        keep = np.array([len(hits) == 0 for hits in near])
        points = points[keep]
        if points.shape[0] == 0:
            return
    mu = state.oracle.chemical_potential(points)
    state.inputs = np.concatenate([state.inputs, points])
    state.targets = np.concatenate([state.targets, mu])
    state.provenance.extend((tag, stream) for _ in range(points.shape[0]))


# ---------------------------------------------------------------------------
# Workflow operations
# ---------------------------------------------------------------------------

def global_sampling(state: WorkflowState, tag: int) -> np.ndarray:
    """Exploration: one seeded Latin-hypercube batch over the whole domain."""
    n = state.config.global_batch
    if n == 0:
        return np.empty((0, state.oracle.dim))
    rng = rng_for(state.config.seed, _STREAM_GLOBAL, tag)
    sampler = qmc.LatinHypercube(d=state.oracle.dim, seed=rng)
    unit = sampler.random(n)
    bounds = state.oracle.bounds
    points = bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])
    _append(state, points, tag, "global")
    return points


def surrogate_training(state: WorkflowState) -> list:
    """Retrain the surrogate on the full accumulated dataset.

    Runs the round's main stage plus a lower-rate polish stage (the adaptive
    optimizer wanders at a fixed rate; the polish settles it). Returns the
    loss history and records the final loss in the state log.
    """
    if state.n_samples == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    epochs = state.config.train_epochs
    history = []
    if epochs > 0:
        stages = [(epochs, state.config.learning_rate)]
        if state.config.polish_epochs > 0:
            stages.append((state.config.polish_epochs, state.config.polish_rate))
        data = nets.TrainingData(state.inputs, gradients=state.targets)
        for stage, (n_epochs, rate) in enumerate(stages):
            seed_rng = rng_for(state.config.seed, _STREAM_TRAIN,
                               state.round_index, stage)
            cfg = nets.TrainConfig(
                learning_rate=rate, epochs=n_epochs,
                batch_size=state.config.train_batch_size,
                seed=int(seed_rng.integers(2**31)))
            _, stage_history = nets.train_idnn(state.idnn, data, cfg)
            history.extend(stage_history)
    final_loss = history[-1] if history else _gradient_mse(state)
    state.training_log.append({
        "round": state.round_index,
        "dataset_size": state.n_samples,
        "loss": float(final_loss),
    })
    return history


def _gradient_mse(state: WorkflowState) -> float:
    pred = nets.gradient_out(state.idnn, state.inputs)
    return float(np.mean(np.sum((pred - state.targets) ** 2, axis=1)))


def local_sampling(state: WorkflowState, tag: int) -> np.ndarray:
    """Exploitation: refine where the surrogate is convex and where it errs.

    Stream (a) perturbs dataset points the surrogate flags convex (wells);
    stream (b) screens a fresh batch and keeps the points with the largest
    gradient mismatch against the oracle. Each stream has its own quota; an
    empty convex set simply yields fewer points.
    """
    config = state.config
    n_total = config.local_batch
    if n_total == 0:
        return np.empty((0, state.oracle.dim))
    rng = rng_for(config.seed, _STREAM_LOCAL, tag)
    bounds = state.oracle.bounds
    span = bounds[:, 1] - bounds[:, 0]
    quota_convex = int(round(n_total * config.convexity_fraction))
    quota_error = n_total - quota_convex
    taken = []

    if quota_convex > 0 and state.n_samples > 0:
        flags = nets.is_convex(state.idnn, state.inputs)
        anchors = state.inputs[flags]
        if anchors.shape[0] > 0:
            picks = rng.integers(0, anchors.shape[0], size=quota_convex)
            jitter = rng.normal(0.0, config.perturbation_scale,
                                (quota_convex, state.oracle.dim)) * span
            points = np.clip(anchors[picks] + jitter,
                             bounds[:, 0], bounds[:, 1])
            _append(state, points, tag, "convexity")
            taken.append(points)

    if quota_error > 0:
        screen = bounds[:, 0] + rng.random((config.screening_batch,
                                            state.oracle.dim)) * span
        mismatch = nets.gradient_out(state.idnn, screen) - \
            state.oracle.chemical_potential(screen)
        scores = np.sqrt(np.sum(mismatch ** 2, axis=1))
        if np.max(scores) < 1e-12:
            # surrogate already matches the oracle; no ranking signal left
            picks = rng.choice(config.screening_batch, size=quota_error,
                               replace=False)
        else:
            picks = np.argsort(-scores, kind="stable")[:quota_error]
        points = screen[picks]
        _append(state, points, tag, "error")
        taken.append(points)

    if not taken:
        return np.empty((0, state.oracle.dim))
    return np.concatenate(taken)


def hyperparameter_search(state: WorkflowState, tag: int) -> tuple:
    """Short-budget width search on a seeded 80/20 split.

    Every candidate trains from a fresh init for `search_epochs`; the one
    with the lowest held-out gradient error replaces the working surrogate
    (its transform configuration is preserved). Returns the selected widths.
    """
    grid = state.config.search_grid
    if len(grid) == 0:
        raise ConfigurationError("hyperparameter search grid is empty")
    if state.n_samples == 0:
        raise ConfigurationError("cannot search on an empty dataset")
    rng = rng_for(state.config.seed, _STREAM_SEARCH, tag)
    order = rng.permutation(state.n_samples)
    n_train = max(1, int(0.8 * state.n_samples))
    train_rows, val_rows = order[:n_train], order[n_train:]
    if val_rows.size == 0:
        val_rows = train_rows
    data = nets.TrainingData(state.inputs[train_rows],
                             gradients=state.targets[train_rows])
    transforms = state.idnn.net.transforms
    best = None
    for index, hidden in enumerate(grid):
        candidate = nets.make_idnn(state.oracle.dim, list(hidden),
                                   transforms=transforms,
                                   seed=int(rng.integers(2**31)))
        if state.config.search_epochs > 0:
            cfg = nets.TrainConfig(learning_rate=state.config.learning_rate,
                                   epochs=state.config.search_epochs,
                                   batch_size=state.config.train_batch_size,
                                   seed=int(rng.integers(2**31)))
            nets.train_idnn(candidate, data, cfg)
        pred = nets.gradient_out(candidate, state.inputs[val_rows])
        val_loss = float(np.mean(
            np.sum((pred - state.targets[val_rows]) ** 2, axis=1)))
        state.search_log.append({"round": tag, "hidden": tuple(hidden),
                                 "validation_loss": val_loss})
        if best is None or val_loss < best[0]:
            best = (val_loss, index, candidate)
    state.idnn = best[2]
    return grid[best[1]]


def main_workflow(config: WorkflowConfig, oracle: Oracle | None = None,
                  on_round=None) -> WorkflowState:
    """Run the full loop: explore, (optionally) search, train, exploit.

    Round r draws a global batch tagged 2r, runs the width search once at
    round 1, retrains on everything, then draws a local batch tagged 2r + 1.
    `on_round(state)` is called after each completed round.
    """
    state = new_state(config, oracle)
    for rnd in range(config.rounds):
        state.round_index = rnd
        global_sampling(state, 2 * rnd)
        if rnd == 1:
            hyperparameter_search(state, rnd)
        surrogate_training(state)
        local_sampling(state, 2 * rnd + 1)
        if on_round is not None:
            on_round(state)
    return state


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def convex_well_count(state: WorkflowState) -> int:
    """How many designated well centers the surrogate flags convex."""
    return int(np.sum(nets.is_convex(state.idnn, state.oracle.well_centers)))


def free_energy_slice(state: WorkflowState, n_points: int = 41):
    """Surrogate free energy on the (eta0, eta1) plane at eta2 = eta3 = 0.

    Returns (eta0, eta1, value) columns in long format, eta1 fastest.
    """
    bounds = state.oracle.bounds
    eta0 = np.linspace(bounds[0, 0], bounds[0, 1], n_points)
    eta1 = np.linspace(bounds[1, 0], bounds[1, 1], n_points)
    g0, g1 = np.meshgrid(eta0, eta1, indexing="ij")
    grid = np.zeros((n_points * n_points, state.oracle.dim))
    grid[:, 0] = g0.ravel()
    grid[:, 1] = g1.ravel()
    values = nets.forward(state.idnn, grid)
    return g0.ravel(), g1.ravel(), values
