"""Stepwise regression with F-test elimination: the system-identification engine.

The driver repeatedly fits the active operator set, tentatively removes each
operator, and permanently drops the one whose removal raises the loss least.
The F statistic of each executed drop is recorded; the identified model is
the last iteration before a drop's F exceeded the configured threshold. The
trace keeps running past that point down to a single operator so callers can
inspect smaller models too.

Three numerical conventions matter here and are easy to get wrong:

* Residual sums are evaluated directly as |y - chi w|^2, with w from the
  same fitter the trace records. Expanding the residual through the Gram
  matrix (yty - 2 gy'w + w'Gw) cancels catastrophically once column
  magnitudes span several orders, and forming chi'chi squares the
  column-scale spread, so the ridge solve goes through the augmented
  least-squares form rather than the normal equations.

* Tentative drops are ranked by the fit's own minimization objective (rss
  plus the ridge penalty; plain rss for OLS), and candidates whose
  objective gap is below the configured F test's resolution count as tied,
  resolving to the lowest column index. Ranking ridge fits by raw rss
  instead inverts the preference on exactly dependent operator groups; see
  stepwise_eliminate.
* On data the active set explains to linear-solver roundoff, the raw RSS
  difference between two fits is itself roundoff, and its F value is
  statistically meaningless noise of order n_rows. The driver therefore
  treats a drop as insignificant outright (F recorded as 0) when the rss
  increase is below (1e-9 |y|)^2, i.e. when the residual norm grew by less
  than a 1e-9 relative amount. Both conventions keep the elimination
  scale-invariant.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, DataError, ShapeError, SolverError
from .weakform import OperatorLibrary

IDENTIFY_STRATEGIES = ("specified_target",)
DROP_STRATEGIES = ("most_insignificant",)
REGRESSION_METHODS = ("ols", "ridge")

# Typo that appears in the reference configuration format; accepted on parse.
_DROP_STRATEGY_ALIASES = {"most_inignificant": "most_insignificant"}

# Residual-norm growth below this relative amount marks a drop insignificant.
NEGLIGIBLE_RSS_GROWTH = 1e-9


@dataclass(frozen=True)
class StepwiseConfig:
    """Settings for stepwise identification.

    Defaults equal the reference configuration file: ridge regression with
    alpha 1e-5, threshold F_criteria = 1, target column 0.
    """

    identify_strategy: str = "specified_target"
    target_index: int = 0
    basis_drop_strategy: str = "most_insignificant"
    regression_method: str = "ridge"
    alpha_ridge: float = 1e-5
    f_criteria: float = 1.0
    data_dir: str = "N/A"

    def __post_init__(self):
        if self.identify_strategy not in IDENTIFY_STRATEGIES:
            raise ConfigurationError(
                f"identify_strategy {self.identify_strategy!r} not in {IDENTIFY_STRATEGIES}")
        strategy = _DROP_STRATEGY_ALIASES.get(self.basis_drop_strategy,
                                              self.basis_drop_strategy)
        object.__setattr__(self, "basis_drop_strategy", strategy)
        if strategy not in DROP_STRATEGIES:
            raise ConfigurationError(
                f"basis_drop_strategy {self.basis_drop_strategy!r} not in {DROP_STRATEGIES}")
        if self.regression_method not in REGRESSION_METHODS:
            raise ConfigurationError(
                f"regression_method {self.regression_method!r} not in {REGRESSION_METHODS}")
        if self.alpha_ridge < 0:
            raise ConfigurationError(f"alpha_ridge must be >= 0 (got {self.alpha_ridge})")
        if self.f_criteria <= 0:
            raise ConfigurationError(f"F_criteria must be > 0 (got {self.f_criteria})")
        if self.target_index < 0:
            raise ConfigurationError(f"target_index must be >= 0 (got {self.target_index})")


_CONFIG_SCHEMA = {
    "VSI": {"data_dir": str, "identify_strategy": str, "target_index": int},
    "StepwiseRegression": {"basis_drop_strategy": str, "regression_method": str,
                           "alpha_ridge": float, "F_criteria": float},
}

_FIELD_FOR_KEY = {"F_criteria": "f_criteria"}


def parse_config(text: str) -> StepwiseConfig:
    """Parse the INI configuration format ([VSI] / [StepwiseRegression])."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"configuration is not valid INI: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _CONFIG_SCHEMA:
            raise ConfigurationError(f"unknown configuration section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_SCHEMA[section]:
                raise ConfigurationError(
                    f"unknown key {key!r} in section [{section}]")
            typ = _CONFIG_SCHEMA[section][key]
            try:
                value = typ(raw)
            except ValueError:
                line = _line_of(text, key)
                raise ConfigurationError(
                    f"value {raw!r} for {key} is not a valid {typ.__name__}"
                    + (f" (line {line})" if line else "")) from None
            kwargs[_FIELD_FOR_KEY.get(key, key)] = value
    return StepwiseConfig(**kwargs)


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip().startswith(key):
            return i
    return None


def ridge_fit(chi: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    """Minimize |y - chi w|^2 + alpha |w|^2.

    alpha > 0 is solved in the augmented form min |[y; 0] - [chi; sqrt(a) I] w|,
    which is full rank by construction and avoids squaring the condition
    number the way chi'chi does; alpha = 0 is ordinary least squares via
    column-pivoted QR, raising a solver error that names the dependent
    columns when chi is rank deficient.
    """
    chi = np.asarray(chi, dtype=float)
    y = np.asarray(y, dtype=float)
    if chi.ndim != 2 or chi.shape[1] == 0:
        raise ConfigurationError("chi must be 2D with at least one column")
    if y.shape != (chi.shape[0],):
        raise ShapeError(
            f"y rows {y.shape} do not match chi rows {chi.shape[0]}")
    if alpha < 0:
        raise ConfigurationError(f"alpha must be >= 0 (got {alpha})")
    n, k = chi.shape
    if alpha == 0.0:
        q, r, piv = scipy.linalg.qr(chi, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        tol = diag.max(initial=0.0) * max(n, k) * np.finfo(float).eps
        rank = int(np.sum(diag > tol))
        if rank < k:
            dependent = sorted(int(j) for j in piv[rank:])
            raise SolverError(
                f"chi is rank deficient with alpha = 0; dependent columns {dependent}")
        w_piv = scipy.linalg.solve_triangular(r, q.T @ y)
        w = np.empty(k)
        w[piv] = w_piv
        return w
    augmented = np.vstack([chi, np.sqrt(alpha) * np.eye(k)])
    rhs = np.concatenate([y, np.zeros(k)])
    w, *_ = scipy.linalg.lstsq(augmented, rhs, lapack_driver="gelsy")
    return w


def f_statistic(rss_reduced: float, rss_full: float, p_reduced: int, p_full: int,
                n_rows: int) -> float:
    """Classical extra-sum-of-squares F statistic.

    F = ((rss_reduced - rss_full)/(p_full - p_reduced)) / (rss_full/(n - p_full)),
    with rss_reduced clamped up to rss_full so the value is never negative.
    """
    if p_full <= p_reduced:
        raise ConfigurationError(
            f"p_full must exceed p_reduced (got {p_full} <= {p_reduced})")
    if n_rows <= p_full:
        raise ConfigurationError(
            f"n_rows must exceed p_full (got {n_rows} <= {p_full})")
    if rss_full <= 0:
        raise ConfigurationError(f"rss_full must be > 0 (got {rss_full})")
    rss_reduced = max(float(rss_reduced), float(rss_full))
    return ((rss_reduced - rss_full) / (p_full - p_reduced)) / (rss_full / (n_rows - p_full))


@dataclass(frozen=True)
class TraceStep:
    """One stepwise iteration: the active model after `dropped` was removed."""

    active_indices: tuple[int, ...]
    active_labels: tuple[str, ...]
    coefficients: np.ndarray
    loss: float
    f_stat: float
    dropped: str


@dataclass(frozen=True)
class RegressionTrace:
    """Full elimination history plus the index of the identified model."""

    labels: tuple[str, ...]
    steps: tuple[TraceStep, ...]
    identified_index: int
    target_label: str = "dc/dt"

    @property
    def identified(self) -> TraceStep:
        return self.steps[self.identified_index]

    def padded_coefficients(self, step_index: int | None = None) -> np.ndarray:
        """Coefficients over all original columns, zeros on dropped ones."""
        step = self.steps[self.identified_index if step_index is None else step_index]
        out = np.zeros(len(self.labels))
        out[list(step.active_indices)] = step.coefficients
        return out

    def step_with_size(self, n_active: int) -> TraceStep:
        for step in self.steps:
            if len(step.active_indices) == n_active:
                return step
        raise ConfigurationError(f"no trace step has {n_active} active operators")


def _fit(chi: np.ndarray, y: np.ndarray, config: StepwiseConfig) -> np.ndarray:
    alpha = config.alpha_ridge if config.regression_method == "ridge" else 0.0
    return ridge_fit(chi, y, alpha)


def _direct_rss(chi: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    r = y - chi @ w
    return float(r @ r)


def _resolve_target(library: OperatorLibrary, config: StepwiseConfig):
    """Pick the regression target: y when present, else the configured column."""
    if np.any(library.y != 0.0):
        return library.y, library.chi, library.labels, "dc/dt"
    moved = library.with_target(config.target_index)
    return moved.y, moved.chi, moved.labels, library.labels[config.target_index]


def stepwise_eliminate(library: OperatorLibrary, config: StepwiseConfig) -> RegressionTrace:
    """Backward elimination driven by smallest loss increase.

    Iteration 0 is the full-library fit. Each later iteration drops the
    operator whose tentative removal raised the fit's objective least
    (candidates inside the F test's resolution count as tied and resolve to
    the lowest column index), records the drop's F statistic, and refits.
    The identified model is the iteration before the first F above
    config.f_criteria; elimination itself continues to a single operator
    for inspection.
    """
    if library.n_cols == 0:
        raise ConfigurationError("operator library has no columns")
    y, chi, labels, target_label = _resolve_target(library, config)
    if chi.shape[1] == 0:
        raise ConfigurationError("no candidate operators besides the target")
    n = chi.shape[0]
    if n <= chi.shape[1] + 1:
        raise ConfigurationError(
            f"need more rows than operators plus one (rows {n}, operators {chi.shape[1]})")
    yty = float(y @ y)
    alpha = config.alpha_ridge if config.regression_method == "ridge" else 0.0

    def tentative_objective(idx: list[int]) -> float:
        # Candidates are ranked by the fit's own minimization objective,
        # rss + alpha |w|^2 (plain rss for OLS). Ranking a ridge fit by its
        # unpenalized rss instead inverts the preference on exactly
        # dependent operator groups: removing the compact member can lower
        # raw rss because the content re-expands over columns with smaller
        # penalty, which sheds f'(phi) in favor of the (phi, phi^3) pair.
        try:
            w = _fit(chi[:, idx], y, config)
        except SolverError:
            return np.inf
        return _direct_rss(chi[:, idx], y, w) + alpha * float(w @ w)

    active = list(range(chi.shape[1]))
    w0 = _fit(chi[:, active], y, config)
    loss0 = _direct_rss(chi[:, active], y, w0) / n
    steps = [TraceStep(tuple(active), tuple(labels[j] for j in active),
                       w0, loss0, np.nan, "")]
    rss_current = _direct_rss(chi[:, active], y, w0)
    while len(active) > 1:
        candidates = []
        for j in active:
            rest = [i for i in active if i != j]
            candidates.append((tentative_objective(rest), j))
        best_obj = min(c[0] for c in candidates)
        # Candidates whose objective gap is below the resolution of the
        # configured F test (growth < F_criteria * best/(n - p)) are
        # statistically indistinguishable; such ties resolve to the lowest
        # column index.
        tol = config.f_criteria * best_obj / (n - (len(active) - 1))
        drop = min(j for obj, j in candidates if obj <= best_obj + tol)
        rest = [i for i in active if i != drop]
        w = _fit(chi[:, rest], y, config)
        rss_new = _direct_rss(chi[:, rest], y, w)
        growth = max(rss_new - rss_current, 0.0)
        if np.sqrt(growth) < NEGLIGIBLE_RSS_GROWTH * np.sqrt(yty) or rss_current <= 0.0:
            f_val = 0.0
        else:
            f_val = f_statistic(rss_new, rss_current, len(rest), len(active), n)
        active = rest
        steps.append(TraceStep(tuple(active), tuple(labels[j] for j in active),
                               w, rss_new / n, f_val, labels[drop]))
        rss_current = rss_new
    identified = len(steps) - 1
    for i, step in enumerate(steps[1:], start=1):
        if step.f_stat > config.f_criteria:
            identified = i - 1
            break
    return RegressionTrace(tuple(labels), tuple(steps), identified, target_label)


@dataclass(frozen=True)
class ConfirmationEntry:
    label: str
    passed: bool
    max_ratio_error: float


@dataclass(frozen=True)
class ConfirmationReport:
    entries: tuple[ConfirmationEntry, ...]
    passed: bool


def confirmation_test(library: OperatorLibrary, trace: RegressionTrace,
                      config: StepwiseConfig, rel_tol: float = 0.05) -> ConfirmationReport:
    """Re-pose the identified model with each retained operator as target.

    Writing the identified model y = sum_k w_k chi_k, solving for operator r
    gives chi_r = (1/w_r) y - sum_{k != r} (w_k/w_r) chi_k. The test refits
    that system (target column on the left, y joining the right-hand
    library) and accepts operator r when the refitted coefficients repeat
    the model's coefficient ratios within rel_tol. A model with fewer than
    two operators passes vacuously.
    """
    y, chi, labels, _ = _resolve_target(library, config)
    step = trace.identified
    idx = list(step.active_indices)
    w = np.asarray(step.coefficients, dtype=float)
    if len(idx) < 2:
        return ConfirmationReport((), True)
    entries = []
    for pos, r in enumerate(idx):
        target = chi[:, r]
        if not np.any(target != 0.0):
            raise DataError(f"operator {labels[r]!r} has an all-zero column")
        others = [j for j in idx if j != r]
        rhs = np.column_stack([y] + [chi[:, j] for j in others])
        coef = _fit(rhs, target, config)
        c_y = coef[0]
        max_err = 0.0
        if c_y == 0.0:
            entries.append(ConfirmationEntry(labels[r], False, np.inf))
            continue
        for k_pos, k in enumerate(others):
            got = -coef[1 + k_pos]           # refitted w_k / w_r
            want = w[idx.index(k)] / w[pos]
            scale = max(abs(want), 1e-300)
            max_err = max(max_err, abs(got - want) / scale)
        implied_wr = 1.0 / c_y
        max_err = max(max_err, abs(implied_wr - w[pos]) / max(abs(w[pos]), 1e-300))
        entries.append(ConfirmationEntry(labels[r], max_err <= rel_tol, max_err))
    return ConfirmationReport(tuple(entries), all(e.passed for e in entries))
