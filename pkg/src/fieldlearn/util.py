"""Small shared helpers: seeding and number formatting."""

from __future__ import annotations

import numpy as np

# All floating-point output uses 17 significant digits so that values
# round-trip exactly through text.
FLOAT_FMT = "%.17g"


def fmt(x: float) -> str:
    """Format one float with 17 significant digits."""
    return FLOAT_FMT % float(x)


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Deterministic generator for a (seed, stream...) tuple.

    Distinct stream tags give statistically independent, reproducible
    generators without coupling consumers to a shared call order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(s) for s in stream]]))


def relative_error(value: np.ndarray | float, reference: np.ndarray | float) -> float:
    """Infinity-norm error of `value` relative to the scale of `reference`."""
    value = np.asarray(value, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = float(np.max(np.abs(reference)))
    if scale == 0.0:
        return float(np.max(np.abs(value - reference)))
    return float(np.max(np.abs(value - reference)) / scale)
