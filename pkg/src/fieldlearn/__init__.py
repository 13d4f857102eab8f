"""Tools for learning governing equations and energy surfaces from field data.

The package bundles four pieces that feed each other:

* structured-grid finite elements and direct numerical solvers that generate
  clean field data (`fem`, `dns`),
* weak-form operator libraries and stepwise F-test regression that identify
  governing equations from that data (`weakform`, `regression`),
* a non-local calculus on graphs of scattered points (`graphcalc`),
* integrable neural networks trained on gradient data, with an active-learning
  workflow and Allen-Cahn reduced-order modelling on top (`nets`, `active`,
  `observables`).

`cli` exposes the command-line entry point.
"""

__version__ = "0.1.0"
