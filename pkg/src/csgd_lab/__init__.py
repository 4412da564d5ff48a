"""Compressed SGD with Armijo step-size search and scaling.

Library layout:

- :mod:`csgd_lab.objectives` -- synthetic finite-sum problems with exact
  gradients and known curvature metadata
- :mod:`csgd_lab.compression` -- top-k sparsifier and error-feedback memory
- :mod:`csgd_lab.linesearch` -- Armijo backtracking with reset and scaling
- :mod:`csgd_lab.optimizers` -- single-node optimization loops and traces
- :mod:`csgd_lab.theory` -- closed-form convergence constants
- :mod:`csgd_lab.distributed` -- synchronous multi-worker simulator
- :mod:`csgd_lab.cli` -- experiment runner, constant calculator, verifier
"""

from __future__ import annotations

__version__ = "0.1.0"
