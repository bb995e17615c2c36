"""Simulation and verification lab for the derivative martingale of a
binary Gaussian branching random walk.

Subpackages:
  model        parameters, rate functions, bands, node-addressed RNG
  engine       BFS / DFS tree engines and band conditioning
  martingales  per-realization statistics and exact small-n oracles
  estimators   replicated campaigns, tail fits, tilted lower bounds
  ldp          region checkers, branching-process tail bound, growth rates
  cli          batch front end with manifests
"""

__version__ = "1.0.0"

from . import _kernels

warmup_kernels = _kernels.warmup
set_threads = _kernels.set_threads
