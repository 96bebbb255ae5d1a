"""Bound-based solver for one-sided partially observable stochastic games
whose partially informed agent perceives its environment through ReLU
classifiers.

Modules: ``geometry`` (polytopes and partitions), ``relu`` (network
pre-images), ``model`` (game files), ``lp`` (linear programs), ``beliefs``,
``lower`` and ``upper`` (value bounds), ``hsvi`` (the search loop),
``strategy`` (online play and rollouts) and ``cli``.
"""

__version__ = "0.1.0"
