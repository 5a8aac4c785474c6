"""Multimodal downlink channel prediction for FDD massive MIMO.

Subpackages and modules:

* :mod:`chanfusion.scene` - geometric multipath scene and channel synthesis
* :mod:`chanfusion.estimators` - pilots, noise, LS/LMMSE, xi mapping, NMSE
* :mod:`chanfusion.nn` - reverse-mode tensor engine, layers, ADAM
* :mod:`chanfusion.fusion` - elementary/fusion networks and staged training
* :mod:`chanfusion.dataset` - sample generation, containers, path import
* :mod:`chanfusion.experiment` / :mod:`chanfusion.cli` - sweeps and CSV output
"""

__version__ = "0.1.0"
