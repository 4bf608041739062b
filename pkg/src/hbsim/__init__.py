"""hbsim: hierarchical block structures over proof-of-work, simulated and analyzed.

The package splits into the closed-form layers (core, segmentation,
economics, sharding), file handling (dataio), the chain simulator
(simulator) and a command-line front end (cli).
"""

from . import core, dataio, economics, segmentation, sharding, simulator

__version__ = "0.1.0"

__all__ = ["core", "dataio", "economics", "segmentation", "sharding", "simulator", "__version__"]
