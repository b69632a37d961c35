"""Matrix-stepsized compressed gradient descent with variance reduction.

Library + CLI simulator for federated compressed-gradient methods whose
scalar learning rate is replaced by a positive definite matrix D, including
the coin-flip and momentum variance-reduced variants, their scalar
baselines, and the communication-cost accounting used to compare them.
"""

from .compression import SketchDistribution
from .linalg import SymmetricMatrix
from .problem import Dataset, Problem

__all__ = ["SymmetricMatrix", "SketchDistribution", "Dataset", "Problem"]
__version__ = "0.1.0"
