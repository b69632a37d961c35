"""Shared generators for random smoothness instances and small problems."""

import numpy as np
import pytest

from matstep.linalg import SymmetricMatrix
from matstep.problem import Problem, global_l_implicit, partition, synthetic_dataset


def random_pd_matrix(rng, d, shift=0.2):
    a = rng.standard_normal((d, d))
    return SymmetricMatrix(a @ a.T + shift * np.eye(d))


def random_smoothness_instance(rng, d=None, n=None, variant="prop4"):
    """Random per-client bounds L_i with a global L solving the implicit
    relation of the requested variant, so the certificate inequalities that
    assume the relation hold exactly."""
    d = d or int(rng.integers(3, 8))
    n = n or int(rng.integers(1, 5))
    l_locals = [random_pd_matrix(rng, d) for _ in range(n)]
    l_global = global_l_implicit(l_locals, variant)
    return l_locals, l_global, d, n


def make_problem(rows=40, d=6, n=3, lam=0.4, seed=13):
    data = synthetic_dataset(rows, d, seed)
    return Problem.build(partition(data, n), lam)


@pytest.fixture
def tiny_problem():
    return make_problem(rows=24, d=5, n=3, lam=0.3, seed=5)
