"""Random sketch compressors.

A sketch is an unbiased random PSD linear operator S with E[S] = I.  Two
laws are supported: keep-tau-coordinates random sparsification (scaled by
d/tau) and the identity.  Sketches are never materialized as d x d
matrices during runs; a sample is an (index subset, scale) pair applied
in O(tau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SymmetricMatrix, as_matrix, inv_psd

# Reserved stream key for server-side draws (coin flips).  Client ids must
# stay below this value so client and server streams can never collide.
SERVER_KEY = 0x5EED5E12


def sketch_stream(seed: int, client: int, iteration: int) -> np.random.Generator:
    """Deterministic per-(seed, client, iteration) random stream.

    Serial and parallel client execution see identical draws because each
    (client, iteration) cell owns an independent generator.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, client, iteration)))


def coin_stream(seed: int, iteration: int) -> np.random.Generator:
    """Stream for the single per-iteration server coin."""
    return np.random.default_rng(np.random.SeedSequence((seed, SERVER_KEY, iteration)))


@dataclass(frozen=True)
class Sketch:
    """One sampled sketch: keep `indices` scaled by `scale`, zero the rest.

    `indices is None` encodes the identity operator.
    """

    dim: int
    indices: np.ndarray | None
    scale: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.indices is None:
            return np.array(x, dtype=float)
        out = np.zeros(self.dim)
        out[self.indices] = self.scale * np.asarray(x, dtype=float)[self.indices]
        return out

    def materialize(self) -> np.ndarray:
        """Dense d x d form; for tests and analysis only."""
        if self.indices is None:
            return np.eye(self.dim)
        s = np.zeros((self.dim, self.dim))
        s[self.indices, self.indices] = self.scale
        return s


@dataclass(frozen=True)
class SketchDistribution:
    """Sketch law: kind 'rand_tau' with 1 <= tau <= d, or 'identity'."""

    kind: str
    dim: int
    tau: int | None = None

    def __post_init__(self):
        if self.kind not in ("rand_tau", "identity"):
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.kind == "rand_tau":
            if self.tau is None or not (1 <= self.tau <= self.dim):
                raise ValueError(f"tau must be in [1, {self.dim}], got {self.tau}")

    @staticmethod
    def rand_tau(dim: int, tau: int) -> "SketchDistribution":
        return SketchDistribution("rand_tau", dim, tau)

    @staticmethod
    def identity(dim: int) -> "SketchDistribution":
        return SketchDistribution("identity", dim)

    def label(self) -> str:
        if self.kind == "identity":
            return "identity"
        return f"rand{self.tau}"


def sample(dist: SketchDistribution, rng: np.random.Generator) -> Sketch:
    """Draw one sketch: a uniform tau-subset without replacement, scale d/tau."""
    if dist.kind == "identity":
        return Sketch(dist.dim, None, 1.0)
    idx = rng.choice(dist.dim, size=dist.tau, replace=False)
    idx.sort()
    return Sketch(dist.dim, idx, dist.dim / dist.tau)


def expected_moment(dist: SketchDistribution, w) -> SymmetricMatrix:
    """Closed-form second moment E[S W S].

    For keep-tau sparsification with d >= 2:

        E[S W S] = (d/tau) * ((d - tau)/(d - 1) * diag(W) + (tau - 1)/(d - 1) * W)

    and for d = 1 (tau is forced to 1) the sketch is the identity, so the
    moment is W itself.  Identity law: W unchanged.
    """
    m = as_matrix(w)
    if m.dim != dist.dim:
        raise ValueError(f"dimension mismatch: sketch d={dist.dim}, W d={m.dim}")
    if dist.kind == "identity" or dist.dim == 1:
        return m
    d, tau = dist.dim, dist.tau
    diag_part = np.diag(np.diag(m.a))
    out = (d / tau) * (((d - tau) / (d - 1)) * diag_part + ((tau - 1) / (d - 1)) * m.a)
    return SymmetricMatrix(out)


def lambda_ws(dist: SketchDistribution, w) -> float:
    """Variance functional lmax(E[S W S] - W); zero for the identity law."""
    m = as_matrix(w)
    if dist.kind == "identity":
        return 0.0
    moment = expected_moment(dist, m)
    return SymmetricMatrix(moment.a - m.a).lmax()


def omega_w(dist: SketchDistribution, w) -> float:
    """Scale-invariant compressor parameter lmax(W^-1) * lambda_ws(W)."""
    m = as_matrix(w)
    inv_psd(m)  # PD gate
    return (1.0 / m.lmin()) * lambda_ws(dist, m)


def expected_density(dist: SketchDistribution) -> int:
    """Expected number of nonzeros a sketch produces: tau, or d for identity."""
    if dist.kind == "identity":
        return dist.dim
    return dist.tau


def sketch_from_config(cfg: dict, dim: int) -> SketchDistribution:
    """Build a distribution from {kind: 'rand_tau', tau: N} or {kind: 'identity'}."""
    kind = cfg.get("kind")
    if kind == "rand_tau":
        return SketchDistribution.rand_tau(dim, int(cfg["tau"]))
    if kind == "identity":
        return SketchDistribution.identity(dim)
    raise ValueError(f"unknown sketch config {cfg!r}")
