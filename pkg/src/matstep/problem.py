"""Finite-sum objective: binary logistic regression with a nonconvex
regularizer, split across simulated clients.

The objective is

    f(x) = (1/n) sum_i f_i(x)
    f_i(x) = (1/m_i) sum_j log(1 + exp(-b_ij <a_ij, x>))
             + reg * sum_t x_t^2 / (1 + x_t^2)

with labels b in {-1, +1}.  The per-client Hessians are bounded by

    L_i = (1/m_i) sum_j a_ij a_ij^T / 4 + 2 reg I
    L   = (1/sum m_i) sum_ij a_ij a_ij^T / 4 + 2 reg I

which certify the matrix Lipschitz-gradient property used by the stepsize
rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import SymmetricMatrix, as_matrix, det_normalized, inv_psd, lmax_congruent


class ParseError(ValueError):
    """Malformed sparse-text dataset line."""


class PartitionError(ValueError):
    """More shards requested than rows available."""


@dataclass(frozen=True)
class Dataset:
    """Rows of (dense feature vector, label in {-1, +1})."""

    features: np.ndarray  # (m, d)
    labels: np.ndarray  # (m,) values in {-1, +1}

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match row count")
        if self.labels.size and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def parse_libsvm(text: str, d_hint: int | None = None) -> Dataset:
    """Parse sparse `<label> <idx>:<val> ...` lines into a dense Dataset.

    Indices are 1-based.  Labels are mapped by sign, with 0 mapped to -1 so
    that 0/1-labeled files come out as -1/+1.  The feature dimension is the
    largest index seen, or d_hint if that is larger.
    """
    rows: list[tuple[dict[int, float], float]] = []
    max_idx = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label_val = float(tokens[0])
        except ValueError:
            raise ParseError(f"line {lineno}: bad label {tokens[0]!r}") from None
        label = 1.0 if label_val > 0 else -1.0
        entries: dict[int, float] = {}
        for tok in tokens[1:]:
            try:
                idx_s, val_s = tok.split(":", 1)
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise ParseError(f"line {lineno}: bad token {tok!r}") from None
            if idx < 1:
                raise ParseError(f"line {lineno}: index {idx} < 1")
            entries[idx] = val
            max_idx = max(max_idx, idx)
        rows.append((entries, label))
    d = max(max_idx, d_hint or 0)
    feats = np.zeros((len(rows), d))
    labels = np.zeros(len(rows))
    for r, (entries, label) in enumerate(rows):
        for idx, val in entries.items():
            feats[r, idx - 1] = val
        labels[r] = label
    return Dataset(feats, labels)


def format_libsvm(data: Dataset) -> str:
    """Serialize a Dataset back to sparse text (inverse of parse_libsvm)."""
    lines = []
    for a, b in zip(data.features, data.labels):
        parts = ["+1" if b > 0 else "-1"]
        for j in np.nonzero(a)[0]:
            parts.append(f"{j + 1}:{float(a[j])!r}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def partition(data: Dataset, n: int, scheme: str = "contiguous") -> list[Dataset]:
    """Split rows into n disjoint shards covering the dataset, sizes within 1."""
    if n < 1 or n > data.n_rows:
        raise PartitionError(f"cannot split {data.n_rows} rows into {n} shards")
    if scheme == "contiguous":
        index_groups = np.array_split(np.arange(data.n_rows), n)
    elif scheme == "round_robin":
        index_groups = [np.arange(k, data.n_rows, n) for k in range(n)]
    else:
        raise ValueError(f"unknown partition scheme {scheme!r}")
    return [Dataset(data.features[idx], data.labels[idx]) for idx in index_groups]


def synthetic_dataset(n_rows: int, d: int, seed: int = 0, feature_spread: float = 1.0) -> Dataset:
    """Gaussian features with random +-1 labels; deterministic given seed.

    feature_spread > 1 scales coordinate j by a log-spaced factor in
    [1/spread, spread], giving the anisotropic curvature profile typical of
    real data; 1.0 keeps the features isotropic.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    feats = rng.standard_normal((n_rows, d))
    if feature_spread != 1.0:
        if feature_spread <= 0:
            raise ValueError("feature_spread must be positive")
        feats *= np.logspace(-1.0, 1.0, d, base=feature_spread)
    labels = rng.choice([-1.0, 1.0], size=n_rows)
    return Dataset(feats, labels)


@dataclass(frozen=True)
class Problem:
    """Finite-sum objective over n clients with cached smoothness bounds."""

    clients: list[Dataset]
    lambda_reg: float
    l_locals: list[SymmetricMatrix] = field(repr=False)
    l_global: SymmetricMatrix = field(repr=False)
    smoothness_pd: bool = True

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    @staticmethod
    def build(clients: list[Dataset], lambda_reg: float) -> "Problem":
        if not clients:
            raise ValueError("need at least one client")
        if lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        dims = {c.dim for c in clients}
        if len(dims) != 1:
            raise ValueError(f"clients disagree on dimension: {sorted(dims)}")
        l_locals, l_global, pd_ok = smoothness_bounds(clients, lambda_reg)
        return Problem(clients, lambda_reg, l_locals, l_global, pd_ok)


def smoothness_bounds(
    clients: list[Dataset], lambda_reg: float
) -> tuple[list[SymmetricMatrix], SymmetricMatrix, bool]:
    """Per-client and pooled Hessian upper bounds.

    With lambda_reg = 0 and rank-deficient data the bounds are only PSD;
    the flag in the result reports strict definiteness, and the stepsize
    rules reject the degenerate case downstream.
    """
    d = clients[0].dim
    reg = 2.0 * lambda_reg * np.eye(d)
    l_locals = []
    pooled = np.zeros((d, d))
    total_rows = 0
    for c in clients:
        gram = c.features.T @ c.features / 4.0
        pooled += gram
        total_rows += c.n_rows
        if c.n_rows:
            l_locals.append(SymmetricMatrix(gram / c.n_rows + reg))
        else:
            l_locals.append(SymmetricMatrix(reg))
    if total_rows:
        l_global = SymmetricMatrix(pooled / total_rows + reg)
    else:
        l_global = SymmetricMatrix(reg)
    pd_ok = l_global.lmin() > 1e-12 * max(1.0, l_global.lmax()) and all(
        li.lmin() > 1e-12 * max(1.0, li.lmax()) for li in l_locals
    )
    return l_locals, l_global, pd_ok


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + exp(t)) without overflow for large |t|
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def client_loss(p: Problem, i: int, x: np.ndarray) -> float:
    """f_i(x): mean logistic loss of client i plus the regularizer."""
    x = np.asarray(x, dtype=float)
    c = p.clients[i]
    data_term = 0.0
    if c.n_rows:
        margins = -c.labels * (c.features @ x)
        data_term = float(np.mean(_softplus(margins)))
    reg_term = p.lambda_reg * float(np.sum(x * x / (1.0 + x * x)))
    return data_term + reg_term


def loss(p: Problem, x: np.ndarray) -> float:
    """f(x) = (1/n) sum_i f_i(x)."""
    return float(np.mean([client_loss(p, i, x) for i in range(p.n_clients)]))


def grad(p: Problem, i: int, x: np.ndarray) -> np.ndarray:
    """Analytic gradient of f_i at x."""
    x = np.asarray(x, dtype=float)
    c = p.clients[i]
    g = np.zeros(p.dim)
    if c.n_rows:
        margins = -c.labels * (c.features @ x)
        sig = 1.0 / (1.0 + np.exp(-margins))  # sigma(-b <a, x>)
        coeff = -c.labels * sig
        g = c.features.T @ coeff / c.n_rows
    g = g + p.lambda_reg * 2.0 * x / (1.0 + x * x) ** 2
    return g


def grad_full(p: Problem, x: np.ndarray) -> np.ndarray:
    """Gradient of f: client gradients averaged in fixed index order."""
    stack = np.stack([grad(p, i, x) for i in range(p.n_clients)])
    return stack.mean(axis=0)


def global_l_implicit(l_locals, variant: str = "dasha") -> SymmetricMatrix:
    """Global smoothness matrix from locals via the implicit scalar relations.

    variant 'dasha': returns L = c * M with M = (1/n) sum lmax(L_i) L_i and
    c = lmin(M)^(-1/2), so that lmin(L) * L = M holds exactly.

    variant 'prop4': scales the unit-determinant direction of M by bisection
    until (1/n) sum lmax(L^-1) lmax(L_i) lmax(L_i L^-1) = 1 within 1e-10.
    This solver exists as a validation utility; the experiment pipeline uses
    the pooled data bound instead.
    """
    mats = [as_matrix(li) for li in l_locals]
    n = len(mats)
    for li in mats:
        inv_psd(li)  # PD gate
    m = sum(li.lmax() * li.a for li in mats) / n
    m_mat = SymmetricMatrix(m)
    if variant == "dasha":
        c = m_mat.lmin() ** -0.5
        return SymmetricMatrix(c * m)
    if variant != "prop4":
        raise ValueError(f"unknown variant {variant!r}")

    _, direction = det_normalized(m_mat)

    def relation(c: float) -> float:
        l_try = SymmetricMatrix(c * direction.a)
        l_inv = inv_psd(l_try)
        total = 0.0
        for li in mats:
            # lmax(L_i L^-1) on the congruent symmetric form L^-1/2 L_i L^-1/2
            total += l_inv.lmax() * li.lmax() * lmax_congruent(li, l_inv)
        return total / n

    # relation(c) ~ s0 / c^2: monotone decreasing, so bracket and bisect
    lo, hi = 1e-8, 1.0
    while relation(hi) > 1.0:
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("failed to bracket the implicit smoothness scale")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if relation(mid) > 1.0:
            lo = mid
        else:
            hi = mid
        if abs(relation(hi) - 1.0) <= 1e-10:
            break
    return SymmetricMatrix(hi * direction.a)
