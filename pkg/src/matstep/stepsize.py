"""Stepsize rules and admissibility certificates.

For each method the stepsize matrix is D = gamma * W for a chosen PD
structure matrix W, and the largest admissible gamma solves an explicit
scalar quadratic:

  coin-flip variance reduction:   a*b*Lam * g^2 + g - lam_W <= 0
      a = (1-p)/(n p),  b = (1/n) sum lmax(L_i) lmax(L^-1 L_i),
      Lam = lmax(E[S W S] - W),  lam_W = 1 / lmax(W^1/2 L W^1/2)

  momentum variance reduction:    4 C_W curv * g^2 + g - lam_W <= 0
      C_W = lmax(W) * om_W (4 om_W + 1) / n,  om_W = lmax(W^-1) Lam

where `curv` is lmin(L) when L satisfies the implicit global-smoothness
relation lmin(L) L = (1/n) sum lmax(L_i) L_i.

Scalar baselines and the non-variance-reduced distributed compressed method
get their published closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .compression import SketchDistribution, expected_moment, lambda_ws, omega_w
from .linalg import (
    SymmetricMatrix,
    as_matrix,
    det_normalized,
    inv_psd,
    lmax_congruent,
    psd_geq,
    sqrt_psd,
)


class InvalidProbability(ValueError):
    """Synchronization probability must lie in (0, 1]."""


class InadmissibleStepsize(ValueError):
    """Stepsize fails its method's admissibility condition."""


def admissibility_tol(l_global) -> float:
    """PSD slack used in every admissibility check: 1e-10 * lmax(L)."""
    return 1e-10 * as_matrix(l_global).lmax()


def alpha_beta(p: float, n: int, l_locals, l_global) -> tuple[float, float]:
    """Coin-flip constants: alpha = (1-p)/(np), beta = (1/n) sum lmax(L_i) lmax(L^-1 L_i).

    lmax(L^-1 L_i) is evaluated on the congruent form L^-1/2 L_i L^-1/2.
    """
    if not 0.0 < p <= 1.0:
        raise InvalidProbability(f"p must be in (0, 1], got {p}")
    l_inv = inv_psd(l_global)
    alpha = (1.0 - p) / (n * p)
    beta = sum(as_matrix(li).lmax() * lmax_congruent(li, l_inv) for li in l_locals) / n
    return alpha, beta


def lambda_w(w, l_global) -> float:
    """lam_W = 1 / lmax(W^1/2 L W^1/2): the no-compression gamma limit."""
    return 1.0 / lmax_congruent(l_global, w)


def coin_quadratic(gamma: float, alpha: float, beta: float, lam: float, lam_w: float) -> float:
    """a*b*Lam * g^2 + g - lam_W; admissible gammas make this <= 0."""
    return alpha * beta * lam * gamma * gamma + gamma - lam_w


def _quadratic_root(coef: float, lam_w: float) -> float:
    # largest g with coef*g^2 + g - lam_w <= 0; reduces to lam_w when coef = 0
    return 2.0 * lam_w / (1.0 + math.sqrt(1.0 + 4.0 * coef * lam_w))


def gamma_det_marina(w, l_global, l_locals, s: SketchDistribution, p: float, n: int) -> float:
    """Largest admissible scaling for coin-flip variance reduction.

    gamma = 2 lam_W / (1 + sqrt(1 + 4 a b Lam_{W,S} lam_W)); with the
    identity sketch (Lam = 0) this is exactly the no-compression limit
    D = lam_W * W <= L^-1 in the W-ray.
    """
    wm = as_matrix(w)
    inv_psd(wm)  # PD gates
    inv_psd(l_global)
    alpha, beta = alpha_beta(p, n, l_locals, l_global)
    lam = lambda_ws(s, wm)
    lam_w = lambda_w(wm, l_global)
    return _quadratic_root(alpha * beta * lam, lam_w)


def marina_condition_holds(d_mat, l_global, l_locals, s: SketchDistribution, p: float, n: int,
                           tol: float | None = None) -> bool:
    """Full matrix admissibility check: D^-1 >= (1 + (1-p) R(D,S) / (np)) L
    with R(D,S) = (1/n) sum lmax(L_i) lmax(L^-1/2 L_i L^-1/2) lmax(E[S D S] - D).
    """
    dm = as_matrix(d_mat)
    lg = as_matrix(l_global)
    if tol is None:
        tol = admissibility_tol(lg)
    alpha, beta = alpha_beta(p, n, l_locals, lg)
    r = beta * lambda_ws(s, dm)
    rhs = SymmetricMatrix((1.0 + alpha * r) * lg.a)
    return psd_geq(inv_psd(dm), rhs, tol)


def momentum_from_sketch(s: SketchDistribution, w) -> float:
    """MVR momentum a = 1 / (2 om_W + 1); om is scale invariant so any
    positive multiple of W gives the same momentum."""
    return 1.0 / (2.0 * omega_w(s, w) + 1.0)


def dasha_cw(w, s: SketchDistribution, n: int) -> float:
    """C_W = lmax(W) * om_W * (4 om_W + 1) / n."""
    wm = as_matrix(w)
    om = omega_w(s, wm)
    return wm.lmax() * om * (4.0 * om + 1.0) / n


def mvr_quadratic(gamma: float, c_w: float, curvature: float, lam_w: float) -> float:
    """4 C_W curv * g^2 + g - lam_W; admissible gammas make this <= 0."""
    return 4.0 * c_w * curvature * gamma * gamma + gamma - lam_w


def gamma_det_dasha(w, l_global, l_locals, s: SketchDistribution, n: int) -> tuple[float, float]:
    """Largest admissible scaling and momentum for MVR variance reduction.

    gamma = 2 lam_W / (1 + sqrt(1 + 16 C_W lmin(L) lam_W)) and
    a = 1 / (2 om_W + 1).  The lmin(L) curvature term is calibrated to a
    global L satisfying lmin(L) L = (1/n) sum lmax(L_i) L_i; see
    dasha_condition_holds for the matrix-level check.
    """
    wm = as_matrix(w)
    lg = as_matrix(l_global)
    inv_psd(wm)
    inv_psd(lg)
    c_w = dasha_cw(wm, s, n)
    lam_w = lambda_w(wm, lg)
    gamma = _quadratic_root(4.0 * c_w * lg.lmin(), lam_w)
    return gamma, momentum_from_sketch(s, wm)


def dasha_condition_holds(d_mat, l_global, l_locals, s: SketchDistribution, n: int,
                          tol: float | None = None) -> bool:
    """Matrix admissibility for MVR:

        D^-1 >= L + (4 lmax(D) om_D (4 om_D + 1) / n) * (1/n) sum lmax(L_i) L_i.

    (The recursion argument needs the curvature term added to L; om_D is
    scale invariant in D.)
    """
    dm = as_matrix(d_mat)
    lg = as_matrix(l_global)
    if tol is None:
        tol = admissibility_tol(lg)
    om = omega_w(s, dm)
    mats = [as_matrix(li) for li in l_locals]
    m = sum(li.lmax() * li.a for li in mats) / len(mats)
    rhs = SymmetricMatrix(lg.a + (4.0 * dm.lmax() * om * (4.0 * om + 1.0) / n) * m)
    return psd_geq(inv_psd(dm), rhs, tol)


def gamma_marina_scalar(l_scalar: float, omega: float, p: float, n: int) -> float:
    """Scalar coin-flip baseline stepsize 1 / (L (1 + sqrt((1-p) omega / (p n))))."""
    if not 0.0 < p <= 1.0:
        raise InvalidProbability(f"p must be in (0, 1], got {p}")
    if l_scalar <= 0:
        raise ValueError("smoothness constant must be positive")
    return 1.0 / (l_scalar * (1.0 + math.sqrt((1.0 - p) * omega / (p * n))))


def gamma_dcgd_scalar(l_scalar: float, l_max: float, omega: float, n: int, big_k: int,
                      eps: float, delta_star: float) -> float:
    """Scalar compressed-descent stepsize

        min{ 1/L, sqrt(n / (omega L L_max K)), n eps^2 / (4 L L_max omega Delta*) }

    targeting squared stationarity eps^2 after K iterations; omega = 0 makes
    the compression terms vanish (treated as +inf).
    """
    terms = [1.0 / l_scalar]
    if omega > 0:
        terms.append(math.sqrt(n / (omega * l_scalar * l_max * big_k)))
        if delta_star > 0:
            terms.append(n * eps * eps / (4.0 * l_scalar * l_max * omega * delta_star))
    return min(terms)


def gamma_dasha_scalar(l_scalar: float, l_hat: float, omega: float, n: int) -> float:
    """Scalar MVR baseline stepsize (L + sqrt(16 omega (2 omega + 1) / n) * Lhat)^-1."""
    return 1.0 / (l_scalar + math.sqrt(16.0 * omega * (2.0 * omega + 1.0) / n) * l_hat)


def lambda_d(d_mat, l_global, l_locals, s: SketchDistribution) -> float:
    """Compressor noise level of the non-variance-reduced distributed method:

        lambda_D = max_i lmax(L_i^1/2 (E[S (DLD) S] - DLD) L_i^1/2)

    valid because E[S] = I makes E[(S - I) M (S - I)] = E[S M S] - M.
    """
    dm = as_matrix(d_mat)
    lg = as_matrix(l_global)
    dld = SymmetricMatrix(dm.a @ lg.a @ dm.a)
    noise = SymmetricMatrix(expected_moment(s, dld).a - dld.a)
    out = 0.0
    for li in l_locals:
        lh = sqrt_psd(li)
        out = max(out, SymmetricMatrix(lh.a @ noise.a @ lh.a).lmax())
    return out


def check_det_cgd(d_mat, l_global, l_locals, s: SketchDistribution, n: int, big_k: int,
                  eps: float, delta_star: float, tol: float = 1e-10) -> dict:
    """Admissibility of a stepsize matrix for the non-variance-reduced method:

        D L D <= D   and   lambda_D <= min{ n/K, n eps^2 det(D)^(1/d) / (4 Delta*) }.
    """
    dm = as_matrix(d_mat)
    lg = as_matrix(l_global)
    inv_psd(dm)
    inv_psd(lg)
    lam_d = lambda_d(dm, lg, l_locals, s)
    dld = SymmetricMatrix(dm.a @ lg.a @ dm.a)
    contraction_ok = psd_geq(dm, dld, tol * max(1.0, dm.lmax()))
    det_root, _ = det_normalized(dm)
    bound = n / big_k
    if delta_star > 0:
        bound = min(bound, n * eps * eps * det_root / (4.0 * delta_star))
    noise_ok = lam_d <= bound + tol * max(1.0, lam_d)
    return {"admissible": bool(contraction_ok and noise_ok), "lambda_D": lam_d}


def gamma_det_cgd_search(w, l_global, l_locals, s: SketchDistribution, n: int, big_k: int,
                         eps: float, delta_star: float, iters: int = 60) -> float:
    """Largest scaling gamma with D = gamma * W passing check_det_cgd.

    The admissible set is an interval (0, gamma*]: the contraction condition
    caps gamma at lam_W and lambda_D grows monotonically with gamma, so a
    bisection on [0, lam_W] converges.  Stands in for the predecessor's
    optimal-diagonal stepsize, which has no published closed form.
    """
    wm = as_matrix(w)
    hi = lambda_w(wm, l_global)
    if check_det_cgd(SymmetricMatrix(hi * wm.a), l_global, l_locals, s, n, big_k, eps, delta_star)["admissible"]:
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        res = check_det_cgd(SymmetricMatrix(mid * wm.a), l_global, l_locals, s, n, big_k, eps, delta_star)
        if res["admissible"]:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise InadmissibleStepsize("no admissible scaling found for the distributed compressed method")
    return lo


def cgd2_r_prime(d_mat, l_global, l_locals, s: SketchDistribution) -> float:
    """Variance functional of the sketch-after-stepsize variant:

        R'(D,S) = (1/n) sum lmax(L_i^1/2 (D E[T D^-1 T] D - D) L_i^1/2)
                  * lmax(L^-1/2 L_i L^-1/2)

    using the symmetric congruent form from the variance lemma.
    """
    dm = as_matrix(d_mat)
    l_inv = inv_psd(l_global)
    moment = expected_moment(s, inv_psd(dm))
    core = SymmetricMatrix(dm.a @ moment.a @ dm.a - dm.a)
    total = 0.0
    for li in l_locals:
        lh = sqrt_psd(li)
        term = SymmetricMatrix(lh.a @ core.a @ lh.a).lmax()
        total += term * lmax_congruent(li, l_inv)
    return total / len(l_locals)


def gamma_det_cgd2_vr(d_mat, l_global, l_locals, s: SketchDistribution, p: float, n: int,
                      tol: float | None = None) -> dict:
    """Admissibility of a candidate D for the sketch-after-stepsize variant:

        D^-1 >= (1 + (1-p) R'(D,S) / (np)) L.
    """
    if not 0.0 < p <= 1.0:
        raise InvalidProbability(f"p must be in (0, 1], got {p}")
    dm = as_matrix(d_mat)
    lg = as_matrix(l_global)
    if tol is None:
        tol = admissibility_tol(lg)
    r_prime = cgd2_r_prime(dm, lg, l_locals, s)
    alpha = (1.0 - p) / (n * p)
    rhs = SymmetricMatrix((1.0 + alpha * r_prime) * lg.a)
    return {"admissible": bool(psd_geq(inv_psd(dm), rhs, tol)), "R_prime": r_prime}


def gamma_det_cgd2_vr_scaling(w, l_global, l_locals, s: SketchDistribution, p: float, n: int) -> float:
    """Largest scaling for the sketch-after-stepsize variant on the ray gamma * W.

    R'(gamma W, S) = gamma * R'_W, so admissibility is again a quadratic
    a R'_W g^2 + g - lam_W <= 0 with the same root shape as the coin-flip rule.
    """
    if not 0.0 < p <= 1.0:
        raise InvalidProbability(f"p must be in (0, 1], got {p}")
    wm = as_matrix(w)
    r_w = cgd2_r_prime(wm, l_global, l_locals, s)
    alpha = (1.0 - p) / (n * p)
    return _quadratic_root(alpha * r_w, lambda_w(wm, l_global))


@dataclass(frozen=True)
class StepsizeSpec:
    """A chosen structure matrix W, scaling gamma, D = gamma W, and the
    certificate values that justified the choice."""

    method: str  # det_marina | det_dasha | det_cgd | det_cgd2_vr | scalar_baseline
    w_kind: str
    w: SymmetricMatrix = field(repr=False)
    gamma: float
    d_mat: SymmetricMatrix = field(repr=False)
    certificate: dict

    def det_root(self) -> float:
        return det_normalized(self.d_mat)[0]


def predict_complexity(method: str, spec: StepsizeSpec, constants: dict, eps: float) -> dict:
    """Predicted iteration count and transmitted floats for a spec.

    Iterations follow the convergence bounds: K = 2 Delta0 / (det(D)^(1/d) eps^2)
    for the variance-reduced methods and scalar baselines, with the constant 2
    replaced by 12 for the non-variance-reduced distributed method.  Floats
    follow the expected per-iteration accounting with density zeta_S.
    """
    if not spec.certificate.get("admissible", True):
        raise InadmissibleStepsize(f"spec for {method} is not admissible")
    delta0 = constants["delta0"]
    n = constants["n"]
    d = constants["d"]
    zeta = constants["zeta"]
    det_root = spec.det_root()
    factor = 12.0 if method == "det_cgd" else 2.0
    iterations = factor * delta0 / (det_root * eps * eps)
    p = spec.certificate.get("p")
    if method in ("det_marina", "det_cgd2_vr") or (
        method == "scalar_baseline" and p is not None
    ):
        floats = n * (d + iterations * (p * d + (1.0 - p) * zeta))
    elif method in ("det_dasha",) or (
        method == "scalar_baseline" and spec.certificate.get("momentum") is not None
    ):
        floats = n * (d + iterations * zeta)
    elif method == "det_cgd" or method == "scalar_baseline":
        floats = n * iterations * zeta
    else:
        raise ValueError(f"unknown method {method!r}")
    return {"iterations": iterations, "floats_transmitted": floats}
