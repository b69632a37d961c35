"""Experiment orchestration: configs, stepsize certificates, multi-seed runs,
trace emission and aggregation.

A run produces one trace per (method, seed).  Trace rows hold the iterate
diagnostics (function value, determinant-normalized squared gradient norm,
cumulative transmitted floats, coin/momentum) and the header carries the
config hash, seed and the stepsize certificate, so a trace file is fully
self-describing.  One transmitted vector coordinate counts as one float
(8 bytes); sparsification messages cost their density, with index sets
reconstructed from shared seeds at no charge.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import algorithms, stepsize as ss
from .compression import SketchDistribution, expected_density, sketch_from_config
from .linalg import SymmetricMatrix, as_matrix, det_normalized, diag_inv, identity, inv_psd
from .problem import Problem, grad_full, loss, parse_libsvm, partition, synthetic_dataset
from .stepsize import InadmissibleStepsize, StepsizeSpec

TRACE_COLUMNS = ("k", "f", "grad_metric", "floats_cum", "aux")

SCALAR_NAMES = {"marina": "coin", "dasha": "momentum", "dcgd": "plain"}
MATRIX_NAMES = ("det_marina", "det_dasha", "det_cgd", "det_cgd2_vr")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class AggregateError(ValueError):
    """Traces cannot be aggregated (empty or mismatched)."""


def config_hash(raw: dict) -> str:
    """Hash of the experiment definition; output location does not affect it."""
    semantic = {k: v for k, v in raw.items() if k != "output_dir"}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict
    base_dir: str

    @property
    def n_clients(self) -> int:
        return int(self.raw["n_clients"])

    @property
    def lambda_reg(self) -> float:
        return float(self.raw.get("lambda_reg", 0.0))

    @property
    def methods(self) -> list[dict]:
        return self.raw["methods"]

    @property
    def output_dir(self) -> str:
        out = self.raw.get("output_dir", "out")
        return out if os.path.isabs(out) else os.path.join(self.base_dir, out)

    @property
    def base_seed(self) -> int:
        return int(self.raw.get("base_seed", 0))

    def hash(self) -> str:
        return config_hash(self.raw)


def validate_config(raw: dict, base_dir: str) -> ExperimentConfig:
    """Check structural validity; raises ConfigError with a reason."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    if "n_clients" not in raw or int(raw["n_clients"]) < 1:
        raise ConfigError("n_clients must be a positive integer")
    if float(raw.get("lambda_reg", 0.0)) < 0:
        raise ConfigError("lambda_reg must be nonnegative")
    dataset = raw.get("dataset")
    if not isinstance(dataset, dict) or not ("path" in dataset or "synthetic" in dataset):
        raise ConfigError("dataset must give either a path or a synthetic spec")
    if "path" in dataset:
        path = dataset["path"]
        full = path if os.path.isabs(path) else os.path.join(base_dir, path)
        if not os.path.exists(full):
            raise ConfigError(f"dataset file not found: {full}")
    methods = raw.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a nonempty list")
    for m in methods:
        name = m.get("name")
        if name not in MATRIX_NAMES and name not in SCALAR_NAMES:
            raise ConfigError(f"unknown method name {name!r}")
        if int(m.get("K", 0)) < 1:
            raise ConfigError(f"method {name}: K must be >= 1")
        if int(m.get("seeds", 1)) < 1:
            raise ConfigError(f"method {name}: seeds must be >= 1")
        if "sketch" not in m:
            raise ConfigError(f"method {name}: missing sketch config")
        if name in ("det_marina", "det_cgd2_vr", "marina"):
            p = m.get("p")
            if p is None or not (0.0 < float(p) <= 1.0):
                raise ConfigError(f"method {name}: p must be in (0, 1]")
    return ExperimentConfig(raw, base_dir)


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    return validate_config(raw, os.path.dirname(os.path.abspath(path)))


def build_problem(cfg: ExperimentConfig) -> Problem:
    dataset_cfg = cfg.raw["dataset"]
    if "path" in dataset_cfg:
        path = dataset_cfg["path"]
        full = path if os.path.isabs(path) else os.path.join(cfg.base_dir, path)
        with open(full) as fh:
            data = parse_libsvm(fh.read(), dataset_cfg.get("d_hint"))
    else:
        syn = dataset_cfg["synthetic"]
        data = synthetic_dataset(int(syn["rows"]), int(syn["d"]), int(syn.get("seed", 0)),
                                 float(syn.get("feature_spread", 1.0)))
    shards = partition(data, cfg.n_clients, cfg.raw.get("partition", "contiguous"))
    return Problem.build(shards, cfg.lambda_reg)


def start_point(cfg: ExperimentConfig, d: int) -> np.ndarray:
    x0 = cfg.raw.get("x0", "zeros")
    if x0 == "zeros":
        return np.zeros(d)
    arr = np.asarray(x0, dtype=float)
    if arr.shape != (d,):
        raise ConfigError(f"x0 has length {arr.size}, expected {d}")
    return arr


def gd_minimize(p: Problem, d_mat, x0: np.ndarray, iters: int) -> float:
    """Run matrix gradient descent and return the best observed f value.

    Used as the f* proxy: true minima of the nonconvex objective are
    unknown, so convergence targets are measured against this value.
    """
    d_arr = as_matrix(d_mat).a
    x = np.array(x0, dtype=float)
    best = loss(p, x)
    for _ in range(iters):
        x = x - d_arr @ grad_full(p, x)
        best = min(best, loss(p, x))
    return best


def estimate_reference_values(p: Problem, x0: np.ndarray, iters: int = 1500) -> dict:
    """Proxy values f*, per-client minima, delta0 and delta*.

    delta* = f* - (1/n) sum_i min f_i, with per-client minima from
    per-client descent runs; clipped at zero against proxy noise.
    """
    f_star = gd_minimize(p, inv_psd(p.l_global), x0, iters)
    client_minima = []
    for i in range(p.n_clients):
        sub = Problem.build([p.clients[i]], p.lambda_reg)
        client_minima.append(gd_minimize(sub, inv_psd(sub.l_global), x0, iters))
    delta_star = max(f_star - float(np.mean(client_minima)), 0.0)
    return {
        "f_star": f_star,
        "client_minima": client_minima,
        "delta_star": delta_star,
        "delta0": loss(p, x0) - f_star,
    }


def account_floats(method: str, p_or_none, sketch: SketchDistribution, d: int, n: int, big_k: float) -> float:
    """Expected cumulative floats across all clients after K iterations.

    Coin-flip methods: n (d + K (p d + (1-p) zeta)); momentum methods pay
    the density every round on top of the init sync: n (d + K zeta); the
    non-variance-reduced method has no init cost: n K zeta.
    """
    zeta = expected_density(sketch)
    if method in ("det_marina", "det_cgd2_vr", "marina"):
        if p_or_none is None:
            raise ValueError(f"method {method} needs a probability")
        p = float(p_or_none)
        return n * (d + big_k * (p * d + (1.0 - p) * zeta))
    if method in ("det_dasha", "dasha"):
        return n * (d + big_k * zeta)
    if method in ("det_cgd", "dcgd"):
        return n * big_k * zeta
    raise ValueError(f"unknown method {method!r}")


def resolve_w(w_kind: str, l_global) -> SymmetricMatrix:
    lg = as_matrix(l_global)
    if w_kind == "identity":
        return identity(lg.dim)
    if w_kind == "diag_inv":
        return diag_inv(lg)
    if w_kind == "l_inv":
        return inv_psd(lg)
    raise ConfigError(f"unknown w_kind {w_kind!r}")


@dataclass(frozen=True)
class MethodPlan:
    """Everything needed to run one configured method."""

    label: str
    name: str
    spec: StepsizeSpec
    sketch: SketchDistribution
    big_k: int
    seeds: int
    p: float | None = None
    momentum: float | None = None
    d_normalized: SymmetricMatrix = field(repr=False, default=None)


def _scalar_omega(sketch: SketchDistribution) -> float:
    return sketch.dim / expected_density(sketch) - 1.0


def build_method_plan(p: Problem, mcfg: dict, reference: dict) -> MethodPlan:
    """Resolve a method config into a stepsize spec plus run parameters.

    Raises InadmissibleStepsize when the resulting (gamma, W) fails the
    method's admissibility rule (e.g. via an explicit gamma_scale > 1).
    """
    name = mcfg["name"]
    d, n = p.dim, p.n_clients
    sketch = sketch_from_config(mcfg["sketch"], d)
    big_k = int(mcfg["K"])
    seeds = int(mcfg.get("seeds", 1))
    eps = float(mcfg.get("eps", 0.1))
    scale = float(mcfg.get("gamma_scale", 1.0))
    lg, locals_ = p.l_global, p.l_locals
    prob = float(mcfg["p"]) if "p" in mcfg else None
    momentum = None
    cert: dict = {"eps": eps, "zeta": expected_density(sketch), "sketch": sketch.label()}

    if name in MATRIX_NAMES:
        w_kind = mcfg.get("w_kind", "l_inv" if name != "det_cgd" else "diag_inv")
        w = resolve_w(w_kind, lg)
        lam_w = ss.lambda_w(w, lg)
        if name == "det_marina":
            gamma = scale * ss.gamma_det_marina(w, lg, locals_, sketch, prob, n)
            alpha, beta = ss.alpha_beta(prob, n, locals_, lg)
            lam = ss.lambda_ws(sketch, w)
            admissible = ss.marina_condition_holds(
                SymmetricMatrix(gamma * w.a), lg, locals_, sketch, prob, n)
            cert.update(alpha=alpha, beta=beta, Lambda=lam, lambda_W=lam_w, p=prob)
        elif name == "det_dasha":
            gamma0, momentum = ss.gamma_det_dasha(w, lg, locals_, sketch, n)
            gamma = scale * gamma0
            c_w = ss.dasha_cw(w, sketch, n)
            admissible = ss.mvr_quadratic(gamma, c_w, lg.lmin(), lam_w) <= 1e-10 * max(1.0, lam_w)
            cert.update(C_W=c_w, omega=ss.omega_w(sketch, w), lambda_W=lam_w, momentum=momentum)
        elif name == "det_cgd":
            delta_star = reference["delta_star"]
            gamma = scale * ss.gamma_det_cgd_search(w, lg, locals_, sketch, n, big_k, eps, delta_star)
            check = ss.check_det_cgd(SymmetricMatrix(gamma * w.a), lg, locals_, sketch, n,
                                     big_k, eps, delta_star)
            admissible = check["admissible"]
            cert.update(lambda_D=check["lambda_D"], lambda_W=lam_w, delta_star=delta_star)
        else:  # det_cgd2_vr
            gamma = scale * ss.gamma_det_cgd2_vr_scaling(w, lg, locals_, sketch, prob, n)
            check = ss.gamma_det_cgd2_vr(SymmetricMatrix(gamma * w.a), lg, locals_, sketch, prob, n)
            admissible = check["admissible"]
            cert.update(R_prime=check["R_prime"], lambda_W=lam_w, p=prob)
        d_mat = SymmetricMatrix(gamma * w.a)
        method = name
    else:
        # scalar baselines: isotropic D = gamma * I with the published rules
        omega = _scalar_omega(sketch)
        l_scal = lg.lmax()
        if name == "marina":
            gamma0 = ss.gamma_marina_scalar(l_scal, omega, prob, n)
            cert.update(p=prob)
        elif name == "dasha":
            l_hat = math.sqrt(sum(li.lmax() ** 2 for li in locals_) / n)
            gamma0 = ss.gamma_dasha_scalar(l_scal, l_hat, omega, n)
            momentum = 1.0 / (2.0 * omega + 1.0)
            cert.update(momentum=momentum, L_hat=l_hat)
        else:  # dcgd
            l_max = max(li.lmax() for li in locals_)
            delta_star = reference["delta_star"]
            gamma0 = ss.gamma_dcgd_scalar(l_scal, l_max, omega, n, big_k, eps, delta_star)
            cert.update(L_max=l_max, delta_star=delta_star)
        gamma = scale * gamma0
        admissible = gamma <= gamma0 * (1.0 + 1e-12)
        w_kind = "identity"
        w = identity(d)
        d_mat = SymmetricMatrix(gamma * np.eye(d))
        cert.update(omega=omega, L=l_scal)
        method = "scalar_baseline"

    cert.update(method=method, name=name, w_kind=w_kind, gamma=gamma, admissible=bool(admissible))
    spec = StepsizeSpec(method, w_kind, w, gamma, d_mat, cert)
    constants = {"delta0": reference["delta0"], "n": n, "d": d, "zeta": expected_density(sketch)}
    if admissible:
        pred = ss.predict_complexity(method, spec, constants, eps)
        cert["predicted_K"] = pred["iterations"]
        cert["predicted_floats"] = pred["floats_transmitted"]
    label = mcfg.get("label") or f"{name}_{sketch.label()}" + (f"_p{prob}" if prob is not None else "")
    _, dn = det_normalized(d_mat)
    return MethodPlan(label, name, spec, sketch, big_k, seeds,
                      p=prob, momentum=momentum, d_normalized=dn)


@dataclass
class RunTrace:
    """Per-iteration record of one (method, seed) run."""

    label: str
    method: str
    seed: int
    config_hash: str
    certificate: dict
    rows: list[tuple]  # (k, f, grad_metric, floats_cum, aux)

    def column(self, name: str) -> np.ndarray:
        idx = TRACE_COLUMNS.index(name)
        return np.array([r[idx] if r[idx] is not None else np.nan for r in self.rows])


def method_iterator(p: Problem, plan: MethodPlan, seed: int, x0: np.ndarray):
    name = plan.name
    if name in ("det_marina", "marina"):
        return algorithms.iterate_det_marina(p, plan.spec.d_mat, plan.p, plan.sketch,
                                             seed, plan.big_k, x0)
    if name in ("det_dasha", "dasha"):
        return algorithms.iterate_det_dasha(p, plan.spec.d_mat, plan.momentum, plan.sketch,
                                            seed, plan.big_k, x0)
    if name in ("det_cgd", "dcgd"):
        return algorithms.iterate_det_cgd(p, plan.spec.d_mat, plan.sketch, seed, plan.big_k, x0)
    if name == "det_cgd2_vr":
        return algorithms.iterate_det_cgd2_vr(p, plan.spec.d_mat, plan.p, plan.sketch,
                                              seed, plan.big_k, x0)
    raise ValueError(f"unknown method {name!r}")


def run_single(p: Problem, plan: MethodPlan, seed: int, x0: np.ndarray, cfg_hash: str) -> RunTrace:
    rows = []
    dn = plan.d_normalized.a
    for rec in method_iterator(p, plan, seed, x0):
        gf = grad_full(p, rec.x)
        metric = float(gf @ (dn @ gf))
        rows.append((rec.k, loss(p, rec.x), metric, rec.floats, rec.aux))
    return RunTrace(plan.label, plan.name, seed, cfg_hash, plan.spec.certificate, rows)


def prepare_methods(cfg: ExperimentConfig, p: Problem) -> list[MethodPlan]:
    """Build all stepsize specs up front; any inadmissible spec aborts the
    experiment before a single run starts, with its certificate attached."""
    needs_reference = any(
        m["name"] in ("det_cgd", "dcgd") or "delta0" not in cfg.raw for m in cfg.methods
    )
    reference = {"delta0": cfg.raw.get("delta0", 1.0), "delta_star": cfg.raw.get("delta_star", 0.0)}
    if needs_reference and not ("delta0" in cfg.raw and "delta_star" in cfg.raw):
        x0 = start_point(cfg, p.dim)
        est = estimate_reference_values(p, x0, int(cfg.raw.get("reference_iters", 1500)))
        est.update({k: cfg.raw[k] for k in ("delta0", "delta_star") if k in cfg.raw})
        reference = est
    plans = []
    for mcfg in cfg.methods:
        plan = build_method_plan(p, mcfg, reference)
        if not plan.spec.certificate["admissible"]:
            raise InadmissibleStepsize(
                "inadmissible stepsize for "
                f"{plan.label}: certificate={json.dumps(plan.spec.certificate, sort_keys=True)}")
        plans.append(plan)
    return plans


def run_experiment(cfg: ExperimentConfig) -> list[RunTrace]:
    """One trace per (method, seed); deterministic given (config, seed)."""
    p = build_problem(cfg)
    x0 = start_point(cfg, p.dim)
    plans = prepare_methods(cfg, p)
    traces = []
    for plan in plans:
        for s in range(plan.seeds):
            traces.append(run_single(p, plan, cfg.base_seed + s, x0, cfg.hash()))
    return traces


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_to_csv(trace: RunTrace) -> str:
    lines = [
        f"# config_hash={trace.config_hash}",
        f"# method={trace.method}",
        f"# label={trace.label}",
        f"# seed={trace.seed}",
        f"# certificate={json.dumps(trace.certificate, sort_keys=True)}",
        ",".join(TRACE_COLUMNS),
    ]
    for row in trace.rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def read_trace_csv(text: str) -> RunTrace:
    header: dict = {}
    rows = []
    saw_columns = False
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key.strip()] = val
            continue
        if not line.strip():
            continue
        if not saw_columns:
            if tuple(line.split(",")) != TRACE_COLUMNS:
                raise ValueError(f"unexpected trace columns: {line}")
            saw_columns = True
            continue
        parts = line.split(",")
        rows.append((int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3]),
                     float(parts[4]) if parts[4] else None))
    return RunTrace(header.get("label", ""), header.get("method", ""),
                    int(header.get("seed", 0)), header.get("config_hash", ""),
                    json.loads(header.get("certificate", "{}")), rows)


@dataclass
class Summary:
    label: str
    method: str
    n_seeds: int
    certificate: dict
    k: np.ndarray
    f_mean: np.ndarray
    f_std: np.ndarray
    grad_mean: np.ndarray
    grad_std: np.ndarray
    floats_mean: np.ndarray
    min_grad_metric: float
    uniform_grad_metric: float


def aggregate(traces: list[RunTrace]) -> Summary:
    """Per-iteration seed mean/std of each metric, plus the min-over-k and
    uniform-over-k statistics of the gradient metric."""
    if not traces:
        raise AggregateError("no traces to aggregate")
    labels = {t.label for t in traces}
    hashes = {t.config_hash for t in traces}
    if len(labels) != 1 or len(hashes) != 1:
        raise AggregateError(f"traces disagree on label/config: {labels} / {hashes}")
    lengths = {len(t.rows) for t in traces}
    if len(lengths) != 1:
        raise AggregateError("traces have different lengths")
    f = np.stack([t.column("f") for t in traces])
    g = np.stack([t.column("grad_metric") for t in traces])
    fl = np.stack([t.column("floats_cum") for t in traces])
    g_mean = g.mean(axis=0)
    # the uniform statistic averages over the first K iterates (k = 0..K-1)
    uniform = float(g_mean[:-1].mean()) if len(g_mean) > 1 else float(g_mean[0])
    return Summary(
        label=traces[0].label,
        method=traces[0].method,
        n_seeds=len(traces),
        certificate=traces[0].certificate,
        k=traces[0].column("k").astype(int),
        f_mean=f.mean(axis=0),
        f_std=f.std(axis=0),
        grad_mean=g_mean,
        grad_std=g.std(axis=0),
        floats_mean=fl.mean(axis=0),
        min_grad_metric=float(g_mean.min()),
        uniform_grad_metric=uniform,
    )


def trailing_window_means(traces: list[RunTrace], column: str, window: int) -> np.ndarray:
    """Per-seed mean of a column over the last `window` rows."""
    return np.array([t.column(column)[-window:].mean() for t in traces])


def summary_to_csv(summary: Summary) -> str:
    """Seed-mean trace in the standard trace schema (aux left blank)."""
    lines = [
        f"# label={summary.label}",
        f"# method={summary.method}",
        f"# seeds={summary.n_seeds}",
        f"# certificate={json.dumps(summary.certificate, sort_keys=True)}",
        ",".join(TRACE_COLUMNS),
    ]
    for i in range(len(summary.k)):
        lines.append(",".join([
            str(int(summary.k[i])), repr(float(summary.f_mean[i])),
            repr(float(summary.grad_mean[i])), repr(float(summary.floats_mean[i])), "",
        ]))
    return "\n".join(lines) + "\n"


def summary_to_json(summary: Summary) -> dict:
    return {
        "label": summary.label,
        "method": summary.method,
        "seeds": summary.n_seeds,
        "certificate": summary.certificate,
        "min_grad_metric": summary.min_grad_metric,
        "uniform_grad_metric": summary.uniform_grad_metric,
        "final_f_mean": float(summary.f_mean[-1]),
        "final_floats_mean": float(summary.floats_mean[-1]),
        "grad_metric_final_mean": float(summary.grad_mean[-1]),
        "grad_metric_final_std": float(summary.grad_std[-1]),
    }


def write_outputs(cfg: ExperimentConfig, traces: list[RunTrace]) -> list[str]:
    """Write per-seed trace CSVs plus a mean CSV and summary JSON per method."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    written = []
    by_label: dict[str, list[RunTrace]] = {}
    for t in traces:
        by_label.setdefault(t.label, []).append(t)
        path = os.path.join(cfg.output_dir, f"{t.label}_seed{t.seed}.csv")
        with open(path, "w") as fh:
            fh.write(trace_to_csv(t))
        written.append(path)
    for label, group in by_label.items():
        summary = aggregate(group)
        mean_path = os.path.join(cfg.output_dir, f"{label}_mean.csv")
        with open(mean_path, "w") as fh:
            fh.write(summary_to_csv(summary))
        json_path = os.path.join(cfg.output_dir, f"{label}_summary.json")
        with open(json_path, "w") as fh:
            json.dump(summary_to_json(summary), fh, indent=2, sort_keys=True)
        written.extend([mean_path, json_path])
    return written
