"""Experiment configurations and runners behind the command line."""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from gmclab import gmc, malliavin, overlap, rng, she, spectrum
from gmclab.kernel import build_mollifier
from gmclab.noise import NoiseGrid
from gmclab.paths import tube_survival_series
from gmclab.report import emit_report

EXPERIMENTS = ("tube-decay", "gmc-decay", "free-energy", "thickness", "ou-check", "localize", "she",
               "rate", "eigen")


@dataclass
class ExperimentConfig:
    """Flat experiment description; list fields fall back to their scalar twin when empty.

    For ``she`` the grid fields ``dt`` and ``dx`` are the base steps
    (dtau, dx0); the solver refines them by eps^2 and eps.
    """

    name: str
    d: int = 1
    gamma: float = 0.5
    gammas: list = field(default_factory=list)
    T: float = 4.0
    Ts: list = field(default_factory=list)
    dt: float = 0.02
    dx: float = 0.0625
    r: float = 1.0
    delta: float = 0.1
    eps: float = 0.0
    eps_list: list = field(default_factory=lambda: [1.0, 0.5])
    t: float = 2.0
    N: int = 1000
    K: int = 20
    flow_steps: int = 20
    seed: int = 0
    out: str = "out"
    workers: int = 1

    @property
    def gamma_list(self) -> list:
        return [float(x) for x in self.gammas] if self.gammas else [float(self.gamma)]

    @property
    def T_list(self) -> list:
        return [float(x) for x in self.Ts] if self.Ts else [float(self.T)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def validate(self) -> "ExperimentConfig":
        if self.name not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for key in ("T", "dt", "dx", "r", "delta", "t"):
            if not getattr(self, key) > 0:
                raise ValueError(f"{key} must be positive")
        if any(x < 0 for x in self.gamma_list):
            raise ValueError("gamma must be non-negative")
        if self.eps < 0:
            raise ValueError("eps must be non-negative (0 selects the default)")
        if self.dx > 0.125:
            raise ValueError("dx must be <= 1/8")
        if self.N < 1 or self.K < 1 or self.workers < 1 or self.flow_steps < 1:
            raise ValueError("N, K, workers and flow_steps must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")
        if any(T <= 0 for T in self.T_list):
            raise ValueError("T must be positive")
        if self.name != "she":
            for T in self.T_list:
                n = T / self.dt
                if abs(n - round(n)) > 1e-9 * max(1.0, n):
                    raise ValueError(f"T={T} is not a multiple of dt={self.dt}")
        if self.name == "tube-decay" and self.N < 1000:
            raise ValueError("tube-decay needs N >= 1000")
        if self.name in ("free-energy", "thickness", "ou-check", "localize", "she") and self.N < 100:
            raise ValueError(f"{self.name} needs N >= 100 paths per ensemble")
        if self.name in ("tube-decay", "gmc-decay") and len(self.T_list) < 4:
            raise ValueError("decay fits need at least 4 horizons in Ts")
        if self.name == "ou-check":
            n = self.T / self.dt
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                raise ValueError("T is not a multiple of dt")
        if self.name == "she":
            if self.d < 3:
                raise ValueError("she needs d >= 3")
            for eps in self.eps_list:
                if not 0 < eps <= 1:
                    raise ValueError("eps_list entries must lie in (0, 1]")
                n = self.t / eps ** 2 / self.dt
                if abs(n - round(n)) > 1e-9 * max(1.0, n):
                    raise ValueError(f"t/eps^2 is not a multiple of dt for eps={eps}")
        return self


def pmap(fn, items, workers: int) -> list:
    """Ordered map; results do not depend on the worker count."""
    items = list(items)
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _grid(c: ExperimentConfig, i: int, horizon: float) -> NoiseGrid:
    return NoiseGrid(c.d, c.dt, c.dx, rng.stream_key(c.seed, i), horizon)


def _mean_se(a) -> tuple[float, float]:
    a = np.asarray(a, dtype=np.float64)
    if len(a) < 2:
        return float(a.mean()), 0.0
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def run_tube_decay(c: ExperimentConfig):
    ests = tube_survival_series(c.d, c.r, c.T_list, c.dt, c.N, c.seed)
    fit = spectrum.decay_rate_fit([(e.T, e.log_prob, e.log_stderr) for e in ests if not e.flagged])
    lam = spectrum.dirichlet_eigenvalue(c.d, c.r)
    rows = [{"T": e.T, "log_prob": e.log_prob, "stderr": e.log_stderr, "fitted_rate": fit.slope,
             "lambda1_theory": lam, "survivors": e.survivors} for e in ests]
    rel = abs(fit.slope + lam) / lam
    summary = {"rate": fit.slope, "ci": [fit.ci_low, fit.ci_high], "lambda1": lam, "relative_error": rel}
    return rows, summary, {"rate_within_15pct": rel <= 0.15}


def run_gmc_decay(c: ExperimentConfig):
    k = build_mollifier(c.d)
    Ts = c.T_list
    gamma = c.gamma_list[0]

    def one(i):
        g = _grid(c, i, max(Ts))
        return gmc.gmc_tube_log_volume(gamma, Ts, c.N, g, k, c.r, key=rng.stream_key(c.seed, rng.PATHS, i),
                                       with_ess=True)

    res = pmap(one, range(c.K), c.workers)
    lv = np.array([r[0] for r in res])
    ess = np.array([r[1] for r in res])
    rows, series = [], []
    for j, T in enumerate(Ts):
        col = lv[:, j]
        ok = np.isfinite(col)
        m, se = _mean_se(col[ok]) if ok.any() else (-math.inf, math.inf)
        rows.append({"T": T, "log_gmc_tube_volume": m, "stderr": se, "ess": float(ess[:, j].mean())})
        if ok.all():
            series.append((T, m, se))
    fit = spectrum.decay_rate_fit(series)
    rep = spectrum.rate_report(c.d, c.r, gamma, k.v0, fit)
    return rows, {"rate_report": rep.to_dict()}, {"rate_bound": rep.verdict == "PASS"}


def run_free_energy(c: ExperimentConfig):
    k = build_mollifier(c.d)
    Ts, gammas = c.T_list, sorted(c.gamma_list)

    def one(i):
        g = _grid(c, i, max(Ts))
        e = gmc.build_ensemble(0.0, max(Ts), c.N, g, k, path_key=rng.stream_key(c.seed, rng.PATHS, i))
        return np.array([[gmc.free_energy_of(e.prefix(T), gm) for gm in gammas] for T in Ts])

    F = np.stack(pmap(one, range(c.K), c.workers))  # (K, nT, ngamma)
    rows = []
    for a, T in enumerate(Ts):
        for b, gm in enumerate(gammas):
            m, se = _mean_se(F[:, a, b])
            rows.append({"gamma": gm, "T": T, "f_T": m, "stderr": se})
    convex = True
    if len(gammas) >= 3:
        gs = np.array(gammas)
        h1, h2 = np.diff(gs)[:-1], np.diff(gs)[1:]
        s1 = np.diff(F, axis=2)[..., :-1] / h1
        s2 = np.diff(F, axis=2)[..., 1:] / h2
        convex = bool(np.all(s2 - s1 >= -1e-9))
    return rows, {"weak_disorder_value": [0.5 * g ** 2 * k.v0 for g in gammas]}, {"convex_in_gamma": convex}


def run_thickness(c: ExperimentConfig):
    k = build_mollifier(c.d)
    Ts = sorted(c.T_list)
    gamma = c.gamma_list[0]

    def one(i):
        g = _grid(c, i, max(Ts))
        e = gmc.build_ensemble(gamma, max(Ts), c.N, g, k, path_key=rng.stream_key(c.seed, rng.PATHS, i))
        return gmc.thickness_series(e, Ts)

    th = np.array(pmap(one, range(c.K), c.workers))
    target = gamma * k.v0
    rows = []
    for j, T in enumerate(Ts):
        m, se = _mean_se(th[:, j])
        rows.append({"T": T, "thickness": m, "stderr": se, "target": target})
    last = rows[-1]["thickness"]
    ok = abs(last - target) <= 0.2 * target if target > 0 else abs(last) <= 3 * rows[-1]["stderr"]
    return rows, {"target": target}, {"final_within_20pct": ok}


def run_ou_check(c: ExperimentConfig):
    k = build_mollifier(c.d)
    gamma = c.gamma_list[0]
    eps = c.eps if c.eps > 0 else malliavin.eps_for_bound(0.2, c.T, c.t, k.v0)
    rep = malliavin.chebyshev_flow_check(gamma, c.T, c.t, eps, c.K, c.d, c.dt, c.dx, k, c.N, c.seed,
                                         c.flow_steps, c.workers, min_realizations=1)
    rows = [{"realization": i, "flow_average": float(v), "grad_norm_sq": float(g)}
            for i, (v, g) in enumerate(zip(rep.values, rep.grad_norms))]
    summary = rep.as_dict()
    summary.update({"generator_mean": rep.generator_mean, "generator_stderr": rep.generator_stderr,
                    "vacuous": rep.vacuous})
    verdicts = {"chebyshev": rep.passed, "poincare_variance": rep.variance_passed,
                "generator_mean_zero": rep.mean_zero_passed}
    return rows, summary, verdicts


def run_localize(c: ExperimentConfig):
    k = build_mollifier(c.d)
    gammas = sorted(c.gamma_list)
    eps = c.eps if c.eps > 0 else 0.1

    def one(i):
        g = _grid(c, i, c.T)
        e0 = gmc.build_ensemble(0.0, c.T, c.N, g, k, path_key=rng.stream_key(c.seed, rng.PATHS, i))
        C = overlap.cov_matrix(e0)
        out = []
        for gm in gammas:
            e = e0.reweighted(gm)
            cov = overlap.greedy_cover(C, e.weights, c.delta, eps, overlap.k_max(c.delta, eps, k.v0))
            out.append({"realization": i, "gamma": gm, "T": c.T, "delta": c.delta, "k": cov.k,
                        "covered_mass": cov.covered_mass, "mean_overlap": overlap.normalized_mean_overlap(e),
                        "ess": e.ess})
        return out

    rows = [row for part in pmap(one, range(c.K), c.workers) for row in part]
    stats, verdicts = [], {}
    for gm in gammas:
        sel = [r for r in rows if r["gamma"] == gm]
        bd = overlap.b_delta_from_overlaps([r["mean_overlap"] for r in sel], [r["ess"] for r in sel], c.delta)
        stats.append({"gamma": gm, "mean_overlap": bd.mean_overlap, "mean_overlap_stderr": bd.mean_overlap_stderr,
                      "b_delta_frequency": bd.frequency, "b_delta_stderr": bd.stderr, "low_ess": bd.n_low_ess})
    mono_ov = all(b["mean_overlap"] >= a["mean_overlap"] - 3 * math.hypot(a["mean_overlap_stderr"], b["mean_overlap_stderr"])
                  for a, b in zip(stats, stats[1:]))
    mono_bd = all(b["b_delta_frequency"] <= a["b_delta_frequency"] + 3 * math.hypot(a["b_delta_stderr"], b["b_delta_stderr"])
                  for a, b in zip(stats, stats[1:]))
    verdicts = {"overlap_nondecreasing": mono_ov, "b_delta_nonincreasing": mono_bd}
    return rows, {"per_gamma": stats, "realizations": rows}, verdicts


def run_she(c: ExperimentConfig):
    if c.d < 3:
        raise ValueError("she needs d >= 3")
    k = build_mollifier(c.d)
    gamma = c.gamma_list[0]
    rows, reports, verdicts = [], [], {}
    for eps in c.eps_list:
        rep = she.scaling_identity_check(eps, c.t, None, gamma, c.d, c.K, c.N, k, c.seed, c.dt, c.dx, c.workers)
        u = np.exp(rep.log_u)
        m, se = _mean_se(u)
        rows.append({"epsilon": eps, "t": c.t, "x": 0.0, "u_mean": m, "u_stderr": se,
                     "log_u_mean": rep.mean_she, "log_u_var": rep.var_she})
        reports.append({"epsilon": eps, "z_mean": rep.z_mean, "z_var": rep.z_var, "log_Z_mean": rep.mean_gmc,
                        "log_Z_var": rep.var_gmc})
        verdicts[f"identity_eps_{eps:g}"] = rep.passed
    return rows, {"comparisons": reports}, verdicts


def run_rate(c: ExperimentConfig):
    k = build_mollifier(c.d)
    rep = spectrum.rate_report(c.d, c.r, c.gamma_list[0], k.v0)
    return [rep.to_dict()], {"rate_report": rep.to_dict()}, {"theta_positive": rep.theta > 0}


def run_eigen(c: ExperimentConfig):
    lam = spectrum.dirichlet_eigenvalue(c.d, c.r)
    fd = spectrum.fd_dirichlet_eigenvalue(c.d, c.r)
    rel = abs(fd - lam) / lam
    row = {"d": c.d, "r": c.r, "lambda1": lam, "lambda1_fd": fd, "relative_difference": rel}
    return [row], dict(row), {"fd_agrees": rel <= 1e-4}


RUNNERS = {"tube-decay": run_tube_decay, "gmc-decay": run_gmc_decay, "free-energy": run_free_energy,
           "thickness": run_thickness, "ou-check": run_ou_check, "localize": run_localize, "she": run_she,
           "rate": run_rate, "eigen": run_eigen}


@dataclass
class RunResult:
    csv_path: Path
    json_path: Path
    summary: dict
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def run_experiment(c: ExperimentConfig) -> RunResult:
    """Validate, run and write ``<name>.csv`` and ``<name>.summary.json`` under ``c.out``."""
    c.validate()
    start = time.perf_counter()
    rows, summary, verdicts = RUNNERS[c.name](c)
    wall = time.perf_counter() - start
    out = Path(c.out)
    csv_path = emit_report(rows, "csv", out / f"{c.name}.csv")
    verdicts = {k: bool(v) for k, v in verdicts.items()}
    body = {"experiment": c.name, "config": c.to_dict(), "seed": c.seed, "wall_time_s": wall,
            "results": summary, "verdicts": verdicts, "passed": all(verdicts.values())}
    json_path = emit_report(body, "json", out / f"{c.name}.summary.json")
    return RunResult(csv_path, json_path, body, verdicts)
