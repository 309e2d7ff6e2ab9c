"""Experiment harness: seeded runs, grid sweeps and CSV/JSON artifacts.

Every runner takes an :class:`ExperimentConfig` and writes artifacts into
``cfg.out_dir``.  All randomness derives from the master seed through
``SeedSequence`` spawn keys, so re-running a config reproduces every artifact
byte for byte.  Each CSV starts with two comment lines carrying the config
hash and the master seed.

Desk-scale parameter defaults keep each experiment in the minutes range;
``paper_scale=True`` switches to the full-size settings.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .imaging import psnr, radon_operator, shepp_logan, write_pgm
from .losses import Objective
from .sensing import gaussian_ensemble, generate_measurements, sample_signal
from .solvers import SolveOptions, ad_polyak_sgm, gradient_descent, polyak_sgm, polyak_sgm_noopt
from .theory import condition_number, erfcx, gd_stepsize_schedule
from .tv import DrState, tv_ball_project, tv_norm

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "run_phase_transition",
    "run_convergence",
    "run_robustness",
    "run_noisy",
    "run_ct_reconstruction",
    "EXPERIMENTS",
]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


_DESK_DEFAULTS: dict[str, dict] = {
    "phase-transition": {
        "d": 32,
        "signal_norms": [4.0, 8.0],
        "oversampling": [2, 4, 8, 16],
        "trials": 25,
        "budget": 10_000,
        "tol": 1e-5,
        "gd_step_exponents": [-3, -2, -1, 0, 1, 2, 3],
        "gd_signal_norms": [8.0],
    },
    "convergence": {
        "d": 64,
        "oversampling": [4, 8],
        "signal_norms": [1.0, 2.0, 4.0],
        "budget": 4000,
        "adaptive_eps": 1e-3,
        "gd_step_exponents": [-3, -2, -1, 0, 1, 2, 3],
        "modes": ["optimized", "theory"],
        "trace_every": 10,
    },
    "robustness": {
        "d": 64,
        "oversampling": 4,
        "signal_norm": 1.0,
        "trials": 10,
        "budget": 10_000,
        "tol": 1e-5,
        "polyak_eta_exponents": [-6, -5, -4, -3, -2, -1, 0],
        "gd_step_exponents": [-3, -2, -1, 0, 1, 2, 3],
    },
    "noisy": {
        "d": 64,
        "oversampling": 8,
        "signal_norms": [2.0, 3.0],
        "detector_scale": 1e5,
        "t_outer": 10,
        "t_inner": 1000,
        "budget": 10_000,
        "gd_step_exponents": [-3, -2, -1, 0, 1, 2, 3],
        "trials": 10,
        "trace_every": 10,
    },
    "ct": {
        "n": 64,
        "n_angles": 30,
        "n_detectors": None,
        "iters": 2000,
        "center_intensity": 0.5,
        "center_radius_factor": 2.0,
        "global_scale": 4.0,
        "gd_step_exponents": [-1, 0, 1],
        "seeds": 5,
        "tv_lambda": None,
        "projection_sweeps": 5,
        "snapshot_tol": 1e-8,
    },
}

_PAPER_OVERRIDES: dict[str, dict] = {
    "phase-transition": {
        "d": 128,
        "signal_norms": [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5, 8.0],
        "gd_signal_norms": None,  # all rows
    },
    "convergence": {"d": 256, "budget": 10_000},
    "robustness": {"d": 256},
    "noisy": {"d": 128, "signal_norms": [2.0, 3.0, 4.0, 5.0]},
    "ct": {"n": 128, "n_angles": 60, "iters": 10_000, "gd_step_exponents": [-3, -2, -1, 0, 1, 2, 3]},
}

EXPERIMENTS = tuple(_DESK_DEFAULTS)


@dataclass
class ExperimentConfig:
    experiment: str
    out_dir: str = "."
    seed: int = 0
    threads: int = 1
    paper_scale: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in _DESK_DEFAULTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {sorted(_DESK_DEFAULTS)}")
        defaults = dict(_DESK_DEFAULTS[self.experiment])
        if self.paper_scale:
            defaults.update(_PAPER_OVERRIDES[self.experiment])
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {self.experiment}")
        merged = dict(defaults)
        merged.update(self.params)
        self.params = merged
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @classmethod
    def from_json(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict) or "experiment" not in raw:
            raise ConfigError(f"{path}: config must be a JSON object with an 'experiment' key")
        known = {"experiment", "out_dir", "seed", "threads", "paper_scale", "params"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown top-level key(s) {sorted(unknown)}")
        return cls(**raw)

    def to_json(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.canonical_json())

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _derived_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _csv_writer(cfg: ExperimentConfig, name: str, header: list[str]):
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, name)
    fh = open(path, "w", newline="")
    fh.write(f"# config_sha256={cfg.config_hash()}\n")
    fh.write(f"# master_seed={cfg.seed}\n")
    writer = csv.writer(fh)
    writer.writerow(header)
    return path, fh, writer


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_summary(cfg: ExperimentConfig, name: str, payload: dict) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, name)
    payload = {"config_sha256": cfg.config_hash(), "master_seed": cfg.seed, **payload}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _map_cells(fn, cells, threads: int):
    if threads <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------------------
# Batched grid runs (columns evolve independently; one matvec per iteration)
# ---------------------------------------------------------------------------


def _batched_gd(obj: Objective, x_star, r, etas, budget, tol):
    """Gradient descent on all constant stepsizes at once.

    Step 0 uses the long initialization step shared by every column; later
    steps use the per-column constants.  Returns (first_hit, best, final):
    iteration counts to reach ``tol`` (0 when never reached), best and final
    distances per column.
    """
    ens, y, m = obj.ensemble, obj.y, obj.m
    d, b = ens.dim, len(etas)
    etas = np.asarray(etas, dtype=float)
    eta0 = 4.0 / float(erfcx(r / math.sqrt(2.0)))
    X = np.zeros((d, b))
    best = np.full(b, np.linalg.norm(x_star))
    first_hit = np.zeros(b, dtype=int)
    for k in range(budget):
        Z = ens.apply(X)
        E = np.exp(-np.maximum(Z, 0.0))
        R = (1.0 - E) - y[:, None]
        W = np.where(Z >= 0.0, R * E, 0.0)
        G = ens.adjoint(W) / m
        X = X - G * (eta0 if k == 0 else etas)
        dists = np.linalg.norm(X - x_star[:, None], axis=0)
        hit = (dists <= tol) & (first_hit == 0)
        first_hit[hit] = k + 1
        np.minimum(best, dists, out=best)
        if np.all(first_hit > 0):
            break
    return first_hit, best, dists


def _batched_polyak(obj: Objective, x_star, etas, budget, tol, f_star=0.0):
    """Polyak subgradient runs for all scalings at once; see _batched_gd."""
    ens, y, m = obj.ensemble, obj.y, obj.m
    d, b = ens.dim, len(etas)
    etas = np.asarray(etas, dtype=float)
    X = np.zeros((d, b))
    best = np.full(b, np.linalg.norm(x_star))
    first_hit = np.zeros(b, dtype=int)
    for k in range(budget):
        Z = ens.apply(X)
        E = np.exp(-np.maximum(Z, 0.0))
        R = y[:, None] - (1.0 - E)
        F = np.mean(np.abs(R), axis=0)
        W = np.where(Z >= 0.0, -np.sign(R) * E, 0.0)
        V = ens.adjoint(W) / m
        vsq = np.sum(V * V, axis=0)
        gap = F - f_star
        coeff = np.where((vsq > 0.0) & (gap > 0.0), etas * gap / np.maximum(vsq, 1e-300), 0.0)
        X = X - V * coeff
        dists = np.linalg.norm(X - x_star[:, None], axis=0)
        hit = (dists <= tol) & (first_hit == 0)
        first_hit[hit] = k + 1
        np.minimum(best, dists, out=best)
        if np.all(first_hit > 0):
            break
    return first_hit, best, dists


def _instance(d, m, r, seed, noise="clean", detector_scale=None):
    ens = gaussian_ensemble(d, m, _derived_seed(seed, 1))
    x_star = sample_signal(d, r, _derived_seed(seed, 2))
    ms = generate_measurements(
        ens, x_star, seed=_derived_seed(seed, 3), noise=noise, detector_scale=detector_scale
    )
    return ens, x_star, ms


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def run_phase_transition(cfg: ExperimentConfig) -> dict:
    """Empirical recovery probability per (signal norm, oversampling) cell."""
    p = cfg.params
    d, trials, budget, tol = p["d"], p["trials"], p["budget"], p["tol"]
    gd_rows = p["gd_signal_norms"] if p["gd_signal_norms"] is not None else p["signal_norms"]
    cells = [(r, od) for r in p["signal_norms"] for od in p["oversampling"]]

    def solve_cell(cell):
        r, od = cell
        m = int(od * d)
        polyak_succ = 0
        gd_succ = 0
        run_gd = r in gd_rows
        for trial in range(trials):
            seed = _derived_seed(cfg.seed, int(10 * r), od, trial)
            ens, x_star, ms = _instance(d, m, r, seed)
            obj = Objective(ens, ms.y, "l1")
            opts = SolveOptions(eta=1.0, max_iters=budget, dist_tol=tol)
            x, _ = polyak_sgm(obj, np.zeros(d), opts, truth=x_star)
            polyak_succ += np.linalg.norm(x - x_star) <= tol
            if run_gd:
                sq = Objective(ens, ms.y, "squared")
                etas = [2.0**j for j in p["gd_step_exponents"]]
                _, best, _ = _batched_gd(sq, x_star, r, etas, budget, tol)
                gd_succ += best.min() <= tol
        return r, od, polyak_succ, (gd_succ if run_gd else None)

    results = _map_cells(solve_cell, cells, cfg.threads)
    path, fh, writer = _csv_writer(
        cfg, "phase_transition.csv", ["solver", "signal_norm", "oversampling", "trials", "successes", "probability"]
    )
    table = []
    with fh:
        for r, od, ps, gs in results:
            writer.writerow(["polyak", _fmt(r), od, trials, ps, _fmt(ps / trials)])
            table.append(("polyak", r, od, ps / trials))
            if gs is not None:
                writer.writerow(["gd", _fmt(r), od, trials, gs, _fmt(gs / trials)])
                table.append(("gd", r, od, gs / trials))
    return {"csv": path, "table": table}


def _traced_gd_best(obj_sq, x_star, r, exponents, budget, tol, trace_every):
    """Grid-search the constant step by final error, then re-run it traced."""
    etas = [2.0**j for j in exponents]
    _, _, final = _batched_gd(obj_sq, x_star, r, etas, budget, tol)
    best_eta = etas[int(np.argmin(final))]
    sched = _constant_after_first(r, best_eta)
    x, trace = gradient_descent(
        obj_sq, np.zeros(obj_sq.ensemble.dim), sched, budget, truth=x_star, trace_every=trace_every
    )
    return best_eta, x, trace


def _constant_after_first(r: float, eta_const: float):
    first = 4.0 / float(erfcx(r / math.sqrt(2.0)))

    def schedule(k: int) -> float:
        return first if k == 0 else eta_const

    return schedule


def run_convergence(cfg: ExperimentConfig) -> dict:
    """Aligned per-iteration traces under optimized and theory stepsizes."""
    p = cfg.params
    d, budget, every = p["d"], p["budget"], p["trace_every"]
    written = []
    summary = {}

    def emit(tag, trace):
        path, fh, writer = _csv_writer(cfg, f"convergence_{tag}.csv", ["k", "f", "grad_norm", "step", "dist"])
        with fh:
            for row in zip(trace.k, trace.f, trace.grad_norm, trace.step, trace.dist):
                writer.writerow([_fmt(v) for v in row])
        written.append(path)

    for mode in p["modes"]:
        for r in p["signal_norms"]:
            if mode == "theory":
                m = max(d, int(round(d * r**4)))
                od_list = [m / d]
            else:
                od_list = p["oversampling"]
            for od in od_list:
                m = int(round(od * d))
                seed = _derived_seed(cfg.seed, 7, int(10 * r), int(od), 0 if mode == "optimized" else 1)
                ens, x_star, ms = _instance(d, m, r, seed)
                obj = Objective(ens, ms.y, "l1")
                sq = Objective(ens, ms.y, "squared")
                tag = f"{mode}_r{r:g}_od{od:g}"
                if mode == "optimized":
                    opts = SolveOptions(eta=1.0, max_iters=budget, trace_every=every)
                    _, tr = polyak_sgm(obj, np.zeros(d), opts, truth=x_star)
                    emit(f"{tag}_polyak", tr)
                    _, evals, tr_ad = ad_polyak_sgm(obj, np.zeros(d), p["adaptive_eps"], truth=x_star)
                    emit(f"{tag}_adpolyak", tr_ad)
                    summary[f"{tag}_adpolyak_evals"] = evals
                    best_eta, _, tr_gd = _traced_gd_best(
                        sq, x_star, r, p["gd_step_exponents"], budget, p.get("tol", 1e-5), every
                    )
                    emit(f"{tag}_gd", tr_gd)
                    summary[f"{tag}_gd_eta"] = best_eta
                else:
                    eta_theory = 1.0 / condition_number(r)
                    opts = SolveOptions(eta=eta_theory, max_iters=budget, trace_every=every)
                    _, tr = polyak_sgm(obj, np.zeros(d), opts, truth=x_star)
                    emit(f"{tag}_polyak", tr)
                    sched = gd_stepsize_schedule(r, 1.0)
                    _, tr_gd = gradient_descent(
                        sq, np.zeros(d), sched, budget, truth=x_star, trace_every=every
                    )
                    emit(f"{tag}_gd", tr_gd)
    summary_path = _write_summary(cfg, "convergence_summary.json", {"traces": written, **summary})
    return {"traces": written, "summary": summary_path, **summary}


def run_robustness(cfg: ExperimentConfig) -> dict:
    """Iterations-to-tolerance per stepsize; capped runs marked at the budget."""
    p = cfg.params
    d, trials, budget, tol, r = p["d"], p["trials"], p["budget"], p["tol"], p["signal_norm"]
    m = int(p["oversampling"] * d)
    polyak_etas = [2.0**j for j in p["polyak_eta_exponents"]]
    gd_etas = [2.0**j for j in p["gd_step_exponents"]]
    hits = {"polyak": [], "gd": []}
    for trial in range(trials):
        seed = _derived_seed(cfg.seed, 11, trial)
        ens, x_star, ms = _instance(d, m, r, seed)
        obj = Objective(ens, ms.y, "l1")
        sq = Objective(ens, ms.y, "squared")
        ph, _, _ = _batched_polyak(obj, x_star, polyak_etas, budget, tol)
        gh, _, _ = _batched_gd(sq, x_star, r, gd_etas, budget, tol)
        hits["polyak"].append(ph)
        hits["gd"].append(gh)
    path, fh, writer = _csv_writer(
        cfg,
        "robustness.csv",
        ["solver", "stepsize", "median_iters", "std_iters", "capped_runs", "trials"],
    )
    table = []
    with fh:
        for solver, etas in (("polyak", polyak_etas), ("gd", gd_etas)):
            arr = np.array(hits[solver])  # trials x len(etas)
            capped = arr == 0
            iters = np.where(capped, budget, arr)
            for j, eta in enumerate(etas):
                med = float(np.median(iters[:, j]))
                std = float(np.std(iters[:, j]))
                writer.writerow([solver, _fmt(eta), _fmt(med), _fmt(std), int(capped[:, j].sum()), trials])
                table.append((solver, eta, med, std, int(capped[:, j].sum())))
    return {"csv": path, "table": table}


def run_noisy(cfg: ExperimentConfig) -> dict:
    """Distance-versus-evaluations curves under photon-count noise."""
    p = cfg.params
    d, trials, every = p["d"], p["trials"], p["trace_every"]
    m = int(p["oversampling"] * d)
    budget = p["budget"]
    written = []
    summary: dict = {}

    def emit(tag, trace):
        path, fh, writer = _csv_writer(cfg, f"noisy_{tag}.csv", ["k", "f", "grad_norm", "step", "dist"])
        with fh:
            for row in zip(trace.k, trace.f, trace.grad_norm, trace.step, trace.dist):
                writer.writerow([_fmt(v) for v in row])
        written.append(path)

    for r in p["signal_norms"]:
        noopt_hits, gd_hits = [], []
        for trial in range(trials):
            seed = _derived_seed(cfg.seed, 13, int(10 * r), trial)
            ens, x_star, ms = _instance(
                d, m, r, seed, noise="poisson-gaussian", detector_scale=p["detector_scale"]
            )
            obj = Objective(ens, ms.y, "l1")
            sq = Objective(ens, ms.y, "squared")
            x_no, tr_no = polyak_sgm_noopt(
                obj, np.zeros(d), f_lb=0.0, eta=1.0,
                t_inner=p["t_inner"], t_outer=p["t_outer"], truth=x_star,
            )
            _, _, tr_gd = _traced_gd_best(
                sq, x_star, r, p["gd_step_exponents"], budget, tol=0.0, trace_every=every
            )
            if trial == 0:
                emit(f"r{r:g}_noopt", tr_no)
                emit(f"r{r:g}_gd", tr_gd)
            noopt_hits.append(_evals_to_reach(tr_no, factor=2.0))
            gd_hits.append(_evals_to_reach(tr_gd, factor=2.0))
        summary[f"r{r:g}_noopt_evals_to_2x_floor_median"] = float(np.median(noopt_hits))
        summary[f"r{r:g}_gd_evals_to_2x_floor_median"] = float(np.median(gd_hits))
    summary_path = _write_summary(cfg, "noisy_summary.json", {"traces": written, **summary})
    return {"traces": written, "summary": summary_path, **summary}


def _evals_to_reach(trace, factor: float) -> int:
    """First recorded eval count at which dist <= factor * final dist."""
    dists = np.asarray(trace.dist)
    ks = np.asarray(trace.k)
    floor = dists[-1]
    idx = np.nonzero(dists <= factor * floor)[0]
    return int(ks[idx[0]] + 1) if len(idx) else int(ks[-1] + 1)


def run_ct_reconstruction(cfg: ExperimentConfig) -> dict:
    """TV-constrained phantom reconstruction: snapshots and PSNR table."""
    p = cfg.params
    n, iters = p["n"], p["iters"]
    img = shepp_logan(
        n,
        center_radius_factor=p["center_radius_factor"],
        center_intensity=p["center_intensity"],
        global_scale=p["global_scale"],
    )
    lam = p["tv_lambda"] if p["tv_lambda"] is not None else tv_norm(img)
    r = float(np.linalg.norm(img))
    checkpoints = sorted({max(1, iters // 10), max(1, iters // 2), iters})
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_pgm(os.path.join(cfg.out_dir, "ct_truth.pgm"), img)

    def reconstruct(obj, kind, eta_const):
        """Segment-wise run capturing exactly projected snapshots."""
        dr: dict[str, DrState | None] = {"state": None}

        def approx_proj(v):
            out, st = tv_ball_project(
                v, lam, tol=1e-9, max_sweeps=p["projection_sweeps"],
                state=dr["state"], return_state=True, strict=False,
            )
            dr["state"] = st
            return out

        x = np.zeros(n * n)
        snaps = {}
        done = 0
        for cp in checkpoints:
            span = cp - done
            if kind == "polyak":
                opts = SolveOptions(eta=1.0, max_iters=span, projection=approx_proj, trace_every=max(1, span))
                x, _ = polyak_sgm(obj, x, opts, truth=img)
            else:
                first = 4.0 / float(erfcx(r / math.sqrt(2.0)))
                sched = (lambda off: (lambda k: first if k + off == 0 else eta_const))(done)
                x, _ = gradient_descent(obj, x, sched, span, projection=approx_proj, truth=img, trace_every=max(1, span))
            done = cp
            snap = tv_ball_project(x, lam, tol=p["snapshot_tol"], max_sweeps=50_000)
            snaps[cp] = (snap, psnr(snap, img))
        return snaps

    rows = []
    images = []
    for s in range(p["seeds"]):
        offset_rng = np.random.SeedSequence(cfg.seed, spawn_key=(17, s))
        offset = float(offset_rng.generate_state(1, np.uint64)[0] % 10**9) / 10**9
        offset *= math.pi / p["n_angles"]
        op = radon_operator(n, p["n_angles"], p["n_detectors"], angle_offset=offset)
        ens = op.to_ensemble()
        ms = generate_measurements(ens, img)
        obj = Objective(ens, ms.y, "l1")
        sq = Objective(ens, ms.y, "squared")
        snaps_p = reconstruct(obj, "polyak", None)
        for cp, (snap, val) in snaps_p.items():
            rows.append(("polyak", s, None, cp, val, tv_norm(snap) / lam - 1.0))
        best = None
        for j in p["gd_step_exponents"]:
            snaps_g = reconstruct(sq, "gd", 2.0**j)
            final_psnr = snaps_g[iters][1]
            if best is None or final_psnr > best[0]:
                best = (final_psnr, 2.0**j, snaps_g)
        for cp, (snap, val) in best[2].items():
            rows.append(("gd", s, best[1], cp, val, tv_norm(snap) / lam - 1.0))
        for solver, snaps in (("polyak", snaps_p), ("gd", best[2])):
            snap, _ = snaps[iters]
            out = os.path.join(cfg.out_dir, f"ct_{solver}_seed{s}.pgm")
            write_pgm(out, snap, vmax=float(img.max()))
            images.append(out)

    path, fh, writer = _csv_writer(
        cfg, "ct_psnr.csv", ["solver", "seed", "gd_eta", "iteration", "psnr_db", "tv_excess"]
    )
    with fh:
        for row in rows:
            writer.writerow([_fmt(v) if v is not None else "" for v in row])
    summary = _write_summary(
        cfg,
        "ct_summary.json",
        {"tv_lambda": lam, "checkpoints": checkpoints, "images": images, "psnr_csv": path},
    )
    return {"csv": path, "rows": rows, "summary": summary, "lambda": lam, "checkpoints": checkpoints}
