"""Self-contained invariant battery behind ``verify`` and the acceptance tests.

Each check returns a CheckResult with a human-readable detail string; the
battery as a whole passes only if every check does.  The checks are scaled to
run in seconds on one core:

* algorithm equivalences that must hold exactly or to tight tolerance,
* spectral-norm bounds for the difference transfer matrices over random
  admissible hyperparameters,
* per-step contraction of the decentralized potential on random quadratics,
* the piecewise-curvature instability experiment against its closed forms,
* finite-difference validation of every gradient implementation,
* byte-identical artifacts across thread counts.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from .algorithms import (WorkerState, fedac_run, fedavg_run, mb_acsgd_run,
                         mb_sgd_run, schedule_fedac1, schedule_vanilla,
                         worker_mean)
from .diagnostics import (PiecewiseCurvature1D, construct_instability_objective,
                          instability_experiment, norm_bound_fedac1,
                          norm_bound_fedac2, potential_psi, sample_admissible,
                          transfer_matrix_fedac1, transfer_matrix_fedac2,
                          transformed_norm)
from .harness import (ExperimentConfig, build_objective, compute_optimum,
                      tune_and_sweep, write_records_csv, write_sweep_csv)
from .objectives import Augmented, BatchedOracle, Logistic, Objective, Quadratic
from .rng import RngStream


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    elapsed: float = 0.0


def _timed(fn: Callable[[], Tuple[bool, str]], name: str) -> CheckResult:
    start = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failure, not an abort
        return CheckResult(name, False, f"raised {type(exc).__name__}: {exc}",
                           time.perf_counter() - start)
    return CheckResult(name, passed, detail, time.perf_counter() - start)


def _equivalence_fedavg_mb_sgd() -> Tuple[bool, str]:
    obj = Quadratic(np.linspace(0.5, 2.0, 5), shift=np.arange(5) * 0.3, sigma=1.0)
    m, t, eta, seed = 4, 100, 0.05, 11
    fa_means: List[np.ndarray] = []
    mb_means: List[np.ndarray] = []
    fedavg_run(obj, m, t, 1, eta, seed, mu=obj.mu_est,
               callback=lambda s, w, w_ag: fa_means.append(worker_mean(w)))
    mb_sgd_run(obj, m, t, 1, eta, seed,
               callback=lambda s, w, w_ag: mb_means.append(worker_mean(w)))
    same = len(fa_means) == len(mb_means) and all(
        np.array_equal(a, b) for a, b in zip(fa_means, mb_means))
    return same, f"{len(fa_means)} steps compared bitwise"


def _equivalence_sync_free() -> Tuple[bool, str]:
    obj = Quadratic(np.linspace(1.0, 4.0, 6), shift=0.7, sigma=0.0)
    eta, mu = 0.2, obj.mu_est
    hyper = schedule_fedac1(eta, mu, 1)
    finals = []
    for k in (1, 2, 5, 100):
        res = fedac_run(obj, 3, 100, k, hyper, seed=5, w0=np.ones(6))
        finals.append(res.final_avg_w_ag)
    worst = max(float(np.abs(f - finals[0]).max()) for f in finals[1:])
    return worst <= 1e-12, f"max deviation across K {worst:.2e}"


def _equivalence_mb_acsgd() -> Tuple[bool, str]:
    obj = Quadratic(np.linspace(0.8, 3.0, 4), shift=-0.4, sigma=0.5)
    m, t, k, eta, seed = 3, 60, 5, 0.1, 9
    a = mb_acsgd_run(obj, m, t, k, eta, seed)
    batched = BatchedOracle(obj, m * k)
    b = fedac_run(batched, 1, t // k, 1, schedule_vanilla(eta, obj.mu_est), seed)
    same = np.array_equal(a.final_avg_w_ag, b.final_avg_w_ag) and \
        np.array_equal(a.final_avg_w, b.final_avg_w)
    return same, "delegated and direct batched chains agree bitwise"


def check_equivalences() -> CheckResult:
    def run():
        for fn in (_equivalence_fedavg_mb_sgd, _equivalence_sync_free,
                   _equivalence_mb_acsgd):
            passed, detail = fn()
            if not passed:
                return False, f"{fn.__name__}: {detail}"
        return True, "averaging, sync-frequency, and batching equivalences hold"
    return _timed(run, "equivalences")


def check_norm_bounds(samples: int = 1000, n_h: int = 21,
                      seed: int = 2024) -> CheckResult:
    def run():
        tuples = sample_admissible(seed, samples)
        violations = 0
        worst_margin = math.inf
        for mu, big_l, gamma, eta in tuples:
            hs = np.linspace(mu, big_l, n_h)
            for matrix_fn, bound_fn in (
                    (transfer_matrix_fedac1, norm_bound_fedac1),
                    (transfer_matrix_fedac2, norm_bound_fedac2)):
                bound = bound_fn(mu, gamma, eta)
                for h in hs:
                    norm = transformed_norm(matrix_fn(mu, gamma, eta, float(h)),
                                            gamma, eta)
                    worst_margin = min(worst_margin, bound - norm)
                    if norm > bound + 1e-9:
                        violations += 1
        detail = (f"{samples} hyperparameter draws x {n_h} curvatures x 2 "
                  f"schedules, {violations} violations, worst margin "
                  f"{worst_margin:.3e}")
        return violations == 0, detail
    return _timed(run, "norm-bounds")


def check_potential_contraction(trials: int = 50, steps: int = 100,
                                seed: int = 77) -> CheckResult:
    def run():
        stream = RngStream(seed, 0)
        worst_excess = -math.inf
        bad = 0
        for _ in range(trials):
            dim = 2 + int(stream.indices(9, 1)[0])
            u = stream.uniforms(2)
            mu = 0.05 + u[0]
            # kappa >= 20 keeps the potential above the float measurement
            # floor of the w - shift cancellation through all 100 steps
            kappa = 20.0 + 30.0 * u[1]
            spectrum = np.linspace(mu, mu * kappa, dim)
            shift = stream.gaussians(dim)
            obj = Quadratic(spectrum, shift=shift, sigma=0.0)
            eta = 1.0 / obj.l_est
            hyper = schedule_fedac1(eta, mu, 1)
            rate = 1.0 - hyper.gamma * mu
            psis: List[float] = []

            def cb(step, w, w_ag):
                workers = [WorkerState(w[i], w_ag[i]) for i in range(len(w))]
                psis.append(potential_psi(workers, obj, mu, shift, 0.0))

            w0 = shift + stream.gaussians(dim)
            fedac_run(obj, 4, steps, 1, hyper, seed=3, w0=w0, callback=cb)
            for prev, cur in zip(psis, psis[1:]):
                excess = cur - rate * prev * (1.0 + 1e-9)
                worst_excess = max(worst_excess, excess)
                if excess > 0:
                    bad += 1
        detail = (f"{trials} quadratics x {steps} steps, {bad} violations, "
                  f"worst excess {worst_excess:.3e}")
        return bad == 0, detail
    return _timed(run, "potential-contraction")


def check_instability(ks: Tuple[int, ...] = (1, 2, 4, 8),
                      kappa: float = 25.0) -> CheckResult:
    def run():
        details = []
        for k in ks:
            objective, w0, w0_ag, delta = construct_instability_objective(
                kappa, 1.0, k)
            # 1e-9 at the problem scale, shrunk when the curvature clearance
            # cannot absorb the amplified gap
            amp = (2.0 * (1.0 - 1.0 / math.sqrt(kappa)) ** 3) ** k
            eps = min(1e-9, 0.25 * delta / amp)
            result = instability_experiment(objective, w0, w0_ag, kappa, 1.0,
                                            eps, k)
            ratio_err = float(np.abs(result.ratios - result.amplification).max())
            guaranteed_floor = 0.5 * eps * 1.02 ** k
            ok = (ratio_err <= 1e-3
                  and result.final_gap_w >= guaranteed_floor
                  and result.max_map_error <= 1e-8)
            details.append(
                f"K={k}: ratio err {ratio_err:.1e}, map err "
                f"{result.max_map_error:.1e}, gap {result.final_gap_w:.3e} >= "
                f"{guaranteed_floor:.3e}: {'ok' if ok else 'FAIL'}")
            if not ok:
                return False, "; ".join(details)
        return True, "; ".join(details)
    return _timed(run, "instability")


def _fd_gradient(obj: Objective, w: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (obj.eval(w + e) - obj.eval(w - e)) / (2.0 * h)
    return g


def _small_logistic() -> Logistic:
    from .harness import make_synthetic_logistic
    return Logistic(make_synthetic_logistic(60, 12, seed=21, nnz=5), lam=0.05)


def check_gradients(points: int = 20, seed: int = 99) -> CheckResult:
    def run():
        stream = RngStream(seed, 0)
        logistic = _small_logistic()
        bumpy = PiecewiseCurvature1D(1.0, 25.0, [(0.35, 0.05), (-0.8, 0.1)])
        kinds: List[Tuple[str, Objective]] = [
            ("quadratic", Quadratic(np.linspace(0.5, 5.0, 8),
                                    shift=np.linspace(-1, 1, 8), sigma=0.0)),
            ("logistic", logistic),
            ("augmented", Augmented(logistic, lam=0.3, w0=np.full(12, 0.2))),
            ("piecewise", bumpy),
        ]
        worst = 0.0
        for name, obj in kinds:
            accepted = 0
            while accepted < points:
                w = stream.gaussians(obj.dim)
                if isinstance(obj, PiecewiseCurvature1D):
                    # keep the difference stencil inside one curvature region
                    h = 1e-6
                    if obj.curvature(w - h) != obj.curvature(w + h):
                        continue
                rel = float(np.linalg.norm(_fd_gradient(obj, w) - obj.grad(w))
                            / max(np.linalg.norm(obj.grad(w)), 1e-12))
                worst = max(worst, rel)
                if rel > 1e-6:
                    return False, f"{name}: relative error {rel:.2e} > 1e-6"
                accepted += 1
        return True, (f"{len(kinds)} objective kinds x {points} points, "
                      f"worst relative error {worst:.2e}")
    return _timed(run, "gradient-fd")


def check_determinism() -> CheckResult:
    def run():
        cfg = ExperimentConfig(
            dataset="synthetic", synthetic_n=200, synthetic_dim=30,
            synthetic_seed=3, synthetic_nnz=6, lam=0.01,
            algorithms=("fedac1", "fedavg", "mb_sgd", "mb_acsgd"),
            t=32, k_list=(1, 4), m_list=(1, 2), etas=(0.1, 1.0),
            seeds=(0, 1), eval_every=16)
        obj, _ = build_objective(cfg)
        opt = compute_optimum(obj)

        def artifact(threads: int) -> bytes:
            cells, rows = tune_and_sweep(cfg, obj, opt.f_star, threads=threads)
            with tempfile.TemporaryDirectory() as tmp:
                rec = os.path.join(tmp, "records.csv")
                swp = os.path.join(tmp, "sweep.csv")
                write_records_csv(cells, rec)
                write_sweep_csv(rows, swp)
                with open(rec, "rb") as f:
                    blob = f.read()
                with open(swp, "rb") as f:
                    blob += f.read()
            return blob

        same = artifact(1) == artifact(4)
        return same, "serial and 4-thread sweeps wrote identical bytes"
    return _timed(run, "determinism")


ALL_CHECKS = (
    check_equivalences,
    check_norm_bounds,
    check_potential_contraction,
    check_instability,
    check_gradients,
    check_determinism,
)


def run_all() -> List[CheckResult]:
    return [fn() for fn in ALL_CHECKS]
