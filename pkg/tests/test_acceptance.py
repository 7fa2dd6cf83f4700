"""End-to-end acceptance battery.

Eight criteria, each printing one ``ACCEPTANCE <n> <status>`` line (visible
under ``pytest -s``):

1. algorithm equivalences (averaging, sync frequency, batching),
2. transfer-matrix transformed norms against their closed-form bounds,
3. per-step contraction of the decentralized potential,
4. the piecewise-curvature instability experiment against its closed forms,
5. finite-difference validation of every gradient implementation,
6. golden statistics of the census income dataset (a9a),
7. the desk-scale speedup sweep and its qualitative ordering,
8. byte-identical sweep artifacts across thread counts.

Criteria 6 and 7 look for dataset files under ``$FEDSIM_DATA`` or
``<repo>/data``.  6 reports a distinct SKIP status when a9a is absent;
7 falls back to a synthetic stand-in with the same shape (123 binary
features, ~14 per row, noisy labels) and the identical protocol.
"""

import contextlib
import math
import os
import statistics
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from fedsim.algorithms import (fedac_run, fedavg_run, mb_acsgd_run, mb_sgd_run,
                               schedule_fedac1, schedule_vanilla, worker_mean)
from fedsim.dataio import dataset_stats, load_dataset
from fedsim.diagnostics import (PiecewiseCurvature1D, WorkerState,
                                construct_instability_objective,
                                instability_experiment, norm_bound_fedac1,
                                norm_bound_fedac2, potential_psi,
                                sample_admissible, transfer_matrix_fedac1,
                                transfer_matrix_fedac2, transformed_norm)
from fedsim.harness import (DEFAULT_ETA_GRID, ExperimentConfig, compute_optimum,
                            make_synthetic_logistic, tune_and_sweep,
                            write_records_csv, write_sweep_csv)
from fedsim.objectives import Augmented, BatchedOracle, Logistic, Quadratic
from fedsim.rng import RngStream


@contextlib.contextmanager
def criterion(n, note=""):
    suffix = f" ({note})" if note else ""
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {n} FAIL{suffix}", flush=True)
        raise
    print(f"ACCEPTANCE {n} PASS{suffix}", flush=True)


def find_dataset(*names):
    roots = []
    env = os.environ.get("FEDSIM_DATA")
    if env:
        roots.append(Path(env))
    roots.append(Path(__file__).resolve().parents[1] / "data")
    for root in roots:
        for name in names:
            for suffix in ("", ".gz"):
                path = root / (name + suffix)
                if path.exists():
                    return path
    return None


# ---------------------------------------------------------------------------
# 1. equivalences


def test_acceptance_1_equivalences():
    with criterion(1):
        # (a) worker averaging: FedAvg at K=1 is minibatch SGD, bitwise
        obj = Quadratic(np.linspace(0.4, 2.5, 5), shift=0.6 * np.arange(5) - 1,
                        sigma=1.2)
        fa, mb = [], []
        fedavg_run(obj, 4, 100, 1, 0.04, seed=13,
                   callback=lambda s, w, w_ag: fa.append(worker_mean(w)))
        mb_sgd_run(obj, 4, 100, 1, 0.04, seed=13,
                   callback=lambda s, w, w_ag: mb.append(worker_mean(w)))
        assert len(fa) == len(mb) == 101
        assert all(np.array_equal(a, b) for a, b in zip(fa, mb))

        # (b) without noise the sync frequency is irrelevant to 1e-12
        clean = Quadratic(np.linspace(0.4, 2.5, 5), shift=0.7, sigma=0.0)
        hyper = schedule_fedac1(0.15, clean.mu_est, 1)
        finals = [fedac_run(clean, 3, 100, k, hyper, seed=5, w0=np.ones(5))
                  for k in (1, 2, 5, 100)]
        for res in finals[1:]:
            assert np.abs(res.final_avg_w_ag
                          - finals[0].final_avg_w_ag).max() <= 1e-12
            assert np.abs(res.final_avg_w
                          - finals[0].final_avg_w).max() <= 1e-12

        # (c) accelerated minibatch SGD is the batched one-worker chain, bitwise
        noisy = Quadratic(np.linspace(0.8, 3.0, 4), shift=-0.4, sigma=0.5)
        m, t, k, eta, seed = 2, 60, 4, 0.08, 17
        direct = mb_acsgd_run(noisy, m, t, k, eta, seed)
        batched = fedac_run(BatchedOracle(noisy, m * k), 1, t // k, 1,
                            schedule_vanilla(eta, noisy.mu_est), seed)
        assert np.array_equal(direct.final_avg_w_ag, batched.final_avg_w_ag)
        assert np.array_equal(direct.final_avg_w, batched.final_avg_w)


# ---------------------------------------------------------------------------
# 2. norm bounds


def norm_bound_margins(samples=1000, n_h=21, seed=1234):
    """Worst (bound - norm) margin per schedule over random admissible draws."""
    margins = {"fedac1": math.inf, "fedac2": math.inf}
    for mu, big_l, gamma, eta in sample_admissible(seed, samples):
        hs = np.linspace(mu, big_l, n_h)
        for name, matrix_fn, bound_fn in (
                ("fedac1", transfer_matrix_fedac1, norm_bound_fedac1),
                ("fedac2", transfer_matrix_fedac2, norm_bound_fedac2)):
            bound = bound_fn(mu, gamma, eta)
            for h in hs:
                norm = transformed_norm(matrix_fn(mu, gamma, eta, float(h)),
                                        gamma, eta)
                margins[name] = min(margins[name], bound - norm)
    return margins


def test_acceptance_2_norm_bounds():
    with criterion(2):
        margins = norm_bound_margins()
        for name, margin in margins.items():
            assert margin >= -1e-9, f"{name}: worst margin {margin:.3e}"


# ---------------------------------------------------------------------------
# 3. potential contraction


def test_acceptance_3_potential_contraction():
    with criterion(3):
        stream = RngStream(4242, 0)
        for _ in range(50):
            dim = 2 + int(stream.indices(9, 1)[0])
            u = stream.uniforms(2)
            mu = 0.05 + u[0]
            # kappa >= 20 keeps the potential above the float measurement
            # floor of the w - shift cancellation through all 100 steps
            kappa = 20.0 + 30.0 * u[1]
            shift = stream.gaussians(dim)
            obj = Quadratic(np.linspace(mu, mu * kappa, dim), shift=shift,
                            sigma=0.0)
            eta = 1.0 / obj.l_est
            hyper = schedule_fedac1(eta, mu, 1)
            rate = 1.0 - hyper.gamma * mu
            psis = []

            def track(step, w, w_ag):
                workers = [WorkerState(w[i], w_ag[i]) for i in range(len(w))]
                psis.append(potential_psi(workers, obj, mu, shift, 0.0))

            w0 = shift + stream.gaussians(dim)
            fedac_run(obj, 4, 100, 1, hyper, seed=3, w0=w0, callback=track)
            for prev, cur in zip(psis, psis[1:]):
                assert cur <= rate * prev * (1.0 + 1e-9)


# ---------------------------------------------------------------------------
# 4. instability


def run_instability(k, kappa=25.0):
    objective, w0, w0_ag, delta = construct_instability_objective(kappa, 1.0, k)
    amp = (2.0 * (1.0 - 1.0 / math.sqrt(kappa)) ** 3) ** k
    # 1e-9 at the problem scale, shrunk when the curvature clearance
    # cannot absorb the amplified gap
    eps = min(1e-9, 0.25 * delta / amp)
    return eps, instability_experiment(objective, w0, w0_ag, kappa, 1.0,
                                       eps, k)


def test_acceptance_4_instability():
    with criterion(4):
        for k in (1, 2, 4, 8):
            eps, result = run_instability(k)
            assert np.abs(result.ratios - 1.024).max() <= 1e-3
            assert result.final_gap_w >= 0.5 * eps * 1.02 ** k
            assert result.max_map_error <= 1e-8


# ---------------------------------------------------------------------------
# 5. gradient correctness


def finite_difference_gradient(obj, w, h=1e-6):
    g = np.empty_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (obj.eval(w + e) - obj.eval(w - e)) / (2.0 * h)
    return g


def test_acceptance_5_gradients():
    with criterion(5):
        stream = RngStream(909, 0)
        logistic = Logistic(make_synthetic_logistic(80, 10, seed=31, nnz=4),
                            lam=0.07)
        kinds = [
            Quadratic(np.linspace(0.5, 4.0, 7), shift=np.linspace(-1, 1, 7),
                      sigma=0.0),
            logistic,
            Augmented(logistic, lam=0.25, w0=np.full(10, 0.3)),
            PiecewiseCurvature1D(1.0, 30.0, [(0.4, 0.06), (-0.9, 0.12)]),
        ]
        for obj in kinds:
            accepted = 0
            while accepted < 20:
                w = stream.gaussians(obj.dim)
                if isinstance(obj, PiecewiseCurvature1D):
                    # keep the difference stencil inside one curvature region
                    if obj.curvature(w - 1e-6) != obj.curvature(w + 1e-6):
                        continue
                grad = obj.grad(w)
                rel = (np.linalg.norm(finite_difference_gradient(obj, w) - grad)
                       / max(np.linalg.norm(grad), 1e-12))
                assert rel <= 1e-6, type(obj).__name__
                accepted += 1


# ---------------------------------------------------------------------------
# 6. dataset golden values


def test_acceptance_6_dataset_golden_values():
    path = find_dataset("a9a", "a9a.txt")
    if path is None:
        print("ACCEPTANCE 6 SKIP (a9a not present)", flush=True)
        pytest.skip("a9a not present under $FEDSIM_DATA or <repo>/data")
    with criterion(6):
        ds = load_dataset(path, 123)
        stats = dataset_stats(ds)
        assert stats.n == 32561
        assert stats.dim == 123
        # binary indicator features: the largest row norm is the largest
        # per-row nonzero count
        nnz_per_row = np.diff(ds.X.indptr)
        assert stats.max_row_norm_sq == float(nnz_per_row.max())

        epsilon = find_dataset("epsilon", "epsilon_normalized")
        if epsilon is not None:
            eps_stats = dataset_stats(load_dataset(epsilon, 2000))
            assert eps_stats.n == 400000
            assert eps_stats.dim == 2000


# ---------------------------------------------------------------------------
# 7. desk-scale speedup sweep


@pytest.fixture(scope="module")
def speedup():
    path = find_dataset("a9a", "a9a.txt")
    if path is not None:
        ds = load_dataset(path, 123)
        note = "a9a"
    else:
        # same shape and noise regime as the census set, sized for the desk
        ds = make_synthetic_logistic(8000, 123, seed=7, nnz=14, flip=0.03)
        note = "synthetic stand-in"
    obj = Logistic(ds, lam=1e-3)
    cfg = ExperimentConfig(
        dataset="synthetic", lam=1e-3,
        algorithms=("fedac1", "fedavg", "mb_sgd", "mb_acsgd"),
        t=1024, k_list=(1, 16, 64), m_list=(1, 4, 16, 64),
        etas=DEFAULT_ETA_GRID, seeds=(0, 1, 2), eval_every=128)
    opt = compute_optimum(obj)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        cells, rows = tune_and_sweep(cfg, obj, opt.f_star, threads=8)
    return SimpleNamespace(cfg=cfg, obj=obj, f_star=opt.f_star,
                           cells=cells, rows=rows, note=note)


def tuned_value(cells, algorithm, m, k):
    """Best median-over-seeds suboptimality along the evaluation curves.

    Uses each algorithm's designated evaluated iterate so the comparison is
    like for like; the decay-weighted FedAvg average stays a tuning-only
    candidate in the sweep rows.
    """
    per_eta = {}
    for cell in cells:
        if (cell.algorithm, cell.m, cell.k) == (algorithm, m, k):
            per_eta.setdefault(cell.eta, []).append(
                min(r.suboptimality for r in cell.records))
    assert per_eta, (algorithm, m, k)
    return min(statistics.median(v) for v in per_eta.values())


@pytest.mark.slow
def test_acceptance_7_speedup_ordering(speedup):
    with criterion(7, speedup.note):
        cfg = speedup.cfg
        assert len(speedup.rows) == (len(cfg.algorithms) * len(cfg.m_list)
                                     * len(cfg.k_list))
        at = {alg: tuned_value(speedup.cells, alg, 64, 64)
              for alg in ("fedac1", "fedavg", "mb_sgd")}
        assert np.isfinite(list(at.values())).all()
        # infrequent synchronization: acceleration wins at K=64, M=64
        assert at["fedac1"] <= at["fedavg"]
        assert at["fedac1"] <= at["mb_sgd"]
        # frequent synchronization: all four algorithms comparable at K=1
        four = [tuned_value(speedup.cells, alg, 64, 1)
                for alg in cfg.algorithms]
        assert max(four) <= 2.0 * min(four)


# ---------------------------------------------------------------------------
# 8. determinism


def artifact_bytes(cells, rows, tmp_path, tag):
    rec = tmp_path / f"records_{tag}.csv"
    swp = tmp_path / f"sweep_{tag}.csv"
    write_records_csv(cells, rec)
    write_sweep_csv(rows, swp)
    return rec.read_bytes() + swp.read_bytes()


@pytest.mark.slow
def test_acceptance_8_thread_and_repeat_determinism(speedup, tmp_path):
    with criterion(8, speedup.note):
        # the sweep is the only threaded path: rerun it single-threaded and
        # require byte-identical artifacts
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            cells1, rows1 = tune_and_sweep(speedup.cfg, speedup.obj,
                                           speedup.f_star, threads=1)
        assert artifact_bytes(cells1, rows1, tmp_path, "serial") == \
            artifact_bytes(speedup.cells, speedup.rows, tmp_path, "threaded")

        # the remaining criteria are single-threaded computations: repeat
        # representative ones and require exact equality
        assert norm_bound_margins(samples=50, seed=77) == \
            norm_bound_margins(samples=50, seed=77)
        _, first = run_instability(4)
        _, second = run_instability(4)
        assert np.array_equal(first.ratios, second.ratios)
        assert first.final_gap_w == second.final_gap_w
        assert np.array_equal(first.block_gaps, second.block_gaps)
