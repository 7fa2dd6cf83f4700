"""Stability diagnostics: potentials, transfer matrices, instability experiment.

Three groups of tools:

* Lyapunov potentials measuring progress of a worker ensemble toward the
  optimum (a decentralized variant averaging per-worker function values, and
  a centralized variant evaluating at the averaged iterate), plus worker
  discrepancy statistics.

* The 2x2 transfer matrices governing how the difference between two
  noise-free accelerated chains evolves per local step, together with the
  similarity transform under which their spectral norm stays uniformly close
  to 1.  The d-dimensional block matrices are simultaneously diagonalizable
  in the curvature, so the scalar-curvature 2x2 case checked here covers the
  general one.

* A constructive worst-case experiment for classic Nesterov AGD: a 1-D
  piecewise-curvature objective on which two trajectories started an
  arbitrarily small distance apart separate exponentially, with closed-form
  per-3-step amplification -2 (1 - 1/sqrt(kappa))**3 times an idempotent
  projector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .algorithms import WorkerState, agd_run, worker_mean
from .objectives import Objective
from .rng import RngStream


@dataclass(frozen=True)
class PotentialReport:
    """Potentials and worker-spread statistics at one time step."""

    psi: float
    phi: float
    discrepancy_max: float
    discrepancy_mean_sq: float


@dataclass(frozen=True)
class TransferMatrix:
    """Scalar-curvature specialization of the 2x2 block difference map."""

    a11: float
    a12: float
    a21: float
    a22: float

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])


class ConstructionError(RuntimeError):
    """The instability objective constructor failed to separate trajectory points."""


class InstabilityRegionError(RuntimeError):
    """A trajectory escaped its constant-curvature neighborhood; carries the step."""

    def __init__(self, step: int, detail: str):
        self.step = int(step)
        super().__init__(f"step {step}: {detail}")


def _stack_workers(workers: Sequence[WorkerState]):
    w = np.stack([np.atleast_1d(np.asarray(ws.w, dtype=np.float64)) for ws in workers])
    w_ag = np.stack([np.atleast_1d(np.asarray(ws.w_ag, dtype=np.float64)) for ws in workers])
    return w, w_ag


def potential_psi(workers: Sequence[WorkerState], obj: Objective, mu: float,
                  w_star, f_star: float) -> float:
    """Decentralized potential: mean_m F(w_ag^m) - F* + (mu/2) ||w_bar - w*||**2."""
    w, w_ag = _stack_workers(workers)
    w_star = np.atleast_1d(np.asarray(w_star, dtype=np.float64))
    values = np.array([obj.eval(row) for row in w_ag])
    d = worker_mean(w) - w_star
    return float(np.mean(values) - f_star + 0.5 * mu * (d * d).sum())


def potential_phi(workers: Sequence[WorkerState], obj: Objective, mu: float,
                  w_star, f_star: float) -> float:
    """Centralized potential: F(w_bar_ag) - F* + (mu/6) ||w_bar - w*||**2."""
    w, w_ag = _stack_workers(workers)
    w_star = np.atleast_1d(np.asarray(w_star, dtype=np.float64))
    d = worker_mean(w) - w_star
    return float(obj.eval(worker_mean(w_ag)) - f_star + mu / 6.0 * (d * d).sum())


def potential_report(workers: Sequence[WorkerState], obj: Objective, mu: float,
                     w_star, f_star: float) -> PotentialReport:
    """Both potentials plus max/mean-square deviation of workers from their average."""
    w, _ = _stack_workers(workers)
    center = worker_mean(w)
    dev = np.sqrt(((w - center) ** 2).sum(axis=1))
    return PotentialReport(
        psi=potential_psi(workers, obj, mu, w_star, f_star),
        phi=potential_phi(workers, obj, mu, w_star, f_star),
        discrepancy_max=float(dev.max()),
        discrepancy_mean_sq=float((dev * dev).mean()),
    )


def transfer_matrix_fedac1(mu: float, gamma: float, eta: float, h: float) -> TransferMatrix:
    """Per-local-step difference map for the first acceleration schedule.

    (1/(1+gamma mu)) [[1-eta H, gamma mu (1-eta H)],
                      [-gamma (H-mu), 1-gamma**2 mu H]]
    """
    _validate_transfer_args(mu, gamma, eta, h)
    pre = 1.0 / (1.0 + gamma * mu)
    return TransferMatrix(
        a11=pre * (1.0 - eta * h),
        a12=pre * gamma * mu * (1.0 - eta * h),
        a21=pre * (-gamma * (h - mu)),
        a22=pre * (1.0 - gamma * gamma * mu * h),
    )


def transfer_matrix_fedac2(mu: float, gamma: float, eta: float, h: float) -> TransferMatrix:
    """Per-local-step difference map for the second acceleration schedule.

    Prefactor 1/(9 - gamma mu (6 + gamma mu)); entries
    [[(3-gm)(3-2gm)(1-eta H), 3 gm (1-gm)(1-eta H)],
     [(3-2gm)(2 gm - (3-gm) gamma H), 3 (1-gm)((3-gm) - gamma**2 mu H)]]
    with gm = gamma mu.
    """
    _validate_transfer_args(mu, gamma, eta, h)
    gm = gamma * mu
    pre = 1.0 / (9.0 - gm * (6.0 + gm))
    return TransferMatrix(
        a11=pre * (3.0 - gm) * (3.0 - 2.0 * gm) * (1.0 - eta * h),
        a12=pre * 3.0 * gm * (1.0 - gm) * (1.0 - eta * h),
        a21=pre * (3.0 - 2.0 * gm) * (2.0 * gm - (3.0 - gm) * gamma * h),
        a22=pre * 3.0 * (1.0 - gm) * ((3.0 - gm) - gamma * gamma * mu * h),
    )


def transfer_matrix_from_hyper(hyper, h: float) -> TransferMatrix:
    """Difference map for arbitrary (eta, gamma, alpha, beta), derived directly
    from one local step of the coupled update.

    Used to cross-check the schedule-specific closed forms: substituting a
    schedule's (alpha, beta) here must reproduce the same matrix.
    """
    inv_a = 1.0 / hyper.alpha
    inv_b = 1.0 / hyper.beta
    row_md = np.array([1.0 - inv_b, inv_b])  # w_md difference in (d_ag, d_w) basis
    c_ag = 1.0 - hyper.eta * h
    c_w = inv_a - hyper.gamma * h
    return TransferMatrix(
        a11=c_ag * row_md[0],
        a12=c_ag * row_md[1],
        a21=c_w * row_md[0],
        a22=c_w * row_md[1] + (1.0 - inv_a),
    )


def _validate_transfer_args(mu, gamma, eta, h):
    if gamma <= 0 or eta <= 0:
        raise ValueError(f"gamma and eta must be positive, got {gamma}, {eta}")
    if h < mu:
        raise ValueError(f"curvature {h} below strong-convexity {mu}")


def spectral_norm_2x2(b: np.ndarray) -> float:
    """Largest singular value of a 2x2 matrix via the closed-form Gram eigenvalue."""
    g = b.T @ b
    half_tr = 0.5 * (g[0, 0] + g[1, 1])
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    disc = max(half_tr * half_tr - det, 0.0)
    return math.sqrt(max(half_tr + math.sqrt(disc), 0.0))


def transformed_norm(a: TransferMatrix, gamma: float, eta: float) -> float:
    """Spectral norm of X^-1 A X with X = [[eta/gamma, 0], [1, 1]]."""
    if gamma <= 0 or eta <= 0:
        raise ValueError(f"gamma and eta must be positive, got {gamma}, {eta}")
    r = eta / gamma
    x = np.array([[r, 0.0], [1.0, 1.0]])
    x_inv = np.array([[1.0 / r, 0.0], [-1.0 / r, 1.0]])
    return spectral_norm_2x2(x_inv @ a.as_array() @ x)


def norm_bound_fedac1(mu: float, gamma: float, eta: float) -> float:
    """Uniform-in-H bound on the transformed norm: 1 + 2 gamma**2 mu / eta
    for gamma > eta, sharpening to exactly 1 at gamma = eta."""
    return 1.0 if gamma == eta else 1.0 + 2.0 * gamma * gamma * mu / eta


def norm_bound_fedac2(mu: float, gamma: float, eta: float) -> float:
    """As above for the second schedule: 1 + gamma**2 mu / eta, or 1 at gamma = eta."""
    return 1.0 if gamma == eta else 1.0 + gamma * gamma * mu / eta


_TRANSFER = {"fedac1": (transfer_matrix_fedac1, norm_bound_fedac1),
             "fedac2": (transfer_matrix_fedac2, norm_bound_fedac2)}


@dataclass(frozen=True)
class NormBoundRow:
    schedule: str
    gamma: float
    eta: float
    max_norm: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.max_norm


@dataclass(frozen=True)
class NormBoundReport:
    rows: List[NormBoundRow]
    tolerance: float = 1e-9

    @property
    def violations(self) -> List[NormBoundRow]:
        return [r for r in self.rows if r.max_norm > r.bound + self.tolerance]

    @property
    def worst_margin(self) -> float:
        return min(r.margin for r in self.rows)


def norm_bound_sweep(mu: float, big_l: float, points: Sequence[Tuple[float, float]],
                     n_h: int = 21,
                     schedules: Sequence[str] = ("fedac1", "fedac2")) -> NormBoundReport:
    """Maximize the transformed norm over curvatures and compare to the bounds.

    ``points`` is a sequence of (gamma, eta) pairs, each required to satisfy
    eta in (0, 1/L] and gamma in [eta, sqrt(eta/mu)].  Curvature is sampled on
    a ``n_h``-point grid spanning [mu, L] inclusive.
    """
    if not (0 < mu <= big_l):
        raise ValueError(f"need 0 < mu <= L, got {mu}, {big_l}")
    hs = np.linspace(mu, big_l, n_h)
    slack = 1e-12
    rows = []
    for gamma, eta in points:
        if not (0.0 < eta <= 1.0 / big_l * (1 + slack)):
            raise ValueError(f"eta={eta} outside (0, 1/L] for L={big_l}")
        if not (eta <= gamma <= math.sqrt(eta / mu) * (1 + slack)):
            raise ValueError(f"gamma={gamma} outside [eta, sqrt(eta/mu)] for eta={eta}, mu={mu}")
        for name in schedules:
            matrix_fn, bound_fn = _TRANSFER[name]
            worst = max(transformed_norm(matrix_fn(mu, gamma, eta, float(h)), gamma, eta)
                        for h in hs)
            rows.append(NormBoundRow(name, float(gamma), float(eta), worst,
                                     bound_fn(mu, gamma, eta)))
    return NormBoundReport(rows)


def sample_admissible(seed: int, count: int,
                      mu_range: Tuple[float, float] = (1e-3, 1.0),
                      kappa_range: Tuple[float, float] = (1.5, 1e4)) -> np.ndarray:
    """Random (mu, L, gamma, eta) tuples satisfying the norm-sweep preconditions.

    mu and kappa are log-uniform, eta is uniform in (0, 1/L], gamma uniform in
    [eta, sqrt(eta/mu)].  Returns an array of shape (count, 4).
    """
    stream = RngStream(seed, 0)
    u = stream.uniforms(4 * count).reshape(count, 4)
    log_mu = np.log(mu_range[0]) + u[:, 0] * (np.log(mu_range[1]) - np.log(mu_range[0]))
    log_k = np.log(kappa_range[0]) + u[:, 1] * (np.log(kappa_range[1]) - np.log(kappa_range[0]))
    mu = np.exp(log_mu)
    big_l = mu * np.exp(log_k)
    eta = (1.0 - u[:, 2]) / big_l  # in (0, 1/L]
    gamma_hi = np.sqrt(eta / mu)
    gamma = eta + u[:, 3] * (gamma_hi - eta)
    return np.column_stack([mu, big_l, gamma, eta])


class PiecewiseCurvature1D(Objective):
    """1-D objective with curvature mu everywhere except on closed bump
    intervals where it is L; F and F' are exact integrals anchored at 0.

    With R(x) = clip(x, a, b) for a bump [a, b]:
    F''(w) = mu + (L-mu) sum_i 1[a_i <= w <= b_i],
    F'(w)  = mu w + (L-mu) sum_i (R_i(w) - R_i(0)),
    F(w)   = mu w**2/2 + (L-mu) sum_i (R_i(w) w - R_i(w)**2/2
                                        + R_i(0)**2/2 - R_i(0) w).
    Bump intervals must be pairwise disjoint, so F'' is {mu, L}-valued and F'
    is continuous.
    """

    def __init__(self, base_mu: float, big_l: float,
                 bumps: Sequence[Tuple[float, float]] = ()):
        if not (0 < base_mu <= big_l):
            raise ValueError(f"need 0 < mu <= L, got {base_mu}, {big_l}")
        self.dim = 1
        self.base_mu = float(base_mu)
        self.big_l = float(big_l)
        self.mu_est = self.base_mu
        self.l_est = self.big_l
        self.bumps = [(float(c), float(h)) for c, h in bumps]
        for _, h in self.bumps:
            if h <= 0:
                raise ValueError("bump half-width must be positive")
        self._a = np.array([c - h for c, h in self.bumps])
        self._b = np.array([c + h for c, h in self.bumps])
        order = np.argsort(self._a)
        self._a = self._a[order]
        self._b = self._b[order]
        if len(self._a) > 1 and not (self._b[:-1] < self._a[1:]).all():
            raise ValueError("bump intervals must be pairwise disjoint")
        self._r0 = np.clip(0.0, self._a, self._b)

    def with_bump(self, center: float, half_width: float) -> "PiecewiseCurvature1D":
        return PiecewiseCurvature1D(self.base_mu, self.big_l,
                                    self.bumps + [(center, half_width)])

    def _scalar(self, w) -> float:
        arr = np.atleast_1d(np.asarray(w, dtype=np.float64))
        if arr.size != 1:
            raise ValueError("objective is one-dimensional")
        return float(arr[0])

    def eval(self, w) -> float:
        x = self._scalar(w)
        val = 0.5 * self.base_mu * x * x
        if len(self._a):
            rw = np.clip(x, self._a, self._b)
            r0 = self._r0
            val += (self.big_l - self.base_mu) * float(
                (rw * x - 0.5 * rw * rw + 0.5 * r0 * r0 - r0 * x).sum())
        return val

    def grad(self, w) -> np.ndarray:
        x = self._scalar(w)
        slope = self.base_mu * x
        if len(self._a):
            rw = np.clip(x, self._a, self._b)
            slope += (self.big_l - self.base_mu) * float((rw - self._r0).sum())
        return np.array([slope])

    def curvature(self, w) -> float:
        """Second derivative at w; bump membership is boundary-inclusive."""
        x = self._scalar(w)
        if len(self._a) and bool(((self._a <= x) & (x <= self._b)).any()):
            return self.big_l
        return self.base_mu

    def stoch_grad(self, w, stream):
        return self.grad(w)

    def stoch_grad_multi(self, W, bundle):
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        return np.stack([self.grad(row) for row in W])


def _min_pairwise_distance(points: np.ndarray) -> float:
    s = np.sort(points)
    return float(np.diff(s).min())


def _bump_pattern_ok(objective: PiecewiseCurvature1D, mds: np.ndarray,
                     stages_done: int) -> bool:
    for t, x in enumerate(mds):
        want_l = (t % 3 == 1) and t < 3 * stages_done
        if (objective.curvature(x) == objective.big_l) != want_l:
            return False
    return True


def construct_instability_objective(big_l: float, mu: float, k: int,
                                    eps_shrink: float = 0.5,
                                    max_shrinks: int = 60):
    """Build the 1-D piecewise-curvature objective that destabilizes AGD.

    Starting from the bare quadratic (mu/2) w**2, repeat K times: run AGD for
    3K steps, place a provisional L-curvature bump of half-width eps centered
    at the step-(3k+1) gradient-query point, rerun, then fix the bump at the
    recomputed query point.  eps starts at half the minimum pairwise distance
    between query points and shrinks geometrically until the perturbed
    trajectory stays within a quarter of that distance and every query point
    sees the intended curvature (L exactly at steps t = 1 mod 3 already
    covered by a bump, mu elsewhere).

    Returns ``(objective, w0, w0_ag, delta)`` where delta is half the final
    minimum clearance between any query point and any region of the opposite
    curvature; perturbations below delta provably stay in-region.
    """
    if not (mu > 0) or big_l / mu < 25.0:
        raise ValueError(f"need L/mu >= 25, got {big_l / mu if mu > 0 else 'inf'}")
    if k < 0:
        raise ValueError("K must be >= 0")
    if not (0 < eps_shrink < 1):
        raise ValueError("eps_shrink must be in (0, 1)")
    # a generic start: w0_ag on the invariant ray of the bare quadratic
    # (e.g. 0.6 for kappa 25) makes early query points coincide exactly
    w0 = 1.0
    w0_ag = 0.45
    objective = PiecewiseCurvature1D(mu, big_l)
    if k == 0:
        return objective, w0, w0_ag, math.inf
    steps = 3 * k

    def mds_of(f):
        return agd_run(f, w0_ag, w0, big_l, mu, steps).w_md[:, 0]

    for stage in range(k):
        md = mds_of(objective)
        d_min = _min_pairwise_distance(md)
        if d_min <= 0:
            raise ConstructionError(
                f"stage {stage}: coincident gradient-query points; adjust the start")
        eps = 0.5 * d_min
        placed = None
        for _ in range(max_shrinks):
            try:
                provisional = objective.with_bump(float(md[3 * stage + 1]), eps)
            except ValueError:
                eps *= eps_shrink
                continue
            md_prov = mds_of(provisional)
            center = float(md_prov[3 * stage + 1])
            try:
                candidate = objective.with_bump(center, eps)
            except ValueError:
                eps *= eps_shrink
                continue
            md_fin = mds_of(candidate)
            if (np.abs(md_fin - md).max() <= 0.25 * d_min
                    and abs(md_fin[3 * stage + 1] - center) <= 0.25 * eps
                    and _bump_pattern_ok(candidate, md_fin, stage + 1)):
                placed = candidate
                break
            eps *= eps_shrink
        if placed is None:
            raise ConstructionError(
                f"stage {stage}: no bump width separated the query points "
                f"after {max_shrinks} shrinks")
        objective = placed

    md = mds_of(objective)
    clearance = math.inf
    a, b = objective._a, objective._b
    for t, x in enumerate(md):
        if t % 3 == 1:
            inside = (a <= x) & (x <= b)
            i = int(np.where(inside)[0][0])
            clearance = min(clearance, x - a[i], b[i] - x)
        else:
            clearance = min(clearance, float(np.maximum(a - x, x - b).min()))
    return objective, w0, w0_ag, 0.5 * clearance


@dataclass
class InstabilityResult:
    """Measured separation of two AGD trajectories started eps apart.

    ``block_gaps`` holds the paired-difference gap vector (ag, w) at t = 0, 3,
    ..., 3K; ``ratios`` are per-3-step norm amplifications measured after
    projecting the previous gap onto the invariant direction (the first block
    also absorbs a one-time projection of the initial offset).  Final gaps are
    measured directly from the two explicitly simulated trajectories;
    ``max_pairing_error`` bounds the disagreement between that direct
    subtraction and the cancellation-free paired recursion.
    """

    ratios: np.ndarray
    final_gap_w: float
    final_gap_w_ag: float
    block_gaps: np.ndarray
    max_map_error: float
    max_pairing_error: float
    amplification: float
    predicted_gap_w: float
    predicted_gap_w_ag: float


def instability_experiment(objective: PiecewiseCurvature1D, w0: float, w0_ag: float,
                           big_l: float, mu: float, eps: float,
                           k: int) -> InstabilityResult:
    """Run AGD from (w0_ag, w0) and (w0_ag - eps, w0 - eps) for 3K steps.

    Both trajectories are simulated explicitly; their gap is additionally
    propagated by the exact difference recursion (the objective is piecewise
    quadratic, so within matching curvature regions the gap dynamics are
    exactly linear and can be evolved without catastrophic cancellation).
    Errors out, naming the step, if the two trajectories ever query gradients
    in regions of different curvature.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if k < 0:
        raise ValueError("K must be >= 0")
    steps = 3 * k
    rk = math.sqrt(big_l / mu)
    inv_l = 1.0 / big_l
    c_shrink = 1.0 - 1.0 / rk
    c_pull = 1.0 / rk
    c_grad = math.sqrt(1.0 / (big_l * mu))

    lead = agd_run(objective, w0_ag, w0, big_l, mu, steps)
    trail = agd_run(objective, w0_ag - eps, w0 - eps, big_l, mu, steps)

    d_ag, d_w = float(eps), float(eps)
    blocks = [(d_ag, d_w)]
    for t in range(steps):
        h_lead = objective.curvature(lead.w_md[t, 0])
        h_trail = objective.curvature(trail.w_md[t, 0])
        if h_lead != h_trail:
            raise InstabilityRegionError(
                t, "trajectories query different curvature regions; reduce eps")
        want_l = t % 3 == 1
        if (h_lead == objective.big_l) != want_l:
            raise InstabilityRegionError(
                t, f"curvature {h_lead} breaks the mu,L,mu step pattern")
        d_md = (d_w + rk * d_ag) / (rk + 1.0)
        g_diff = h_lead * d_md
        d_ag = d_md - inv_l * g_diff
        d_w = c_shrink * d_w + c_pull * d_md - c_grad * g_diff
        if (t + 1) % 3 == 0:
            blocks.append((d_ag, d_w))
    block_gaps = np.array(blocks)

    scale = -2.0 * (1.0 - 1.0 / rk) ** 3
    projector = np.array([[0.5, 0.5 / rk], [rk / 2.0, 0.5]])
    ratios = np.zeros(k)
    max_map_error = 0.0
    for i in range(k):
        projected = projector @ block_gaps[i]
        nxt = block_gaps[i + 1]
        denom = np.linalg.norm(nxt)
        if denom > 0:
            ratios[i] = denom / np.linalg.norm(projected)
            max_map_error = max(
                max_map_error,
                float(np.linalg.norm(nxt - scale * projected) / denom))

    explicit_ag = lead.w_ag[::3, 0] - trail.w_ag[::3, 0]
    explicit_w = lead.w[::3, 0] - trail.w[::3, 0]
    explicit = np.column_stack([explicit_ag, explicit_w])
    max_pairing_error = float(np.abs(explicit - block_gaps).max())

    growth = abs(scale) ** k
    return InstabilityResult(
        ratios=ratios,
        final_gap_w=abs(float(explicit_w[-1])),
        final_gap_w_ag=abs(float(explicit_ag[-1])),
        block_gaps=block_gaps,
        max_map_error=max_map_error,
        max_pairing_error=max_pairing_error,
        amplification=abs(scale),
        predicted_gap_w=0.5 * eps * growth * (rk + 1.0),
        predicted_gap_w_ag=0.5 * eps * growth * (1.0 + 1.0 / rk),
    )
