"""Objective functions with deterministic and stochastic gradient oracles.

Three concrete kinds: diagonal quadratics (with optional isotropic gaussian
gradient noise), l2-regularized logistic regression over a sparse dataset,
and an l2-augmentation wrapper that adds ``(lam/2) * ||w - w0||**2`` to any
inner objective.  Each objective carries curvature estimates ``mu_est`` (strong
convexity) and ``l_est`` (smoothness) that drive schedule and step-size
choices downstream.

All stochastic draws come from caller-owned streams (see :mod:`fedsim.rng`),
so objectives are immutable and safe to share across threads.  The number of
stream slots consumed per oracle call is fixed and documented per kind, which
is what makes multi-worker runs reproducible under any scheduling.

Reduction orders are pinned: row dot products use elementwise multiply
followed by ``sum`` over the last axis, and averages over workers or batch
members use ``np.mean`` over the leading axis.  Keeping one canonical order
is what allows the bitwise-equivalence guarantees between the batched and
per-worker code paths.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
from scipy.special import expit

from .rng import RngStream, StreamBundle


class GradSample(NamedTuple):
    """Objective value and gradient at a point, as returned by eval_grad."""

    value: float
    grad: np.ndarray


def _log1p_exp(t: np.ndarray) -> np.ndarray:
    """Numerically stable log(1 + exp(t)) = log1p(exp(-|t|)) + max(t, 0)."""
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def _row_dots(rows: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-row inner products with a pinned reduction order.

    ``rows`` is (B, dim); ``w`` is (dim,) or (B, dim).  Using multiply+sum
    (pairwise reduction over the last axis) rather than BLAS keeps the result
    bit-identical between the single-point and batched code paths.
    """
    return (rows * w).sum(axis=-1)


class Objective:
    """Base class; subclasses fill in eval/grad/stoch_grad.

    Attributes
    ----------
    dim : int
        Ambient dimension.
    mu_est : float
        Strong-convexity estimate (may be 0).
    l_est : float
        Smoothness estimate; always positive and >= mu_est.
    """

    dim: int
    mu_est: float
    l_est: float

    def _check_point(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-1] != self.dim:
            raise ValueError(
                f"point has dimension {w.shape[-1]}, objective has {self.dim}"
            )
        if not np.isfinite(w).all():
            raise ValueError("point contains non-finite entries")
        return w

    def eval(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def eval_grad(self, w: np.ndarray) -> GradSample:
        """Value and gradient in one call (subclasses may share work)."""
        return GradSample(self.eval(w), self.grad(w))

    def stoch_grad(self, w: np.ndarray, stream: RngStream) -> np.ndarray:
        raise NotImplementedError

    def stoch_grad_multi(self, W: np.ndarray, bundle: StreamBundle) -> np.ndarray:
        """Stochastic gradients for several workers at once.

        ``W`` is (B, dim) with one row per bundle stream, or (dim,) for a
        shared query point.  Row m of the result is bit-identical to
        ``stoch_grad`` on the corresponding single stream.
        """
        raise NotImplementedError

    def stream_workers(self, m: int) -> np.ndarray:
        """Worker ids whose streams a driver should allocate for M logical workers."""
        return np.arange(m, dtype=np.int64)


class Quadratic(Objective):
    """F(w) = 0.5 * sum_j spectrum[j] * (w[j] - shift[j])**2 with gaussian noise.

    The stochastic oracle returns grad(w) + z where z has independent
    N(0, sigma**2 / dim) coordinates, so E||z||**2 == sigma**2 exactly.
    One oracle call consumes ``dim`` stream slots when sigma > 0 and none
    otherwise.
    """

    def __init__(self, spectrum, shift=None, sigma: float = 0.0,
                 mu_est: Optional[float] = None, l_est: Optional[float] = None):
        self.spectrum = np.asarray(spectrum, dtype=np.float64).ravel()
        self.dim = self.spectrum.size
        if self.dim == 0:
            raise ValueError("empty spectrum")
        if (self.spectrum < 0).any():
            raise ValueError("spectrum entries must be nonnegative")
        if shift is None:
            shift = np.zeros(self.dim)
        self.shift = np.asarray(shift, dtype=np.float64).ravel()
        if self.shift.size == 1 and self.dim > 1:
            self.shift = np.full(self.dim, float(self.shift[0]))
        if self.shift.size != self.dim:
            raise ValueError("shift length does not match spectrum")
        self.sigma = float(sigma)
        self.mu_est = float(self.spectrum.min() if mu_est is None else mu_est)
        self.l_est = float(self.spectrum.max() if l_est is None else l_est)
        if self.l_est <= 0:
            raise ValueError("l_est must be positive")
        if self.mu_est > self.l_est:
            raise ValueError("mu_est exceeds l_est")
        if (self.spectrum < self.mu_est).any() or (self.spectrum > self.l_est).any():
            raise ValueError("spectrum entries must lie in [mu_est, l_est]")
        self._noise_scale = self.sigma / np.sqrt(self.dim)

    def eval(self, w):
        w = self._check_point(w)
        d = w - self.shift
        return float(0.5 * (self.spectrum * d * d).sum())

    def grad(self, w):
        w = self._check_point(w)
        return self.spectrum * (w - self.shift)

    def stoch_grad(self, w, stream):
        g = self.grad(w)
        if self.sigma == 0.0:
            return g
        return g + self._noise_scale * stream.gaussians(self.dim)

    def stoch_grad_multi(self, W, bundle):
        W = self._check_point(W)
        g = self.spectrum * (W - self.shift)
        if W.ndim == 1:
            g = np.broadcast_to(g, (len(bundle), self.dim)).copy()
        if self.sigma == 0.0:
            return g
        return g + self._noise_scale * bundle.gaussians(self.dim)


class Logistic(Objective):
    """l2-regularized binary logistic regression over a fixed dataset.

    F(w) = (1/n) sum_i log(1 + exp(-y_i <x_i, w>)) + (lam/2) ||w||**2.

    The stochastic oracle samples one example uniformly with replacement
    (consuming exactly one stream slot) and returns that example's loss
    gradient plus the exact regularizer term ``lam * w``; the regularizer is
    never subsampled, so the gradient-noise level does not depend on lam.
    """

    # datasets up to this many entries keep a dense feature-matrix cache
    _DENSE_CACHE_LIMIT = 2 ** 25

    def __init__(self, dataset, lam: float):
        if lam < 0:
            raise ValueError("regularization strength must be nonnegative")
        self.dataset = dataset
        self.lam = float(lam)
        self.dim = int(dataset.dim)
        self.n = int(dataset.n)
        self.labels = np.asarray(dataset.labels, dtype=np.float64)
        self.X = dataset.X
        self._dense = None
        if self.n * self.dim <= self._DENSE_CACHE_LIMIT:
            self._dense = np.asarray(self.X.todense())
        row_sq = np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        self.mu_est = self.lam
        self.l_est = float(row_sq.mean() / 4.0 + self.lam)
        if self.l_est <= 0:
            # all-zero features with lam == 0: degenerate but keep l_est positive
            self.l_est = np.finfo(np.float64).tiny

    def _margins(self, w: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            zw = self._dense @ w
        else:
            zw = self.X @ w
        return self.labels * zw

    def eval(self, w):
        w = self._check_point(w)
        z = self._margins(w)
        loss = _log1p_exp(-z).mean()
        return float(loss + 0.5 * self.lam * (w * w).sum())

    def grad(self, w):
        return self.eval_grad(w).grad

    def eval_grad(self, w):
        w = self._check_point(w)
        z = self._margins(w)
        loss = float(_log1p_exp(-z).mean() + 0.5 * self.lam * (w * w).sum())
        coefs = (-self.labels * expit(-z)) / self.n
        if self._dense is not None:
            g = self._dense.T @ coefs
        else:
            g = np.asarray(self.X.T @ coefs).ravel()
        return GradSample(loss, g + self.lam * w)

    def _rows(self, idx: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense[idx]
        return np.asarray(self.X[idx].todense())

    def stoch_grad(self, w, stream):
        w = self._check_point(w)
        i = int(stream.indices(self.n, 1)[0])
        row = self._rows(np.array([i]))[0]
        z = self.labels[i] * _row_dots(row[None, :], w)[0]
        coef = -self.labels[i] * expit(-z)
        return coef * row + self.lam * w

    def stoch_grad_multi(self, W, bundle):
        W = self._check_point(W)
        idx = bundle.indices(self.n, 1)[:, 0]
        rows = self._rows(idx)
        y = self.labels[idx]
        z = y * _row_dots(rows, W)
        coefs = -y * expit(-z)
        return coefs[:, None] * rows + self.lam * W


class Augmented(Objective):
    """inner(w) + (lam/2) * ||w - w0||**2; lam-strongly-convex lift of any objective."""

    def __init__(self, inner: Objective, lam: float, w0):
        if lam <= 0:
            raise ValueError("augmentation strength must be positive")
        w0 = np.asarray(w0, dtype=np.float64).ravel()
        if w0.size == 1 and inner.dim > 1:
            w0 = np.full(inner.dim, float(w0[0]))
        if w0.size != inner.dim:
            raise ValueError("anchor length does not match inner objective")
        self.inner = inner
        self.lam = float(lam)
        self.w0 = w0
        self.dim = inner.dim
        self.mu_est = inner.mu_est + self.lam
        self.l_est = inner.l_est + self.lam

    def eval(self, w):
        w = self._check_point(w)
        d = w - self.w0
        return float(self.inner.eval(w) + 0.5 * self.lam * (d * d).sum())

    def grad(self, w):
        w = self._check_point(w)
        return self.inner.grad(w) + self.lam * (w - self.w0)

    def eval_grad(self, w):
        w = self._check_point(w)
        inner = self.inner.eval_grad(w)
        d = w - self.w0
        return GradSample(
            float(inner.value + 0.5 * self.lam * (d * d).sum()),
            inner.grad + self.lam * d,
        )

    def stoch_grad(self, w, stream):
        w = self._check_point(w)
        return self.inner.stoch_grad(w, stream) + self.lam * (w - self.w0)

    def stoch_grad_multi(self, W, bundle):
        W = self._check_point(W)
        return self.inner.stoch_grad_multi(W, bundle) + self.lam * (W - self.w0)

    def stream_workers(self, m):
        return self.inner.stream_workers(m)


class BatchedOracle(Objective):
    """Averages `batch` independent stochastic gradients per logical worker.

    A driver running M logical workers on this objective allocates M * batch
    underlying streams; worker m owns the contiguous block
    ``[m*batch, (m+1)*batch)``.  Deterministic quantities delegate to the
    inner objective unchanged.
    """

    def __init__(self, inner: Objective, batch: int):
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.inner = inner
        self.batch = int(batch)
        self.dim = inner.dim
        self.mu_est = inner.mu_est
        self.l_est = inner.l_est

    def eval(self, w):
        return self.inner.eval(w)

    def grad(self, w):
        return self.inner.grad(w)

    def eval_grad(self, w):
        return self.inner.eval_grad(w)

    def stream_workers(self, m):
        return np.arange(m * self.batch, dtype=np.int64)

    def stoch_grad(self, w, stream):
        raise NotImplementedError("batched oracle draws through stoch_grad_multi")

    def stoch_grad_multi(self, W, bundle):
        W = self.inner._check_point(W)
        if W.ndim == 1:
            W = W[None, :]
        m = W.shape[0]
        if len(bundle) != m * self.batch:
            raise ValueError("bundle size does not match workers * batch")
        expanded = np.repeat(W, self.batch, axis=0)
        g = self.inner.stoch_grad_multi(expanded, bundle)
        return np.mean(g.reshape(m, self.batch, self.dim), axis=1)


def augment(obj: Objective, lam: float, w0) -> Objective:
    """Wrap an objective with an l2 proximity term anchored at w0."""
    return Augmented(obj, lam, w0)


def smoothness_bounds(dataset, lam: float):
    """Curvature estimates for regularized logistic regression on a dataset.

    Returns ``(mu_est, l_est)`` with ``mu_est = lam`` and
    ``l_est = mean ||x_i||**2 / 4 + lam`` (the population logistic smoothness
    bound).
    """
    if dataset.n == 0:
        raise ValueError("empty dataset")
    row_sq = np.asarray(dataset.X.multiply(dataset.X).sum(axis=1)).ravel()
    return float(lam), float(row_sq.mean() / 4.0 + lam)
