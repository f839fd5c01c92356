"""Influence functions of location M-functionals under cellwise contamination.

The engine evaluates the limiting derivative of the location functional along
the contamination paths from `contamination`.  Full-row replacement gives the
classical closed form; independent-cell replacement needs expectations over
partially replaced draws, estimated by Monte Carlo with common random numbers
(every call regenerates the same substream, so influence surfaces over a
z-grid are smooth and two calls at different z share all sampling noise).

Normalization: every influence vector is psi-weighted displacement divided by
a_psi, the derivative of the estimating equation at the model.  The same
constant serves both loss conventions because psi here always means the
derivative of the loss with respect to squared distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .contamination import MODELS, ContaminationSpec
from .estimators import EstimationError, m_location
from .numerics import (EllipticalModel, RhoSpec, chi2_truncated_expectation,
                       mahalanobis_sq, psi_sq, psi_sq_prime, truncation_sq)
from .rng import substream

# substream branch labels, one per consumer of the master seed
_PATH_G = 7
_PATH_FICM = 11
_PATH_PSICM = 13
_PATH_NUMERIC = 17
_PATH_GES = 19

KINDS = MODELS  # influence is defined for every contamination model


@dataclass(frozen=True)
class MonteCarlo:
    """Sampling budget for the Monte Carlo influence paths."""

    n_draws: int = 200_000
    seed: int = 2024
    batch: int = 200_000

    def __post_init__(self):
        if self.n_draws < 1 or self.batch < 1:
            raise ValueError("n_draws and batch must be positive")


def a_psi(rho: RhoSpec, d: int, nodes: int = 256) -> float:
    """Estimating-equation normalizer: (2/d) E[psi'(Q) Q] + E[psi(Q)], Q ~ chi2_d.

    psi and psi' act on squared distance regardless of the loss convention.
    A nonpositive value means the loss redescends too hard for this dimension
    and the location functional is not locally identifiable.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    cut = truncation_sq(rho)

    def integrand(u):
        return (2.0 / d) * psi_sq_prime(rho, u) * u + psi_sq(rho, u)

    val = chi2_truncated_expectation(integrand, d, cut, tail_value=0.0, nodes=nodes)
    if not val > 0.0:
        raise ValueError(f"normalizer a_psi = {val:.3e} is not positive at d={d}")
    return float(val)


class InfluenceContext:
    """Everything an influence evaluation needs, with a_psi precomputed.

    kind selects the contamination path; gamma is only meaningful for
    pcicm-i.  The context caches the z-independent parts of the Monte Carlo
    state (draws, precision products) for reuse across a z-grid.
    """

    def __init__(self, model: EllipticalModel, rho: RhoSpec, kind: str = "fdcm",
                 mc: MonteCarlo | None = None, gamma: float | None = None,
                 nodes: int = 256):
        if kind not in KINDS:
            raise ValueError(f"unknown contamination kind {kind!r}")
        self.model = model
        self.rho = rho
        self.kind = kind
        self.gamma = gamma
        self.mc = mc if mc is not None else MonteCarlo()
        self.d = model.dim
        self.a_psi = a_psi(rho, self.d, nodes=nodes)
        sigma_inv = np.linalg.inv(model.sigma0)
        self._sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
        self._cache_key = None
        self._cache_val = None

    def _draws(self, path: int):
        """Model draws plus precision products, cached for the last path."""
        key = (path, self.mc.n_draws, self.mc.seed)
        if self._cache_key != key:
            rng = substream(self.mc.seed, path)
            y = self.model.sample(self.mc.n_draws, rng)
            ydev = y - self.model.mu0
            proj = ydev @ self._sigma_inv
            d2y = np.einsum("ij,ij->i", ydev, proj)
            self._cache_key = key
            self._cache_val = (y, ydev, proj, d2y)
        return self._cache_val


@dataclass(frozen=True)
class InfluenceResult:
    z: np.ndarray
    value: np.ndarray
    stderr: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.value))


def _as_point(z, d: int) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (d,):
        raise ValueError(f"z must be a length-{d} vector")
    return z


# ---------------------------------------------------------------------------
# g-function: E_H[psi(d^2(X, m, Sigma)) (X - m)] for pattern distributions.

@dataclass(frozen=True)
class PatternSampler:
    """Distribution of a model draw with the listed coordinates pinned to z.

    coords empty means the clean model; coords covering every index is the
    point mass at z.
    """

    model: EllipticalModel
    coords: tuple[int, ...]
    z: np.ndarray

    def __post_init__(self):
        d = self.model.dim
        if any(not 0 <= k < d for k in self.coords):
            raise ValueError("pattern coordinate out of range")
        if len(set(self.coords)) != len(self.coords):
            raise ValueError("pattern coordinates must be distinct")
        object.__setattr__(self, "z", _as_point(self.z, d))

    @property
    def is_point_mass(self) -> bool:
        return len(self.coords) == self.model.dim

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x = self.model.sample(n, rng)
        for k in self.coords:
            x[:, k] = self.z[k]
        return x


def g_function(sampler: PatternSampler, m, sigma, rho: RhoSpec,
               mc: MonteCarlo) -> InfluenceResult:
    """Mean psi-weighted displacement under the sampler's distribution.

    Point-mass samplers short-circuit to the exact value with zero stderr.
    The substream depends on the pattern but not on z, so evaluations across
    a z-grid share their random numbers.
    """
    d = sampler.model.dim
    m = _as_point(m, d)
    sigma = np.asarray(sigma, dtype=float)
    if sampler.is_point_mass:
        val = psi_sq(rho, mahalanobis_sq(sampler.z, m, sigma)) * (sampler.z - m)
        return InfluenceResult(z=sampler.z, value=np.asarray(val),
                               stderr=np.zeros(d))
    rng = substream(mc.seed, _PATH_G, len(sampler.coords), *sampler.coords)
    total = np.zeros(d)
    total_sq = np.zeros(d)
    n_done = 0
    while n_done < mc.n_draws:
        n_batch = min(mc.batch, mc.n_draws - n_done)
        x = sampler.sample(n_batch, rng)
        contrib = psi_sq(rho, mahalanobis_sq(x, m, sigma))[:, None] * (x - m)
        total += contrib.sum(axis=0)
        total_sq += (contrib**2).sum(axis=0)
        n_done += n_batch
    mean = total / n_done
    var = np.maximum(total_sq / n_done - mean**2, 0.0) * n_done / max(n_done - 1, 1)
    return InfluenceResult(z=sampler.z, value=mean,
                           stderr=np.sqrt(var / n_done))


# ---------------------------------------------------------------------------
# Influence functions per contamination kind.

def if_fdcm(z, ctx: InfluenceContext) -> InfluenceResult:
    """Full-row replacement: psi(d^2(z)) (z - mu0) / a_psi, exactly."""
    z = _as_point(z, ctx.d)
    model = ctx.model
    val = psi_sq(ctx.rho, model.mahalanobis_sq(z)) * (z - model.mu0) / ctx.a_psi
    return InfluenceResult(z=z, value=np.asarray(val), stderr=np.zeros(ctx.d))


def _ficm_core(z: np.ndarray, ctx: InfluenceContext, path: int) -> InfluenceResult:
    """Sum over single-coordinate patterns, one shared sample for all of them.

    Pinning coordinate k shifts the squared distance by
    2 (z_k - Y_k) proj_k + (z_k - Y_k)^2 (Sigma^-1)_kk, so one draw set prices
    every pattern in O(n d).  Per-draw totals keep the stderr honest.
    """
    model = ctx.model
    y, ydev, proj, d2y = ctx._draws(path)
    inv_diag = np.diag(ctx._sigma_inv)
    delta = z[None, :] - y
    d2k = d2y[:, None] + 2.0 * delta * proj + delta**2 * inv_diag[None, :]
    psik = np.asarray(psi_sq(ctx.rho, d2k))
    row_sum = psik.sum(axis=1)
    per_draw = (row_sum[:, None] - psik) * ydev + psik * (z - model.mu0)[None, :]
    n = per_draw.shape[0]
    value = per_draw.mean(axis=0) / ctx.a_psi
    stderr = per_draw.std(axis=0, ddof=1) / math.sqrt(n) / ctx.a_psi
    return InfluenceResult(z=z, value=value, stderr=stderr)


def if_ficm(z, ctx: InfluenceContext) -> InfluenceResult:
    """Independent-cell replacement: only single-cell patterns survive the
    limit, so the influence is the sum of their g-values over a_psi."""
    return _ficm_core(_as_point(z, ctx.d), ctx, _PATH_FICM)


def if_psicm(z, ctx: InfluenceContext) -> InfluenceResult:
    """Half the full-row influence plus half the cellwise one.

    The cellwise half runs on its own substream, so comparing against the
    average of if_fdcm and if_ficm is a genuine two-estimate consistency
    check rather than an arithmetic identity.
    """
    z = _as_point(z, ctx.d)
    row = if_fdcm(z, ctx)
    cell = _ficm_core(z, ctx, _PATH_PSICM)
    return InfluenceResult(z=z, value=0.5 * (row.value + cell.value),
                           stderr=0.5 * cell.stderr)


def if_pcicm(z, ctx: InfluenceContext) -> InfluenceResult:
    """Partially clean models: the limit drops the structural row mass, so
    the influence coincides with the independent-cell one (alias)."""
    return if_ficm(z, ctx)


_DISPATCH = {
    "fdcm": if_fdcm,
    "ficm": if_ficm,
    "psicm": if_psicm,
    "pcicm-i": if_pcicm,
    "pcicm-ii": if_pcicm,
}


def influence(z, ctx: InfluenceContext) -> InfluenceResult:
    return _DISPATCH[ctx.kind](z, ctx)


def if_coordwise(z, model: EllipticalModel, rho1: RhoSpec,
                 nodes: int = 256) -> InfluenceResult:
    """Influence of the coordinatewise M-functional, any contamination kind.

    Each coordinate sees only its own marginal, and the contaminated marginal
    is the same two-point mixture under every model here, so one closed form
    covers them all.  rho1 is the univariate loss.
    """
    z = _as_point(z, model.dim)
    a1 = a_psi(rho1, 1, nodes=nodes)
    dev = z - model.mu0
    q = dev**2 / np.diag(model.sigma0)
    val = np.asarray(psi_sq(rho1, q)) * dev / a1
    return InfluenceResult(z=z, value=val, stderr=np.zeros(model.dim))


# ---------------------------------------------------------------------------
# Finite-epsilon derivative oracle.

def m_location_fit(model: EllipticalModel, rho: RhoSpec):
    """Estimator callable for if_numeric: location M-step at the model scatter."""

    def fit(x: np.ndarray) -> np.ndarray:
        res = m_location(x, model.sigma0, rho, start=model.mu0)
        if not res.converged:
            raise EstimationError("location M-step did not converge")
        return res.mu

    return fit


def coord_m_fit(model: EllipticalModel, rho1: RhoSpec):
    """Coordinatewise variant: univariate M per column at the model scale."""
    diag = np.diag(model.sigma0)

    def fit(x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[1])
        for j in range(x.shape[1]):
            res = m_location(x[:, [j]], [[diag[j]]], rho1,
                             start=[model.mu0[j]])
            if not res.converged:
                raise EstimationError(f"column {j} M-step did not converge")
            out[j] = res.mu[0]
        return out

    return fit


def if_numeric(z, ctx: InfluenceContext, estimator=None,
               eps_grid: tuple[float, ...] = (0.005, 0.01),
               n_boot: int = 12) -> InfluenceResult:
    """Influence as a measured slope: fit the estimator on large samples at
    small contamination rates and extrapolate the secant to rate zero.

    All rates share one clean sample and one uniform array, with indicators
    coupled monotonically in the rate, so the fitted centers differ only
    through genuinely flipped cells and the slope noise stays near
    1/sqrt(n_draws * eps).  Bootstrap over draws (same row indices at every
    rate) gives the stderr.
    """
    z = _as_point(z, ctx.d)
    if not eps_grid or any(not 0.0 < e <= 0.01 for e in eps_grid):
        raise ValueError("eps_grid entries must lie in (0, 0.01]")
    eps_grid = tuple(sorted(eps_grid))
    if estimator is None:
        estimator = m_location_fit(ctx.model, ctx.rho)
    n, d = ctx.mc.n_draws, ctx.d
    y = ctx.model.sample(n, substream(ctx.mc.seed, _PATH_NUMERIC, 0))
    u = substream(ctx.mc.seed, _PATH_NUMERIC, 1).random((n, d))
    v = substream(ctx.mc.seed, _PATH_NUMERIC, 2).random(n)

    def dataset(eps: float) -> np.ndarray:
        spec = ContaminationSpec(model=ctx.kind, epsilon=eps, gamma=ctx.gamma)
        p_struct, struct_kind, cell_rate = spec.mixture()
        b = u < cell_rate
        rows = v < p_struct
        b[rows] = struct_kind == "ones"
        return np.where(b, z[None, :], y)

    datasets = [dataset(e) for e in eps_grid]

    def slope_at_zero(idx) -> np.ndarray:
        t0 = estimator(y[idx])
        secants = np.array([(estimator(x[idx]) - t0) / e
                            for x, e in zip(datasets, eps_grid)])
        if len(eps_grid) == 1:
            return secants[0]
        # secant(e) = IF + C e + o(e): linear intercept removes the C term
        coef = np.polyfit(np.asarray(eps_grid), secants, 1)
        return coef[1]

    full = np.arange(n)
    value = slope_at_zero(full)
    if n_boot > 1:
        boot_rng = substream(ctx.mc.seed, _PATH_NUMERIC, 3)
        boots = np.array([slope_at_zero(boot_rng.integers(0, n, n))
                          for _ in range(n_boot)])
        stderr = boots.std(axis=0, ddof=1)
    else:
        stderr = np.full(d, np.nan)
    return InfluenceResult(z=z, value=value, stderr=stderr)


# ---------------------------------------------------------------------------
# Gross-error sensitivity.

@dataclass(frozen=True)
class GesSearch:
    """Ray-search configuration.

    axes "all" puts one ray on every coordinate axis, "first" only on the
    leading axis (enough under spherical symmetry); the all-ones diagonal and
    n_random extra unit rays are always included.  Radial grids scale per ray
    so the largest pinned coordinate sweeps up to overshoot times the loss
    truncation radius.
    """

    axes: str = "all"
    n_random: int = 4
    n_radial: int = 24
    overshoot: float = 1.25
    refine: int = 48
    seed: int = 5

    def __post_init__(self):
        if self.axes not in ("all", "first"):
            raise ValueError("axes must be 'all' or 'first'")


@dataclass(frozen=True)
class GesResult:
    value: float
    argmax_z: np.ndarray
    kind: str
    rays: tuple[tuple[str, float, float], ...] = ()  # (label, best_t, best_norm)


def _radial_profile(rho: RhoSpec) -> float:
    """Radius maximizing psi(r^2) r, the norm of the row-replacement influence
    along a unit Mahalanobis direction (times 1/a_psi)."""
    t_max = math.sqrt(truncation_sq(rho))

    def neg(t: float) -> float:
        return -float(psi_sq(rho, t * t)) * t

    res = minimize_scalar(neg, bounds=(1e-9, t_max), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x)


def ges(ctx: InfluenceContext, search: GesSearch | None = None) -> GesResult:
    """Supremum of the influence norm over the search set.

    Row-replacement kinds reduce exactly: the norm depends on z only through
    the Mahalanobis radius and the principal axis of sigma0, leaving a
    one-dimensional maximization.  Cellwise kinds search rays and refine the
    radius by golden section; common random numbers make the profile along a
    ray smooth, so the refinement is honest.
    """
    search = search if search is not None else GesSearch()
    model, rho = ctx.model, ctx.rho
    if ctx.kind == "fdcm":
        t_star = _radial_profile(rho)
        evals, vecs = np.linalg.eigh(model.sigma0)
        u = vecs[:, -1]
        gain = math.sqrt(float(evals[-1]))
        value = float(psi_sq(rho, t_star**2)) * t_star * gain / ctx.a_psi
        # u is a principal eigenvector, so sigma0^{1/2} u = gain * u and the
        # point mu0 + t*gain*u sits at Mahalanobis radius exactly t
        argmax = model.mu0 + t_star * gain * u
        return GesResult(value=value, argmax_z=argmax, kind=ctx.kind,
                         rays=(("radial", t_star, value),))

    d = ctx.d
    rays: list[tuple[str, np.ndarray]] = []
    n_axes = d if search.axes == "all" else 1
    for k in range(n_axes):
        e = np.zeros(d)
        e[k] = 1.0
        rays.append((f"axis{k + 1}", e))
    if d > 1:
        rays.append(("diag", np.full(d, 1.0 / math.sqrt(d))))
    rng = substream(search.seed, _PATH_GES)
    for i in range(search.n_random):
        v = rng.standard_normal(d)
        rays.append((f"rand{i + 1}", v / np.linalg.norm(v)))

    t_trunc = math.sqrt(truncation_sq(rho))

    def norm_at(zvec: np.ndarray) -> float:
        return influence(zvec, ctx).norm

    best_value = 0.0
    best_z = model.mu0.copy()
    ray_table: list[tuple[str, float, float]] = []
    for label, u in rays:
        scale = t_trunc / float(np.max(np.abs(u)))
        ts = np.linspace(scale * 0.02, scale * search.overshoot, search.n_radial)
        vals = [norm_at(model.mu0 + t * u) for t in ts]
        i = int(np.argmax(vals))
        lo = ts[max(i - 1, 0)]
        hi = ts[min(i + 1, len(ts) - 1)]
        t_best, v_best = _golden_max(lambda t: norm_at(model.mu0 + t * u),
                                     lo, hi, search.refine)
        if vals[i] > v_best:
            t_best, v_best = float(ts[i]), float(vals[i])
        ray_table.append((label, t_best, v_best))
        if v_best > best_value:
            best_value = v_best
            best_z = model.mu0 + t_best * u
    return GesResult(value=best_value, argmax_z=best_z, kind=ctx.kind,
                     rays=tuple(ray_table))


def coord_ges(model: EllipticalModel, rho1: RhoSpec, nodes: int = 256) -> GesResult:
    """Gross-error sensitivity of the coordinatewise M-functional.

    Contamination in one cell moves only that coordinate's estimate, so the
    search runs over single-coordinate rays; the answer is the univariate
    sensitivity scaled by the largest marginal standard deviation, identical
    under every contamination model here.
    """
    a1 = a_psi(rho1, 1, nodes=nodes)
    t_star = _radial_profile(rho1)
    diag = np.diag(model.sigma0)
    j = int(np.argmax(diag))
    s = math.sqrt(float(diag[j]))
    value = float(psi_sq(rho1, t_star**2)) * t_star * s / a1
    argmax = model.mu0.copy()
    argmax[j] += t_star * s
    return GesResult(value=value, argmax_z=argmax, kind="coordinatewise",
                     rays=((f"axis{j + 1}", t_star * s, value),))


def _golden_max(f, lo: float, hi: float, iters: int) -> tuple[float, float]:
    """Golden-section maximization on [lo, hi]; returns (argmax, max)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    e = a + invphi * (b - a)
    fc, fe = f(c), f(e)
    for _ in range(iters):
        if fc >= fe:
            b, e, fe = e, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + invphi * (b - a)
            fe = f(e)
    t = (a + b) / 2.0
    ft = f(t)
    if fc > ft:
        t, ft = c, fc
    if fe > ft:
        t, ft = e, fe
    return float(t), float(ft)
