"""Weighted least-squares fit of the two-branch model to a binned histogram."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lm
from .core_model import PARAM_UNITS, ModelParams, branch_current, intensity, swap_branches
from .errors import ComputationError, ValidationError

FITTABLE = [
    "p_triplet",
    "detuning_offset",
    "delta_sb",
    "tc_singlet",
    "tc_triplet",
    "current_offset",
    "current_slope",
    "current_amplitude",
    "electron_temp_energy",
    "current_sigma",
]
_LOG = {"tc_singlet", "tc_triplet", "electron_temp_energy", "current_sigma"}
_REQUIRED_FREE = ("delta_sb", "detuning_offset", "current_offset")
DEFAULT_FREE = frozenset(FITTABLE) - {"electron_temp_energy"}
DEGENERACY_CORRELATION = 0.95
WEIGHT_MODES = ("poisson", "uniform", "counts")
EXPECTED_COUNT_FLOOR = 0.1
MAX_REWEIGHTS = 10


class DegeneracyWarning(UserWarning):
    pass


@dataclass
class FitConfig:
    initial: ModelParams
    free: frozenset = DEFAULT_FREE
    max_iterations: int = lm.DEFAULT_MAX_ITERATIONS
    gradient_tolerance: float = lm.DEFAULT_GRADIENT_TOLERANCE
    step_tolerance: float = lm.DEFAULT_STEP_TOLERANCE
    weight_mode: str = "poisson"
    tie_tunnel_couplings: bool = False

    def __post_init__(self):
        self.free = frozenset(self.free)

    @property
    def free_mask(self):
        return {name: name in self.free for name in FITTABLE}

    def free_names(self):
        names = [n for n in FITTABLE if n in self.free]
        if self.tie_tunnel_couplings and "tc_triplet" in names:
            names.remove("tc_triplet")
        return names

    def validate(self):
        unknown = self.free - set(FITTABLE)
        if unknown:
            raise ValidationError(f"cannot free {sorted(unknown)}", code="fit_engine.unknown_parameter")
        missing = [n for n in _REQUIRED_FREE if n not in self.free]
        if missing:
            raise ValidationError(f"parameters {missing} must be free", code="fit_engine.required_free")
        if not (self.gradient_tolerance > 0 and self.step_tolerance > 0):
            raise ValidationError("tolerances must be positive", code="fit_engine.bad_tolerance")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValidationError(f"unknown weight_mode {self.weight_mode!r}", code="fit_engine.bad_weight_mode")
        init = self.initial.to_dict()
        if not all(np.isfinite(v) for v in init.values()):
            raise ValidationError("initial guess is not finite", code="fit_engine.nonfinite_initial")
        self.initial.replace(delta_sb=abs(self.initial.delta_sb)).validate()
        return self

    def to_dict(self):
        return {
            "initial": self.initial.to_dict(),
            "free": sorted(self.free),
            "max_iterations": self.max_iterations,
            "gradient_tolerance": self.gradient_tolerance,
            "step_tolerance": self.step_tolerance,
            "weight_mode": self.weight_mode,
            "tie_tunnel_couplings": self.tie_tunnel_couplings,
        }


@dataclass
class FitResult:
    estimate: ModelParams
    covariance: np.ndarray
    free_names: list
    normalization: float
    residual_norm: float
    iterations: int
    converged: bool
    reason: str = ""
    gradient_norm: float = 0.0
    cost_history: list = field(default_factory=list)
    config: FitConfig = None
    warnings: list = field(default_factory=list)

    def stderr(self, name):
        return float(np.sqrt(self.covariance[self.free_names.index(name), self.free_names.index(name)]))

    def correlation(self, a, b):
        i, j = self.free_names.index(a), self.free_names.index(b)
        c = self.covariance
        return float(c[i, j] / np.sqrt(c[i, i] * c[j, j]))

    def to_dict(self):
        est = self.estimate.to_dict()
        return {
            "parameters": {
                name: {
                    "value": est[name],
                    "unit": PARAM_UNITS[name],
                    "free": name in self.free_names,
                    "stderr": self.stderr(name) if name in self.free_names else None,
                }
                for name in ModelParams.names()
            },
            "covariance": {"names": list(self.free_names), "matrix": self.covariance.tolist()},
            "normalization": self.normalization,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "convergence_reason": self.reason,
            "gradient_norm": self.gradient_norm,
            "warnings": list(self.warnings),
            "config": self.config.to_dict() if self.config is not None else None,
        }


def _to_internal(name, value):
    if name in _LOG:
        return np.log(value)
    if name == "p_triplet":
        p = min(max(value, 1e-9), 1 - 1e-9)
        return np.log(p / (1 - p))
    return value


def _to_native(name, value):
    if name in _LOG:
        return np.exp(value)
    if name == "p_triplet":
        return 1.0 / (1.0 + np.exp(-value))
    return value


def _native_derivative(name, native):
    if name in _LOG:
        return native
    if name == "p_triplet":
        return native * (1 - native)
    return 1.0


class _Problem:
    def __init__(self, hist, config):
        self.config = config
        self.names = config.free_names()
        self.base = config.initial.to_dict()
        eps = hist.detuning_centers
        cur = hist.current_centers
        self.E, self.I = np.meshgrid(eps, cur, indexing="ij")
        self.E, self.I = self.E.ravel(), self.I.ravel()
        self.counts = hist.counts.ravel().astype(float)
        if config.weight_mode == "counts":
            self.sqrt_w = 1.0 / np.sqrt(np.maximum(self.counts, 1.0))
        else:
            self.sqrt_w = np.ones_like(self.counts)

    def reweight(self, x):
        """Poisson weights from the model-expected counts at ``x``."""
        self.sqrt_w = 1.0 / np.sqrt(np.maximum(self.model(x), EXPECTED_COUNT_FLOOR))

    def params(self, x):
        values = dict(self.base)
        for name, v in zip(self.names, x[:-1]):
            values[name] = float(_to_native(name, v))
        values["p_singlet"] = 1.0 - values["p_triplet"]
        if self.config.tie_tunnel_couplings:
            values["tc_triplet"] = values["tc_singlet"]
        return ModelParams(**values)

    def model(self, x):
        return np.exp(x[-1]) * intensity(self.E, self.I, self.params(x))

    def residuals(self, x):
        return self.sqrt_w * (self.model(x) - self.counts)

    def best_normalization(self, params):
        z = intensity(self.E, self.I, params)
        w = self.sqrt_w**2
        denom = float(np.sum(w * z * z))
        return float(np.sum(w * z * self.counts)) / denom if denom > 0 else 1.0

    def x0(self, params):
        d = params.to_dict()
        x = [_to_internal(n, d[n]) for n in self.names]
        x.append(np.log(max(self.best_normalization(params), 1e-12)))
        return np.array(x, dtype=float)

    def cost(self, params):
        a = self.best_normalization(params)
        r = self.sqrt_w * (a * intensity(self.E, self.I, params) - self.counts)
        return float(r @ r)


def _crossing(x, y, level):
    """First interpolated abscissa where monotone-ised ``y`` reaches ``level``."""
    ym = np.maximum.accumulate(y)
    idx = np.searchsorted(ym, level)
    if idx <= 0:
        return float(x[0])
    if idx >= len(x):
        return float(x[-1])
    y0, y1 = ym[idx - 1], ym[idx]
    frac = 0.0 if y1 == y0 else (level - y0) / (y1 - y0)
    return float(x[idx - 1] + frac * (x[idx] - x[idx - 1]))


def initial_guess(hist, kbte=None):
    """Heuristic starting point for :func:`fit`.

    Plateau levels at the sweep extremes give the offset, slope and
    amplitude.  The splitting starts from the excess variance of the
    steepest column; a few candidate (splitting, tunnel coupling) pairs
    built from the 10-90% transition width are then scored against the
    histogram and the best one is returned.

    Raises
    ------
    ComputationError
        If the transition is not contained in the sweep.
    """
    eps = hist.detuning_centers
    if eps.size < 5:
        raise ValidationError("need at least 5 detuning columns", code="fit_engine.too_few_columns")
    mean, std = hist.column_moments()
    k = max(2, eps.size // 6)
    ends = np.r_[np.arange(k), np.arange(eps.size - k, eps.size)]
    side = np.r_[-np.ones(k), np.ones(k)]
    A = np.column_stack([np.ones(2 * k), eps[ends], side])
    (i0, slope, i_amp), res_step, *_ = np.linalg.lstsq(A, mean[ends], rcond=None)
    sigma = float(np.median(std[ends]))
    detrended = mean - i0 - slope * eps
    contrast_ok = abs(i_amp) > 0.5 * max(sigma, 1e-300)
    flat = (
        np.max(np.abs(detrended[:k] + i_amp)) < 0.25 * abs(i_amp)
        and np.max(np.abs(detrended[-k:] - i_amp)) < 0.25 * abs(i_amp)
    )
    if not (contrast_ok and flat):
        raise ComputationError(
            "transition not contained in sweep: no asymptotic plateaus detected",
            code="fit_engine.transition_not_contained",
        )
    sigma = max(sigma, 1e-6 * abs(i_amp))
    # A broad transition leaves the plateau columns on its shoulders; try the
    # zero-temperature shape (10-90% width = 5.33 tc) and keep it if it
    # describes the extreme columns better than a step.
    best = (float(np.sum(res_step)) if res_step.size else np.inf, i0, slope, i_amp)
    cand = (i0, slope, i_amp)
    for _ in range(3):
        d = mean - cand[0] - cand[1] * eps
        y = 0.5 * (d / cand[2] + 1.0)
        lo, hi = _crossing(eps, y, 0.1), _crossing(eps, y, 0.9)
        width = max(hi - lo, np.min(np.abs(np.diff(eps))))
        centre = 0.5 * (lo + hi)
        A[:, 2] = (eps[ends] - centre) / np.hypot(eps[ends] - centre, 0.375 * width)
        cand, rss, *_ = np.linalg.lstsq(A, mean[ends], rcond=None)
        rss = float(np.sum(rss)) if rss.size else float(np.sum((A @ cand - mean[ends]) ** 2))
        if rss < best[0]:
            best = (rss, *cand)
    _, i0, slope, i_amp = best
    detrended = mean - i0 - slope * eps
    y = 0.5 * (detrended / i_amp + 1.0)
    lo, hi = _crossing(eps, y, 0.1), _crossing(eps, y, 0.9)
    width = max(hi - lo, np.min(np.abs(np.diff(eps))))
    centre = 0.5 * (lo + hi)
    steep = float(eps[np.argmax(np.gradient(y, eps))])
    tc0 = width / 4.0
    kt = float(kbte) if kbte is not None else tc0

    j = int(np.argmax(np.gradient(y, eps)))
    excess = max(std[j] ** 2 - sigma**2, 0.0)
    eta = np.sqrt(excess / 0.25)
    lam = abs(i_amp) / (2 * tc0) * np.tanh(tc0 / kt)
    delta_var = float(eta / lam) if lam > 0 else 0.0

    base = ModelParams(
        p_singlet=0.5,
        p_triplet=0.5,
        detuning_offset=steep - delta_var / 2,
        delta_sb=delta_var,
        tc_singlet=tc0,
        tc_triplet=tc0,
        current_offset=float(i0),
        current_slope=float(slope),
        current_amplitude=float(i_amp),
        electron_temp_energy=kt,
        current_sigma=sigma,
    )
    problem = _Problem(hist, FitConfig(initial=base, weight_mode="uniform"))
    candidates = []
    for delta in {delta_var, 0.25 * width, 0.5 * width, 0.75 * width, 0.9 * width}:
        for tc in (tc0, width / 16.0, width / 40.0):
            for anchor in (steep, centre):
                candidates.append(
                    base.replace(
                        delta_sb=float(delta),
                        detuning_offset=float(anchor - delta / 2),
                        tc_singlet=float(tc),
                        tc_triplet=float(tc),
                        electron_temp_energy=kt,
                    )
                )
    return min(candidates, key=problem.cost)


def default_config(hist, kbte, **kwargs):
    """FitConfig seeded by :func:`initial_guess` with the electron temperature fixed."""
    return FitConfig(initial=initial_guess(hist, kbte=kbte), **kwargs)


def fit(hist, config):
    """Fit the two-branch intensity model to a histogram.

    Minimises ``sum w (A z - counts)^2`` over the free parameters and a
    normalisation ``A`` with Levenberg-Marquardt.  Weight modes:

    ``poisson``
        ``w = 1 / expected counts``, refreshed from the model between LM
        runs; the fixed point is the Poisson maximum-likelihood estimate and
        the covariance is the inverse Fisher information.
    ``uniform``
        ``w = 1``.
    ``counts``
        ``w = 1 / max(counts, 1)``.  Cheap, but biases the splitting low on
        sparse histograms.

    Tunnel couplings, the current width and the thermal energy are fitted
    in log space and the triplet population through a logistic map.  A negative splitting at
    the optimum is folded back by relabelling the branches.
    """
    config.validate()
    problem = _Problem(hist, config)
    x0 = problem.x0(config.initial)
    names = problem.names + ["normalization"]

    def solve(start):
        return lm.levenberg_marquardt(
            problem.residuals,
            start,
            names=names,
            max_iterations=config.max_iterations,
            step_tolerance=config.step_tolerance,
            gradient_tolerance=config.gradient_tolerance,
            # with model-expected weights J^T W J is already the Fisher information
            scale_covariance=config.weight_mode != "poisson",
        )

    res = solve(x0)
    if config.weight_mode == "poisson":
        for _ in range(MAX_REWEIGHTS):
            problem.reweight(res.x)
            previous = res.x
            res = solve(previous)
            change = np.max(np.abs(res.x - previous) / (np.abs(previous) + 1.0))
            if change < 1e-7:
                break
    estimate = problem.params(res.x)
    derivs = np.array(
        [_native_derivative(n, getattr(estimate, n)) for n in problem.names] + [np.exp(res.x[-1])]
    )
    cov = derivs[:, None] * res.covariance * derivs[None, :]
    cov = cov[:-1, :-1]
    cov = 0.5 * (cov + cov.T)

    if estimate.delta_sb < 0:
        estimate, cov = _fold_negative_splitting(estimate, cov, problem.names, config)
        cov = 0.5 * (cov + cov.T)

    dof = max(problem.counts.size - len(names), 1)
    result = FitResult(
        estimate=estimate,
        covariance=cov,
        free_names=list(problem.names),
        normalization=float(np.exp(res.x[-1])),
        residual_norm=float(np.sqrt(2 * res.cost / dof)),
        iterations=res.iterations,
        converged=res.converged,
        reason=res.reason,
        gradient_norm=res.gradient_norm,
        cost_history=res.cost_history,
        config=config,
    )
    if not res.converged:
        result.warnings.append(f"no convergence after {config.max_iterations} iterations")
    if "electron_temp_energy" in result.free_names and "tc_singlet" in result.free_names:
        rho = result.correlation("electron_temp_energy", "tc_singlet")
        if abs(rho) > DEGENERACY_CORRELATION:
            msg = f"tunnel coupling and electron temperature are degenerate (correlation {rho:.3f})"
            result.warnings.append(msg)
            warnings.warn(msg, DegeneracyWarning, stacklevel=2)
    return result


def _fold_negative_splitting(estimate, cov, names, config):
    swapped = swap_branches(estimate)
    n = len(names)
    M = np.eye(n)
    idx = {name: i for i, name in enumerate(names)}
    if "p_triplet" in idx:
        M[idx["p_triplet"], idx["p_triplet"]] = -1.0
    M[idx["detuning_offset"], idx["delta_sb"]] = 1.0
    M[idx["delta_sb"], idx["delta_sb"]] = -1.0
    if "tc_singlet" in idx and "tc_triplet" in idx:
        i, j = idx["tc_singlet"], idx["tc_triplet"]
        M[i, i] = M[j, j] = 0.0
        M[i, j] = M[j, i] = 1.0
    elif not config.tie_tunnel_couplings and ("tc_singlet" in idx) != ("tc_triplet" in idx):
        raise ComputationError(
            "negative splitting with only one tunnel coupling free; cannot relabel branches",
            code="fit_engine.negative_splitting",
        )
    return swapped, M @ cov @ M.T


# Per-branch midpoint estimator ------------------------------------------------


def _two_component_em(c, counts, sigma, init, weights=None, iterations=200):
    """EM for a two-component binned mixture with known common width.

    Weights are re-estimated unless given.  Returns ``(means, weights)``.
    """
    m = np.array(init, dtype=float)
    fixed = weights is not None
    w = np.asarray(weights if fixed else [0.5, 0.5], dtype=float)
    for _ in range(iterations):
        logp = -0.5 * ((c[:, None] - m[None, :]) / sigma) ** 2 + np.log(w)[None, :]
        logp -= logp.max(axis=1, keepdims=True)
        resp = np.exp(logp)
        resp /= resp.sum(axis=1, keepdims=True)
        nk = (counts[:, None] * resp).sum(axis=0)
        new = (counts[:, None] * resp * c[:, None]).sum(axis=0) / np.maximum(nk, 1e-300)
        if not fixed:
            w = np.clip(nk / nk.sum(), 1e-6, 1 - 1e-6)
        done = np.allclose(new, m, rtol=0, atol=1e-10 * sigma)
        m = new
        if done:
            break
    return m, w


def profile_midpoints(hist, kbte=None, resolve_threshold=2.0):
    """Detunings of the singlet and triplet anticrossing midpoints.

    Each column is split into two current modes with a fixed-width,
    fixed-weight mixture; the mode on the (2,0) side is assigned to the
    singlet.  Each per-branch mean-current trace is then fitted with a
    shifted single-branch curve and its centre returned.  The difference
    of the two is a splitting estimate that does not depend on the
    detailed line shape.

    Parameters
    ----------
    kbte : float, optional
        Thermal energy used in the trace model.  The default uses the
        zero-temperature shape; the centre does not depend on it.
    resolve_threshold : float
        A column counts as resolved when its two modes are more than this
        many widths apart.
    """
    eps = hist.detuning_centers
    c = hist.current_centers
    guess = initial_guess(hist, kbte=kbte)
    sigma = guess.current_sigma
    sign = np.sign(guess.current_amplitude) or 1.0

    def split(counts, weights):
        cdf = np.cumsum(counts) / counts.sum()
        q10 = c[min(np.searchsorted(cdf, 0.1), c.size - 1)]
        q90 = c[min(np.searchsorted(cdf, 0.9), c.size - 1)]
        init = [q90, q10] if sign > 0 else [q10, q90]
        return _two_component_em(c, counts, sigma, init, weights)

    # population weights from the column with the widest current spread
    _, col_std = hist.column_moments()
    widest = hist.counts[int(np.argmax(col_std))].astype(float)
    _, weights = split(widest, None)

    traces = np.full((eps.size, 2), np.nan)
    resolved = np.zeros(eps.size, dtype=bool)
    for i in range(eps.size):
        counts = hist.counts[i].astype(float)
        if counts.sum() == 0:
            continue
        m, _ = split(counts, weights)
        traces[i] = m
        resolved[i] = sign * (m[0] - m[1]) > resolve_threshold * sigma
    if not resolved.any():
        raise ComputationError("branches unresolved in every column", code="fit_engine.branches_unresolved")

    idx = np.flatnonzero(resolved)
    lo_edge, hi_edge = eps[idx[0]], eps[idx[-1]]
    singlet_mid = _fit_trace_centre(eps, traces[:, 0], guess, 0.5 * (lo_edge + eps[max(idx[0] - 1, 0)]), kbte)
    triplet_mid = _fit_trace_centre(
        eps, traces[:, 1], guess, 0.5 * (hi_edge + eps[min(idx[-1] + 1, eps.size - 1)]), kbte
    )
    return singlet_mid, triplet_mid


def _fit_trace_centre(eps, trace, guess, centre0, kbte):
    ok = np.isfinite(trace)
    e, y = eps[ok], trace[ok]
    kt = kbte

    def model(x):
        offset, slope, amp, centre, log_tc = x
        tc = np.exp(log_tc)
        if kt is None:
            g = amp * (e - centre) / np.hypot(e - centre, 2 * tc)
        else:
            g = branch_current(e - centre, tc, amp, kt)
        return offset + slope * e + g

    span = np.ptp(e)
    x0 = [guess.current_offset, guess.current_slope, guess.current_amplitude, centre0, np.log(max(span / 50, 1e-9))]
    res = lm.levenberg_marquardt(lambda x: model(x) - y, x0, names=["offset", "slope", "amp", "centre", "log_tc"])
    return float(res.x[3])
