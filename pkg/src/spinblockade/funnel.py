"""Spin-funnel analysis: ridge extraction and tunnel-coupling fit.

Magnetic fields are in uT and energies in ueV.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import lm
from .errors import ComputationError, ValidationError

MU_B_UEV_PER_UT = 5.7883818060e-5
G_MU_B_DEFAULT = 2.0 * MU_B_UEV_PER_UT


class OneSidedFunnelWarning(UserWarning):
    pass


@dataclass
class FunnelMap:
    """Blockade probability with ``probability[i, j]`` at ``epsilon_grid[i]``, ``b_grid[j]``."""

    b_grid: np.ndarray
    epsilon_grid: np.ndarray
    probability: np.ndarray

    def __post_init__(self):
        self.b_grid = np.asarray(self.b_grid, dtype=float)
        self.epsilon_grid = np.asarray(self.epsilon_grid, dtype=float)
        self.probability = np.asarray(self.probability, dtype=float)

    def validate(self):
        if self.probability.shape != (self.epsilon_grid.size, self.b_grid.size):
            raise ValidationError("probability shape does not match grids", code="funnel.shape_mismatch")
        for g in (self.b_grid, self.epsilon_grid):
            if g.size > 1 and not np.all(np.diff(g) > 0):
                raise ValidationError("grids must be increasing", code="funnel.grid_not_monotone")
        return self


@dataclass
class PeakReport:
    peaks: list
    skipped: list = field(default_factory=list)

    def arrays(self):
        p = np.asarray(self.peaks, dtype=float).reshape(-1, 3)
        return p[:, 0], p[:, 1], p[:, 2]


@dataclass
class FunnelFit:
    tc: float
    b0: float
    b_perp: float
    y0: float
    g_mu_b: float
    covariance: np.ndarray = None
    one_sided: bool = False

    def stderr(self):
        return dict(zip(("tc", "b0", "b_perp", "y0"), np.sqrt(np.diag(self.covariance))))

    def to_dict(self):
        return {
            "tc_ueV": self.tc,
            "b0_uT": self.b0,
            "b_perp_uT": self.b_perp,
            "y0_ueV": self.y0,
            "g_mu_b_ueV_per_uT": self.g_mu_b,
            "stderr": self.stderr() if self.covariance is not None else None,
            "covariance": self.covariance.tolist() if self.covariance is not None else None,
            "one_sided": self.one_sided,
        }


def funnel_position(b, tc, b0, b_perp, y0, g_mu_b=G_MU_B_DEFAULT):
    """Detuning of the S-T anticrossing at field ``b``."""
    b = np.asarray(b, dtype=float)
    return y0 - tc**2 / (g_mu_b * np.sqrt((b - b0) ** 2 + b_perp**2))


def simulate_funnel_map(b_grid, epsilon_grid, tc, b0, b_perp, y0, g_mu_b=G_MU_B_DEFAULT,
                        ridge_width=5.0, amplitude=0.5, baseline=0.05, noise=0.0, seed=0):
    """Gaussian ridge along the funnel curve, clipped to [0, 1]."""
    b_grid = np.asarray(b_grid, dtype=float)
    epsilon_grid = np.asarray(epsilon_grid, dtype=float)
    centre = funnel_position(b_grid, tc, b0, b_perp, y0, g_mu_b)
    ridge = amplitude * np.exp(-0.5 * ((epsilon_grid[:, None] - centre[None, :]) / ridge_width) ** 2)
    prob = baseline + ridge
    if noise > 0:
        prob = prob + np.random.default_rng(seed).normal(0.0, noise, prob.shape)
    return FunnelMap(b_grid, epsilon_grid, np.clip(prob, 0.0, 1.0))


def _fit_column(eps, col):
    j = int(np.argmax(col))
    base0 = float(np.median(col))
    amp0 = float(col[j] - base0)
    above = eps[col > base0 + 0.5 * amp0]
    width0 = max(float(above.max() - above.min()) / 2.355, np.min(np.diff(eps))) if above.size else np.ptp(eps) / 10

    def resid(x):
        amp, centre, log_w, base = x
        return amp * np.exp(-0.5 * ((eps - centre) / np.exp(log_w)) ** 2) + base - col

    res = lm.levenberg_marquardt(resid, [amp0, eps[j], np.log(width0), base0], names=["amp", "centre", "width", "base"])
    return res


def extract_peaks(fmap):
    """Fit a Gaussian plus constant to every field column of the map.

    Columns whose maximum does not exceed twice their median, or whose fit
    fails or lands outside the grid, are skipped and listed in the report.
    Each peak is ``(B, centre, centre_stderr)``.

    Raises
    ------
    ComputationError
        If every column is skipped.
    """
    fmap.validate()
    eps = fmap.epsilon_grid
    peaks, skipped = [], []
    for j, b in enumerate(fmap.b_grid):
        col = fmap.probability[:, j]
        median = float(np.median(col))
        if not col.max() > 2.0 * median or col.max() <= 0:
            skipped.append((float(b), "contrast below 2x median"))
            continue
        try:
            res = _fit_column(eps, col)
        except ComputationError as exc:
            skipped.append((float(b), f"fit failed: {exc}"))
            continue
        amp, centre = res.x[0], res.x[1]
        if not (amp > 0 and eps[0] <= centre <= eps[-1]):
            skipped.append((float(b), "peak outside grid"))
            continue
        peaks.append((float(b), float(centre), float(np.sqrt(res.covariance[1, 1]))))
    if not peaks:
        raise ComputationError("no funnel detected: every column skipped", code="funnel.no_funnel")
    return PeakReport(peaks=peaks, skipped=skipped)


def fit_funnel(peaks, g_mu_b=G_MU_B_DEFAULT):
    """Fit tunnel coupling, offset fields and asymptote to ridge positions.

    ``peaks`` is a :class:`PeakReport` or a sequence of ``(B, epsilon)``
    pairs (a third stderr column is used as weights when nonzero).
    """
    arr = np.asarray(peaks.peaks if isinstance(peaks, PeakReport) else peaks, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 5:
        raise ValidationError("need at least 5 peaks", code="funnel.too_few_peaks")
    b, e = arr[:, 0], arr[:, 1]
    sig = arr[:, 2] if arr.shape[1] > 2 and np.all(arr[:, 2] > 0) else np.ones_like(e)

    y0 = float(np.max(e))
    k = int(np.argmin(e))
    b0 = float(b[k])
    depth = max(y0 - float(e[k]), 1e-12)
    # half-depth points sit at |B - B0| = sqrt(3) * B_perp
    half = np.abs(b[e < y0 - depth / 2] - b0)
    b_perp = max(float(half.max()) / np.sqrt(3) if half.size else np.ptp(b) / 4, 1e-6)
    tc = np.sqrt(depth * g_mu_b * b_perp)

    def resid(x):
        tc_, b0_, bp_, y0_ = np.exp(x[0]), x[1], np.exp(x[2]), x[3]
        return (funnel_position(b, tc_, b0_, bp_, y0_, g_mu_b) - e) / sig

    res = lm.levenberg_marquardt(resid, [np.log(tc), b0, np.log(b_perp), y0], names=["tc", "b0", "b_perp", "y0"])
    tc_f, b0_f, bp_f, y0_f = float(np.exp(res.x[0])), float(res.x[1]), float(np.exp(res.x[2])), float(res.x[3])
    d = np.array([tc_f, 1.0, bp_f, 1.0])
    cov = d[:, None] * res.covariance * d[None, :]
    one_sided = bool(np.all(b <= b0_f) or np.all(b >= b0_f))
    if one_sided:
        warnings.warn("all peaks lie on one side of B0; B0 is poorly constrained", OneSidedFunnelWarning, stacklevel=2)
        cov = cov.copy()
        cov[1, :] *= 2.0
        cov[:, 1] *= 2.0
    return FunnelFit(tc=tc_f, b0=b0_f, b_perp=bp_f, y0=y0_f, g_mu_b=g_mu_b, covariance=cov, one_sided=one_sided)
