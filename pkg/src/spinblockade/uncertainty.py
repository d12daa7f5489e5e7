"""Finite-statistics confidence intervals for the singlet-triplet splitting.

The splitting is inferred from the extra width a two-population mixture
adds to a single current histogram.  The functions here turn the
sampling error of that width into intervals on the peak separation and on
the splitting, and combine the remaining fractional errors in quadrature.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core_model import branch_separation
from .errors import ComputationError, ValidationError

# rational approximation to the inverse standard normal CDF
# (relative error < 1.2e-9), refined below with one Newton step on erf/erfc.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _upper_normal_quantile(q):
    """Standard normal quantile of ``1 - q`` for ``0 < q <= 0.5``."""
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        den = (((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0
        return -num / den
    p = 1.0 - q
    u = p - 0.5
    r = u * u
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def erfinv(x):
    """Inverse error function on the open interval (-1, 1)."""
    x = float(x)
    if not -1.0 < x < 1.0:
        raise ValidationError("erfinv argument must lie in (-1, 1)", code="uncertainty.erfinv_domain")
    if x == 0.0:
        return 0.0
    sign = 1.0 if x > 0 else -1.0
    ax = abs(x)
    tail = 1.0 - ax  # exact for ax >= 0.5
    y = _upper_normal_quantile(0.5 * tail) / math.sqrt(2.0)
    slope = 2.0 / math.sqrt(math.pi) * math.exp(-y * y)
    if ax >= 0.5:
        y += (math.erfc(y) - tail) / slope
    else:
        y -= (math.erf(y) - ax) / slope
    return sign * y


@dataclass(frozen=True)
class ConfidenceSpec:
    confidence: float = 0.95
    shots: int = 500

    def validate(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValidationError("confidence must lie in (0, 1)", code="uncertainty.bad_confidence")
        if int(self.shots) < 2:
            raise ValidationError("need at least 2 shots", code="uncertainty.too_few_shots")
        return self

    @property
    def z(self):
        """``erfinv(C) / sqrt(N)``."""
        return erfinv(self.confidence) / math.sqrt(self.shots)


@dataclass
class UncertaintyReport:
    delta_sb: float
    delta_interval: float
    fractional_components: dict
    sigma_total: float
    eta: float
    confidence: float
    shots: int
    asymmetric_interval: tuple = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "delta_sb_ueV": self.delta_sb,
            "delta_interval_ueV": self.delta_interval,
            "ci_low_ueV": self.delta_sb - self.delta_interval,
            "ci_high_ueV": self.delta_sb + self.delta_interval,
            "fractional_components": dict(self.fractional_components),
            "sigma_total_pA": self.sigma_total,
            "eta_pA": self.eta,
            "confidence": self.confidence,
            "shots": self.shots,
            "asymmetric_interval_ueV": list(self.asymmetric_interval) if self.asymmetric_interval else None,
            "notes": list(self.notes),
        }


def total_variance(sigma_i, eta, p_s, p_t):
    """Variance of the combined two-population current histogram."""
    return sigma_i**2 + p_s * p_t * eta**2


def eta_from_total_variance(sigma_tot_sq, sigma_i, p_s, p_t):
    """Peak separation implied by a measured total variance.

    Inverts :func:`total_variance`; negative excess variance maps to 0.
    """
    excess = np.maximum(np.asarray(sigma_tot_sq, dtype=float) - sigma_i**2, 0.0)
    return np.sqrt(excess / (p_s * p_t))


def variance_confidence(sigma_tot_sq, spec):
    """Bounds ``sigma_tot^2 (1 -/+ 2 erfinv(C)/sqrt(N))`` on the total variance."""
    spec.validate()
    half = 2.0 * spec.z
    if half >= 1.0:
        raise ComputationError(
            f"interval unbounded: half-width {half:.3f} >= 1 at N={spec.shots}",
            code="uncertainty.interval_unbounded",
        )
    return sigma_tot_sq * (1.0 - half), sigma_tot_sq * (1.0 + half)


def _contrast_ratio(eta, sigma_i, p_s, p_t):
    if eta == 0 or p_s * p_t == 0:
        raise ComputationError("zero contrast between branches", code="uncertainty.zero_contrast")
    return sigma_i**2 / (eta**2 * p_s * p_t)


def eta_confidence(eta, sigma_i, p_s, p_t, spec):
    """Fractional bounds on an estimated peak separation.

    Returns ``(low, high)`` for ``eta_est / eta``.
    """
    spec.validate()
    if not eta > 0:
        raise ValidationError("eta must be positive", code="uncertainty.bad_eta")
    width = 2.0 * spec.z * (1.0 + _contrast_ratio(eta, sigma_i, p_s, p_t))
    if width >= 1.0:
        raise ComputationError(
            f"unresolvable at this N: relative variance spread {width:.3f} >= 1",
            code="uncertainty.unresolvable",
        )
    return math.sqrt(1.0 - width), math.sqrt(1.0 + width)


def delta_sb_interval(delta_sb, model, spec):
    """Symmetric first-order confidence half-width on the splitting.

    ``delta * erfinv(C)/sqrt(N) * (1 + sigma^2 / (eta^2 P_S P_T))`` with
    ``eta`` the linearised peak separation of ``model`` at ``delta``.
    """
    spec.validate()
    lam = branch_separation(model).lam
    eta = lam * delta_sb
    ratio = _contrast_ratio(eta, model.current_sigma, model.p_singlet, model.p_triplet)
    return abs(delta_sb) * spec.z * (1.0 + ratio)


def propagate_errors(model, spec, d_eta=None, d_lambda=0.0, d_p_singlet=0.0, d_sigma=0.0, delta_sb=None):
    """Quadrature combination of fractional errors on the splitting.

    ``d_eta`` overrides the shot-noise term (default: computed from
    ``spec``); the population and width terms are added on top of it.
    """
    spec.validate()
    for name, v in (("d_lambda", d_lambda), ("d_p_singlet", d_p_singlet), ("d_sigma", d_sigma)):
        if v < 0:
            raise ValidationError(f"{name} must be non-negative", code="uncertainty.negative_delta")
    delta = model.delta_sb if delta_sb is None else delta_sb
    lam = branch_separation(model).lam
    eta = lam * delta
    p_s, p_t, sigma = model.p_singlet, model.p_triplet, model.current_sigma
    ratio = _contrast_ratio(eta, sigma, p_s, p_t)
    shot = spec.z * (1.0 + ratio) if d_eta is None else float(d_eta)
    population = abs(p_s - p_t) / (2.0 * p_t) * d_p_singlet
    width = ratio * d_sigma
    d_eta_total = math.sqrt(shot**2 + population**2 + width**2)
    frac = math.sqrt(d_eta_total**2 + d_lambda**2)

    report = UncertaintyReport(
        delta_sb=delta,
        delta_interval=abs(delta) * frac,
        fractional_components={
            "eta_shot_noise": shot,
            "eta_population": population,
            "eta_sigma": width,
            "lambda": float(d_lambda),
            "delta_sb": frac,
        },
        sigma_total=math.sqrt(total_variance(sigma, eta, p_s, p_t)),
        eta=eta,
        confidence=spec.confidence,
        shots=int(spec.shots),
    )
    x = 2.0 * spec.z * (1.0 + ratio)
    if x < 1.0:
        low, high = abs(delta) * math.sqrt(1.0 - x), abs(delta) * math.sqrt(1.0 + x)
        sym = abs(delta) * spec.z * (1.0 + ratio)
        if max(abs((abs(delta) - low) - sym), abs((high - abs(delta)) - sym)) > 0.05 * sym:
            report.asymmetric_interval = (low, high)
    else:
        report.notes.append("asymmetric interval undefined: variance spread exceeds 1")
    return report
