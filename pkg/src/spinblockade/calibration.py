"""Gate lever arms and the detuning voltage-to-energy scale factor."""

from dataclasses import dataclass

import numpy as np

from . import lm
from .core_model import K_B_UEV_PER_K
from .errors import ComputationError, ValidationError

K_B_EV_PER_K = K_B_UEV_PER_K * 1e-6


@dataclass
class TemperatureSweep:
    """Transition widths ``width`` (V) at mixing-chamber temperatures ``t_mc`` (K)."""

    t_mc: np.ndarray
    width: np.ndarray
    gate_label: str = ""

    def __post_init__(self):
        self.t_mc = np.asarray(self.t_mc, dtype=float)
        self.width = np.asarray(self.width, dtype=float)

    def validate(self):
        if self.t_mc.shape != self.width.shape:
            raise ValidationError("t_mc and width lengths differ", code="calibration.shape_mismatch")
        if self.t_mc.size < 4:
            raise ValidationError("need at least 4 temperature points", code="calibration.too_few_points")
        if np.any(self.t_mc < 0) or np.any(self.width <= 0):
            raise ValidationError("need t_mc >= 0 and width > 0", code="calibration.bad_points")
        return self


@dataclass
class LeverArmResult:
    alpha: float
    electron_temp: float
    residual: float
    alpha_stderr: float = float("nan")
    electron_temp_stderr: float = float("nan")

    def to_dict(self):
        return {
            "alpha_eV_per_V": self.alpha,
            "alpha_stderr": self.alpha_stderr,
            "electron_temp_K": self.electron_temp,
            "electron_temp_stderr": self.electron_temp_stderr,
            "residual_V_rms": self.residual,
        }


@dataclass(frozen=True)
class ScaleFactorInputs:
    alpha_p1: float
    alpha_p2: float
    g_p1_p2: float = 0.0
    g_p2_p1: float = 0.0
    sweep_ratio: float = 0.0

    def validate(self):
        if not (self.alpha_p1 > 0 and self.alpha_p2 > 0):
            raise ValidationError("lever arms must be positive", code="calibration.bad_alpha")
        if abs(self.g_p1_p2) >= 1 or abs(self.g_p2_p1) >= 1:
            raise ValidationError("cross-capacitances must satisfy |G| < 1", code="calibration.bad_cross_capacitance")
        return self


def transition_width(t_mc, alpha, electron_temp):
    """Charge-transition width in volts for a lever arm ``alpha`` (eV/V)."""
    return K_B_EV_PER_K * np.hypot(np.asarray(t_mc, dtype=float), electron_temp) / alpha


def fit_lever_arm(sweep):
    """Fit lever arm and electron temperature to a width-vs-temperature sweep."""
    sweep.validate()
    t, w = sweep.t_mc, sweep.width
    if np.ptp(w) <= 1e-12 * np.mean(w):
        raise ComputationError(
            "widths show no temperature dependence; lever arm is undetermined",
            code="calibration.degenerate_fit",
        )
    # widths squared are linear in T^2
    slope, intercept = np.polyfit(t**2, w**2, 1)
    if slope <= 0:
        raise ComputationError("width does not grow with temperature", code="calibration.degenerate_fit")
    alpha0 = K_B_EV_PER_K / np.sqrt(slope)
    te0 = np.sqrt(intercept / slope) if intercept > 0 else 0.1 * np.min(t[t > 0], initial=1.0)
    scale = np.mean(w)

    def resid(x):
        return (transition_width(t, np.exp(x[0]), x[1]) - w) / scale

    res = lm.levenberg_marquardt(resid, [np.log(alpha0), te0], names=["alpha", "electron_temp"])
    alpha = float(np.exp(res.x[0]))
    te = float(abs(res.x[1]))
    cov = res.covariance
    return LeverArmResult(
        alpha=alpha,
        electron_temp=te,
        residual=float(np.sqrt(np.mean((res.residuals * scale) ** 2))),
        alpha_stderr=float(alpha * np.sqrt(cov[0, 0])),
        electron_temp_stderr=float(np.sqrt(cov[1, 1])),
    )


def scale_factor(inputs):
    """Energy per volt of detuning bias, including gate cross-capacitance (eV/V)."""
    inputs.validate()
    a1, a2 = inputs.alpha_p1, inputs.alpha_p2
    value = abs(a1 - a2 * inputs.g_p2_p1 - inputs.sweep_ratio * (a2 - a1 * inputs.g_p1_p2))
    if value == 0:
        raise ComputationError(
            "degenerate detuning axis: sweep direction has no energy projection",
            code="calibration.degenerate_axis",
        )
    return value


def voltage_to_energy(delta_v, factor):
    """Convert a detuning voltage (V) to energy (ueV)."""
    if not factor > 0:
        raise ValidationError("scale factor must be positive", code="calibration.bad_factor")
    energy = np.asarray(delta_v, dtype=float) * factor * 1e6
    return float(energy) if energy.ndim == 0 else energy
