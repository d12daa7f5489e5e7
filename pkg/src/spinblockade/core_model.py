"""Analytic two-branch model of a spin-blockade detuning sweep.

Energies are in ueV, currents in pA.  Every function here is a pure,
vectorised numpy function of its arguments.
"""

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import ValidationError

K_B_UEV_PER_K = 86.173
"""Boltzmann constant in ueV/K."""

_TANH_CLAMP = 30.0

PARAM_UNITS = {
    "p_singlet": "1",
    "p_triplet": "1",
    "detuning_offset": "ueV",
    "delta_sb": "ueV",
    "tc_singlet": "ueV",
    "tc_triplet": "ueV",
    "current_offset": "pA",
    "current_slope": "pA/ueV",
    "current_amplitude": "pA",
    "electron_temp_energy": "ueV",
    "current_sigma": "pA",
}


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector of the two-branch intensity model.

    ``p_singlet + p_triplet`` is kept equal to one; the overall scale of a
    measured intensity map is treated as a separate normalisation.
    """

    p_singlet: float = 0.5
    p_triplet: float = 0.5
    detuning_offset: float = 0.0
    delta_sb: float = 0.0
    tc_singlet: float = 10.0
    tc_triplet: float = 10.0
    current_offset: float = 0.0
    current_slope: float = 0.0
    current_amplitude: float = 1.0
    electron_temp_energy: float = 8.6
    current_sigma: float = 1.0

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data):
        known = set(cls.names())
        unknown = set(data) - known
        if unknown:
            raise ValidationError(
                f"unknown model parameters: {sorted(unknown)}", code="core_model.unknown_parameter"
            )
        values = {k: float(v) for k, v in data.items()}
        if "p_triplet" in values and "p_singlet" not in values:
            values["p_singlet"] = 1.0 - values["p_triplet"]
        elif "p_singlet" in values and "p_triplet" not in values:
            values["p_triplet"] = 1.0 - values["p_singlet"]
        return cls(**values)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        if "p_triplet" in changes and "p_singlet" not in changes:
            changes["p_singlet"] = 1.0 - changes["p_triplet"]
        elif "p_singlet" in changes and "p_triplet" not in changes:
            changes["p_triplet"] = 1.0 - changes["p_singlet"]
        return replace(self, **changes)

    @property
    def electron_temp_kelvin(self):
        return self.electron_temp_energy / K_B_UEV_PER_K

    def validate(self, allow_noiseless=False):
        """Raise :class:`ValidationError` if any invariant is violated.

        ``allow_noiseless`` admits ``current_sigma == 0``, which only the
        shot simulator can use.
        """
        problems = []
        if self.p_singlet < 0 or self.p_triplet < 0:
            problems.append("populations must be non-negative")
        if abs(self.p_singlet + self.p_triplet - 1.0) > 1e-9:
            problems.append("p_singlet + p_triplet must equal 1")
        if not (self.tc_singlet > 0 and self.tc_triplet > 0):
            problems.append("tunnel couplings must be positive")
        if not self.electron_temp_energy > 0:
            problems.append("electron_temp_energy must be positive")
        if self.delta_sb < 0:
            problems.append("delta_sb must be non-negative")
        if allow_noiseless:
            if self.current_sigma < 0:
                problems.append("current_sigma must be non-negative")
        elif not self.current_sigma > 0:
            problems.append("current_sigma must be positive")
        if not all(np.isfinite(v) for v in asdict(self).values()):
            problems.append("all parameters must be finite")
        if problems:
            raise ValidationError("; ".join(problems), code="core_model.invalid_params")
        return self


@dataclass(frozen=True)
class BranchSeparation:
    eta_exact: float
    eta_linear: float
    lam: float


def thermal_tanh(x):
    """tanh with its argument clamped: values above 30 map to exactly 1."""
    x = np.asarray(x, dtype=float)
    return np.where(x > _TANH_CLAMP, 1.0, np.tanh(np.minimum(x, _TANH_CLAMP)))


def energy_gap(epsilon, tc):
    """Anticrossing gap ``sqrt(eps^2 + 4 tc^2)``."""
    epsilon = np.asarray(epsilon, dtype=float)
    return np.hypot(epsilon, 2.0 * np.asarray(tc, dtype=float))


def branch_current(epsilon, tc, i_amp, kbte):
    """Sensor current of one branch around its anticrossing.

    ``i_amp * (eps / E) * tanh(E / 2 kT)``; odd in ``epsilon`` and bounded
    by ``|i_amp|``.
    """
    # the floor only matters at eps = 0 with an underflowed tc, giving 0 not 0/0
    gap = np.maximum(energy_gap(epsilon, tc), np.finfo(float).tiny)
    return i_amp * (np.asarray(epsilon, dtype=float) / gap) * thermal_tanh(gap / (2.0 * kbte))


def ground_p20(epsilon, tc, kbte):
    """Thermal (2,0) occupation of the two-level charge system.

    Returns ``(1 + (eps/E) tanh(E / 2kT)) / 2``, the occupation whose
    affine image is :func:`branch_current`.
    """
    gap = np.maximum(energy_gap(epsilon, tc), np.finfo(float).tiny)
    return 0.5 * (1.0 + (np.asarray(epsilon, dtype=float) / gap) * thermal_tanh(gap / (2.0 * kbte)))


def branch_profile(epsilon, current, tc, params):
    """Gaussian current broadening around one branch (peak value 1)."""
    g = branch_current(epsilon, tc, params.current_amplitude, params.electron_temp_energy)
    resid = np.asarray(current, dtype=float) - g
    return np.exp(-0.5 * (resid / params.current_sigma) ** 2)


def intensity(epsilon, current, params):
    """Two-branch intensity at detuning ``epsilon`` and current ``current``.

    The triplet branch is the singlet branch translated by ``delta_sb`` in
    detuning, with its own tunnel coupling.
    """
    epsilon = np.asarray(epsilon, dtype=float)
    baseline = params.current_offset + params.current_slope * epsilon
    shifted = np.asarray(current, dtype=float) - baseline
    rel = epsilon - params.detuning_offset
    singlet = branch_profile(rel, shifted, params.tc_singlet, params)
    triplet = branch_profile(rel - params.delta_sb, shifted, params.tc_triplet, params)
    return params.p_singlet * singlet + params.p_triplet * triplet


def branch_mean_currents(epsilon, params, boundary_sign=1):
    """Mean sensor current of the singlet and triplet branches.

    For ``boundary_sign == -1`` the anticrossing argument is reflected, so
    the blockade window opens towards negative detuning.
    """
    epsilon = np.asarray(epsilon, dtype=float)
    baseline = params.current_offset + params.current_slope * epsilon
    rel = boundary_sign * (epsilon - params.detuning_offset)
    amp, kt = params.current_amplitude, params.electron_temp_energy
    mu_s = baseline + branch_current(rel, params.tc_singlet, amp, kt)
    mu_t = baseline + branch_current(rel - params.delta_sb, params.tc_triplet, amp, kt)
    return mu_s, mu_t


def branch_separation(params):
    """Current separation of the two histogram peaks at ``eps = delta/2``.

    ``eta_exact`` evaluates the singlet-branch curve directly;
    ``eta_linear`` is the small-splitting expansion ``lam * delta``.
    """
    amp, tc, kt, delta = (
        params.current_amplitude,
        params.tc_singlet,
        params.electron_temp_energy,
        params.delta_sb,
    )
    eta_exact = float(branch_current(delta / 2, tc, amp, kt) - branch_current(-delta / 2, tc, amp, kt))
    lam = float(amp / (2.0 * tc) * thermal_tanh(tc / kt))
    return BranchSeparation(eta_exact=eta_exact, eta_linear=lam * delta, lam=lam)


def swap_branches(params):
    """Relabel singlet and triplet branches; the intensity surface is unchanged.

    Used to restore ``delta_sb >= 0`` after an unconstrained fit.
    """
    return params.replace(
        p_singlet=params.p_triplet,
        p_triplet=params.p_singlet,
        tc_singlet=params.tc_triplet,
        tc_triplet=params.tc_singlet,
        detuning_offset=params.detuning_offset + params.delta_sb,
        delta_sb=-params.delta_sb,
    )
