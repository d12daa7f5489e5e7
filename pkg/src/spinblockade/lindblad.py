"""Steady state of a two-level charge system with thermalisation and charge dephasing.

Basis ordering is ``(|g>_11, |g>_20)``.  Density matrices are vectorised
row-major, so ``vec(A rho B) = kron(A, B.T) @ vec(rho)``.
"""

from dataclasses import dataclass

import numpy as np

from . import lm
from .core_model import energy_gap, ground_p20, thermal_tanh
from .errors import ComputationError, DegenerateFitError, ValidationError

HBAR_UEV_US = 0.6582
"""Reduced Planck constant in ueV*us."""

DEGENERACY_RTOL = 1e-8


@dataclass(frozen=True)
class LindbladParams:
    """Energies in ueV, rates in 1/us."""

    epsilon: float
    tc: float
    kbte: float
    gamma: float
    kappa: float = 0.0

    def validate(self):
        if not (self.tc > 0 and self.kbte > 0 and self.gamma > 0 and self.kappa >= 0):
            raise ValidationError(
                "need tc > 0, kbte > 0, gamma > 0, kappa >= 0", code="lindblad.invalid_params"
            )
        return self

    def at(self, epsilon):
        return LindbladParams(float(epsilon), self.tc, self.kbte, self.gamma, self.kappa)


def hamiltonian(epsilon, tc):
    """Charge-basis Hamiltonian with tunnel coupling ``tc`` and (2,0) energy ``-epsilon``."""
    return np.array([[0.0, tc], [tc, -epsilon]], dtype=complex)


def _eigenstates(epsilon, tc):
    """Ground ``|->`` and excited ``|+>`` eigenvectors of :func:`hamiltonian`."""
    _, vecs = np.linalg.eigh(hamiltonian(epsilon, tc))
    return vecs[:, 0], vecs[:, 1]


def _bra_ket_row(a, b):
    """Row vector ``w`` with ``w @ vec(rho) == <a|rho|b>``."""
    return np.kron(np.conj(a), b)


def _ketbra_vec(a, b):
    """``vec(|a><b|)``."""
    return np.outer(a, np.conj(b)).ravel()


def liouvillian(params):
    """4x4 generator ``L`` with ``d vec(rho)/dt = L @ vec(rho)``.

    The constant population-drag term of the thermal dissipator is
    multiplied by ``Tr(rho)`` so that the generator is linear; the two
    forms coincide on physical states.
    """
    params.validate()
    eps, tc = params.epsilon, params.tc
    H = hamiltonian(eps, tc) / HBAR_UEV_US
    eye = np.eye(2)
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))

    minus, plus = _eigenstates(eps, tc)
    imbalance = float(thermal_tanh(energy_gap(eps, tc) / (2.0 * params.kbte)))
    trace_row = _bra_ket_row(eye[0], eye[0]) + _bra_ket_row(eye[1], eye[1])
    polar = _bra_ket_row(plus, plus) - _bra_ket_row(minus, minus) + imbalance * trace_row
    z_vec = _ketbra_vec(plus, plus) - _ketbra_vec(minus, minus)
    L += -params.gamma * np.outer(z_vec, polar)
    L += -0.5 * params.gamma * (
        np.outer(_ketbra_vec(plus, minus), _bra_ket_row(plus, minus))
        + np.outer(_ketbra_vec(minus, plus), _bra_ket_row(minus, plus))
    )

    g11, g20 = eye[0], eye[1]
    L += -0.5 * params.kappa * (
        np.outer(_ketbra_vec(g11, g20), _bra_ket_row(g11, g20))
        + np.outer(_ketbra_vec(g20, g11), _bra_ket_row(g20, g11))
    )
    return L


def steady_state(params):
    """Trace-normalised null vector of the Liouvillian as a 2x2 density matrix.

    Raises
    ------
    ComputationError
        If the null space is not one-dimensional.
    """
    L = liouvillian(params)
    _, s, vh = np.linalg.svd(L)
    if s[-2] < DEGENERACY_RTOL * s[0]:
        raise ComputationError(
            f"degenerate steady state: second-smallest singular value {s[-2]:.3e} "
            f"(largest {s[0]:.3e})",
            code="lindblad.degenerate_steady_state",
        )
    rho = np.conj(vh[-1]).reshape(2, 2)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def p20_steady(params):
    return float(np.real(steady_state(params)[1, 1]))


def broadened_profile(grid, tc, kbte, gamma, kappa):
    """Steady-state (2,0) occupation along a detuning grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
        raise ValidationError("detuning grid must be monotone", code="lindblad.grid_not_monotone")
    base = LindbladParams(0.0, tc, kbte, gamma, kappa).validate()
    return np.array([p20_steady(base.at(e)) for e in grid])


def effective_tc(grid, profile, i_amp, kbte, tc0=None):
    """Tunnel coupling an experimenter would extract from ``profile``.

    Fits ``i_amp * (2 P - 1)`` with the single-branch current model at
    fixed ``kbte``; only the tunnel coupling is free.
    """
    grid = np.asarray(grid, dtype=float)
    profile = np.asarray(profile, dtype=float)
    if not (profile.min() < 0.25 and profile.max() > 0.75):
        raise ValidationError("profile does not span both asymptotes", code="lindblad.profile_truncated")
    target = i_amp * (2.0 * profile - 1.0)

    def resid(x):
        return i_amp * (2.0 * ground_p20(grid, np.exp(x[0]), kbte) - 1.0) - target

    if tc0 is None:
        # 10-90% width of the profile; for the zero-temperature shape it is 5.33 tc
        lo = np.interp(0.1, profile, grid) if np.all(np.diff(profile) >= 0) else grid[np.argmin(abs(profile - 0.1))]
        hi = np.interp(0.9, profile, grid) if np.all(np.diff(profile) >= 0) else grid[np.argmin(abs(profile - 0.9))]
        tc0 = max((hi - lo) / 5.33, 1e-6)
    try:
        res = lm.levenberg_marquardt(resid, [np.log(tc0)], names=["tc"])
    except DegenerateFitError as exc:
        raise ComputationError(
            "effective tc driven to zero: profile is sharper than the thermal limit at this kbte",
            code="lindblad.effective_tc_boundary",
        ) from exc
    return float(np.exp(res.x[0]))
