"""Monte Carlo single-shot readout of a detuning sweep.

Each detuning point draws from its own random stream derived from
``(rng_seed, point_index)``, so results do not depend on how the points
are scheduled across workers.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core_model import ModelParams, branch_mean_currents
from .errors import ValidationError

SINGLET = 0
TRIPLET = 1


@dataclass(frozen=True)
class SweepSpec:
    detuning_grid: tuple
    shots_per_point: int
    boundary_sign: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "detuning_grid", tuple(float(e) for e in self.detuning_grid))

    def validate(self):
        grid = np.asarray(self.detuning_grid)
        if grid.size == 0:
            raise ValidationError("detuning grid is empty", code="shot_simulator.empty_grid")
        if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
            raise ValidationError(
                "detuning grid must be strictly monotone", code="shot_simulator.grid_not_monotone"
            )
        if int(self.shots_per_point) < 1:
            raise ValidationError("shots_per_point must be >= 1", code="shot_simulator.no_shots")
        if self.boundary_sign not in (1, -1):
            raise ValidationError("boundary_sign must be +1 or -1", code="shot_simulator.bad_sign")
        return self


@dataclass(frozen=True)
class RelaxationSpec:
    """Triplet-to-singlet decay during the measurement window (times in us)."""

    t1: float = 100.0
    t_meas: float = 6.25
    enabled: bool = False

    def validate(self):
        if not (self.t1 > 0 and self.t_meas > 0):
            raise ValidationError("t1 and t_meas must be positive", code="shot_simulator.bad_relaxation")
        return self


@dataclass
class ShotMatrix:
    """Single-shot records, stored column-wise.

    ``true_branch`` (0 singlet, 1 triplet) is simulator ground truth and is
    never read by the fitting code.
    """

    detuning: np.ndarray
    current: np.ndarray
    true_branch: np.ndarray
    spec: SweepSpec
    params_used: ModelParams = None

    def __len__(self):
        return self.detuning.size

    @property
    def records(self):
        return list(zip(self.detuning.tolist(), self.current.tolist(), self.true_branch.tolist()))


@dataclass
class Histogram2D:
    """Counts on a (detuning, current) grid; ``counts[i, j]`` is detuning
    column ``i`` and current bin ``j``."""

    detuning_edges: np.ndarray
    current_edges: np.ndarray
    counts: np.ndarray

    @property
    def detuning_centers(self):
        e = self.detuning_edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def current_centers(self):
        e = self.current_edges
        return 0.5 * (e[1:] + e[:-1])

    @property
    def total(self):
        return int(self.counts.sum())

    def column_moments(self):
        """Per-column mean and standard deviation of the binned current."""
        c = self.current_centers
        n = self.counts.sum(axis=1).astype(float)
        n_safe = np.where(n > 0, n, 1.0)
        mean = (self.counts @ c) / n_safe
        var = (self.counts @ c**2) / n_safe - mean**2
        return mean, np.sqrt(np.maximum(var, 0.0))


def point_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(index)]))


def _simulate_point(epsilon, index, spec, params, relax):
    rng = point_rng(spec.rng_seed, index)
    n = int(spec.shots_per_point)
    mu_s, mu_t = branch_mean_currents(epsilon, params, spec.boundary_sign)
    branch = (rng.random(n) < params.p_triplet).astype(np.int8)
    noise = rng.standard_normal(n) * params.current_sigma
    mean = np.where(branch == TRIPLET, mu_t, mu_s)
    if relax.enabled:
        p_decay = 1.0 - np.exp(-relax.t_meas / relax.t1)
        decays = (branch == TRIPLET) & (rng.random(n) < p_decay)
        u = rng.random(n)
        mean = np.where(decays, u * mu_t + (1.0 - u) * mu_s, mean)
    return mean + noise, branch


def simulate_shots(spec, params, relax=None, workers=1):
    """Simulate ``shots_per_point`` single-shot currents at every grid point.

    Each shot is a triplet with probability ``p_triplet``; its current is
    Gaussian (width ``current_sigma``) around the branch mean.  With
    relaxation enabled a triplet decays within the window with probability
    ``1 - exp(-t_meas/t1)`` at a uniform fraction ``u`` of the window, and
    its mean becomes ``u * mu_T + (1 - u) * mu_S``.

    ``workers > 1`` spreads grid points over threads; output is identical
    to the serial run.
    """
    spec.validate()
    params.validate(allow_noiseless=True)
    relax = (relax or RelaxationSpec()).validate()
    grid = spec.detuning_grid
    jobs = [(eps, i, spec, params, relax) for i, eps in enumerate(grid)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _simulate_point(*a), jobs))
    else:
        results = [_simulate_point(*a) for a in jobs]
    n = int(spec.shots_per_point)
    detuning = np.repeat(np.asarray(grid, dtype=float), n)
    current = np.concatenate([r[0] for r in results])
    branch = np.concatenate([r[1] for r in results])
    return ShotMatrix(detuning=detuning, current=current, true_branch=branch, spec=spec, params_used=params)


def _column_sigma_estimate(shots):
    grid = np.asarray(shots.spec.detuning_grid)
    stds = []
    for eps in grid:
        sel = shots.current[shots.detuning == eps]
        if sel.size > 1:
            stds.append(sel.std())
    return float(np.median(stds)) if stds else 0.0


def histogram(shots, current_bins, pad=None):
    """Bin shots into a :class:`Histogram2D`.

    Detuning columns are centred on the sweep grid points.  Current edges
    span ``[min I - pad, max I + pad]`` in ``current_bins`` equal bins;
    ``pad`` defaults to the simulated ``current_sigma`` or, for loaded data,
    the median per-column standard deviation.
    """
    if len(shots) == 0:
        raise ValidationError("shot matrix is empty", code="shot_simulator.empty_shots")
    if int(current_bins) < 2:
        raise ValidationError("current_bins must be >= 2", code="shot_simulator.too_few_bins")
    grid = np.sort(np.asarray(shots.spec.detuning_grid, dtype=float))
    if grid.size == 1:
        det_edges = np.array([grid[0] - 0.5, grid[0] + 0.5])
    else:
        mids = 0.5 * (grid[1:] + grid[:-1])
        det_edges = np.concatenate([[2 * grid[0] - mids[0]], mids, [2 * grid[-1] - mids[-1]]])
    if pad is None:
        if shots.params_used is not None:
            pad = shots.params_used.current_sigma
        else:
            pad = _column_sigma_estimate(shots)
    lo, hi = float(shots.current.min()) - pad, float(shots.current.max()) + pad
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    cur_edges = np.linspace(lo, hi, int(current_bins) + 1)
    col = np.searchsorted(grid, shots.detuning)
    if not np.allclose(grid[np.clip(col, 0, grid.size - 1)], shots.detuning):
        raise ValidationError("shot detuning not on the sweep grid", code="shot_simulator.off_grid")
    row = np.clip(np.searchsorted(cur_edges, shots.current, side="right") - 1, 0, int(current_bins) - 1)
    counts = np.zeros((grid.size, int(current_bins)), dtype=np.int64)
    np.add.at(counts, (col, row), 1)
    return Histogram2D(detuning_edges=det_edges, current_edges=cur_edges, counts=counts)
