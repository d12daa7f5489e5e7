import json
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from spinblockade.core_model import ModelParams  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

NARROW_SIGMA = 7.6
NARROW_LAMBDA_PER_AMP = np.tanh(40.5 / 8.6) / (2 * 40.5)
# amplitude giving sigma_I / eta = 0.328 at the fitted splitting
NARROW_AMP = -NARROW_SIGMA / (0.328 * NARROW_LAMBDA_PER_AMP * 28.1)
NARROW_GRID = np.linspace(-300.0, 330.0, 60)


def narrow_params(**changes):
    base = ModelParams(
        p_singlet=0.5,
        p_triplet=0.5,
        detuning_offset=0.0,
        delta_sb=28.1,
        tc_singlet=40.5,
        tc_triplet=40.5,
        current_offset=100.0,
        current_slope=0.02,
        current_amplitude=NARROW_AMP,
        electron_temp_energy=8.6,
        current_sigma=NARROW_SIGMA,
    )
    return base.replace(**changes)


def separated_params(**changes):
    base = ModelParams(
        p_singlet=0.5,
        p_triplet=0.5,
        detuning_offset=0.0,
        delta_sb=150.0,
        tc_singlet=10.0,
        tc_triplet=10.0,
        current_offset=100.0,
        current_slope=0.02,
        current_amplitude=-66.8,
        electron_temp_energy=8.6,
        current_sigma=7.6,
    )
    return base.replace(**changes)


SEPARATED_GRID = np.linspace(-150.0, 300.0, 61)


@pytest.fixture
def fig2d():
    return narrow_params()


def narrow_config(out, shots=500, seed=2024, **blocks):
    """CLI config for the narrow-splitting simulation."""
    p = narrow_params()
    cfg = {
        "schema_version": 1,
        "rng_seed": seed,
        "output_path": str(out),
        "model": {k: getattr(p, k) for k in ModelParams.names() if k != "p_singlet"},
        "sweep": {"detuning_grid": {"start": -300.0, "stop": 330.0, "num": 60}, "shots_per_point": shots},
        "histogram": {"current_bins": 60},
        "fit": {"kbte": 8.6},
        "uncertainty": {"confidence": 0.95},
    }
    cfg.update(blocks)
    return cfg


def write_config(path, cfg):
    path.write_text(json.dumps(cfg, indent=2))
    return path
