import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

import frozen
from conftest import narrow_params
from spinblockade.errors import ValidationError
from spinblockade.noise import (
    FilterSpec,
    NoiseSource,
    integrate_broadening,
    johnson_density,
    quadrature_sum,
    shot_density,
    total_budget,
)
from spinblockade.simulator import SweepSpec, simulate_shots

QUOTED_COMPONENTS = {"one_over_f": 3.65, "johnson": 4.3, "amplifier": 3.7, "shot": 3.6}


class TestDensities:
    def test_johnson_reference(self):
        assert johnson_density(2e4, 0.1) == pytest.approx(frozen.JOHNSON_20K_0P1, rel=1e-6)
        assert round(johnson_density(2e4, 0.1)) == 332

    @given(st.floats(1, 1e7), st.floats(1e-3, 300))
    def test_johnson_square_roots(self, r, t):
        base = johnson_density(r, t)
        assert johnson_density(r, 4 * t) == pytest.approx(2 * base, rel=1e-12)
        assert johnson_density(4 * r, t) == pytest.approx(2 * base, rel=1e-12)

    def test_johnson_invalid(self):
        with pytest.raises(ValidationError):
            johnson_density(0.0, 0.1)

    def test_shot_reference(self):
        # current that develops the quoted 253 pV/sqrt(Hz) across 20 kOhm
        i = (253e-12 / 2e4) ** 2 / (2 * 1.602176634e-19)
        assert i == pytest.approx(0.5e-9, rel=0.01)
        assert shot_density(i, 2e4) == pytest.approx(253.0, rel=1e-12)
        assert round(shot_density(0.5e-9, 2e4)) == 253

    def test_shot_zero_and_scaling(self):
        assert shot_density(0.0, 2e4) == 0.0
        assert shot_density(4e-9, 2e4) == pytest.approx(2 * shot_density(1e-9, 2e4), rel=1e-12)

    def test_shot_invalid(self):
        with pytest.raises(ValidationError):
            shot_density(-1e-9, 2e4)


class TestFilter:
    @pytest.mark.parametrize("tau", [1.0, 6.25, 12.5])
    def test_boxcar_enbw_against_quadrature(self, tau):
        filt = FilterSpec("boxcar", tau)
        periods = 2000
        value = sum(
            integrate.quad(filt.response_sq, k / filt.tau, (k + 1) / filt.tau)[0] for k in range(periods)
        )
        value += 1.0 / (2 * math.pi**2 * filt.tau**2 * periods / filt.tau)  # analytic tail
        assert filt.noise_bandwidth() == pytest.approx(value, rel=1e-4)

    @pytest.mark.parametrize("sep", [3.0, 6.25, 9.0])
    def test_differential_enbw_against_quadrature(self, sep):
        filt = FilterSpec("differential_boxcar", 6.25, separation=sep)
        edges = np.arange(0, 4000) / filt.tau / 2
        value = sum(integrate.quad(filt.response_sq, a, b)[0] for a, b in zip(edges[:-1], edges[1:]))
        value += 2.0 / (2 * math.pi**2 * filt.tau**2 * edges[-1])
        assert filt.noise_bandwidth() == pytest.approx(value, rel=1e-3)

    def test_enbw_override(self):
        assert FilterSpec(enbw=67e3).noise_bandwidth() == 67e3

    @pytest.mark.parametrize(
        "filt", [FilterSpec(integration_time=0.0), FilterSpec(shape="gaussian"), FilterSpec(enbw=-1.0)]
    )
    def test_invalid(self, filt):
        with pytest.raises(ValidationError):
            filt.noise_bandwidth()


def johnson(**kw):
    return NoiseSource("johnson", params={"t": 0.1, **kw})


class TestIntegration:
    def test_white_boxcar_closed_form(self):
        filt = FilterSpec("boxcar", 6.25)
        s = integrate_broadening(johnson(), filt, 2e4)
        expected = johnson_density(2e4, 0.1) / 2e4 * math.sqrt(1 / (2 * 6.25e-6))
        assert s == pytest.approx(expected, rel=1e-14)

    def test_johnson_component_at_tuned_bandwidth(self):
        s = integrate_broadening(johnson(), FilterSpec(enbw=67e3), 2e4)
        assert s == pytest.approx(4.3, abs=0.01)

    def test_white_density_override(self):
        src = NoiseSource("amplifier", voltage_density=300.0)
        assert integrate_broadening(src, FilterSpec(enbw=1e4), 2e4) == pytest.approx(300.0 / 2e4 * 100.0)

    def test_amplifier_needs_density(self):
        with pytest.raises(ValidationError):
            integrate_broadening(NoiseSource("amplifier"), FilterSpec(), 2e4)

    def test_one_over_f_differential_closed_form(self):
        # back-to-back boxcars: int |H|^2 df / f = 4 int sin^4 x / x^3 dx = 4 ln 2
        src = NoiseSource("one_over_f", gate_referred_density=5.0, params={"sensitivity": 0.2})
        s = integrate_broadening(src, FilterSpec(), 2e4)
        assert s == pytest.approx(1.0 * math.sqrt(4 * math.log(2)), rel=1e-5)

    def test_one_over_f_boxcar_with_cutoff(self):
        filt = FilterSpec("boxcar", 6.25, low_cutoff=1.0)
        src = NoiseSource("one_over_f", gate_referred_density=1.0, params={"sensitivity": 1.0})
        a = math.pi * filt.tau
        mp.mp.dps = 20
        f = lambda x: mp.sin(x) ** 2 / x**3
        ref = mp.quad(f, [a, 1, 10]) + mp.quadosc(f, [10, mp.inf], omega=2)
        assert integrate_broadening(src, filt, 2e4) ** 2 == pytest.approx(float(ref), rel=1e-6)

    def test_one_over_f_boxcar_needs_cutoff(self):
        src = NoiseSource("one_over_f", gate_referred_density=1.0, params={"sensitivity": 1.0})
        with pytest.raises(ValidationError, match="low_cutoff"):
            integrate_broadening(src, FilterSpec("boxcar"), 2e4)

    def test_one_over_f_needs_sensitivity(self):
        with pytest.raises(ValidationError, match="sensitivity"):
            integrate_broadening(NoiseSource("one_over_f", gate_referred_density=1.0), FilterSpec(), 2e4)

    @pytest.mark.parametrize(
        "src", [NoiseSource("thermal"), NoiseSource("amplifier", voltage_density=-1.0)]
    )
    def test_invalid_source(self, src):
        with pytest.raises(ValidationError):
            integrate_broadening(src, FilterSpec(), 2e4)


def quoted_sources():
    return [NoiseSource("amplifier", voltage_density=v * 2e4 / math.sqrt(67e3), name=k)
            for k, v in QUOTED_COMPONENTS.items()]


class TestBudget:
    def test_quoted_components(self):
        rep = total_budget(quoted_sources(), FilterSpec(enbw=67e3))
        for k, v in QUOTED_COMPONENTS.items():
            assert rep.per_source[k] == pytest.approx(v, rel=1e-12)
        assert rep.total == pytest.approx(frozen.QUADRATURE_QUOTED, rel=1e-12)
        assert round(rep.total, 2) == 7.65 and abs(rep.total - 7.7) < 0.06
        assert rep.total == pytest.approx(7.6, rel=0.01)

    def test_single_source(self):
        rep = total_budget([johnson()], FilterSpec())
        assert rep.total == rep.per_source["johnson"]

    def test_permutation_invariant(self):
        values = list(QUOTED_COMPONENTS.values())
        totals = {quadrature_sum(p) for p in itertools.permutations(values)}
        assert max(totals) - min(totals) < 1e-14

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=6), st.integers(0, 5), st.floats(0, 10))
    def test_monotone(self, values, i, bump):
        i %= len(values)
        bigger = list(values)
        bigger[i] += bump
        assert quadrature_sum(bigger) >= quadrature_sum(values)

    def test_quadrature_identity(self):
        rep = total_budget(quoted_sources(), FilterSpec(enbw=67e3))
        assert rep.total**2 == pytest.approx(sum(v**2 for v in rep.per_source.values()), rel=1e-14)

    def test_duplicate_labels_kept(self):
        rep = total_budget([johnson(), johnson()], FilterSpec())
        assert len(rep.per_source) == 2

    def test_empty(self):
        with pytest.raises(ValidationError):
            total_budget([], FilterSpec())

    def test_total_sets_histogram_width(self):
        rep = total_budget(quoted_sources(), FilterSpec(enbw=67e3))
        p = narrow_params(current_sigma=rep.total, p_triplet=0.0)
        shots = simulate_shots(SweepSpec([-2000.0], 100000, rng_seed=3), p)
        assert shots.current.std(ddof=1) == pytest.approx(rep.total, rel=0.03)
