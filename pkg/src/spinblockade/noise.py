"""Current broadening of the readout chain.

White voltage noise across the shunt resistor (Johnson, shot, amplifier)
and gate-referred 1/f charge noise are integrated against the measurement
filter and combined in quadrature.  Densities are in pV/sqrt(Hz) (white)
or uV/sqrt(Hz) at 1 Hz (1/f); broadenings are in pA.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants, integrate

from .errors import ValidationError

KINDS = ("johnson", "shot", "amplifier", "one_over_f")
SHAPES = ("boxcar", "differential_boxcar")


def johnson_density(r, t):
    """Johnson voltage noise ``sqrt(4 k T R)`` in pV/sqrt(Hz)."""
    if not (r > 0 and t > 0):
        raise ValidationError("need r > 0 and t > 0", code="noise_budget.bad_johnson")
    return math.sqrt(4.0 * constants.k * t * r) * 1e12


def shot_density(i_dc, r):
    """Shot noise ``sqrt(2 e I)`` developed across ``r``, in pV/sqrt(Hz)."""
    if i_dc < 0:
        raise ValidationError("i_dc must be non-negative", code="noise_budget.bad_shot")
    return math.sqrt(2.0 * constants.e * i_dc) * r * 1e12


@dataclass
class NoiseSource:
    """One contribution to the current broadening.

    ``params`` may hold ``r`` (ohm) and ``t`` (K) for Johnson noise,
    ``i_dc`` (A) for shot noise, and ``sensitivity`` (pA/uV) for 1/f
    noise, which converts gate-referred voltage to sensor current.
    """

    kind: str
    voltage_density: float = None
    gate_referred_density: float = None
    params: dict = field(default_factory=dict)
    name: str = None

    def validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}", code="noise_budget.bad_kind")
        for v in (self.voltage_density, self.gate_referred_density):
            if v is not None and v < 0:
                raise ValidationError("densities must be non-negative", code="noise_budget.negative_density")
        if self.kind == "one_over_f":
            if self.gate_referred_density is None or "sensitivity" not in self.params:
                raise ValidationError(
                    "1/f source needs gate_referred_density and params['sensitivity'] (pA/uV)",
                    code="noise_budget.missing_sensitivity",
                )
        return self

    def density(self, shunt_r):
        """White voltage density in pV/sqrt(Hz)."""
        if self.voltage_density is not None:
            return float(self.voltage_density)
        if self.kind == "johnson":
            return johnson_density(self.params.get("r", shunt_r), self.params["t"])
        if self.kind == "shot":
            return shot_density(self.params["i_dc"], self.params.get("r", shunt_r))
        raise ValidationError(f"{self.kind} source needs voltage_density", code="noise_budget.missing_density")


@dataclass(frozen=True)
class FilterSpec:
    """Measurement filter.

    ``integration_time`` and ``separation`` are in us; ``separation`` is the
    start-to-start delay of the two segments of a differential measurement
    (default: back to back).  ``enbw`` (Hz) overrides the white-noise
    bandwidth derived from the shape.  ``low_cutoff`` (Hz) bounds the 1/f
    integral.
    """

    shape: str = "differential_boxcar"
    integration_time: float = 6.25
    low_cutoff: float = None
    separation: float = None
    enbw: float = None

    def validate(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown filter shape {self.shape!r}", code="noise_budget.bad_shape")
        if not self.integration_time > 0:
            raise ValidationError("integration_time must be positive", code="noise_budget.bad_filter")
        if self.enbw is not None and not self.enbw > 0:
            raise ValidationError("enbw must be positive", code="noise_budget.bad_filter")
        return self

    @property
    def tau(self):
        return self.integration_time * 1e-6

    @property
    def sep(self):
        return (self.separation if self.separation is not None else self.integration_time) * 1e-6

    def response_sq(self, f):
        """``|H(f)|^2`` of the filter (unit DC gain per segment)."""
        f = np.asarray(f, dtype=float)
        h = np.sinc(f * self.tau) ** 2
        if self.shape == "differential_boxcar":
            h = h * 4.0 * np.sin(np.pi * f * self.sep) ** 2
        return h

    def noise_bandwidth(self):
        """One-sided equivalent noise bandwidth for white noise (Hz)."""
        self.validate()
        if self.enbw is not None:
            return float(self.enbw)
        if self.shape == "boxcar":
            return 1.0 / (2.0 * self.tau)
        # 2 (1 - cos 2 pi f sep) sinc^2 integrates to (1 - tri(sep/tau)) / tau
        return (1.0 - max(0.0, 1.0 - self.sep / self.tau)) / self.tau


@dataclass
class BudgetReport:
    per_source: dict
    total: float

    def to_dict(self):
        return {"per_source_pA": dict(self.per_source), "total_pA": self.total}


def _one_over_f_integral(filt):
    """``int |H(f)|^2 / f df`` from the low cutoff to infinity."""
    f_hi = 50.0 / filt.tau
    if filt.low_cutoff is None:
        if filt.shape == "boxcar":
            raise ValidationError(
                "1/f integral diverges for a boxcar filter: set FilterSpec.low_cutoff (Hz)",
                code="noise_budget.missing_low_cutoff",
            )
        f_lo = 1e-9 / filt.tau
    else:
        f_lo = float(filt.low_cutoff)
    # integrate in log frequency, where 1/f noise is flat
    value, _ = integrate.quad(
        lambda u: filt.response_sq(math.exp(u)), math.log(f_lo), math.log(f_hi), limit=2000
    )
    # oscillation-averaged tail: <sinc^2> = 1/(2 (pi f tau)^2), <4 sin^2> = 2
    tail_coeff = 1.0 / (2.0 * (math.pi * filt.tau) ** 2)
    if filt.shape == "differential_boxcar":
        tail_coeff *= 2.0
    return value + tail_coeff / (2.0 * f_hi**2)


def integrate_broadening(source, filt, shunt_r):
    """RMS current broadening (pA) of one source through the filter."""
    source.validate()
    filt.validate()
    if source.kind == "one_over_f":
        s_i = source.params["sensitivity"] * source.gate_referred_density  # pA/sqrt(Hz) at 1 Hz
        return s_i * math.sqrt(_one_over_f_integral(filt))
    if not shunt_r > 0:
        raise ValidationError("shunt resistance must be positive", code="noise_budget.bad_shunt")
    return source.density(shunt_r) / shunt_r * math.sqrt(filt.noise_bandwidth())


def quadrature_sum(values):
    return math.sqrt(sum(float(v) ** 2 for v in values))


def total_budget(sources, filt, shunt_r=2e4):
    """Per-source broadenings and their quadrature total."""
    if not sources:
        raise ValidationError("need at least one noise source", code="noise_budget.no_sources")
    per_source = {}
    for i, src in enumerate(sources):
        label = src.name or src.kind
        if label in per_source:
            label = f"{label}_{i}"
        per_source[label] = integrate_broadening(src, filt, shunt_r)
    return BudgetReport(per_source=per_source, total=quadrature_sum(per_source.values()))
