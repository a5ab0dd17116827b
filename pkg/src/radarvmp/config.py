"""Model constants.

This module is the only place where radar, scenario and algorithm constants
are defined.  Everything else receives a :class:`ModelConfig` instance.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any

SPEED_OF_LIGHT = 3.0e8   # rounded value; gives the 1.5625 m / 200 m design figures exactly

# Radar hardware constants (name -> (default, unit)).
RADAR_CONSTANTS: dict[str, tuple[float, str]] = {
    "n_tx_rx": (4, "count"),
    "prf": (10.0, "Hz"),
    "mean_rcs": (0.05, "m^2"),
    "array_gain_db": (30.0, "dB"),
    "amplitude": (3.9, "V/m"),
    "r_max": (200.0, "m"),
    "carrier_hz": (77e9, "Hz"),
    "bandwidth_hz": (96e6, "Hz"),
    "pulse_duration_s": (32e-6, "s"),
    "sample_rate_hz": (4e6, "Hz"),
    "noise_variance": (1e-6, "V^2"),
}

# Tracker initialisation constants.
ALGORITHM_CONSTANTS: dict[str, tuple[float, str]] = {
    "ps": (0.92, "-"),
    "pb": (1e-3, "-"),
    "delta_minus": (0.01, "-"),
    "delta_plus": (0.5, "-"),
    "gamma_init": (10.0, "1/V^2"),
    "sigma_PO": (10.0, "m^2, (m/s)^2"),
    "eta": (0.5e-6, "-"),
}


@dataclass(frozen=True)
class ModelConfig:
    # radar hardware
    n_tx_rx: int = 4
    prf: float = 10.0
    mean_rcs: float = 0.05
    array_gain_db: float = 30.0
    amplitude: float = 3.9
    r_max: float = 200.0
    carrier_hz: float = 77e9
    bandwidth_hz: float = 96e6
    pulse_duration_s: float = 32e-6
    sample_rate_hz: float = 4e6
    noise_variance: float = 1e-6
    # tracker initialisation
    ps: float = 0.92
    pb: float = 1e-3
    delta_minus: float = 0.01
    delta_plus: float = 0.5
    gamma_init: float = 10.0
    sigma_PO: float = 10.0
    eta: float = 0.5e-6
    # priors and schedule
    zeta: float = 1.0
    chi: float = 1.0
    alpha_z: float = 1.0
    beta_z: float | None = None  # None -> noise_variance (prior mean 1/sigma_w^2)
    delta: float = 0.5
    n_iter_1: int = 3
    n_iter_2: int = 2
    smoothing_window: int | None = 50  # None -> full history
    gate_sigmas: float = 7.0
    literal_noise_shape: bool = False
    # amplitude calibration of the synthetic data
    snr_ref_db: float = -18.0
    r_ref: float = 110.0
    tx_spacing_wavelengths: float = 0.5
    rx_spacing_wavelengths: float = 1.0

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        positive = ["prf", "mean_rcs", "r_max", "carrier_hz", "bandwidth_hz",
                    "pulse_duration_s", "sample_rate_hz", "noise_variance",
                    "gamma_init", "sigma_PO", "eta", "zeta", "chi", "alpha_z",
                    "gate_sigmas", "r_ref"]
        for name in positive:
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive (got {getattr(self, name)})")
        for name in ("ps", "pb"):
            v = getattr(self, name)
            if not 0 < v < 1:
                out.append(f"{name} must lie in (0, 1) (got {v})")
        for name in ("delta_minus", "delta_plus", "delta"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                out.append(f"{name} must lie in [0, 1] (got {v})")
        if self.n_tx_rx < 1:
            out.append("n_tx_rx must be >= 1")
        if self.n_iter_1 < 1 or self.n_iter_2 < 0:
            out.append("iteration counts must be n_iter_1 >= 1, n_iter_2 >= 0")
        if self.beta_z is not None and self.beta_z <= 0:
            out.append("beta_z must be positive")
        if self.smoothing_window is not None and self.smoothing_window < 2:
            out.append("smoothing_window must be >= 2 or null")
        if self.n_samples < 1:
            out.append("sample_rate_hz * pulse_duration_s must give >= 1 sample")
        return out

    # derived quantities

    @property
    def dt(self) -> float:
        return 1.0 / self.prf

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.pulse_duration_s))

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def max_unambiguous_range(self) -> float:
        """Range at which the FMCW beat frequency reaches the sample rate."""
        slope = self.bandwidth_hz / self.pulse_duration_s
        return self.sample_rate_hz * SPEED_OF_LIGHT / (2.0 * slope)

    @property
    def noise_prior_rate(self) -> float:
        return self.noise_variance if self.beta_z is None else self.beta_z

    @property
    def reference_amplitude(self) -> float:
        """|alpha| of a mean-RCS object at ``r_ref`` giving ``snr_ref_db``."""
        return math.sqrt(self.noise_variance * 10.0 ** (self.snr_ref_db / 10.0))

    def replace(self, **overrides: Any) -> "ModelConfig":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise KeyError(f"unknown constant(s): {sorted(unknown)}")
        return dataclasses.replace(self, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        return cls().replace(**data)


DEFAULT_CONFIG = ModelConfig()


def constant_names() -> list[str]:
    return [f.name for f in fields(ModelConfig)]
