"""MIMO radar signal model.

A radar's matched-filtered snapshot is a vector of ``N_Z = n_samples * n_tx *
n_rx`` complex samples.  Internally the vector is viewed as a matrix with one
row per virtual array element (receiver-major, ``e = j * n_tx + m``) and one
column per frequency sample, which makes every steering vector a rank-one
outer product ``v(theta) h(tau)^T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .config import DEFAULT_CONFIG, SPEED_OF_LIGHT, ModelConfig


@dataclass(frozen=True, eq=False)
class RadarNode:
    position: np.ndarray
    orientation: float = 0.0
    n_tx: int = 4
    n_rx: int = 4
    carrier_hz: float = 77e9
    bandwidth_hz: float = 96e6
    sample_rate_hz: float = 4e6
    pulse_duration_s: float = 32e-6
    n_samples: int = 128
    array_gain_db: float = 30.0
    tx_spacing_wavelengths: float = 0.5
    rx_spacing_wavelengths: float = 1.0
    radar_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        if min(self.n_tx, self.n_rx, self.n_samples) < 1:
            raise ValueError("n_tx, n_rx and n_samples must all be >= 1")

    @classmethod
    def from_config(cls, position, cfg: ModelConfig = DEFAULT_CONFIG, *,
                    orientation: float = 0.0, radar_id: int = 0) -> "RadarNode":
        return cls(position=np.asarray(position, dtype=float), orientation=orientation,
                   n_tx=cfg.n_tx_rx, n_rx=cfg.n_tx_rx, carrier_hz=cfg.carrier_hz,
                   bandwidth_hz=cfg.bandwidth_hz, sample_rate_hz=cfg.sample_rate_hz,
                   pulse_duration_s=cfg.pulse_duration_s, n_samples=cfg.n_samples,
                   array_gain_db=cfg.array_gain_db,
                   tx_spacing_wavelengths=cfg.tx_spacing_wavelengths,
                   rx_spacing_wavelengths=cfg.rx_spacing_wavelengths,
                   radar_id=radar_id)

    @property
    def n_virtual(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def n_z(self) -> int:
        return self.n_samples * self.n_tx * self.n_rx

    @property
    def r_max(self) -> float:
        slope = self.bandwidth_hz / self.pulse_duration_s
        return self.sample_rate_hz * SPEED_OF_LIGHT / (2.0 * slope)

    @property
    def tau_max(self) -> float:
        return 2.0 * self.r_max / SPEED_OF_LIGHT

    @cached_property
    def frequencies(self) -> np.ndarray:
        """Baseband frequency grid, symmetric about zero, spacing BW / N_s."""
        df = self.bandwidth_hz / self.n_samples
        return (np.arange(self.n_samples) - (self.n_samples - 1) / 2.0) * df

    @cached_property
    def element_positions(self) -> np.ndarray:
        """Virtual element positions in wavelengths, centred on the array midpoint."""
        tx = np.arange(self.n_tx) * self.tx_spacing_wavelengths
        rx = np.arange(self.n_rx) * self.rx_spacing_wavelengths
        pos = (rx[:, None] + tx[None, :]).ravel()  # e = j * n_tx + m
        return pos - pos.mean()

    @cached_property
    def rotation(self) -> np.ndarray:
        """Rows map global offsets to local (x', y'); y' is boresight."""
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        return np.array([[c, s], [-s, c]])


def facing(position, target) -> float:
    """Orientation that points a radar's boresight from ``position`` at ``target``."""
    u = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    return math.atan2(-u[0], u[1])


@dataclass
class Snapshot:
    radar_id: int
    time_index: int
    z: np.ndarray

    def matrix(self, radar: RadarNode) -> np.ndarray:
        if self.z.shape != (radar.n_z,):
            raise ValueError(f"snapshot length {self.z.shape} does not match N_Z={radar.n_z}")
        return self.z.reshape(radar.n_virtual, radar.n_samples)


@dataclass
class SteeringVector:
    s: np.ndarray          # (N_Z,)
    gradient: np.ndarray   # (N_Z, 4); velocity columns are zero
    visible: bool = True


def _local(radar: RadarNode, positions: np.ndarray):
    d = np.atleast_2d(positions)[:, :2] - radar.position
    loc = d @ radar.rotation.T
    r = np.hypot(loc[:, 0], loc[:, 1])
    return loc, r


def local_geometry(radar: RadarNode, position) -> tuple[float, float]:
    """Two-way delay and bearing of ``position`` seen from ``radar``.

    The bearing is measured from the local boresight (y') axis towards x'.
    """
    loc, r = _local(radar, np.asarray(position, dtype=float)[:2])
    if r[0] <= 1e-9:
        raise ValueError("degenerate geometry: position coincides with the radar")
    tau = 2.0 * r[0] / SPEED_OF_LIGHT
    theta = math.atan2(loc[0, 0], loc[0, 1])
    return tau, theta


def delay_response(radar: RadarNode, tau) -> np.ndarray:
    """Single-transmitter matched-filter spectrum h(tau); flat |U(f)|^2 = 1."""
    tau = np.asarray(tau, dtype=float)
    return np.exp(-2j * np.pi * tau[..., None] * radar.frequencies)


def matched_filter_spectrum(radar: RadarNode, tau: float) -> np.ndarray:
    """Per-transmitter stacked spectrum, length ``n_tx * n_samples``."""
    if not -1e-15 <= tau <= radar.tau_max * (1 + 1e-12):
        raise ValueError(f"delay out of range: tau={tau:.3e}s exceeds [0, {radar.tau_max:.3e}]s")
    return np.tile(delay_response(radar, tau), radar.n_tx)


def array_response(radar: RadarNode, sin_theta) -> np.ndarray:
    sin_theta = np.asarray(sin_theta, dtype=float)
    return np.exp(2j * np.pi * sin_theta[..., None] * radar.element_positions)


def steering_factors(radar: RadarNode, positions: np.ndarray):
    """Separable factors of the steering vectors of many positions.

    Returns ``(v, h, visible)`` with ``v`` of shape (P, n_virtual), ``h`` of
    shape (P, n_samples) and a boolean mask of positions inside the
    unambiguous range.  Factors of invisible positions are zero.
    """
    loc, r = _local(radar, positions)
    r_safe = np.maximum(r, 1e-9)
    visible = r <= radar.r_max
    v = array_response(radar, loc[:, 0] / r_safe)
    h = delay_response(radar, 2.0 * r / SPEED_OF_LIGHT)
    h[~visible] = 0.0
    return v, h, visible


def steering_vector(radar: RadarNode, phi) -> SteeringVector:
    """Steering vector S(phi) and its Jacobian with respect to the 4-state.

    Objects beyond the unambiguous range are suppressed by the receiver's
    anti-aliasing filter and return a zero vector with ``visible=False``.
    """
    phi = np.asarray(phi, dtype=float)
    rot = radar.rotation
    dx, dy = phi[0] - radar.position[0], phi[1] - radar.position[1]
    xl = rot[0, 0] * dx + rot[0, 1] * dy
    yl = rot[1, 0] * dx + rot[1, 1] * dy
    r = math.hypot(xl, yl)
    if r <= 1e-9:
        raise ValueError("degenerate geometry: position coincides with the radar")
    nz = radar.n_z
    if r > radar.r_max:
        return SteeringVector(np.zeros(nz, complex), np.zeros((nz, 4), complex), visible=False)
    sin_t = xl / r
    v = np.exp(2j * np.pi * sin_t * radar.element_positions)
    h = np.exp((-4j * np.pi * r / SPEED_OF_LIGHT) * radar.frequencies)
    s = np.outer(v, h).ravel()

    # d(sin theta)/d(local) and dr/d(local), mapped back to global axes
    dsin_dp = rot.T @ (np.array([yl * yl, -xl * yl]) / r**3)
    dtau_dp = rot.T @ (np.array([xl, yl]) / r) * (2.0 / SPEED_OF_LIGHT)
    dv_h = np.outer(2j * np.pi * radar.element_positions * v, h).ravel()   # d/d sin
    v_dh = np.outer(v, -2j * np.pi * radar.frequencies * h).ravel()        # d/d tau
    grad = np.zeros((nz, 4), complex)
    grad[:, 0] = dv_h * dsin_dp[0] + v_dh * dtau_dp[0]
    grad[:, 1] = dv_h * dsin_dp[1] + v_dh * dtau_dp[1]
    return SteeringVector(s, grad)


def point_steering(radar: RadarNode, x: float, y: float) -> np.ndarray | None:
    """``S(p)`` for a single position, ``None`` beyond the unambiguous range."""
    rot = radar.rotation
    dx, dy = x - radar.position[0], y - radar.position[1]
    xl = rot[0, 0] * dx + rot[0, 1] * dy
    yl = rot[1, 0] * dx + rot[1, 1] * dy
    r = math.hypot(xl, yl)
    if r > radar.r_max or r <= 1e-9:
        return None
    v = np.exp(2j * np.pi * (xl / r) * radar.element_positions)
    h = np.exp((-4j * np.pi * r / SPEED_OF_LIGHT) * radar.frequencies)
    return np.outer(v, h).ravel()


def point_correlation(radar: RadarNode, zmat: np.ndarray, x: float, y: float) -> tuple[complex, bool]:
    """``S(p)^H z`` for a single position; cheaper than :func:`correlate` for one point."""
    rot = radar.rotation
    dx, dy = x - radar.position[0], y - radar.position[1]
    xl = rot[0, 0] * dx + rot[0, 1] * dy
    yl = rot[1, 0] * dx + rot[1, 1] * dy
    r = math.hypot(xl, yl)
    if r > radar.r_max or r <= 1e-9:
        return 0j, False
    v = np.exp(-2j * np.pi * (xl / r) * radar.element_positions)
    h = np.exp((4j * np.pi * r / SPEED_OF_LIGHT) * radar.frequencies)
    return complex(v @ zmat @ h), True


def correlate(radar: RadarNode, zmat: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """``S(p)^H z`` for each row of ``positions`` (z given in matrix form)."""
    v, h, _ = steering_factors(radar, positions)
    return np.einsum("pi,pi->p", np.conj(v) @ zmat, np.conj(h))


def object_amplitude(radar: RadarNode, position, rcs: float,
                     cfg: ModelConfig = DEFAULT_CONFIG) -> float:
    """Magnitude of the complex weight of one object.

    Follows the sqrt(RCS) / range^2 path-loss law.  The scale (which absorbs
    transmit power and the array gain) is fixed so that a mean-RCS object at
    ``cfg.r_ref`` has single-sensor SNR ``cfg.snr_ref_db``.
    """
    tau, _ = local_geometry(radar, position)
    r = tau * SPEED_OF_LIGHT / 2.0
    return cfg.reference_amplitude * (cfg.r_ref / r) ** 2 * math.sqrt(rcs / cfg.mean_rcs)


def synthesize_snapshot(objects: Sequence, radar: RadarNode, lambda_z: float,
                        rng: np.random.Generator | None = None, *, time_index: int = 0,
                        noise: np.ndarray | None = None) -> Snapshot:
    """Superimposed snapshot ``z = sum_k alpha_k xi_k S(phi_k) + w``.

    ``objects`` holds ``(phi, alpha, exists)`` triples.  ``noise`` may be
    given explicitly (it is then used verbatim); otherwise it is drawn from
    ``rng`` as circular complex Gaussian with per-element variance
    ``1 / lambda_z``.  ``lambda_z = inf`` gives a noiseless snapshot.
    """
    if not lambda_z > 0:
        raise ValueError("lambda_z must be positive")
    z = np.zeros(radar.n_z, complex)
    for phi, alpha, exists in objects:
        if not exists:
            continue
        z += alpha * steering_vector(radar, phi).s
    if noise is None and math.isfinite(lambda_z):
        if rng is None:
            raise ValueError("an rng is required for a noisy snapshot")
        noise = complex_noise(rng, radar.n_z, 1.0 / lambda_z)
    if noise is not None:
        z = z + noise
    return Snapshot(radar.radar_id, time_index, z)


def complex_noise(rng: np.random.Generator, size, variance: float) -> np.ndarray:
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def single_sensor_snr(phi, alpha: complex, lambda_z: float, radar: RadarNode) -> float:
    """Single-sensor SNR in dB: ``|alpha|^2 |S|^2 / (N_Z / lambda_z)``."""
    if not lambda_z > 0:
        raise ValueError("lambda_z must be positive")
    s = steering_vector(radar, phi).s
    ratio = abs(alpha) ** 2 * np.vdot(s, s).real / (radar.n_z / lambda_z)
    return 10.0 * math.log10(ratio)
