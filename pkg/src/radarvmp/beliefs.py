"""Belief containers for the variational tracker."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

STATE_DIM = 4


class MessageSource(str, Enum):
    DATA = "data"
    FORWARD = "forward"
    BACKWARD = "backward"
    PRIOR = "prior"


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    def is_valid(self, tol: float = 1e-10) -> bool:
        if not np.all(np.isfinite(self.cov)) or not np.allclose(self.cov, self.cov.T, atol=tol):
            return False
        return bool(np.linalg.eigvalsh(self.cov).min() >= -tol)


@dataclass
class GaussianMessage:
    """Gaussian message over the 4-state.

    Dimensions a message carries no information about have infinite
    variance (and zero cross-covariance).  Data messages use this for the
    velocity components, which do not enter the measurement model.
    """
    mean: np.ndarray
    cov: np.ndarray
    source: MessageSource = MessageSource.DATA
    radar_id: int | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(STATE_DIM)
        self.cov = np.asarray(self.cov, dtype=float).reshape(STATE_DIM, STATE_DIM)
        self.source = MessageSource(self.source)

    @classmethod
    def from_information(cls, info: np.ndarray, mean, source=MessageSource.DATA,
                         radar_id: int | None = None) -> "GaussianMessage":
        """Build from a precision matrix that may be zero on some dimensions."""
        info = np.asarray(info, dtype=float)
        informed = np.abs(info).sum(axis=0) > 0
        cov = np.zeros((STATE_DIM, STATE_DIM))
        sub = info[np.ix_(informed, informed)]
        cov[np.ix_(informed, informed)] = _invert(sub)
        cov[~informed, :] = 0.0
        cov[:, ~informed] = 0.0
        cov[~informed, ~informed] = np.inf
        return cls(mean, cov, source, radar_id)

    @property
    def informed(self) -> np.ndarray:
        return np.isfinite(np.diag(self.cov))

    def information(self) -> tuple[np.ndarray, np.ndarray]:
        """(precision, precision @ mean) with zero rows for uninformed dims."""
        idx = self.informed
        if not idx.any():
            raise ValueError("degenerate message: no informed dimension")
        sub = self.cov[np.ix_(idx, idx)]
        if np.any(~np.isfinite(sub)):
            raise ValueError("degenerate message: non-finite covariance")
        info = np.zeros((STATE_DIM, STATE_DIM))
        info[np.ix_(idx, idx)] = _invert(sub)
        return info, info @ np.where(idx, self.mean, 0.0)


def _invert(mat: np.ndarray) -> np.ndarray:
    mat = 0.5 * (mat + mat.T)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ValueError("degenerate message: covariance is not positive definite") from None
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def fuse_state_marginal(messages: Iterable[GaussianMessage]) -> GaussianBelief:
    """Product of Gaussian messages: precisions add, means are precision-weighted."""
    messages = list(messages)
    if not messages:
        raise ValueError("degenerate message: nothing to fuse")
    info = np.zeros((STATE_DIM, STATE_DIM))
    vec = np.zeros(STATE_DIM)
    for msg in messages:
        p, h = msg.information()
        info += p
        vec += h
    cov = _invert(info)
    return GaussianBelief(cov @ vec, cov)


@dataclass
class GammaBelief:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"Gamma parameters must be positive (shape={self.shape}, rate={self.rate})")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    def to_dict(self) -> dict:
        return {"shape": self.shape, "rate": self.rate, "mean": self.mean}


@dataclass
class AmplitudeBelief:
    """Joint complex Gaussian over the amplitudes of all tracks at one radar."""
    mean: np.ndarray        # (K,) complex
    precision: np.ndarray   # (K, K) Hermitian

    @property
    def cov(self) -> np.ndarray:
        return np.linalg.inv(self.precision)

    @property
    def variances(self) -> np.ndarray:
        return np.real(np.diag(self.cov)) if len(self.mean) else np.zeros(0)


@dataclass
class ExistenceBelief:
    mean: float

    def __post_init__(self):
        if not 0.0 <= self.mean <= 1.0:
            raise ValueError("existence probability must lie in [0, 1]")


class Track:
    """Per-object history of state beliefs, data messages and existence.

    Arrays grow with the track; slot ``i`` holds time index
    ``birth_index + i``.
    """

    def __init__(self, track_id: int, birth_index: int, prior: GaussianMessage,
                 radar_ids: Iterable[int], gamma_init: float, zeta: float, chi: float):
        self.track_id = track_id
        self.birth_index = birth_index
        self.prior = prior
        self._cap = 16
        self._means = np.zeros((self._cap, 4))
        self._covs = np.zeros((self._cap, 4, 4))
        self._info = np.zeros((self._cap, 4, 4))
        self._info_vec = np.zeros((self._cap, 4))
        self._xi = np.zeros(self._cap)
        self.length = 0
        self.archive: dict[int, list[GaussianMessage]] = {}
        self.gamma = {l: GammaBelief(1.0, 1.0 / gamma_init) for l in radar_ids}
        self.process_shape = zeta / 2.0
        self.process_rates = np.full(4, chi / 2.0)
        self.predictive_cov = np.array(prior.cov)   # used to size the data-message gate
        self.marginal_cov = np.array(prior.cov)

    # storage

    def _grow(self):
        self._cap *= 2
        for name in ("_means", "_covs", "_info", "_info_vec", "_xi"):
            old = getattr(self, name)
            new = np.zeros((self._cap,) + old.shape[1:])
            new[: self.length] = old[: self.length]
            setattr(self, name, new)

    def append_slot(self, mean, cov, xi: float):
        if self.length == self._cap:
            self._grow()
        i = self.length
        self._means[i] = mean
        self._covs[i] = cov
        self._info[i] = 0.0
        self._info_vec[i] = 0.0
        self._xi[i] = xi
        self.length += 1

    @property
    def last_index(self) -> int:
        return self.birth_index + self.length - 1

    def slot(self, n: int) -> int:
        i = n - self.birth_index
        if not 0 <= i < self.length:
            raise IndexError(f"track {self.track_id} has no slot for n={n}")
        return i

    @property
    def means(self) -> np.ndarray:
        return self._means[: self.length]

    @property
    def covs(self) -> np.ndarray:
        return self._covs[: self.length]

    @property
    def data_info(self) -> np.ndarray:
        return self._info[: self.length]

    @property
    def data_info_vec(self) -> np.ndarray:
        return self._info_vec[: self.length]

    @property
    def xi_history(self) -> np.ndarray:
        return self._xi[: self.length]

    @property
    def xi(self) -> float:
        return float(self._xi[self.length - 1])

    @xi.setter
    def xi(self, value: float):
        self._xi[self.length - 1] = value

    @property
    def xi_prev(self) -> float:
        return float(self._xi[self.length - 2]) if self.length > 1 else 0.0

    def belief(self, n: int | None = None) -> GaussianBelief:
        i = self.length - 1 if n is None else self.slot(n)
        return GaussianBelief(self._means[i].copy(), self._covs[i].copy())

    def set_data_messages(self, n: int, messages: list[GaussianMessage]):
        i = self.slot(n)
        self.archive[n] = list(messages)
        self._info[i] = 0.0
        self._info_vec[i] = 0.0
        for msg in messages:
            p, h = msg.information()
            self._info[i] += p
            self._info_vec[i] += h

    @property
    def process_noise(self) -> list[GammaBelief]:
        return [GammaBelief(self.process_shape, r) for r in self.process_rates]

    @property
    def process_precision(self) -> np.ndarray:
        return self.process_shape / self.process_rates

    def gamma_means(self) -> dict[int, float]:
        return {l: g.mean for l, g in self.gamma.items()}


@dataclass
class NoiseState:
    """Running statistic for one radar's noise-precision posterior.

    The default shape counts every complex sample seen
    (``prior_shape + N_Z * snapshots``).  ``literal_shape`` instead uses
    ``prior_shape + n_samples + snapshots``, which under-counts the degrees
    of freedom by orders of magnitude and is kept only for comparison.
    """
    prior_shape: float
    prior_rate: float
    n_z: int
    n_samples: int
    literal_shape: bool = False
    residual_energy: float = 0.0   # sum of per-snapshot W terms
    n_snapshots: int = 0

    @property
    def belief(self) -> GammaBelief:
        if self.literal_shape and self.n_snapshots:
            shape = self.prior_shape + self.n_samples + self.n_snapshots
        else:
            shape = self.prior_shape + self.n_z * self.n_snapshots
        return GammaBelief(shape, self.prior_rate + self.residual_energy)

    @property
    def mean(self) -> float:
        return self.belief.mean

    def add(self, w: float):
        self.residual_energy += float(w)
        self.n_snapshots += 1


@dataclass
class TrackStore:
    tracks: list[Track] = field(default_factory=list)
    amplitudes: dict[int, AmplitudeBelief] = field(default_factory=dict)
    noise: dict[int, NoiseState] = field(default_factory=dict)
    time_index: int = -1
    next_id: int = 0

    @property
    def cardinality(self) -> int:
        return len(self.tracks)

    def summary(self) -> dict:
        return {
            "time_index": self.time_index,
            "tracks": [{
                "id": t.track_id,
                "birth_index": t.birth_index,
                "mean": t.means[-1].tolist(),
                "cov": t.covs[-1].tolist(),
                "xi": t.xi,
                "gamma": {str(l): g.mean for l, g in t.gamma.items()},
                "process_precision": t.process_precision.tolist(),
            } for t in self.tracks],
            "lambda_z": {str(l): s.mean for l, s in self.noise.items()},
        }


def entropy_bernoulli(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(p < 1, (1 - p) * np.log1p(-p), 0.0))
    return h


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))
