"""Variational update rules.

Every function here is a pure map from current beliefs (plain arrays) to a
new belief.  The tracker in :mod:`radarvmp.tracker` decides the order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.linalg import solveh_banded
from scipy.optimize import minimize

from .beliefs import (AmplitudeBelief, GammaBelief, GaussianBelief, GaussianMessage,
                      MessageSource, Track, entropy_bernoulli, logit)
from .scenario import transition_matrices
from .signal import RadarNode, point_correlation, steering_factors, steering_vector

log = logging.getLogger(__name__)

PRECISION_FLOOR = 1e-12


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


# --------------------------------------------------------------------------
# state transition

def transition_precision(lam_a, dt: float) -> np.ndarray:
    """``G^-T diag(lam_a) G^-1`` with Gamma means floored away from zero."""
    lam = np.maximum(np.asarray(lam_a, dtype=float), PRECISION_FLOOR)
    _, G = transition_matrices(dt)
    g = np.diag(G)
    return np.diag(lam / g**2)


def transition_message(neighbor: GaussianBelief, lam_a, dt: float,
                       direction: Direction | str) -> GaussianMessage:
    """Message from the neighbouring time slot through the motion model.

    Only the neighbour's mean enters, as expected under the mean-field
    surrogate.  Forward: mean ``T m``, precision ``Q``; backward: mean
    ``T^-1 m``, precision ``T^T Q T`` where ``Q = G^-T Lambda G^-1``.
    """
    T, _ = transition_matrices(dt)
    Q = transition_precision(lam_a, dt)
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        return GaussianMessage(T @ neighbor.mean, np.linalg.inv(Q), MessageSource.FORWARD)
    prec = T.T @ Q @ T
    return GaussianMessage(np.linalg.solve(T, neighbor.mean), np.linalg.inv(prec),
                           MessageSource.BACKWARD)


def predict(mean, cov, lam_a, dt: float) -> tuple[np.ndarray, np.ndarray]:
    T, G = transition_matrices(dt)
    lam = np.maximum(np.asarray(lam_a, dtype=float), PRECISION_FLOOR)
    return T @ mean, T @ cov @ T.T + G @ np.diag(1.0 / lam) @ G.T


# --------------------------------------------------------------------------
# state smoothing over a window

class SmootherMode(str, Enum):
    JOINT = "joint"    # converged fixed point of the per-slot updates
    SWEEP = "sweep"    # one Gauss-Seidel pass over the slots per call


def _window_system(track: Track, start: int, lam_a, dt: float):
    """Block-tridiagonal precision of the slots ``start..last`` of a track."""
    T, _ = transition_matrices(dt)
    Q = transition_precision(lam_a, dt)
    TtQT = T.T @ Q @ T
    m = track.length - start
    diag = track.data_info[start:].copy()
    rhs = track.data_info_vec[start:].copy()
    if start == 0:
        p, h = track.prior.information()
        diag[0] += p
        rhs[0] += h
    else:
        diag[0] += Q
        rhs[0] += Q @ T @ track.means[start - 1]
    diag[1:] += Q
    diag[:-1] += TtQT
    off = -T.T @ Q      # block (i, i+1)
    return diag, off, rhs, Q, T, m


@lru_cache(maxsize=64)
def _band_index(m: int):
    a, b = np.triu_indices(4)
    i = np.arange(m)[:, None]
    d_rows = (4 * i + a).ravel()
    d_cols = (4 * i + b).ravel()
    aa, bb = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    j = np.arange(m - 1)[:, None]
    o_rows = (4 * j + aa.ravel()).ravel()
    o_cols = (4 * (j + 1) + bb.ravel()).ravel()
    return (a, b), d_rows, d_cols, o_rows, o_cols


def _banded(diag: np.ndarray, off: np.ndarray) -> np.ndarray:
    """Upper banded storage (bandwidth 7) of the symmetric block-tridiagonal matrix."""
    m = len(diag)
    u = 7
    (a, b), d_rows, d_cols, o_rows, o_cols = _band_index(m)
    ab = np.zeros((u + 1, 4 * m))
    ab[u + d_rows - d_cols, d_cols] = diag[:, a, b].ravel()
    if m > 1:
        ab[u + o_rows - o_cols, o_cols] = np.tile(off.ravel(), m - 1)
    return ab


def smooth_track(track: Track, lam_a, dt: float, window: int | None,
                 mode: SmootherMode | str = SmootherMode.JOINT) -> None:
    """Update the state beliefs of the most recent ``window`` slots in place.

    Each slot's belief is the product of its data messages, the birth prior
    (first slot only) and the transition messages from its neighbours'
    means.  ``JOINT`` solves for the fixed point of these coupled updates
    directly; ``SWEEP`` performs one pass of per-slot updates.  Covariances
    are the per-slot mean-field ones in both modes.  The marginal covariance
    of the last slot (needed for gating) is stored on the track.
    """
    start = 0 if window is None else max(0, track.length - window)
    diag, off, rhs, Q, T, m = _window_system(track, start, lam_a, dt)
    means = track.means
    if SmootherMode(mode) is SmootherMode.JOINT or m == 1:
        ab = _banded(diag, off)
        e_last = np.zeros((4 * m, 4))
        e_last[-4:] = np.eye(4)
        sol = solveh_banded(ab, np.column_stack([rhs.reshape(-1), e_last]), check_finite=False)
        means[start:] = sol[:, 0].reshape(m, 4)
        marginal = sol[-4:, 1:]
    else:
        TtQ = T.T @ Q
        QT = Q @ T
        for i in range(m):
            h = rhs[i].copy()
            if i > 0:
                h += QT @ means[start + i - 1]
            if i < m - 1:
                h += TtQ @ means[start + i + 1]
            means[start + i] = np.linalg.solve(diag[i], h)
        ab = _banded(diag, off)
        e_last = np.zeros((4 * m, 4))
        e_last[-4:] = np.eye(4)
        marginal = solveh_banded(ab, e_last, check_finite=False)[-4:]
    track.covs[start:] = np.linalg.inv(diag)
    track.marginal_cov = 0.5 * (marginal + marginal.T)


# --------------------------------------------------------------------------
# process noise

def process_noise_statistic(means: np.ndarray, covs: np.ndarray, dt: float) -> np.ndarray:
    """Diagonals of ``V_n = E[G^-1 (x_n - T x_{n-1})(...)^T G^-T]`` per transition.

    Slots are independent under the surrogate, so the second moment is
    ``r r^T + Sigma_n + T Sigma_{n-1} T^T`` with ``r`` the mean residual.
    Returns an array of shape (n_transitions, 4).
    """
    T, G = transition_matrices(dt)
    g = np.diag(G)
    if len(means) < 2:
        return np.zeros((0, 4))
    r = means[1:] - means[:-1] @ T.T
    pred_cov = np.einsum("ij,njk,lk->nil", T, covs[:-1], T)
    second = r**2 + np.diagonal(covs[1:], axis1=1, axis2=2) + np.diagonal(pred_cov, axis1=1, axis2=2)
    return second / g**2


def update_process_noise(track: Track, dt: float, zeta: float, chi: float) -> list[GammaBelief]:
    """Gamma posterior of the four process-noise precisions of one track."""
    v = process_noise_statistic(track.means, track.covs, dt)
    n_trans = len(v)
    track.process_shape = (n_trans + zeta) / 2.0
    track.process_rates = (chi + v.sum(axis=0)) / 2.0
    return track.process_noise


# --------------------------------------------------------------------------
# per-radar amplitude terms

@dataclass
class RadarTerms:
    """Sufficient statistics of one radar's snapshot for the amplitude/existence updates."""
    sz: np.ndarray      # (K,) S_k^H z
    gram: np.ndarray    # (K, K) E[S^H S] with the delta-method diagonal correction
    gamma: np.ndarray   # (K,) amplitude-precision means
    lam: float          # noise-precision mean


def steering_stack(radar: RadarNode, means: np.ndarray):
    """Steering vectors (K, N_Z) and Jacobians (K, N_Z, 4) at the given states."""
    K = len(means)
    S = np.zeros((K, radar.n_z), complex)
    J = np.zeros((K, radar.n_z, 4), complex)
    for k, phi in enumerate(means):
        sv = steering_vector(radar, phi)
        S[k] = sv.s
        J[k] = sv.gradient
    return S, J


def expected_gram(S: np.ndarray, J: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``E[S^H S]`` under Gaussian state beliefs, via the delta method.

    Off-diagonal entries use the mean steering vectors (independent
    beliefs); diagonal entries add ``tr(Sigma_k Re(J_k^H J_k))``.
    """
    gram = np.conj(S) @ S.T
    if len(S):
        jj = np.real(np.einsum("kni,knj->kij", np.conj(J), J))
        gram[np.diag_indices(len(S))] += np.einsum("kij,kji->k", covs, jj)
    return gram


def existence_matrix(xi: np.ndarray) -> np.ndarray:
    """``M_kk = xi_k``, ``M_kj = xi_k xi_j``: second moments of Bernoulli indicators."""
    xi = np.asarray(xi, dtype=float)
    M = xi[..., :, None] * xi[..., None, :]
    idx = np.arange(xi.shape[-1])
    M[..., idx, idx] = xi
    return M


def amplitude_system(terms: RadarTerms, xi: np.ndarray):
    """Precision ``M * lam * gram + diag(gamma)`` and ``b = xi * lam * S^H z``.

    ``xi`` may carry leading batch dimensions.
    """
    xi = np.asarray(xi, dtype=float)
    M = existence_matrix(xi)
    P = M * (terms.lam * terms.gram) + np.eye(len(terms.gamma)) * terms.gamma
    b = xi * (terms.lam * terms.sz)
    return P, b


def update_alpha(terms: RadarTerms, xi: np.ndarray) -> AmplitudeBelief:
    """Joint complex-Gaussian amplitude posterior at one radar."""
    K = len(terms.gamma)
    if K == 0:
        return AmplitudeBelief(np.zeros(0, complex), np.zeros((0, 0), complex))
    P, b = amplitude_system(terms, xi)
    P = 0.5 * (P + np.conj(P.T))
    try:
        chol = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ValueError("ill-conditioned amplitude update") from None
    y = np.linalg.solve(chol, b)
    mean = np.linalg.solve(np.conj(chol.T), y)
    return AmplitudeBelief(mean, P)


def update_gamma(alpha_mean, alpha_var, gamma_prev_mean, eta: float):
    """Gamma posterior of the amplitude precisions: shape ``eta*g_prev + 1``,
    rate ``eta + |alpha|^2 + var``.  Vectorised over tracks."""
    shape = eta * np.asarray(gamma_prev_mean, dtype=float) + 1.0
    rate = eta + np.abs(alpha_mean) ** 2 + np.asarray(alpha_var, dtype=float)
    return shape, rate


# --------------------------------------------------------------------------
# existence

def existence_prior_weight(xi_prev, ps: float, pb: float) -> np.ndarray:
    """Linear coefficient ``g`` of the existence probability in the objective."""
    return np.asarray(xi_prev, dtype=float) * (logit(ps) - logit(pb)) + logit(pb)


def xi_objective(xi, terms: list[RadarTerms], xi_prev, ps: float, pb: float) -> np.ndarray:
    """Existence objective; ``xi`` is (K,) or (B, K), returns scalar or (B,).

    ``sum_l [b^H P^-1 b - ln det P] + sum_k [H(xi_k) + xi_k g_k]``.
    """
    xi = np.asarray(xi, dtype=float)
    batch = xi.ndim == 2
    X = xi if batch else xi[None]
    total = np.zeros(len(X))
    for t in terms:
        P, b = amplitude_system(t, X)
        sol = np.linalg.solve(P, b[..., None])[..., 0]
        quad = np.real(np.einsum("bk,bk->b", np.conj(b), sol))
        _, logdet = np.linalg.slogdet(P)
        total += quad - logdet
    g = existence_prior_weight(xi_prev, ps, pb)
    total += entropy_bernoulli(X).sum(axis=1) + X @ g
    return total if batch else float(total[0])


def update_xi(xi0, terms: list[RadarTerms], xi_prev, ps: float, pb: float, *,
              sweeps: int = 2, grid: int = 101, refine: int = 41,
              fixed: np.ndarray | None = None) -> np.ndarray:
    """Coordinate-wise maximisation of :func:`xi_objective` over [0, 1]^K.

    Each coordinate is set to the best of a uniform grid and then refined
    on a finer grid between the neighbouring grid nodes, so the result
    dominates the coarse grid along every coordinate.  ``fixed`` masks
    coordinates that are held constant.
    """
    xi = np.clip(np.array(xi0, dtype=float), 0.0, 1.0)
    K = len(xi)
    if K == 0:
        return xi
    coarse = np.linspace(0.0, 1.0, grid)
    step = coarse[1] - coarse[0]
    for _ in range(sweeps):
        for k in range(K):
            if fixed is not None and fixed[k]:
                continue
            cand = np.repeat(xi[None], grid, axis=0)
            cand[:, k] = coarse
            vals = xi_objective(cand, terms, xi_prev, ps, pb)
            best = coarse[int(np.argmax(vals))]
            fine = np.linspace(max(best - step, 0.0), min(best + step, 1.0), refine)
            cand = np.repeat(xi[None], refine, axis=0)
            cand[:, k] = fine
            vals_f = xi_objective(cand, terms, xi_prev, ps, pb)
            xi[k] = fine[int(np.argmax(vals_f))]
    return xi


# --------------------------------------------------------------------------
# noise precision

def noise_statistic(z_energy: float, terms: RadarTerms, xi: np.ndarray,
                    amp: AmplitudeBelief) -> float:
    """Expected residual energy ``E||z - S (xi * alpha)||^2`` of one snapshot.

    ``||z||^2 + a^H (M * gram) a + tr(Cov_a (M * gram)) - 2 Re(z^H S (xi * a))``.
    """
    K = len(xi)
    if K == 0:
        return float(z_energy)
    A = existence_matrix(xi) * terms.gram
    a = amp.mean
    quad = np.real(np.conj(a) @ A @ a)
    trace = np.real(np.trace(amp.cov @ A))
    cross = 2.0 * np.real(np.sum(np.conj(terms.sz) * xi * a))
    return float(z_energy + quad + trace - cross)


# --------------------------------------------------------------------------
# data messages

def data_objective(radar: RadarNode, zres: np.ndarray, positions: np.ndarray,
                   alpha: complex, power: float) -> np.ndarray:
    """Normalised expected log-likelihood of one object's position.

    ``[2 Re(alpha * conj(S^H z~)) - power * ||S||^2] / (power * N_Z)`` where
    ``z~`` is the residual snapshot (matrix form) with the other objects'
    mean contributions removed and ``power = |alpha|^2 + var``.  Constant
    factors (existence, noise precision) do not move the maximiser.
    """
    v, h, visible = steering_factors(radar, positions)
    corr = np.einsum("pi,pi->p", np.conj(v) @ zres, np.conj(h))
    energy = np.where(visible, radar.n_z, 0.0)
    return (2.0 * np.real(alpha * np.conj(corr)) - power * energy) / (power * radar.n_z)


def fisher_information(radar: RadarNode, phi, xi: float, power: float, lam: float) -> np.ndarray:
    """``xi * lam * power * 2 Re(J^H J)`` at state ``phi`` (4x4)."""
    J = steering_vector(radar, phi).gradient
    return xi * lam * power * 2.0 * np.real(np.conj(J.T) @ J)


def compute_data_message(radar: RadarNode, zres: np.ndarray, alpha: complex, alpha_var: float,
                         xi: float, lam: float, center, halfwidth, *,
                         pitch: float = 0.4, max_grid: int = 61,
                         xatol: float = 1e-3) -> GaussianMessage:
    """MAP position of one object from one radar's residual snapshot.

    The search is confined to the box ``center +- halfwidth``: a grid at
    ``pitch`` spacing (when the box is wider than the pitch) followed by a
    bounded Nelder-Mead refinement.  The covariance is the inverse Fisher
    information at the MAP point; velocity dimensions carry no information.
    """
    power = abs(alpha) ** 2 + alpha_var
    if not (power > 0 and xi > 0 and lam > 0):
        raise ValueError("uninformative data message: zero amplitude, existence or precision")
    center = np.asarray(center, dtype=float)[:2]
    hw = np.maximum(np.asarray(halfwidth, dtype=float)[:2], 1e-6)
    lo, hi = center - hw, center + hw

    n_z = radar.n_z

    def negative(p):
        corr, visible = point_correlation(radar, zres, p[0], p[1])
        energy = n_z if visible else 0.0
        return -(2.0 * (alpha.real * corr.real + alpha.imag * corr.imag) - power * energy) / (power * n_z)

    start = center
    if np.max(hw) > pitch / 2:
        axes = [np.linspace(lo[a], hi[a], int(min(max_grid, math.ceil(2 * hw[a] / pitch) + 1)))
                for a in range(2)]
        gx, gy = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        vals = data_objective(radar, zres, pts, alpha, power)
        start = pts[int(np.argmax(vals))]
        if negative(center) < -vals.max():
            start = center
    scale = np.minimum(hw, pitch / 2)
    simplex = np.array([start, start + [scale[0], 0.0], start + [0.0, scale[1]]])
    simplex = np.clip(simplex, lo, hi)
    if np.linalg.matrix_rank(simplex[1:] - simplex[0]) < 2:
        simplex = np.array([start, start - [scale[0], 0.0], start - [0.0, scale[1]]])
        simplex = np.clip(simplex, lo, hi)
    res = minimize(negative, start, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                   options={"xatol": xatol, "fatol": 1e-10, "initial_simplex": simplex,
                            "maxiter": 400})
    pos = np.clip(res.x, lo, hi)
    phi = np.array([pos[0], pos[1], 0.0, 0.0])
    info = fisher_information(radar, phi, xi, power, lam)
    block = info[:2, :2]
    if not np.all(np.isfinite(block)) or np.linalg.eigvalsh(block).min() <= 0:
        raise ValueError("uninformative data message: singular Fisher information")
    return GaussianMessage.from_information(info, phi, MessageSource.DATA, radar.radar_id)


# --------------------------------------------------------------------------
# cardinality

def estimate_cardinality(tracks: list[Track], n: int | None = None, delta: float = 0.5):
    """Number of tracks with existence above ``delta`` and their position estimates."""
    out = []
    for t in tracks:
        if n is None:
            xi, mean = t.xi, t.means[-1]
        else:
            if not t.birth_index <= n <= t.last_index:
                continue
            i = t.slot(n)
            xi, mean = t.xi_history[i], t.means[i]
        if xi > delta:
            out.append(mean.copy())
    return len(out), np.array(out).reshape(-1, 4)
