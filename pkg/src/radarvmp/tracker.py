"""Multi-radar variational tracker: per-step schedule and object initiation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import minimize

from .beliefs import (AmplitudeBelief, GaussianMessage, MessageSource, NoiseState, Track,
                      TrackStore)
from .config import DEFAULT_CONFIG, SPEED_OF_LIGHT, ModelConfig
from .fusion import Bus, MessageKind, NodePool, WireMessage, run_init_ring
from .signal import (RadarNode, Snapshot, array_response, delay_response, point_steering,
                     steering_vector)
from .updates import (RadarTerms, SmootherMode, amplitude_system, compute_data_message, estimate_cardinality,
                      expected_gram, noise_statistic, predict, smooth_track, update_alpha,
                      update_gamma, update_process_noise, update_xi)

log = logging.getLogger(__name__)

MAX_BIRTHS_PER_NODE = 8
MIN_SEARCH_RANGE = 2.0
GRID_LOSS_BOOST = math.sqrt(1.0 / 0.6)


@dataclass
class StepResult:
    time_index: int
    estimates: np.ndarray   # (M, 4) states of tracks above the existence threshold
    n_tracks: int
    runtime_s: float

    @property
    def cardinality(self) -> int:
        return len(self.estimates)


class _RadarCache:
    """Steering vectors and statistics of the current tracks at one radar."""

    def __init__(self, radar: RadarNode):
        self.radar = radar
        self.S = np.zeros((0, radar.n_z), complex)
        self.J = np.zeros((0, radar.n_z, 4), complex)
        self.covs = np.zeros((0, 4, 4))
        self.zvec: np.ndarray | None = None
        self.zmat: np.ndarray | None = None
        self._stats: tuple[np.ndarray, np.ndarray] | None = None

    def set_snapshot(self, z: np.ndarray):
        self._stats = None
        self.zvec = z
        self.zmat = z.reshape(self.radar.n_virtual, self.radar.n_samples)

    def rebuild(self, tracks: list[Track]):
        K = len(tracks)
        self.S = np.zeros((K, self.radar.n_z), complex)
        self.J = np.zeros((K, self.radar.n_z, 4), complex)
        self.covs = np.zeros((K, 4, 4))
        for k, t in enumerate(tracks):
            self.update_row(k, t)

    def update_row(self, k: int, track: Track):
        self._stats = None
        sv = steering_vector(self.radar, track.means[-1])
        self.S[k] = sv.s
        self.J[k] = sv.gradient
        self.covs[k] = track.covs[-1]

    def keep(self, mask: np.ndarray):
        self._stats = None
        self.S, self.J, self.covs = self.S[mask], self.J[mask], self.covs[mask]

    def append(self, track: Track):
        K = len(self.S)
        self.S = np.vstack([self.S, np.zeros((1, self.radar.n_z), complex)])
        self.J = np.concatenate([self.J, np.zeros((1, self.radar.n_z, 4), complex)])
        self.covs = np.concatenate([self.covs, np.zeros((1, 4, 4))])
        self.update_row(K, track)

    def terms(self, gamma: np.ndarray, lam: float) -> RadarTerms:
        if self._stats is None:
            gram = expected_gram(self.S, self.J, self.covs)
            sz = np.conj(self.S) @ self.zvec if len(self.S) else np.zeros(0, complex)
            self._stats = sz, gram
        sz, gram = self._stats
        return RadarTerms(sz, gram, np.asarray(gamma, dtype=float), lam)


class _SearchGrid:
    """Polar search grid in a radar's local frame with separable steering factors."""

    def __init__(self, radar: RadarNode, range_pitch: float, u_pitch: float):
        self.radar = radar
        n_r = int(math.floor((radar.r_max - MIN_SEARCH_RANGE) / range_pitch)) + 1
        self.ranges = MIN_SEARCH_RANGE + range_pitch * np.arange(n_r)
        n_u = int(math.floor(2.0 / u_pitch)) + 1
        self.u = np.linspace(-1.0, 1.0, n_u)[1:-1]   # end-fire points excluded
        self.range_pitch = range_pitch
        self.u_pitch = self.u[1] - self.u[0]
        self.V = array_response(radar, self.u)                               # (n_u, n_virtual)
        self.H = delay_response(radar, 2.0 * self.ranges / SPEED_OF_LIGHT)   # (n_r, n_samples)

    def correlate(self, mat: np.ndarray) -> np.ndarray:
        """``s(p)^H m`` on the whole grid, shape (n_u, n_r)."""
        return (np.conj(self.V) @ mat) @ np.conj(self.H).T

    def to_global(self, r: float, u: float) -> np.ndarray:
        local = np.array([r * u, r * math.sqrt(max(0.0, 1.0 - u * u))])
        return self.radar.position + self.radar.rotation.T @ local


class VMPTracker:
    """Joint detection and tracking from raw snapshots of several radars.

    Call :meth:`step` once per time index with one snapshot per radar.
    """

    def __init__(self, radars: Iterable[RadarNode], cfg: ModelConfig = DEFAULT_CONFIG, *,
                 smoother: SmootherMode | str = SmootherMode.JOINT,
                 ring_order: list[int] | None = None):
        self.cfg = cfg
        self.radars = {r.radar_id: r for r in radars}
        self.smoother = SmootherMode(smoother)
        self.store = TrackStore()
        for l, r in self.radars.items():
            self.store.noise[l] = NoiseState(cfg.alpha_z, cfg.noise_prior_rate, r.n_z, r.n_samples,
                                             cfg.literal_noise_shape)
        self.bus = Bus(NodePool(list(self.radars), ring_order))
        self._cache = {l: _RadarCache(r) for l, r in self.radars.items()}
        wavelength_aperture = float(np.ptp(next(iter(self.radars.values())).element_positions))
        u_pitch = 0.5 / max(wavelength_aperture, 1.0)
        self._grids = {l: _SearchGrid(r, cfg.range_resolution / 2.0, u_pitch)
                       for l, r in self.radars.items()}
        self._gamma_prev: dict[int, np.ndarray] = {}
        self._active: list[int] = []
        self.history: list[dict] = []
        self.record_history = False

    # ------------------------------------------------------------------
    @property
    def tracks(self) -> list[Track]:
        return self.store.tracks

    def _gamma_array(self, l: int) -> np.ndarray:
        return np.array([t.gamma[l].mean for t in self.tracks])

    def _xi_array(self) -> np.ndarray:
        return np.array([t.xi for t in self.tracks])

    def _terms(self, l: int) -> RadarTerms:
        return self._cache[l].terms(self._gamma_array(l), self.store.noise[l].mean)

    # ------------------------------------------------------------------
    def step(self, snapshots: Mapping[int, Snapshot] | Iterable[Snapshot],
             time_index: int | None = None, dropped: Iterable[int] = ()) -> StepResult:
        t0 = time.perf_counter()
        if not isinstance(snapshots, Mapping):
            snapshots = {s.radar_id: s for s in snapshots}
        N = self.store.time_index + 1 if time_index is None else int(time_index)
        self.store.time_index = N
        dropped = set(dropped)
        self.bus.set_dropped(dropped)
        self._active = [l for l in self.radars if l in snapshots and l not in dropped]
        cfg = self.cfg
        for l in self._active:
            z = snapshots[l].z
            if z.shape != (self.radars[l].n_z,):
                raise ValueError(f"snapshot of radar {l} has length {z.shape}, expected {self.radars[l].n_z}")
            self._cache[l].set_snapshot(z)

        # extend every track with a predicted slot
        for t in self.tracks:
            lam_a = t.process_precision
            mean, cov = predict(t.means[-1], t.covs[-1], lam_a, cfg.dt)
            _, t.predictive_cov = predict(t.means[-1], t.marginal_cov, lam_a, cfg.dt)
            t.append_slot(mean, cov, t.xi)
        for l in self._active:
            self._cache[l].rebuild(self.tracks)
        self._gamma_prev = {l: self._gamma_array(l) for l in self.radars}

        amps = self._amplitude_pass()
        self._state_pass(N, amps)
        self._existence_pass()
        amps = {l: update_alpha(self._terms(l), self._xi_array()) for l in self._active}
        self.store.amplitudes = amps
        for l in self._active:
            w = noise_statistic(float(np.vdot(self._cache[l].zvec, self._cache[l].zvec).real),
                                self._terms(l), self._xi_array(), amps[l])
            self.store.noise[l].add(w)

        run_init_ring(self.bus, lambda l: self._initialize_at(l, N))
        for l in self.radars:
            self.bus.collect(l)

        _, est = estimate_cardinality(self.tracks, None, cfg.delta)
        if self.record_history:
            self.history.append(self.store.summary())
        return StepResult(N, est, len(self.tracks), time.perf_counter() - t0)

    # ------------------------------------------------------------------
    def _amplitude_pass(self) -> dict[int, AmplitudeBelief]:
        cfg = self.cfg
        xi = self._xi_array()
        amps = {}
        for l in self._active:
            terms = self._terms(l)
            gamma_prev = self._gamma_prev[l]
            terms.gamma = gamma_prev.copy()
            amp = update_alpha(terms, xi)
            for _ in range(cfg.n_iter_1):
                shape, rate = update_gamma(amp.mean, amp.variances, gamma_prev, cfg.eta)
                for t, a, b in zip(self.tracks, shape, rate):
                    t.gamma[l] = type(t.gamma[l])(float(a), float(b))
                terms.gamma = shape / rate
                amp = update_alpha(terms, xi)
            amps[l] = amp
        return amps

    def _state_pass(self, N: int, amps: dict[int, AmplitudeBelief]):
        cfg = self.cfg
        xi = self._xi_array()
        for k, t in enumerate(self.tracks):
            gate = cfg.gate_sigmas * np.sqrt(np.diag(t.predictive_cov)[:2])
            messages = []
            for l in self._active:
                cache = self._cache[l]
                if not np.any(cache.S[k]):
                    continue   # outside this radar's unambiguous range
                amp = amps[l]
                weights = amp.mean * xi
                weights[k] = 0.0
                zres = cache.zmat - (weights @ cache.S).reshape(cache.zmat.shape)
                try:
                    msg = compute_data_message(cache.radar, zres, amp.mean[k], amp.variances[k],
                                               xi[k], self.store.noise[l].mean,
                                               t.means[-1][:2], gate)
                except ValueError as exc:
                    log.debug("track %d radar %d: %s", t.track_id, l, exc)
                    continue
                self.bus.broadcast(l, [WireMessage(MessageKind.STATE_MESSAGE, t.track_id, N, l,
                                                   msg.mean, msg.cov)])
                messages.append(msg)
            t.set_data_messages(N, messages)
            for _ in range(cfg.n_iter_2 + 1):
                smooth_track(t, t.process_precision, cfg.dt, cfg.smoothing_window, self.smoother)
                update_process_noise(t, cfg.dt, cfg.zeta, cfg.chi)
            for l in self._active:
                self._cache[l].update_row(k, t)
        for l in self.radars:
            self.bus.collect(l)

    def _existence_pass(self):
        cfg = self.cfg
        if not self.tracks:
            return
        terms = [self._terms(l) for l in self._active]
        xi_prev = np.array([t.xi_prev for t in self.tracks])
        xi = update_xi(self._xi_array(), terms, xi_prev, cfg.ps, cfg.pb)
        for t, v in zip(self.tracks, xi):
            t.xi = float(v)
        keep = xi >= cfg.delta_minus
        if not keep.all():
            for t in np.array(self.tracks, dtype=object)[~keep]:
                log.debug("pruning track %d (xi=%.3g)", t.track_id, t.xi)
            self.store.tracks = [t for t, k in zip(self.tracks, keep) if k]
            for l in self._active:
                self._cache[l].keep(keep)

    # ------------------------------------------------------------------
    # object initiation

    def _search_candidate(self, l: int):
        """Best new-object position at radar ``l`` on the search grid.

        Returns the grid position and a function that refines it locally.
        """
        cfg = self.cfg
        grid = self._grids[l]
        cache = self._cache[l]
        lam = self.store.noise[l].mean
        xi = self._xi_array()
        beta = lam * grid.correlate(cache.zmat)
        d = lam * cache.radar.n_z + cfg.gamma_init
        if len(self.tracks):
            terms = self._terms(l)
            P, b = amplitude_system(terms, xi)
            Pinv = np.linalg.inv(P)
            Pinv_b = Pinv @ b
            shape = cache.radar.n_virtual, cache.radar.n_samples
            # c_j(p) = lam xi_j S_j^H s(p)
            C = np.stack([lam * xi[j] * np.conj(grid.correlate(cache.S[j].reshape(shape)))
                          for j in range(len(xi))])
            delta = d - np.real(np.einsum("jab,jk,kab->ab", np.conj(C), Pinv, C))
            beta_t = beta - np.einsum("jab,j->ab", np.conj(C), Pinv_b)
        else:
            Pinv = Pinv_b = None
            delta = np.full(beta.shape, d)
            beta_t = beta
        delta = np.maximum(delta, 1e-300)
        score = np.abs(beta_t) ** 2 / delta - np.log(delta)
        iu, ir = np.unravel_index(int(np.argmax(score)), score.shape)
        r0, u0 = grid.ranges[ir], grid.u[iu]

        def neg(x):
            pos = grid.to_global(x[0], x[1])
            s = point_steering(cache.radar, pos[0], pos[1])
            if s is None:
                return -(-math.log(cfg.gamma_init))
            bt = lam * np.vdot(s, cache.zvec)
            dl = d
            if Pinv is not None:
                c = lam * xi * (np.conj(cache.S) @ s)
                dl = dl - np.real(np.conj(c) @ Pinv @ c)
                bt = bt - np.conj(c) @ Pinv_b
            dl = max(dl, 1e-300)
            return -(abs(bt) ** 2 / dl - math.log(dl))

        def refine():
            lo = [max(r0 - grid.range_pitch, MIN_SEARCH_RANGE), max(u0 - grid.u_pitch, -0.999)]
            hi = [min(r0 + grid.range_pitch, cache.radar.r_max), min(u0 + grid.u_pitch, 0.999)]
            simplex = np.array([[r0, u0], [r0 + grid.range_pitch / 4, u0], [r0, u0 + grid.u_pitch / 4]])
            simplex = np.clip(simplex, lo, hi)
            res = minimize(neg, [r0, u0], method="Nelder-Mead", bounds=list(zip(lo, hi)),
                           options={"xatol": 1e-3, "fatol": 1e-6, "initial_simplex": simplex,
                                    "maxiter": 200})
            x = res.x if res.fun <= neg([r0, u0]) else np.array([r0, u0])
            return grid.to_global(*x)

        return grid.to_global(r0, u0), refine

    def _candidate_xi(self, l: int, pos, boost: float = 1.0) -> float:
        """Existence the ``l``-only update would give a candidate at ``pos``.

        ``boost`` scales the candidate's correlation with the snapshot, which
        gives an optimistic value for positions near ``pos``.
        """
        cfg = self.cfg
        terms, _ = self._candidate_terms(l, pos)
        if boost != 1.0:
            sz = terms.sz.copy()
            sz[-1] *= boost
            terms = RadarTerms(sz, terms.gram, terms.gamma, terms.lam)
        xi0 = np.append(self._xi_array(), 1.0)
        xi_prev = np.append([t.xi_prev for t in self.tracks], 0.0)
        fixed = np.ones(len(xi0), bool)
        fixed[-1] = False
        return float(update_xi(xi0, [terms], xi_prev, cfg.ps, cfg.pb, fixed=fixed)[-1])

    def _candidate_terms(self, l: int, pos) -> tuple[RadarTerms, np.ndarray]:
        """Radar-``l`` terms with a point-estimate candidate appended at ``pos``."""
        cache = self._cache[l]
        s = steering_vector(cache.radar, np.array([pos[0], pos[1], 0.0, 0.0])).s
        base = self._terms(l)
        K = len(base.sz)
        gram = np.zeros((K + 1, K + 1), complex)
        gram[:K, :K] = base.gram
        cross = np.conj(cache.S) @ s
        gram[:K, K] = cross
        gram[K, :K] = np.conj(cross)
        gram[K, K] = np.vdot(s, s).real
        sz = np.append(base.sz, np.vdot(s, cache.zvec))
        gamma = np.append(base.gamma, self.cfg.gamma_init)
        return RadarTerms(sz, gram, gamma, base.lam), s

    def _initialize_at(self, l: int, N: int) -> list[WireMessage]:
        cfg = self.cfg
        self._refine_newborn(l, N)
        admitted = []
        while len(admitted) < MAX_BIRTHS_PER_NODE:
            grid_pos, refine = self._search_candidate(l)
            # the worst-case grid straddle loses about a third of the matched
            # power, so a candidate that fails even with that power restored
            # cannot pass after refinement either
            if self._candidate_xi(l, grid_pos, GRID_LOSS_BOOST) <= cfg.delta_plus:
                break
            pos = refine()
            xi_new = self._candidate_xi(l, pos)
            if xi_new <= cfg.delta_plus:
                break
            t = self._admit(l, N, pos, xi_new)
            if t is None:
                break
            if t.xi < cfg.delta_minus:
                self._drop_last_track()
                break
            admitted.append(WireMessage(MessageKind.INIT_CANDIDATE, t.track_id, N, l,
                                        t.means[-1], t.covs[-1], t.xi))
            if t.xi <= cfg.delta_plus:
                break
        return admitted

    def _drop_last_track(self):
        self.store.tracks.pop()
        keep = np.arange(len(self.tracks) + 1) < len(self.tracks)
        for a in self._active:
            self._cache[a].keep(keep)

    def _refine_newborn(self, l: int, N: int):
        """Fuse radar ``l``'s data message into objects admitted earlier in this ring pass.

        A newborn's state comes from the admitting radar alone, so its
        cross-range error can look like unexplained signal at the next radar.
        """
        cfg = self.cfg
        cache = self._cache[l]
        for k, t in enumerate(self.tracks):
            if t.birth_index != N or any(m.radar_id == l for m in t.archive.get(N, [])):
                continue
            if not np.any(cache.S[k]):
                continue
            xi = self._xi_array()
            amp = update_alpha(self._terms(l), xi)
            weights = amp.mean * xi
            weights[k] = 0.0
            zres = cache.zmat - (weights @ cache.S).reshape(cache.zmat.shape)
            gate = cfg.gate_sigmas * np.sqrt(np.diag(t.marginal_cov)[:2])
            try:
                msg = compute_data_message(cache.radar, zres, amp.mean[k], amp.variances[k], xi[k],
                                           self.store.noise[l].mean, t.means[-1][:2], gate)
            except ValueError as exc:
                log.debug("newborn %d at radar %d: %s", t.track_id, l, exc)
                continue
            t.set_data_messages(N, t.archive.get(N, []) + [msg])
            smooth_track(t, t.process_precision, cfg.dt, cfg.smoothing_window, self.smoother)
            t.predictive_cov = t.marginal_cov
            for a in self._active:
                self._cache[a].update_row(k, t)

    def _admit(self, l: int, N: int, pos, xi_new: float) -> Track | None:
        cfg = self.cfg
        prior_mean = np.array([pos[0], pos[1], 0.0, 0.0])
        prior = GaussianMessage(prior_mean, cfg.sigma_PO * np.eye(4), MessageSource.PRIOR)
        t = Track(self.store.next_id, N, prior, self.radars, cfg.gamma_init, cfg.zeta, cfg.chi)
        t.append_slot(prior_mean, prior.cov, xi_new)
        self.store.tracks.append(t)
        for a in self._active:
            self._cache[a].append(t)
        k = len(self.tracks) - 1
        cache = self._cache[l]
        xi = self._xi_array()
        amp = update_alpha(self._terms(l), xi)
        weights = amp.mean * xi
        weights[k] = 0.0
        zres = cache.zmat - (weights @ cache.S).reshape(cache.zmat.shape)
        halfwidth = cfg.gate_sigmas * math.sqrt(cfg.sigma_PO) * np.ones(2)
        try:
            msg = compute_data_message(cache.radar, zres, amp.mean[k], amp.variances[k], xi[k],
                                       self.store.noise[l].mean, pos, halfwidth, max_grid=1)
        except ValueError as exc:
            log.debug("candidate at radar %d rejected: %s", l, exc)
            self._drop_last_track()
            return None
        self.store.next_id += 1
        t.set_data_messages(N, [msg])
        smooth_track(t, t.process_precision, cfg.dt, cfg.smoothing_window, self.smoother)
        t.predictive_cov = t.marginal_cov
        for a in self._active:
            self._cache[a].update_row(k, t)
        terms = self._terms(l)
        amp = update_alpha(terms, xi)
        xi_prev = np.append([tr.xi_prev for tr in self.tracks[:-1]], 0.0)
        fixed = np.ones(len(xi), bool)
        fixed[-1] = False
        t.xi = float(update_xi(xi, [terms], xi_prev, cfg.ps, cfg.pb, fixed=fixed)[-1])
        amp = update_alpha(terms, self._xi_array())
        shape, rate = update_gamma(amp.mean[-1:], amp.variances[-1:], [cfg.gamma_init], cfg.eta)
        t.gamma[l] = type(t.gamma[l])(float(shape[0]), float(rate[0]))
        self.store.amplitudes[l] = amp
        log.debug("admitted track %d at radar %d, n=%d, pos=(%.2f, %.2f), xi=%.3f",
                  t.track_id, l, N, *t.means[-1][:2], t.xi)
        return t

    # ------------------------------------------------------------------
    def snapshot_json(self) -> dict:
        return self.store.summary()
