"""Seeded Wiener paths and trajectory integrators.

Two unravelings of the same open dynamics are implemented:

* the linear equation
      d psi = sum_j R_j(t) psi dW_j - i K(t) psi dt
  integrated under the reference (Wiener) measure; the squared norm
  ||psi_t||^2 is the importance weight that converts reference-measure
  averages into physical ones, and the shifted noises
      What_k(t) = W_k(t) - 2 int_0^t Re <R_k> ds
  are standard Wiener processes under the physical law (Girsanov);

* the nonlinear (normalized, a-posteriori) equation
      d psihat = -i Khat(t, psihat) dt + sum_k Rhat_k(t, psihat) dWhat_k
  driven directly by the innovation noises, with
      Rhat_k(t, f) = (R_k - <f|R_k f>/||f||^2) f
  and Khat containing the matching drift corrections.

Both use the Euler-Maruyama scheme (weak order 1) with left-point
evaluation of all time-dependent quantities, so the two routes agree up to
O(dt) and can be cross-checked path by path through the shared noise.

Reproducibility: every trajectory owns a Philox counter-based stream keyed
by (seed, trajectory index), so ensembles are bit-reproducible regardless
of chunking or worker scheduling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from multiprocessing import get_context

import numpy as np

from .model import CoefficientTable, Coefficients

__all__ = [
    "WienerPath",
    "TrajectoryRecord",
    "NormalizedRecord",
    "LinearEnsemble",
    "NonlinearEnsemble",
    "generate_wiener",
    "integrate_linear",
    "apply_girsanov_shift",
    "integrate_nonlinear",
    "normalize_posterior",
    "run_linear_ensemble",
    "run_nonlinear_ensemble",
    "worker_count",
]

WEIGHT_FLOOR = 1e-12

_UINT64 = np.uint64
_MASK64 = (1 << 64) - 1
# Counter offset for auxiliary draws (initial-state sampling): disjoint from
# the increment stream, which counts up from zero.
_AUX_COUNTER = 1 << 192


def _philox_stream(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK64, stream & _MASK64], dtype=_UINT64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


@dataclass(frozen=True)
class WienerPath:
    """Discretized multi-channel Brownian increments.

    ``increments[n, j] = W_j(t_{n+1}) - W_j(t_n)``, drawn iid Normal(0, dt).
    Bit-reproducible from (seed, stream, dt, nsteps, nchannels).
    """

    dt: float
    nsteps: int
    nchannels: int
    increments: np.ndarray
    seed: int
    stream: int = 0

    def cumulative(self) -> np.ndarray:
        """W_j(t_n) on the full grid, shape (nsteps + 1, nchannels)."""
        out = np.zeros((self.nsteps + 1, self.nchannels))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def generate_wiener(seed: int, dt: float, nsteps: int, nchannels: int, stream: int = 0) -> WienerPath:
    """Draw a Wiener path from the counter-based stream (seed, stream)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if nsteps < 1:
        raise ValueError("nsteps must be at least 1")
    if nchannels < 1:
        raise ValueError("nchannels must be at least 1")
    rng = _philox_stream(seed, stream)
    increments = rng.normal(0.0, np.sqrt(dt), size=(nsteps, nchannels))
    return WienerPath(dt=dt, nsteps=nsteps, nchannels=nchannels,
                      increments=increments, seed=seed, stream=stream)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Full record of one linear trajectory on the integration grid.

    ``weight`` is ||psi||^2, ``r_expect[n, k]`` is <psi|R_k psi>/||psi||^2,
    ``drift_integral`` is the left-point running integral of Re r_expect,
    and ``innovation_path`` (the Girsanov-shifted noise) is filled by
    :func:`apply_girsanov_shift`.
    """

    times: np.ndarray
    psi: np.ndarray
    weight: np.ndarray
    r_expect: np.ndarray
    w_path: np.ndarray
    drift_integral: np.ndarray
    seed: int
    stream: int = 0
    frozen_at: int | None = None
    innovation_path: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.psi.shape[1]

    @property
    def nchannels(self) -> int:
        return self.r_expect.shape[1]


@dataclass(frozen=True)
class NormalizedRecord:
    """Record of a unit-norm (a-posteriori) trajectory.

    ``innovation_path`` is the driving noise; ``w_path`` is the physical
    output reconstructed as innovation + 2 int Re r_expect ds.
    """

    times: np.ndarray
    psihat: np.ndarray
    r_expect: np.ndarray
    innovation_path: np.ndarray
    w_path: np.ndarray
    seed: int
    stream: int = 0
    frozen_at: int | None = None


def _as_table(coeffs: Coefficients | CoefficientTable, times: np.ndarray) -> CoefficientTable:
    if isinstance(coeffs, CoefficientTable):
        if len(coeffs.times) != len(times) or not np.allclose(coeffs.times, times):
            raise ValueError("coefficient table grid does not match the integration grid")
        return coeffs
    return coeffs.tabulate(times)


def _rpsi(r_n: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Apply each channel operator: (J,d,d) x (B,d) -> (B,J,d)."""
    return np.einsum("jkl,bl->bjk", r_n, psi)


def _normalized_expectation(psi: np.ndarray, rpsi: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """<psi|R_j psi>/||psi||^2 per channel, zero where the weight vanished."""
    num = np.einsum("bk,bjk->bj", psi.conj(), rpsi)
    safe = np.where(weight > 0, weight, 1.0)
    return np.where(weight[:, None] > 0, num / safe[:, None], 0.0)


def _step_linear_batch(table: CoefficientTable, psi0: np.ndarray, dw: np.ndarray,
                       record_idx: np.ndarray, weight_floor: float):
    """Euler-Maruyama for a batch of linear trajectories.

    psi0: (B, d) initial states; dw: (B, nsteps, J) increments.
    Returns states/weights/expectations/drift integrals sampled at
    ``record_idx`` plus the per-path freeze step (-1 if never frozen).
    """
    nsteps = dw.shape[1]
    dt = table.times[1] - table.times[0] if nsteps else 0.0
    batch, d = psi0.shape
    nchan = table.nchannels
    nrec = len(record_idx)

    psi = psi0.astype(complex).copy()
    weight = np.einsum("bk,bk->b", psi.conj(), psi).real
    floor = weight_floor * weight
    drift = np.zeros((batch, nchan))
    active = np.ones(batch, dtype=bool)
    frozen_step = np.full(batch, -1, dtype=np.int64)

    rec_psi = np.empty((batch, nrec, d), dtype=complex)
    rec_weight = np.empty((batch, nrec))
    rec_rexp = np.empty((batch, nrec, nchan), dtype=complex)
    rec_drift = np.empty((batch, nrec, nchan))
    rec_pos = {int(idx): pos for pos, idx in enumerate(record_idx)}

    for n in range(nsteps + 1):
        rpsi = _rpsi(table.r[n], psi)
        rexp = _normalized_expectation(psi, rpsi, weight)
        pos = rec_pos.get(n)
        if pos is not None:
            rec_psi[:, pos] = psi
            rec_weight[:, pos] = weight
            rec_rexp[:, pos] = rexp
            rec_drift[:, pos] = drift
        if n == nsteps:
            break
        dpsi = (-1j * dt) * (psi @ table.k[n].T)
        dpsi += np.einsum("bj,bjk->bk", dw[:, n].astype(complex), rpsi)
        psi = psi + np.where(active[:, None], dpsi, 0.0)
        drift = drift + np.where(active[:, None], dt * rexp.real, 0.0)
        weight = np.where(active, np.einsum("bk,bk->b", psi.conj(), psi).real, weight)
        newly_frozen = active & (weight < floor)
        if np.any(newly_frozen):
            frozen_step[newly_frozen] = n + 1
            active &= ~newly_frozen

    return rec_psi, rec_weight, rec_rexp, rec_drift, frozen_step


def integrate_linear(coeffs: Coefficients | CoefficientTable, psi0: np.ndarray,
                     path: WienerPath, weight_floor: float = WEIGHT_FLOOR) -> TrajectoryRecord:
    """Integrate the linear trajectory equation along one noise path.

    The scheme is linear in psi0, so the flow is scale- and
    phase-equivariant; unit norm is only required for the probabilistic
    interpretation of the weight.
    """
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    times = path.dt * np.arange(path.nsteps + 1)
    table = _as_table(coeffs, times)
    if table.dim != psi0.size:
        raise ValueError("initial state dimension does not match the coefficients")
    if table.nchannels != path.nchannels:
        raise ValueError("noise channel count does not match the coefficients")
    record_idx = np.arange(path.nsteps + 1)
    psi, weight, rexp, drift, frozen = _step_linear_batch(
        table, psi0[None, :], path.increments[None, :, :], record_idx, weight_floor)
    frozen_at = None if frozen[0] < 0 else int(frozen[0])
    return TrajectoryRecord(
        times=times, psi=psi[0], weight=weight[0], r_expect=rexp[0],
        w_path=path.cumulative(), drift_integral=drift[0],
        seed=path.seed, stream=path.stream, frozen_at=frozen_at)


def apply_girsanov_shift(record: TrajectoryRecord) -> TrajectoryRecord:
    """Fill the innovation path What = W - 2 int Re r_expect ds.

    Uses the stored left-point running integral, consistent with the Ito
    convention of the integrator.
    """
    innovation = record.w_path - 2.0 * record.drift_integral
    return replace(record, innovation_path=innovation)


def _step_nonlinear_batch(table: CoefficientTable, psi0: np.ndarray, dw: np.ndarray,
                          record_idx: np.ndarray, weight_floor: float):
    """Euler-Maruyama for the normalized equation, renormalizing each step."""
    nsteps = dw.shape[1]
    dt = table.times[1] - table.times[0] if nsteps else 0.0
    batch, d = psi0.shape
    nchan = table.nchannels
    nrec = len(record_idx)

    psi = psi0.astype(complex).copy()
    norms = np.sqrt(np.einsum("bk,bk->b", psi.conj(), psi).real)
    psi = psi / norms[:, None]
    ones = np.ones(batch)
    drift = np.zeros((batch, nchan))
    active = np.ones(batch, dtype=bool)
    frozen_step = np.full(batch, -1, dtype=np.int64)

    rec_psi = np.empty((batch, nrec, d), dtype=complex)
    rec_rexp = np.empty((batch, nrec, nchan), dtype=complex)
    rec_drift = np.empty((batch, nrec, nchan))
    rec_pos = {int(idx): pos for pos, idx in enumerate(record_idx)}

    for n in range(nsteps + 1):
        r_n = table.r[n]
        rpsi = _rpsi(r_n, psi)
        m = _normalized_expectation(psi, rpsi, ones)
        pos = rec_pos.get(n)
        if pos is not None:
            rec_psi[:, pos] = psi
            rec_rexp[:, pos] = m
            rec_drift[:, pos] = drift
        if n == nsteps:
            break
        kh = table.k[n] + table.k[n].conj().T
        rr = np.einsum("jlk,jlm->km", r_n.conj(), r_n)
        # Khat psi = (K+K*)/2 psi - (i/2) sum_j (R_j^*R_j - 2 conj(m_j) R_j + |m_j|^2) psi,
        # the drift of the normalized equation with conditional expectations m_j.
        khat_psi = 0.5 * (psi @ kh.T)
        khat_psi += -0.5j * (psi @ rr.T)
        khat_psi += -0.5j * (
            -2.0 * np.einsum("bj,bjk->bk", m.conj(), rpsi)
            + np.sum(np.abs(m) ** 2, axis=1)[:, None] * psi
        )
        dpsi = (-1j * dt) * khat_psi
        centered = rpsi - m[:, :, None] * psi[:, None, :]
        dpsi += np.einsum("bj,bjk->bk", dw[:, n].astype(complex), centered)
        psi_new = psi + np.where(active[:, None], dpsi, 0.0)
        nn = np.einsum("bk,bk->b", psi_new.conj(), psi_new).real
        newly_frozen = active & (nn < weight_floor)
        if np.any(newly_frozen):
            frozen_step[newly_frozen] = n + 1
            active &= ~newly_frozen
        scale = np.where(active & (nn > 0), 1.0 / np.sqrt(np.where(nn > 0, nn, 1.0)), 1.0)
        psi = np.where(active[:, None], psi_new * scale[:, None], psi)
        drift = drift + np.where(active[:, None], dt * m.real, 0.0)

    return rec_psi, rec_rexp, rec_drift, frozen_step


def integrate_nonlinear(coeffs: Coefficients | CoefficientTable, psihat0: np.ndarray,
                        path: WienerPath, weight_floor: float = WEIGHT_FLOOR) -> NormalizedRecord:
    """Integrate the normalized trajectory equation driven by innovation noise.

    ``path`` is interpreted as the innovation process What (standard Wiener
    under the physical law).  The state is projected back to unit norm after
    every Euler step; the continuous-time flow preserves the norm exactly,
    the discretized one only to O(dt).
    """
    psihat0 = np.asarray(psihat0, dtype=complex).reshape(-1)
    nrm = np.linalg.norm(psihat0)
    if abs(nrm - 1.0) > 1e-9:
        raise ValueError("initial state must have unit norm")
    times = path.dt * np.arange(path.nsteps + 1)
    table = _as_table(coeffs, times)
    if table.dim != psihat0.size:
        raise ValueError("initial state dimension does not match the coefficients")
    if table.nchannels != path.nchannels:
        raise ValueError("noise channel count does not match the coefficients")
    record_idx = np.arange(path.nsteps + 1)
    psi, rexp, drift, frozen = _step_nonlinear_batch(
        table, psihat0[None, :], path.increments[None, :, :], record_idx, weight_floor)
    frozen_at = None if frozen[0] < 0 else int(frozen[0])
    innovation = path.cumulative()
    return NormalizedRecord(
        times=times, psihat=psi[0], r_expect=rexp[0],
        innovation_path=innovation, w_path=innovation + 2.0 * drift[0],
        seed=path.seed, stream=path.stream, frozen_at=frozen_at)


def normalize_posterior(record: TrajectoryRecord) -> NormalizedRecord:
    """Normalize a linear record pointwise: psihat = psi / ||psi||.

    The stochastic phase that would make psihat satisfy the autonomous
    nonlinear equation is deliberately not applied; every exported
    functional (projector, weight, channel expectations) is phase
    invariant, so cross-checks against nonlinear trajectories compare
    |<psihat_lin | psihat_nl>| rather than raw vectors.
    """
    norms = np.sqrt(record.weight)
    if np.any(norms <= 0):
        raise ValueError("record contains a zero-norm state")
    rec = record if record.innovation_path is not None else apply_girsanov_shift(record)
    return NormalizedRecord(
        times=rec.times, psihat=rec.psi / norms[:, None], r_expect=rec.r_expect,
        innovation_path=rec.innovation_path,
        w_path=rec.w_path, seed=rec.seed, stream=rec.stream, frozen_at=rec.frozen_at)


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearEnsemble:
    """Linear trajectories sampled at checkpoint times.

    Arrays are indexed (trajectory, checkpoint, ...).  ``w_path`` holds the
    driving noise W, ``innovation`` the Girsanov-shifted What.
    """

    times: np.ndarray
    psi: np.ndarray
    weight: np.ndarray
    r_expect: np.ndarray
    w_path: np.ndarray
    innovation: np.ndarray
    frozen_at: np.ndarray
    base_seed: int
    dt: float

    @property
    def ntraj(self) -> int:
        return self.psi.shape[0]


@dataclass(frozen=True)
class NonlinearEnsemble:
    """Normalized trajectories sampled at checkpoint times (weights are 1)."""

    times: np.ndarray
    psihat: np.ndarray
    r_expect: np.ndarray
    w_path: np.ndarray
    innovation: np.ndarray
    frozen_at: np.ndarray
    base_seed: int
    dt: float

    @property
    def ntraj(self) -> int:
        return self.psihat.shape[0]


def worker_count() -> int:
    """Worker processes for ensemble runs; QSDE_WORKERS overrides (default 1)."""
    raw = os.environ.get("QSDE_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"QSDE_WORKERS must be an integer, got {raw!r}")
    return max(1, n)


def _record_indices(nsteps: int, dt: float, record_times) -> np.ndarray:
    if record_times is None:
        idx = np.unique(np.linspace(0, nsteps, min(nsteps, 10) + 1).round().astype(int))
    else:
        idx = np.unique(np.clip(np.round(np.asarray(record_times, dtype=float) / dt), 0, nsteps).astype(int))
    return idx


def _draw_initials(initial, ntraj: int, first: int, dim: int, base_seed: int) -> np.ndarray:
    """Per-trajectory initial states; mixtures sample from the aux stream."""
    if isinstance(initial, tuple):
        states, probs = initial
        states = np.asarray(states, dtype=complex)
        probs = np.asarray(probs, dtype=float)
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        out = np.empty((ntraj, dim), dtype=complex)
        for b in range(ntraj):
            rng = _philox_stream(base_seed, first + b, counter=_AUX_COUNTER)
            pick = int(np.searchsorted(cdf, rng.uniform()))
            out[b] = states[min(pick, len(states) - 1)]
        return out
    vec = np.asarray(initial, dtype=complex).reshape(-1)
    return np.broadcast_to(vec, (ntraj, dim)).copy()


def _chunk_noise(base_seed: int, first: int, ntraj: int, dt: float,
                 nsteps: int, nchannels: int) -> np.ndarray:
    dw = np.empty((ntraj, nsteps, nchannels))
    sigma = np.sqrt(dt)
    for b in range(ntraj):
        rng = _philox_stream(base_seed, first + b)
        dw[b] = rng.normal(0.0, sigma, size=(nsteps, nchannels))
    return dw


def _linear_chunk(args):
    table, initial, base_seed, first, ntraj, nsteps, dt, record_idx, weight_floor = args
    dw = _chunk_noise(base_seed, first, ntraj, dt, nsteps, table.nchannels)
    psi0 = _draw_initials(initial, ntraj, first, table.dim, base_seed)
    psi, weight, rexp, drift, frozen = _step_linear_batch(table, psi0, dw, record_idx, weight_floor)
    w = np.concatenate([np.zeros((ntraj, 1, table.nchannels)),
                        np.cumsum(dw, axis=1)], axis=1)[:, record_idx, :]
    return psi, weight, rexp, drift, frozen, w


def _nonlinear_chunk(args):
    table, initial, base_seed, first, ntraj, nsteps, dt, record_idx, weight_floor = args
    dw = _chunk_noise(base_seed, first, ntraj, dt, nsteps, table.nchannels)
    psi0 = _draw_initials(initial, ntraj, first, table.dim, base_seed)
    psi, rexp, drift, frozen = _step_nonlinear_batch(table, psi0, dw, record_idx, weight_floor)
    w = np.concatenate([np.zeros((ntraj, 1, table.nchannels)),
                        np.cumsum(dw, axis=1)], axis=1)[:, record_idx, :]
    return psi, rexp, drift, frozen, w


def _run_chunks(worker, table, initial, base_seed, ntraj, nsteps, dt,
                record_idx, weight_floor, chunk_size):
    chunks = [(table, initial, base_seed, first, min(chunk_size, ntraj - first),
               nsteps, dt, record_idx, weight_floor)
              for first in range(0, ntraj, chunk_size)]
    nworkers = worker_count()
    if nworkers > 1 and len(chunks) > 1:
        with get_context("fork").Pool(processes=min(nworkers, len(chunks))) as pool:
            results = pool.map(worker, chunks)
    else:
        results = [worker(c) for c in chunks]
    return results


def run_linear_ensemble(coeffs: Coefficients | CoefficientTable, initial, dt: float,
                        nsteps: int, ntraj: int, base_seed: int,
                        record_times=None, weight_floor: float = WEIGHT_FLOOR,
                        chunk_size: int = 1024) -> LinearEnsemble:
    """Integrate ``ntraj`` linear trajectories with per-trajectory streams.

    ``initial`` is a state vector shared by all trajectories, or a tuple
    (states, probabilities) sampled per trajectory (mixed initial state).
    Results are independent of chunk scheduling and worker count; chunking
    only groups trajectories for vectorized stepping.
    """
    times = dt * np.arange(nsteps + 1)
    table = _as_table(coeffs, times)
    record_idx = _record_indices(nsteps, dt, record_times)
    results = _run_chunks(_linear_chunk, table, initial, base_seed, ntraj,
                          nsteps, dt, record_idx, weight_floor, chunk_size)
    psi = np.concatenate([r[0] for r in results])
    weight = np.concatenate([r[1] for r in results])
    rexp = np.concatenate([r[2] for r in results])
    drift = np.concatenate([r[3] for r in results])
    frozen = np.concatenate([r[4] for r in results])
    w = np.concatenate([r[5] for r in results])
    return LinearEnsemble(times=times[record_idx], psi=psi, weight=weight,
                          r_expect=rexp, w_path=w, innovation=w - 2.0 * drift,
                          frozen_at=frozen, base_seed=base_seed, dt=dt)


def run_nonlinear_ensemble(coeffs: Coefficients | CoefficientTable, initial, dt: float,
                           nsteps: int, ntraj: int, base_seed: int,
                           record_times=None, weight_floor: float = WEIGHT_FLOOR,
                           chunk_size: int = 1024) -> NonlinearEnsemble:
    """Integrate ``ntraj`` normalized trajectories driven by innovation noise."""
    times = dt * np.arange(nsteps + 1)
    table = _as_table(coeffs, times)
    record_idx = _record_indices(nsteps, dt, record_times)
    results = _run_chunks(_nonlinear_chunk, table, initial, base_seed, ntraj,
                          nsteps, dt, record_idx, weight_floor, chunk_size)
    psi = np.concatenate([r[0] for r in results])
    rexp = np.concatenate([r[1] for r in results])
    drift = np.concatenate([r[2] for r in results])
    frozen = np.concatenate([r[3] for r in results])
    what = np.concatenate([r[4] for r in results])
    return NonlinearEnsemble(times=times[record_idx], psihat=psi, r_expect=rexp,
                             w_path=what + 2.0 * drift, innovation=what,
                             frozen_at=frozen, base_seed=base_seed, dt=dt)
