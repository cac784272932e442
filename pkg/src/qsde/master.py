"""Deterministic master-equation oracle.

The statistical operator averaged over trajectories obeys
d rho/dt = L_*(t)[rho] with the Lindblad-form generator

    L_*(t)[rho] = -(i/2) [K + K^*, rho]
                  + sum_j ( R_j rho R_j^* - (1/2) {R_j^* R_j, rho} )

whose trace dual acts on observables as

    L(t)[a] = +(i/2) [K + K^*, a]
              + sum_j ( R_j^* a R_j - (1/2) {R_j^* R_j, a} )
            = +(i/2) [K + K^*, a] + (1/2) sum_j ( R_j^*[a, R_j] + [R_j^*, a] R_j ).

Both pictures are built explicitly and verified against each other through
the duality Tr{L_*[rho] a} = Tr{rho L[a]}; the Heisenberg commutator sign
is fixed by that duality together with the Schrodinger-picture evolution
(e.g. rho_t = e^{-iHt} rho e^{iHt} for a purely Hamiltonian K = H).

Everything here is a dense superoperator on column-vectorized matrices,
integrated with classical RK4; it serves as the exact cross-check for the
Monte Carlo trajectory ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import adjoint, devectorize, matrix_exp, max_abs, sandwich, spost, spre, vectorize
from .model import Coefficients
from .trajectories import LinearEnsemble, NonlinearEnsemble

__all__ = [
    "PositivityError",
    "DegenerateStationaryState",
    "build_heisenberg_generator",
    "build_schrodinger_generator",
    "LindbladPropagator",
    "propagate_master",
    "master_series",
    "evolution_operator",
    "stationary_state",
    "StationaryResult",
    "apriori_from_trajectories",
    "DensitySeries",
    "validate_density",
    "trace_distance",
]

DENSITY_HERMITIAN_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
DENSITY_EIG_FLOOR = -1e-8
POSITIVITY_FAIL = -1e-6


class PositivityError(RuntimeError):
    """Raised when an evolved state develops a clearly negative eigenvalue."""


class DegenerateStationaryState(RuntimeError):
    """Raised by callers that require a unique stationary state."""


def validate_density(rho: np.ndarray, herm_tol: float = DENSITY_HERMITIAN_TOL,
                     trace_tol: float = DENSITY_TRACE_TOL,
                     eig_floor: float = DENSITY_EIG_FLOOR) -> np.ndarray:
    """Check Hermiticity, unit trace and numerical positivity of a state."""
    rho = np.asarray(rho, dtype=complex)
    if max_abs(rho - rho.conj().T) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > trace_tol or abs(np.trace(rho).imag) > trace_tol:
        raise ValueError("density matrix trace is not 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < eig_floor:
        raise ValueError("density matrix has a negative eigenvalue")
    return rho


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    """(1/2) ||a - b||_1 for Hermitian matrices."""
    diff = 0.5 * ((a - b) + (a - b).conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


def _dissipator_pieces(r: np.ndarray):
    """sum_j R_j . R_j^* sandwich and the (1/2){R^*R, .} halves."""
    d = r.shape[-1]
    gain = np.zeros((d * d, d * d), dtype=complex)
    rr = np.zeros((d, d), dtype=complex)
    for rj in r:
        gain += sandwich(rj, adjoint(rj))
        rr += adjoint(rj) @ rj
    return gain, rr


def build_schrodinger_generator(coeffs: Coefficients, t: float) -> np.ndarray:
    """Superoperator matrix of the state-evolution generator L_*(t)."""
    k, r = coeffs.at(t)
    kh = k + adjoint(k)
    gain, rr = _dissipator_pieces(r)
    gen = -0.5j * (spre(kh) - spost(kh))
    gen += gain - 0.5 * (spre(rr) + spost(rr))
    return gen


def build_heisenberg_generator(coeffs: Coefficients, t: float) -> np.ndarray:
    """Superoperator matrix of the observable-evolution generator L(t).

    Trace dual of :func:`build_schrodinger_generator`; unital whenever the
    coefficients satisfy the weight-conservation identity.
    """
    k, r = coeffs.at(t)
    kh = k + adjoint(k)
    d = k.shape[0]
    gen = 0.5j * (spre(kh) - spost(kh))
    rr = np.zeros((d, d), dtype=complex)
    for rj in r:
        gen += sandwich(adjoint(rj), rj)
        rr += adjoint(rj) @ rj
    gen -= 0.5 * (spre(rr) + spost(rr))
    return gen


class LindbladPropagator:
    """Generator family t -> L_*(t) with a cache for the constant case.

    Time independence is probed numerically at a few incommensurate times;
    models whose time dependence sits entirely in detection/frame phases
    have a constant generator even though K(t), R_j(t) vary.
    """

    _PROBE_TIMES = (0.0, 0.3331, 0.7177, 1.6183)

    def __init__(self, coeffs: Coefficients, probe_tol: float = 1e-12):
        self.coeffs = coeffs
        self.dim = coeffs.dim
        g0 = build_schrodinger_generator(coeffs, self._PROBE_TIMES[0])
        scale = max(max_abs(g0), 1.0)
        self.time_independent = all(
            max_abs(build_schrodinger_generator(coeffs, t) - g0) <= probe_tol * scale
            for t in self._PROBE_TIMES[1:]
        )
        self._g0 = g0 if self.time_independent else None

    def generator_at(self, t: float) -> np.ndarray:
        if self._g0 is not None:
            return self._g0
        return build_schrodinger_generator(self.coeffs, t)

    def heisenberg_at(self, t: float) -> np.ndarray:
        return build_heisenberg_generator(self.coeffs, t)


def _rk4_march(gen: LindbladPropagator, v: np.ndarray, t0: float, nsteps: int,
               h: float, record=None) -> np.ndarray:
    """March vec(rho) with classical RK4; optionally record every grid point."""
    constant = gen.time_independent
    if constant:
        g = gen.generator_at(t0)
    for n in range(nsteps):
        t = t0 + n * h
        g1 = g if constant else gen.generator_at(t)
        gm = g if constant else gen.generator_at(t + 0.5 * h)
        g2 = g if constant else gen.generator_at(t + h)
        k1 = g1 @ v
        k2 = gm @ (v + 0.5 * h * k1)
        k3 = gm @ (v + 0.5 * h * k2)
        k4 = g2 @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if record is not None:
            record[n + 1] = v
    return v


def _cleanup(rho: np.ndarray, check_positivity: bool) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    if check_positivity and np.linalg.eigvalsh(rho).min() < POSITIVITY_FAIL:
        raise PositivityError("master-equation state developed a negative eigenvalue")
    return rho


def propagate_master(gen: LindbladPropagator, rho0: np.ndarray, t0: float, t1: float,
                     dt: float, check_positivity: bool = True) -> np.ndarray:
    """RK4 integration of the master equation from t0 to t1.

    The result is re-symmetrized and trace-renormalized once at the end;
    the O(dt^4) global error keeps this oracle far below Monte Carlo noise.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if dt <= 0:
        raise ValueError("dt must be positive")
    span = t1 - t0
    if span == 0:
        return np.asarray(rho0, dtype=complex).copy()
    nsteps = max(1, int(round(span / dt)))
    h = span / nsteps
    v = vectorize(np.asarray(rho0, dtype=complex))
    v = _rk4_march(gen, v, t0, nsteps, h)
    return _cleanup(devectorize(v, gen.dim), check_positivity)


def master_series(gen: LindbladPropagator, rho0: np.ndarray, times: np.ndarray,
                  check_positivity: bool = True) -> np.ndarray:
    """States on a uniform grid (times[0] = start), shape (len(times), d, d)."""
    times = np.asarray(times, dtype=float)
    nsteps = len(times) - 1
    d = gen.dim
    record = np.empty((nsteps + 1, d * d), dtype=complex)
    record[0] = vectorize(np.asarray(rho0, dtype=complex))
    if nsteps:
        h = times[1] - times[0]
        if not np.allclose(np.diff(times), h):
            raise ValueError("master_series needs a uniform time grid")
        _rk4_march(gen, record[0].copy(), times[0], nsteps, h, record=record)
    out = np.empty((nsteps + 1, d, d), dtype=complex)
    for n in range(nsteps + 1):
        out[n] = _cleanup(devectorize(record[n], d), check_positivity and n == nsteps)
    return out


def evolution_operator(gen: LindbladPropagator, s: float, t: float,
                       dt: float = 1e-2) -> np.ndarray:
    """Two-time evolution superoperator U(t, s), rho_t = U(t, s)[rho_s].

    Constant generator: a single matrix exponential.  Time-dependent
    generator: time-ordered product of midpoint exponentials over substeps
    of size ~dt (second order, trace preserving per substep).
    """
    if t < s:
        raise ValueError("t must be >= s")
    if t == s:
        return np.eye(gen.dim ** 2, dtype=complex)
    if gen.time_independent:
        return matrix_exp(gen.generator_at(s), t - s)
    nsub = max(1, int(round((t - s) / dt)))
    h = (t - s) / nsub
    u = np.eye(gen.dim ** 2, dtype=complex)
    for k in range(nsub):
        mid = s + (k + 0.5) * h
        u = matrix_exp(gen.generator_at(mid), h) @ u
    return u


@dataclass(frozen=True)
class StationaryResult:
    """Null-space solve of L_*[rho] = 0 with Tr rho = 1.

    ``nullity`` > 1 flags a degenerate stationary manifold; ``rho`` is then
    None and the caller decides whether to proceed.
    """

    rho: np.ndarray | None
    nullity: int
    residual: float

    @property
    def degenerate(self) -> bool:
        return self.nullity != 1


def stationary_state(gen: LindbladPropagator, residual_tol: float = 1e-10) -> StationaryResult:
    """Extract the stationary state from the generator's null space."""
    if not gen.time_independent:
        raise ValueError("stationary state requires a time-independent generator")
    g = gen.generator_at(0.0)
    _, svals, vh = np.linalg.svd(g)
    smax = svals[0] if len(svals) else 0.0
    null_tol = max(smax * 1e-10, 1e-14)
    nullity = int(np.sum(svals <= null_tol))
    if nullity != 1:
        return StationaryResult(rho=None, nullity=nullity, residual=float("nan"))
    v = vh[-1].conj()
    rho = devectorize(v, gen.dim)
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr) < 1e-12 * max(max_abs(rho), 1e-300):
        return StationaryResult(rho=None, nullity=nullity, residual=float("inf"))
    rho = rho / tr
    residual = max_abs(devectorize(g @ vectorize(rho), gen.dim))
    if residual > residual_tol:
        raise RuntimeError(f"stationary-state residual {residual:.3e} exceeds {residual_tol:.1e}")
    return StationaryResult(rho=validate_density(rho), nullity=1, residual=residual)


@dataclass(frozen=True)
class DensitySeries:
    """Ensemble estimate of the averaged state with per-entry standard errors."""

    times: np.ndarray
    rho: np.ndarray       # (ntimes, d, d)
    stderr: np.ndarray    # (ntimes, d, d) real, combined re/im standard error
    ntraj: int


def apriori_from_trajectories(ensemble: LinearEnsemble | NonlinearEnsemble) -> DensitySeries:
    """Averaged-state estimator from an ensemble.

    Linear ensembles carry the importance weight inside the unnormalized
    vectors, so the plain mean of |psi><psi| estimates the physical average;
    nonlinear ensembles average |psihat><psihat| directly.
    """
    if isinstance(ensemble, LinearEnsemble):
        states = ensemble.psi
    else:
        states = ensemble.psihat
    ntraj = states.shape[0]
    if ntraj == 0:
        raise ValueError("empty ensemble")
    outer = np.einsum("btk,btl->btkl", states, states.conj())
    rho = outer.mean(axis=0)
    if ntraj > 1:
        var = outer.real.var(axis=0, ddof=1) + outer.imag.var(axis=0, ddof=1)
        stderr = np.sqrt(var / ntraj)
    else:
        stderr = np.zeros_like(rho, dtype=float)
    return DensitySeries(times=ensemble.times, rho=rho, stderr=stderr, ntraj=ntraj)
