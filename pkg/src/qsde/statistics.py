"""Measurement-output statistics: analytic moments, Monte Carlo estimators,
Wiener-law diagnostics and the heterodyne spectrum scan.

Analytic side.  The first moment of the output of channel k is

    E[W_k(t)] = int_0^t Tr{ rho_s (R_k(s) + R_k^*(s)) } ds

along the master-equation solution, and the second moments are

    E[W_i(t1) W_j(t2)] = min(t1, t2)
      + int_0^{t1} ds1 int_0^{min(t2, s1)} ds2
            Tr{ (R_i(s1)+R_i^*(s1)) U(s1,s2)[ R_j(s2) rho_{s2} + rho_{s2} R_j^*(s2) ] }
      + (the same with (i, t1) and (j, t2) exchanged),

with U the two-time master propagator.  The double integrals are iterated
trapezoid sums over the triangular domains; they are evaluated by a running
recurrence (advance the inner integral with the one-step propagator) that
reproduces the trapezoid sum exactly while costing O(n) instead of O(n^2).

Monte Carlo side.  Physical-law expectations are reference-measure averages
weighted by ||psi||^2 at the latest time entering each functional (linear
unraveling), or plain averages over normalized trajectories (nonlinear
unraveling).  Error bars are leave-one-trajectory-out jackknife.

Spectrum.  S(nu) = E[W_0(T)^2] / T with the system started in the
stationary state, scanned over the local-oscillator frequency nu; a
variance-rate variant subtracting E[W_0(T)]^2/T is available (it removes
the coherent-scattering line at the carrier).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _norm

from .linalg import adjoint, matrix_exp, vectorize
from .master import (
    DegenerateStationaryState,
    LindbladPropagator,
    master_series,
    stationary_state,
)
from .model import Coefficients, build_coefficients
from .trajectories import LinearEnsemble

__all__ = [
    "analytic_mean_series",
    "analytic_mean_output",
    "analytic_second_moment",
    "mc_mean_output",
    "mc_second_moment",
    "mc_output_moments",
    "MomentReport",
    "SecondMomentRow",
    "wiener_law_tests",
    "WienerLawReport",
    "WienerLawRow",
    "spectrum_scan",
    "SpectrumScan",
    "jackknife_stderr",
]


# ---------------------------------------------------------------------------
# Analytic moments
# ---------------------------------------------------------------------------

def _uniform_grid(t: float, dt: float) -> np.ndarray:
    nsteps = max(1, int(round(t / dt)))
    return (t / nsteps) * np.arange(nsteps + 1)


def analytic_mean_series(coeffs: Coefficients, gen: LindbladPropagator, rho0: np.ndarray,
                         t: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative E[W_k(s)] for all channels on the grid covering [0, t].

    Trapezoid quadrature of Tr{rho_s (R_k + R_k^*)} along the RK4 solution,
    on the same grid.  Returns (times, means) with means[n, k].
    """
    times = _uniform_grid(t, dt)
    rho = master_series(gen, rho0, times)
    integrand = np.empty((len(times), coeffs.nchannels))
    for n, s in enumerate(times):
        r = coeffs.r_at(s)
        integrand[n] = 2.0 * np.einsum("jkl,lk->j", r, rho[n]).real
    h = times[1] - times[0] if len(times) > 1 else 0.0
    means = np.zeros_like(integrand)
    if len(times) > 1:
        avg = 0.5 * (integrand[1:] + integrand[:-1])
        means[1:] = h * np.cumsum(avg, axis=0)
    return times, means


def analytic_mean_output(coeffs: Coefficients, gen: LindbladPropagator, rho0: np.ndarray,
                         k: int, t: float, dt: float) -> float:
    """E[W_k(t)] under the physical law."""
    if t == 0:
        return 0.0
    _, means = analytic_mean_series(coeffs, gen, rho0, t, dt)
    return float(means[-1, k])


def _ordered_double_integral(coeffs: Coefficients, gen: LindbladPropagator,
                             rho: np.ndarray, i: int, j: int,
                             t_outer: float, t_inner: float, dt: float) -> float:
    """One ordered term of the second-moment formula.

    Integral over 0 <= s2 <= min(t_inner, s1), 0 <= s1 <= t_outer of
    Tr{(R_i(s1)+R_i^*(s1)) U(s1,s2)[R_j(s2) rho_{s2} + rho_{s2} R_j^*(s2)]},
    as an iterated trapezoid sum on the grid of spacing dt.  The inner sum
    is carried along with the one-step propagator, so each grid diagonal is
    visited once.
    """
    n_out = int(round(t_outer / dt))
    n_cap = int(round(t_inner / dt))
    if n_out == 0 or n_cap == 0:
        return 0.0
    d = gen.dim
    constant = gen.time_independent
    if constant:
        e_step = matrix_exp(gen.generator_at(0.0), dt)

    def m_vec(n: int) -> np.ndarray:
        rj = coeffs.r_at(n * dt)[j]
        return vectorize(rj @ rho[n] + rho[n] @ adjoint(rj))

    acc = np.zeros(d * d, dtype=complex)
    total = 0.0
    m_prev = m_vec(0)
    for n1 in range(n_out + 1):
        ri = coeffs.r_at(n1 * dt)[i]
        q = vectorize(ri + adjoint(ri))
        w_out = 0.5 if n1 in (0, n_out) else 1.0
        total += w_out * (q.conj() @ acc).real * dt
        if n1 == n_out:
            break
        step = e_step if constant else matrix_exp(gen.generator_at((n1 + 0.5) * dt), dt)
        if n1 < n_cap:
            m_next = m_vec(n1 + 1)
            acc = step @ (acc + (0.5 * dt) * m_prev) + (0.5 * dt) * m_next
            m_prev = m_next
        else:
            acc = step @ acc
    return total


def analytic_second_moment(coeffs: Coefficients, gen: LindbladPropagator, rho0: np.ndarray,
                           i: int, j: int, t1: float, t2: float, dt: float) -> float:
    """E[W_i(t1) W_j(t2)] under the physical law.

    Shot-noise term delta_{ij} min(t1, t2) plus both ordered double
    integrals; with all channel operators zero this reduces exactly to
    delta_{ij} min(t1, t2).  The Kronecker delta on the shot-noise term
    follows from the independence of the shifted noises: distinct channels
    carry no common white-noise component.
    """
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be nonnegative")
    t_max = max(t1, t2)
    if t_max == 0:
        return 0.0
    times = _uniform_grid(t_max, dt)
    h = times[1] - times[0]
    rho = master_series(gen, rho0, times)
    total = min(t1, t2) if i == j else 0.0
    total += _ordered_double_integral(coeffs, gen, rho, i, j, t1, t2, h)
    total += _ordered_double_integral(coeffs, gen, rho, j, i, t2, t1, h)
    return float(total)


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------

def jackknife_stderr(contributions: np.ndarray) -> float:
    """Leave-one-out jackknife standard error of a mean over trajectories."""
    a = np.asarray(contributions, dtype=float)
    n = len(a)
    if n < 2:
        return 0.0
    theta = a.mean()
    loo = (n * theta - a) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def _weights_at(ensemble, idx: int) -> np.ndarray:
    if isinstance(ensemble, LinearEnsemble):
        return ensemble.weight[:, idx]
    return np.ones(ensemble.ntraj)


def _time_index(ensemble, t: float) -> int:
    idx = np.where(np.isclose(ensemble.times, t, rtol=0.0, atol=1e-9))[0]
    if len(idx) == 0:
        raise ValueError(f"time {t} is not a checkpoint of the ensemble grid")
    return int(idx[0])


def mc_mean_output(ensemble, k: int, t: float) -> tuple[float, float]:
    """Weighted estimate of E[W_k(t)] with jackknife standard error."""
    idx = _time_index(ensemble, t)
    contrib = _weights_at(ensemble, idx) * ensemble.w_path[:, idx, k]
    return float(contrib.mean()), jackknife_stderr(contrib)


def mc_second_moment(ensemble, i: int, j: int, t1: float, t2: float) -> tuple[float, float]:
    """Weighted estimate of E[W_i(t1) W_j(t2)] with jackknife standard error.

    The weight is taken at max(t1, t2), the earliest time at which the
    product is measurable.
    """
    i1 = _time_index(ensemble, t1)
    i2 = _time_index(ensemble, t2)
    iw = i1 if t1 >= t2 else i2
    contrib = (_weights_at(ensemble, iw)
               * ensemble.w_path[:, i1, i] * ensemble.w_path[:, i2, j])
    return float(contrib.mean()), jackknife_stderr(contrib)


@dataclass(frozen=True)
class SecondMomentRow:
    i: int
    j: int
    t1: float
    t2: float
    analytic: float
    mc: float
    stderr: float


@dataclass(frozen=True)
class MomentReport:
    """First and second output moments: analytic values vs MC estimates."""

    times: np.ndarray
    analytic_mean: np.ndarray   # (ntimes, J)
    mc_mean: np.ndarray         # (ntimes, J)
    mc_mean_stderr: np.ndarray  # (ntimes, J)
    second: tuple[SecondMomentRow, ...] = field(default=())
    ntraj: int = 0


def mc_output_moments(ensemble, coeffs: Coefficients, gen: LindbladPropagator,
                      rho0: np.ndarray, dt: float,
                      pairs: tuple[tuple[int, int, float, float], ...] = ()) -> MomentReport:
    """Build a full moment report for the ensemble checkpoints.

    ``pairs`` lists (i, j, t1, t2) second-moment requests; checkpoint grids
    of the ensemble must contain the requested times.
    """
    times = ensemble.times
    nchan = ensemble.w_path.shape[2]
    horizon = float(times[-1])
    _, mean_series = analytic_mean_series(coeffs, gen, rho0, horizon, dt) if horizon > 0 else (
        times, np.zeros((len(times), nchan)))
    if horizon > 0:
        grid = _uniform_grid(horizon, dt)
        analytic = np.empty((len(times), nchan))
        for m, t in enumerate(times):
            analytic[m] = mean_series[int(round(t / (grid[1] - grid[0])))]
    else:
        analytic = np.zeros((len(times), nchan))
    mc = np.empty((len(times), nchan))
    se = np.empty((len(times), nchan))
    for m in range(len(times)):
        w = _weights_at(ensemble, m)
        for k in range(nchan):
            contrib = w * ensemble.w_path[:, m, k]
            mc[m, k] = contrib.mean()
            se[m, k] = jackknife_stderr(contrib)
    rows = []
    for (i, j, t1, t2) in pairs:
        value, stderr = mc_second_moment(ensemble, i, j, t1, t2)
        ana = analytic_second_moment(coeffs, gen, rho0, i, j, t1, t2, dt)
        rows.append(SecondMomentRow(i=i, j=j, t1=t1, t2=t2, analytic=ana,
                                    mc=value, stderr=stderr))
    return MomentReport(times=times, analytic_mean=analytic, mc_mean=mc,
                        mc_mean_stderr=se, second=tuple(rows), ntraj=ensemble.ntraj)


# ---------------------------------------------------------------------------
# Wiener-law diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WienerLawRow:
    name: str
    statistic: float
    expected: float
    stderr: float
    passed: bool


@dataclass(frozen=True)
class WienerLawReport:
    confidence: float
    reweighted: bool
    rows: tuple[WienerLawRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, name: str) -> WienerLawRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def wiener_law_tests(ensemble, confidence: float = 0.99, reweight: bool = True) -> WienerLawReport:
    """Moment tests of the shifted noises under the physical law.

    Checkpoint increments of the innovation path, scaled to unit variance,
    are tested for mean 0, variance 1, vanishing cross-channel covariance
    and vanishing lag-1 autocovariance.  Linear ensembles are reweighted by
    the final-time weight (valid for all earlier functionals by the
    martingale property); ``reweight=False`` is the negative control.
    """
    times = ensemble.times
    if len(times) < 3:
        raise ValueError("need at least two checkpoint increments")
    dts = np.diff(times)
    z = np.diff(ensemble.innovation, axis=1) / np.sqrt(dts)[None, :, None]
    ntraj, nint, nchan = z.shape
    if reweight and isinstance(ensemble, LinearEnsemble):
        w = ensemble.weight[:, -1]
    else:
        w = np.ones(ntraj)
    zcrit = float(_norm.ppf(0.5 * (1.0 + confidence)))

    def run(name: str, per_traj: np.ndarray, expected: float) -> WienerLawRow:
        contrib = w * per_traj
        stat = float(contrib.mean())
        se = jackknife_stderr(contrib)
        passed = abs(stat - expected) <= zcrit * se
        return WienerLawRow(name=name, statistic=stat, expected=expected,
                            stderr=se, passed=passed)

    rows = []
    for k in range(nchan):
        rows.append(run(f"mean[{k}]", z[:, :, k].mean(axis=1), 0.0))
        rows.append(run(f"variance[{k}]", (z[:, :, k] ** 2).mean(axis=1), 1.0))
        if nint >= 2:
            rows.append(run(f"lag1[{k}]",
                            (z[:, :-1, k] * z[:, 1:, k]).mean(axis=1), 0.0))
    for a in range(nchan):
        for b in range(a + 1, nchan):
            rows.append(run(f"cross[{a},{b}]",
                            (z[:, :, a] * z[:, :, b]).mean(axis=1), 0.0))
    return WienerLawReport(confidence=confidence, reweighted=reweight, rows=tuple(rows))


# ---------------------------------------------------------------------------
# Spectrum scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectrumScan:
    """S(nu) on a local-oscillator frequency grid."""

    nu: np.ndarray
    values: np.ndarray
    horizon: float
    dt: float
    channel: int
    subtract_mean: bool


def _check_factory_varies_only_detection(model_factory, nu_grid):
    a = model_factory(float(nu_grid[0]))
    b = model_factory(float(nu_grid[-1]))
    same = (a.detection.kind == "diagonal-phase" == b.detection.kind
            and np.array_equal(a.hamiltonian, b.hamiltonian)
            and np.array_equal(a.frame, b.frame)
            and all(np.array_equal(x, y) for x, y in zip(a.channels, b.channels))
            and np.array_equal(a.drive.amplitudes, b.drive.amplitudes)
            and a.drive.carrier == b.drive.carrier)
    if not same:
        raise ValueError("spectrum scan requires a factory that varies only the "
                         "diagonal-phase detection frequency")
    return a


def spectrum_scan(model_factory, nu_grid, horizon: float, dt: float,
                  channel: int = 0, rho0: np.ndarray | None = None,
                  subtract_mean: bool = False) -> SpectrumScan:
    """Scan S(nu) = E[W_channel(T)^2] / T over the detection frequency grid.

    The initial state defaults to the stationary state of the (detection
    independent) generator; a non-unique stationary manifold is an error
    unless ``rho0`` is supplied.  All nu values share the correlation
    kernels; only the detection phases differ, so the scan costs one kernel
    sweep regardless of the grid size.  Each value equals the iterated
    trapezoid evaluation of the printed second-moment formula at
    t1 = t2 = horizon.
    """
    nu_grid = np.asarray(nu_grid, dtype=float)
    if len(nu_grid) == 0:
        raise ValueError("empty frequency grid")
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    _check_factory_varies_only_detection(model_factory, nu_grid)
    base = build_coefficients(model_factory(0.0))
    gen = LindbladPropagator(base)
    if not gen.time_independent:
        raise ValueError("spectrum scan requires a time-independent generator")
    if rho0 is None:
        st = stationary_state(gen)
        if st.degenerate:
            raise DegenerateStationaryState(
                f"stationary manifold has dimension {st.nullity}; supply rho0")
        rho0 = st.rho
    d = base.dim
    nsteps = max(1, int(round(horizon / dt)))
    h = horizon / nsteps
    times = h * np.arange(nsteps + 1)
    rho = master_series(gen, rho0, times)

    # nu-independent streams: with diagonal-phase detection the measured
    # channel operator is R^{(nu)}(s) = e^{i nu s} B(s).
    b_ops = np.empty((nsteps + 1, d, d), dtype=complex)
    for n, s in enumerate(times):
        b_ops[n] = base.r_at(s)[channel]
    mu1 = np.empty((nsteps + 1, d * d), dtype=complex)
    mu2 = np.empty((nsteps + 1, d * d), dtype=complex)
    qv1c = np.empty((nsteps + 1, d * d), dtype=complex)
    qv2c = np.empty((nsteps + 1, d * d), dtype=complex)
    tr_b_rho = np.empty(nsteps + 1, dtype=complex)
    for n in range(nsteps + 1):
        bn = b_ops[n]
        mu1[n] = vectorize(bn @ rho[n])
        mu2[n] = vectorize(rho[n] @ adjoint(bn))
        qv1c[n] = vectorize(bn).conj()
        qv2c[n] = vectorize(adjoint(bn)).conj()
        tr_b_rho[n] = np.trace(bn @ rho[n])

    e_step = matrix_exp(gen.generator_at(0.0), h)
    e_t = e_step.T.copy()
    nnu = len(nu_grid)
    acc = np.zeros((nnu, d * d), dtype=complex)
    total = np.zeros(nnu)
    mean_acc = np.zeros(nnu, dtype=complex)
    phases = np.exp(1j * np.outer(nu_grid, times))  # (nnu, nsteps + 1)
    for n in range(nsteps + 1):
        ph = phases[:, n]
        val = ph.conj() * (acc @ qv1c[n]) + ph * (acc @ qv2c[n])
        w_out = 0.5 if n in (0, nsteps) else 1.0
        total += w_out * val.real * h
        mean_acc += w_out * ph * tr_b_rho[n] * h
        if n == nsteps:
            break
        m_n = ph[:, None] * mu1[n][None, :] + ph.conj()[:, None] * mu2[n][None, :]
        ph1 = phases[:, n + 1]
        m_next = ph1[:, None] * mu1[n + 1][None, :] + ph1.conj()[:, None] * mu2[n + 1][None, :]
        acc = (acc + (0.5 * h) * m_n) @ e_t + (0.5 * h) * m_next

    second = horizon + 2.0 * total
    values = second / horizon
    if subtract_mean:
        mean = 2.0 * mean_acc.real
        values = (second - mean ** 2) / horizon
    return SpectrumScan(nu=nu_grid, values=values, horizon=horizon, dt=h,
                        channel=channel, subtract_mean=subtract_mean)
