"""Physical model data and construction of the SDE coefficients.

A :class:`SystemModel` bundles the system Hamiltonian H, the coupling
operators L_j of the emission channels, a monochromatic drive, the detection
unitary family V(t) and an arbitrary Hermitian rotating-frame generator H0.
From these the pair of coefficient families

    K(t) = e^{i H0 t} ( H - (i/2) sum_j L_j^* L_j - H0
                        + i sum_j [ conj(f_j(t)) L_j - f_j(t) L_j^* ] ) e^{-i H0 t}

    R_j(t) = sum_i conj(V(t))_{ij} e^{i H0 t} L_i e^{-i H0 t}

with f_j(t) = lambda_j e^{-i omega0 t} drives both the linear and the
nonlinear trajectory equations as well as the master-equation oracle.

The identity -i (K(t)^* - K(t)) = sum_j R_j(t)^* R_j(t) is what makes the
squared norm of the linear solution a martingale (a probability density);
:func:`verify_weight_identity` checks it on a time grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import adjoint, ensure_finite, is_hermitian, max_abs, spectral_norm

__all__ = [
    "DriveSpec",
    "DetectionSpec",
    "SystemModel",
    "Coefficients",
    "CoefficientTable",
    "effective_hamiltonian",
    "build_coefficients",
    "verify_weight_identity",
    "operator_norm_bounds",
    "WeightIdentityReport",
    "NormBoundReport",
]

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class DriveSpec:
    """Monochromatic drive f_j(t) = amplitudes[j] * exp(-i carrier t).

    ``amplitudes`` has one complex entry per channel; ``carrier`` is the
    angular frequency of the stimulating field.  A constant drive is
    carrier = 0.
    """

    amplitudes: np.ndarray
    carrier: float = 0.0

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", ensure_finite(amps, "drive amplitudes"))
        object.__setattr__(self, "carrier", float(self.carrier))

    def at(self, t: float) -> np.ndarray:
        return self.amplitudes * np.exp(-1j * self.carrier * t)


@dataclass(frozen=True)
class DetectionSpec:
    """Detection unitary family V(t) acting on the channel index.

    kind = "diagonal-phase": V_{ij}(t) = exp(-i nu t) delta_{ij} with local
    oscillator frequency ``nu`` (balanced heterodyne detection).
    kind = "constant-unitary": a fixed J x J unitary ``matrix``.
    """

    kind: str = "diagonal-phase"
    nu: float = 0.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("diagonal-phase", "constant-unitary"):
            raise ValueError(f"unknown detection kind {self.kind!r}")
        if self.kind == "constant-unitary":
            if self.matrix is None:
                raise ValueError("constant-unitary detection needs a matrix")
            v = ensure_finite(self.matrix, "detection matrix")
            if v.ndim != 2 or v.shape[0] != v.shape[1]:
                raise ValueError("detection matrix must be square")
            if max_abs(v.conj().T @ v - np.eye(v.shape[0])) > UNITARY_TOL:
                raise ValueError("detection matrix is not unitary")
            object.__setattr__(self, "matrix", v)
        object.__setattr__(self, "nu", float(self.nu))

    def conj_transpose_at(self, t: float, nchannels: int) -> np.ndarray:
        """V(t)^dagger as a J x J matrix."""
        if self.kind == "diagonal-phase":
            return np.exp(1j * self.nu * t) * np.eye(nchannels)
        return self.matrix.conj().T


@dataclass(frozen=True)
class SystemModel:
    """Physical inputs of a continuously monitored open system.

    Basis convention for two-level examples: index 0 = excited state.
    """

    hamiltonian: np.ndarray
    channels: tuple[np.ndarray, ...]
    drive: DriveSpec
    detection: DetectionSpec
    frame: np.ndarray

    def __post_init__(self):
        h = ensure_finite(self.hamiltonian, "H")
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("H must be square")
        d = h.shape[0]
        if not is_hermitian(h, HERMITIAN_TOL):
            raise ValueError("H must be Hermitian")
        chans = tuple(ensure_finite(L, f"L[{j}]") for j, L in enumerate(self.channels))
        if len(chans) < 1:
            raise ValueError("at least one channel operator is required")
        for j, L in enumerate(chans):
            if L.shape != (d, d):
                raise ValueError(f"L[{j}] has shape {L.shape}, expected {(d, d)}")
        h0 = ensure_finite(self.frame, "H0")
        if h0.shape != (d, d) or not is_hermitian(h0, HERMITIAN_TOL):
            raise ValueError("H0 must be a Hermitian matrix of the system dimension")
        if len(self.drive.amplitudes) != len(chans):
            raise ValueError("drive amplitude count must match channel count")
        if self.detection.kind == "constant-unitary" and self.detection.matrix.shape[0] != len(chans):
            raise ValueError("detection matrix dimension must match channel count")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "frame", h0)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def nchannels(self) -> int:
        return len(self.channels)


def effective_hamiltonian(model: SystemModel) -> np.ndarray:
    """Non-Hermitian effective Hamiltonian H - (i/2) sum_j L_j^* L_j."""
    acc = model.hamiltonian.astype(complex).copy()
    for L in model.channels:
        acc -= 0.5j * (adjoint(L) @ L)
    return acc


class Coefficients:
    """Time-indexed coefficient pair t -> (K(t), [R_j(t)]).

    Immutable and reentrant; the Hermitian frame generator is diagonalized
    once so that e^{+-i H0 t} costs two small matmuls per evaluation.
    """

    def __init__(self, model: SystemModel):
        self.model = model
        self.dim = model.dim
        self.nchannels = model.nchannels
        self._keff = effective_hamiltonian(model)
        self._frame_eigs, self._frame_vecs = np.linalg.eigh(model.frame)
        self._frame_trivial = max_abs(model.frame) == 0.0
        self._lstack = np.stack(model.channels)

    def _frame_rotation(self, t: float) -> np.ndarray:
        """e^{i H0 t} from the cached eigendecomposition."""
        phases = np.exp(1j * self._frame_eigs * t)
        return (self._frame_vecs * phases) @ self._frame_vecs.conj().T

    def k_at(self, t: float) -> np.ndarray:
        model = self.model
        f = model.drive.at(t)
        core = self._keff - model.frame
        for j, L in enumerate(model.channels):
            if f[j] != 0:
                core = core + 1j * (np.conj(f[j]) * L - f[j] * adjoint(L))
        if self._frame_trivial:
            return core
        u = self._frame_rotation(t)
        return u @ core @ u.conj().T

    def r_at(self, t: float) -> np.ndarray:
        """Stacked (J, d, d) array of the R_j(t)."""
        vdag = self.model.detection.conj_transpose_at(t, self.nchannels)
        if self._frame_trivial:
            rotated = self._lstack
        else:
            u = self._frame_rotation(t)
            rotated = u @ self._lstack @ u.conj().T
        return np.einsum("ji,ikl->jkl", vdag, rotated)

    def at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self.k_at(t), self.r_at(t)

    def tabulate(self, times: np.ndarray) -> "CoefficientTable":
        times = np.asarray(times, dtype=float)
        k = np.empty((len(times), self.dim, self.dim), dtype=complex)
        r = np.empty((len(times), self.nchannels, self.dim, self.dim), dtype=complex)
        for n, t in enumerate(times):
            k[n] = self.k_at(t)
            r[n] = self.r_at(t)
        return CoefficientTable(times=times, k=k, r=r)


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients pre-evaluated on a time grid (shared by ensemble workers)."""

    times: np.ndarray
    k: np.ndarray  # (n, d, d)
    r: np.ndarray  # (n, J, d, d)

    @property
    def dim(self) -> int:
        return self.k.shape[1]

    @property
    def nchannels(self) -> int:
        return self.r.shape[1]


def build_coefficients(model: SystemModel) -> Coefficients:
    return Coefficients(model)


@dataclass(frozen=True)
class WeightIdentityReport:
    """Residuals of -i(K^* - K) = sum_j R_j^* R_j on a time grid."""

    times: np.ndarray
    residuals: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.residuals <= self.tol))

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if len(self.residuals) else 0.0


def weight_identity_residual(k: np.ndarray, r: np.ndarray) -> float:
    """Max-entry norm of -i(K^* - K) - sum_j R_j^* R_j."""
    lhs = -1j * (k.conj().T - k)
    rhs = np.einsum("jlk,jlm->km", r.conj(), r)
    return max_abs(lhs - rhs)


def verify_weight_identity(coeffs: Coefficients, times, tol: float = 1e-11) -> WeightIdentityReport:
    """Check the martingale (weight-conservation) identity at each time.

    A failure is reported, not raised: hand-built coefficients may violate
    the identity on purpose.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    times = np.asarray(times, dtype=float)
    residuals = np.array([weight_identity_residual(*coeffs.at(t)) for t in times])
    return WeightIdentityReport(times=times, residuals=residuals, tol=tol)


@dataclass(frozen=True)
class NormBoundReport:
    """Grid suprema of ||sum_j R_j^* R_j|| and ||K|| over [0, horizon]."""

    horizon: float
    ngrid: int
    sup_rr: float
    sup_k: float


def operator_norm_bounds(coeffs: Coefficients, horizon: float, ngrid: int = 101) -> NormBoundReport:
    """Informational coefficient norm bounds (always finite in finite dimension)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    sup_rr = 0.0
    sup_k = 0.0
    for t in np.linspace(0.0, horizon, ngrid):
        k, r = coeffs.at(t)
        rr = np.einsum("jlk,jlm->km", r.conj(), r)
        sup_rr = max(sup_rr, spectral_norm(rr))
        sup_k = max(sup_k, spectral_norm(k))
    return NormBoundReport(horizon=horizon, ngrid=ngrid, sup_rr=sup_rr, sup_k=sup_k)
