"""Boundary impact matrices, the martingale kernel, and its no-arbitrage projection.

The immediate matrix K(0) and the permanent matrix Lambda both solve a
Kyle-type quadratic M c M^T = Sigma/2 for different flow-covariance
conditioners c.  The martingale kernel is reconstructed from a spectral
factor of the flow covariance; the no-arbitrage kernel clips the
negative eigenvalues of its symmetrized transform per frequency.

All frequency-domain checks share one transform convention: for a
kernel with permanent part Lambda, Zhat(omega) is the transform of the
two-sided extension of the transient K - Lambda with the lag-0 atom
counted once.  Zhat is Hermitian per frequency whenever K(0) is
symmetric, and clipping it is an exact projection that round-trips
through the stored lattice values.
"""
from __future__ import annotations

import dataclasses
import json
import pathlib
import warnings

import numpy as np

from .observables import ObservableSet
from .polymat import (DEFAULT_GRID, InvertedFactor, SpectralFactor,
                      _next_pow2, invert_factor)


class KernelError(ValueError):
    pass


@dataclasses.dataclass
class ImpactKernel:
    """Sampled matrix impact kernel on a uniform lag lattice.

    values[t] is the price move (currency per contract unit) at lag
    t * delta per unit of signed flow; values[0] equals k0 and the tail
    approaches the permanent matrix lam.
    """

    delta: float
    values: np.ndarray        # (n_lags+1, d, d)
    k0: np.ndarray
    lam: np.ndarray
    provenance: str = "analytic"
    grid: int = DEFAULT_GRID
    tail_tol: float = 1e-3
    diagnostics: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.k0 = np.asarray(self.k0, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def n_lags(self):
        return self.values.shape[0] - 1

    @property
    def tau_max(self):
        return self.n_lags * self.delta

    def tail_error(self) -> float:
        denom = max(np.linalg.norm(self.lam), np.linalg.norm(self.k0))
        return np.linalg.norm(self.values[-1] - self.lam) / denom

    def value_at(self, tau) -> np.ndarray:
        """Kernel at arbitrary nonnegative lag: linear interpolation on
        the lattice, plateau at lam beyond it."""
        if tau < 0:
            return np.zeros((self.d, self.d))
        x = tau / self.delta
        n = self.n_lags
        if x >= n:
            return self.lam.copy()
        i = int(np.floor(x))
        w = x - i
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]


def _sym(m):
    return 0.5 * (m + m.T)


def _psd_sqrt(m, neg_tol, what):
    m = _sym(np.asarray(m, dtype=float))
    w, v = np.linalg.eigh(m)
    scale = max(np.abs(w).max(), 1e-300)
    if w.min() < -neg_tol * scale:
        raise KernelError(f"{what} is indefinite beyond tolerance "
                          f"(min eigenvalue {w.min():.3e})")
    return v @ np.diag(np.sqrt(np.maximum(w, 0.0))) @ v.T


def kyle_matrix(sigma, c, neg_tol: float = 1e-8) -> np.ndarray:
    """Unique symmetric PSD M with M c M^T = Sigma / 2.

    Uses a Cholesky factor L of the conditioner c; the result does not
    depend on the factorization choice.
    """
    sigma = np.asarray(sigma, dtype=float)
    c = _sym(np.asarray(c, dtype=float))
    try:
        chol = np.linalg.cholesky(c)
    except np.linalg.LinAlgError as exc:
        raise KernelError("flow conditioner is not positive definite") from exc
    inner = _psd_sqrt(chol.T @ sigma @ chol, neg_tol, "return covariance")
    li = np.linalg.inv(chol)
    m = li.T @ inner @ li / np.sqrt(2.0)
    return _sym(m)


def compute_K0(obs: ObservableSet, atom_reference=None):
    """Immediate impact matrix from sigma and the flow atom omega(0).

    When a model-implied diagonal diag(theta v^2) is supplied as
    atom_reference, the ratio against the estimated atom is returned as
    a consistency diagnostic (the estimated atom of a balanced buy/sell
    flow runs at twice the one-sided value).
    """
    k0 = kyle_matrix(obs.sigma, obs.omega_zero)
    if atom_reference is None:
        return k0
    ref = np.asarray(atom_reference, dtype=float)
    ratio = np.diag(obs.omega_zero) / np.where(np.diag(ref) > 0,
                                               np.diag(ref), np.nan)
    return k0, {"atom_over_reference": ratio.tolist()}


def compute_Lambda(obs: ObservableSet, neg_tol: float = 1e-8) -> np.ndarray:
    """Permanent impact matrix from sigma and the aggregate omega_inf.

    Small negative eigenvalues of omega_inf (estimation noise) are
    projected out before the Cholesky factorization; larger violations
    abort.
    """
    c = _sym(obs.omega_inf)
    w, v = np.linalg.eigh(c)
    tr = max(np.trace(c), 1e-300)
    if w.min() < -neg_tol * tr:
        raise KernelError("omega_inf indefinite beyond tolerance")
    if w.min() <= 0:
        floor = 1e-12 * tr
        c = v @ np.diag(np.maximum(w, floor)) @ v.T
        c = _sym(c)
    return kyle_matrix(obs.sigma, c)


# ---------------------------------------------------------------------------
# Martingale kernel
# ---------------------------------------------------------------------------

def build_K1(obs: ObservableSet, factor: SpectralFactor,
             inverse: InvertedFactor | None = None,
             tau_max: int | None = None, n_grid: int | None = None,
             tail_tol: float = 1e-3,
             residual_bound: float = 1e-4) -> ImpactKernel:
    """Martingale-consistent kernel with no-arbitrage boundary matrices.

    On the circle grid the derivative transform is M L(omega)^{-1} - K(0)
    with M = Lambda L(0), which pins both the flow-covariance identity
    and the zero-frequency boundary K(0) + Khat'(0) = Lambda.  The lag
    coefficients recovered by inverse FFT are treated as derivative
    densities at cell midpoints; the kernel is their half-cell-corrected
    cumulative sum.
    """
    if factor.residual > residual_bound:
        raise KernelError(f"factor residual {factor.residual:.2e} exceeds "
                          f"{residual_bound:.0e}")
    k0 = compute_K0(obs)
    lam = compute_Lambda(obs)
    if inverse is None:
        inverse = invert_factor(factor)
    n = n_grid or DEFAULT_GRID
    if tau_max is None:
        tau_max = obs.tau_max
    if tau_max >= n // 2:
        raise KernelError("tau_max must be below half the grid size")
    wrapped = inverse.inverse.order >= n
    if wrapped:
        warnings.warn("inverse factor support exceeds the frequency grid; "
                      "far tails alias into the kept lags")
    l0 = factor.l.eval_at_one()
    try:
        l0_inv_check = np.linalg.cond(l0)
    except np.linalg.LinAlgError as exc:
        raise KernelError("L(0) is singular") from exc
    if not np.isfinite(l0_inv_check) or l0_inv_check > 1e12:
        raise KernelError("L(0) is numerically singular")
    m_mat = lam @ l0
    linv_w = inverse.inverse.eval_on_circle(n, allow_wrap=True)
    fhat = m_mat[None] @ linv_w - k0[None]
    g = np.fft.ifft(fhat, axis=0)
    imag_mass = np.abs(g.imag).max() / max(np.abs(g.real).max(), 1e-300)
    g = g.real
    d = obs.d
    values = np.zeros((tau_max + 1, d, d))
    values[0] = k0
    csum = np.cumsum(g[:tau_max + 1], axis=0)
    for t in range(1, tau_max + 1):
        values[t] = k0 + csum[t - 1] + 0.5 * g[t]
    # rotation diagnostic: G O = M with G G^T = Lambda omega_inf Lambda^T
    diag = {"factor_residual": factor.residual, "imag_mass": imag_mass,
            "inverse_tail_bound": inverse.tail_bound,
            "pole_modulus": inverse.pole_modulus,
            "inverse_wrapped": bool(wrapped)}
    gram = _sym(lam @ obs.omega_inf @ lam.T)
    try:
        gchol = np.linalg.cholesky(gram)
        rot = np.linalg.solve(gchol, m_mat)
        diag["rotation_residual"] = float(
            np.linalg.norm(rot @ rot.T - np.eye(d)))
        diag["rotation_conditioning"] = float(np.linalg.cond(gram))
    except np.linalg.LinAlgError:
        diag["rotation_residual"] = float("nan")
        diag["rotation_conditioning"] = float("inf")
    kernel = ImpactKernel(delta=obs.delta, values=values, k0=k0, lam=lam,
                          provenance="k1", grid=n, tail_tol=tail_tol,
                          diagnostics=diag)
    tail = kernel.tail_error()
    diag["tail_error"] = tail
    if tail > tail_tol:
        warnings.warn(f"kernel tail does not reach the permanent matrix: "
                      f"relative gap {tail:.2e} (tolerance {tail_tol:.0e})")
    return kernel


# ---------------------------------------------------------------------------
# Symmetrized transform, clipping, admissibility
# ---------------------------------------------------------------------------

def symmetrized_transform(kernel: ImpactKernel,
                          n_grid: int | None = None) -> np.ndarray:
    """Zhat(omega_k) = Khat + Khat^* of the transient part K - Lambda.

    The transient sequence is reflected with its transpose to negative
    lags, the lag-0 atom counted once, and transformed on an FFT grid
    large enough to hold the full two-sided support, so the transform is
    exactly Hermitian and bijective with the stored lattice values.
    """
    n = n_grid or kernel.grid
    trans = kernel.values - kernel.lam[None]
    support = trans.shape[0] - 1
    if 2 * support > n:
        n = _next_pow2(2 * support)
    d = kernel.d
    x = np.zeros((n, d, d))
    x[0] = trans[0]
    half = n // 2
    for t in range(1, support + 1):
        if t == half:
            x[t] += _sym(trans[t])
        else:
            x[t] += trans[t]
            x[n - t] += trans[t].T
    return np.fft.fft(x, axis=0)


def regularize_K2(k1: ImpactKernel, n_grid: int | None = None) -> ImpactKernel:
    """Nearest kernel whose symmetrized transform is PSD per frequency.

    The Hermitian Zhat of the input is eigendecomposed at every grid
    frequency and its negative eigenvalues are clipped to zero; the
    anti-Hermitian (odd-reflection) content of the kernel is untouched
    by construction.  The result is stored on the extended lattice that
    exactly supports the clipped transform, making the operation
    idempotent and the post-clip grid check exact.
    """
    if k1.provenance not in ("k1", "analytic", "k2"):
        raise KernelError(f"unexpected provenance {k1.provenance!r}")
    n = n_grid or k1.grid
    support = k1.values.shape[0] - 1
    if 2 * support > n:
        n = _next_pow2(2 * support)
    zhat = symmetrized_transform(k1, n)
    herm = 0.5 * (zhat + zhat.conj().transpose(0, 2, 1))
    w, v = np.linalg.eigh(herm)
    clipped_mass = float(np.sqrt(np.sum(np.minimum(w, 0.0) ** 2)))
    wp = np.maximum(w, 0.0)
    zclip = v @ (wp[:, :, None] * v.conj().transpose(0, 2, 1))
    z = np.fft.ifft(zclip, axis=0)
    z = z.real
    d = k1.d
    half = n // 2
    lam_sym = _sym(k1.lam)
    lam_w, lam_v = np.linalg.eigh(lam_sym)
    if lam_w.min() >= 0.0:
        # keep bits stable when no projection is needed
        lam2 = k1.lam if np.array_equal(lam_sym, k1.lam) else lam_sym
    else:
        lam2 = _sym(lam_v @ np.diag(np.maximum(lam_w, 0.0)) @ lam_v.T)
    values = np.zeros((half + 1, d, d))
    values[0] = lam2 + z[0]
    values[1:half] = lam2[None] + z[1:half]
    values[half] = lam2 + z[half]
    k0_new = values[0].copy()
    diag = dict(k1.diagnostics)
    diag.update({
        "clipped_negative_mass": clipped_mass,
        "source_k0": k1.k0.tolist(),
        "spectral_distance_to_input": float(
            np.linalg.norm(zclip - zhat) / max(np.linalg.norm(zhat), 1e-300)),
    })
    return ImpactKernel(delta=k1.delta, values=values, k0=k0_new, lam=lam2,
                        provenance="k2", grid=n, tail_tol=k1.tail_tol,
                        diagnostics=diag)


@dataclasses.dataclass
class AdmissibilityReport:
    """Grid-level necessary conditions for a no-arbitrage kernel.

    The verdict covers the symmetry of K(0), the spectral positivity of
    the symmetrized transform, and symmetry/positivity of the permanent
    matrix; these are necessary conditions only, so a pass reads
    "necessary conditions pass", never "admissible".  The slope
    antisymmetry residual at lag zero applies to twice-differentiable
    kernels and is reported as information, not folded into the verdict.
    """

    k0_symmetry: float
    kprime0_antisymmetry: float
    min_spectral_eig: float          # relative to the spectral scale
    lambda_symmetry: float
    lambda_min_eig: float            # relative to |lambda|
    tol: float
    verdict: bool
    notes: list

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["label"] = ("necessary conditions pass" if self.verdict
                        else "necessary conditions fail")
        return out


def nsa_check(kernel: ImpactKernel, tol: float = 1e-6,
              n_grid: int | None = None) -> AdmissibilityReport:
    """Check the grid-level no-statistical-arbitrage necessary conditions."""
    notes = []
    k0 = kernel.k0
    k0_scale = max(np.linalg.norm(k0), 1e-300)
    k0_sym = float(np.linalg.norm(k0 - k0.T) / k0_scale)
    # one-sided second-order slope at lag 0
    if kernel.values.shape[0] >= 3:
        dv = kernel.delta
        kp0 = (-3.0 * kernel.values[0] + 4.0 * kernel.values[1]
               - kernel.values[2]) / (2.0 * dv)
        kp_scale = max(np.linalg.norm(kp0), 1e-300)
        kp_anti = float(np.linalg.norm(kp0 + kp0.T) / kp_scale)
    else:
        kp_anti = float("nan")
        notes.append("kernel too short for a slope estimate")
    zhat = symmetrized_transform(kernel, n_grid)
    herm = 0.5 * (zhat + zhat.conj().transpose(0, 2, 1))
    asym = np.abs(zhat - herm).max()
    w = np.linalg.eigvalsh(herm)
    scale = max(np.abs(w).max(), 1e-300)
    if asym > 1e-9 * scale:
        notes.append("transform not Hermitian (asymmetric immediate matrix)")
    min_eig = float(w.min() / scale)
    lam = kernel.lam
    lam_scale = max(np.linalg.norm(lam), 1e-300)
    lam_sym = float(np.linalg.norm(lam - lam.T) / lam_scale)
    lam_eigs = np.linalg.eigvalsh(_sym(lam))
    lam_min = float(lam_eigs.min() / max(np.abs(lam_eigs).max(), 1e-300))
    verdict = (k0_sym <= tol and min_eig >= -tol and lam_sym <= tol
               and lam_min >= -tol)
    return AdmissibilityReport(k0_symmetry=k0_sym,
                               kprime0_antisymmetry=kp_anti,
                               min_spectral_eig=min_eig,
                               lambda_symmetry=lam_sym,
                               lambda_min_eig=lam_min,
                               tol=tol, verdict=verdict, notes=notes)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_kernel(directory, kernel: ImpactKernel):
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "k0.csv", kernel.k0, fmt="%.17g", delimiter=",")
    np.savetxt(directory / "lambda.csv", kernel.lam, fmt="%.17g",
               delimiter=",")
    for t in range(kernel.values.shape[0]):
        np.savetxt(directory / f"kernel_lag_{t}.csv", kernel.values[t],
                   fmt="%.17g", delimiter=",")
    meta = {"delta": kernel.delta, "n_lags": kernel.n_lags,
            "grid": kernel.grid, "provenance": kernel.provenance,
            "tail_tol": kernel.tail_tol, "d": kernel.d,
            "diagnostics": _json_safe(kernel.diagnostics)}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True,
                                                    indent=1))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def load_kernel(directory) -> ImpactKernel:
    directory = pathlib.Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise KernelError(f"{directory} is not a kernel directory")
    meta = json.loads(meta_path.read_text())
    k0 = np.atleast_2d(np.loadtxt(directory / "k0.csv", delimiter=","))
    lam = np.atleast_2d(np.loadtxt(directory / "lambda.csv", delimiter=","))
    n_lags = meta["n_lags"]
    d = meta["d"]
    values = np.zeros((n_lags + 1, d, d))
    for t in range(n_lags + 1):
        values[t] = np.atleast_2d(
            np.loadtxt(directory / f"kernel_lag_{t}.csv", delimiter=","))
    return ImpactKernel(delta=meta["delta"], values=values, k0=k0, lam=lam,
                        provenance=meta["provenance"], grid=meta["grid"],
                        tail_tol=meta["tail_tol"],
                        diagnostics=meta.get("diagnostics", {}))
