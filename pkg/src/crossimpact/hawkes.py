"""Buy/sell Hawkes order-flow model: validation, simulation, analytic observables.

The flow of each of d assets is driven by a 2d-dimensional Hawkes process
(buy and sell components per asset) with shared baseline mu and four
excitation blocks aa, ab, ba, bb.  Every kernel entry is a finite sum of
exponentials alpha * exp(-beta t), which gives closed-form Fourier
transforms, L1 norms, and an exact thinning simulation via intensity
recursions.
"""
from __future__ import annotations

import csv
import dataclasses

import numpy as np

BLOCK_KEYS = ("aa", "ab", "ba", "bb")
BUY, SELL = 1, -1


class HawkesError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class ExpTerm:
    """One exponential excitation term alpha * exp(-beta t)."""
    alpha: float
    beta: float

    @property
    def l1(self) -> float:
        return self.alpha / self.beta


def _empty_block(d):
    return [[[] for _ in range(d)] for _ in range(d)]


@dataclasses.dataclass
class HawkesSpec:
    """Model parameters: baseline, excitation blocks, order sizes.

    phi maps each block key to a d x d nested list of ExpTerm lists;
    phi["ab"][i][j] excites buy intensity on asset i from sell orders on
    asset j.  sizes holds the fixed order size per asset.
    """

    mu: np.ndarray
    phi: dict
    sizes: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sizes = np.asarray(self.sizes, dtype=float)
        d = len(self.mu)
        for key in BLOCK_KEYS:
            if key not in self.phi:
                self.phi[key] = _empty_block(d)
        if np.any(self.mu < 0):
            raise HawkesError("baseline intensities must be nonnegative")
        if np.any(self.sizes <= 0):
            raise HawkesError("order sizes must be positive")
        for key in BLOCK_KEYS:
            block = self.phi[key]
            if len(block) != d or any(len(row) != d for row in block):
                raise HawkesError(f"block {key} is not {d}x{d}")
            for row in block:
                for terms in row:
                    for t in terms:
                        if t.alpha < 0 or t.beta <= 0:
                            raise HawkesError(
                                "excitation terms need alpha >= 0, beta > 0")

    @property
    def d(self) -> int:
        return len(self.mu)

    @classmethod
    def from_matrices(cls, mu, sizes, beta, aa=None, ab=None, ba=None,
                      bb=None):
        """Single-decay-rate convenience constructor from alpha matrices."""
        mu = np.asarray(mu, dtype=float)
        d = len(mu)
        phi = {}
        for key, mat in zip(BLOCK_KEYS, (aa, ab, ba, bb)):
            block = _empty_block(d)
            if mat is not None:
                mat = np.asarray(mat, dtype=float)
                for i in range(d):
                    for j in range(d):
                        if mat[i, j] != 0.0:
                            block[i][j] = [ExpTerm(float(mat[i, j]),
                                                   float(beta))]
            phi[key] = block
        return cls(mu=mu, phi=phi, sizes=np.asarray(sizes, dtype=float))

    def block_l1(self, key) -> np.ndarray:
        """Matrix of integrated kernels, entries sum(alpha/beta)."""
        d = self.d
        out = np.zeros((d, d))
        for i in range(d):
            for j in range(d):
                out[i, j] = sum(t.l1 for t in self.phi[key][i][j])
        return out

    def full_l1(self) -> np.ndarray:
        """Integrated 2d x 2d kernel, blocks [[aa, ab], [ba, bb]]."""
        top = np.hstack([self.block_l1("aa"), self.block_l1("ab")])
        bot = np.hstack([self.block_l1("ba"), self.block_l1("bb")])
        return np.vstack([top, bot])

    def block_fourier(self, key, omega) -> np.ndarray:
        """Closed-form transform of one block at frequencies omega."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        d = self.d
        out = np.zeros((len(omega), d, d), dtype=complex)
        for i in range(d):
            for j in range(d):
                for t in self.phi[key][i][j]:
                    out[:, i, j] += t.alpha / (t.beta + 1j * omega)
        return out

    def imbalance_terms(self):
        """Canonical merged terms of bb - ab per entry, grouped by beta.

        Requires martingale compatibility: bb - ab must equal aa - ba
        term by term, which validate_spec checks at the parameter level.
        """
        d = self.d
        out = [[{} for _ in range(d)] for _ in range(d)]
        for key, sign in (("bb", 1.0), ("ab", -1.0)):
            for i in range(d):
                for j in range(d):
                    for t in self.phi[key][i][j]:
                        acc = out[i][j]
                        acc[t.beta] = acc.get(t.beta, 0.0) + sign * t.alpha
        return out


def _merged_block_diff(spec, key_pos, key_neg):
    d = spec.d
    out = [[{} for _ in range(d)] for _ in range(d)]
    for key, sign in ((key_pos, 1.0), (key_neg, -1.0)):
        for i in range(d):
            for j in range(d):
                for t in spec.phi[key][i][j]:
                    acc = out[i][j]
                    acc[t.beta] = acc.get(t.beta, 0.0) + sign * t.alpha
    return out


@dataclasses.dataclass
class ValidationReport:
    stable: bool
    spectral_radius: float
    balanced: bool
    martingale_compatible: bool
    messages: list

    @property
    def ok(self) -> bool:
        return self.stable and self.balanced and self.martingale_compatible


def validate_spec(spec: HawkesSpec, atol: float = 1e-12) -> ValidationReport:
    """Stability, buy/sell balance, and martingale-compatibility checks.

    Always returns a report; callers decide whether failures are fatal.
    Balance and compatibility are structural checks on the parameters,
    not statistical tests.
    """
    messages = []
    full = spec.full_l1()
    radius = float(np.abs(np.linalg.eigvals(full)).max()) if full.size else 0.0
    stable = radius < 1.0
    if not stable:
        messages.append(f"spectral radius of integrated kernel is "
                        f"{radius:.4f} >= 1")
    scale = max(np.abs(full).max(), 1.0)
    row_a = spec.block_l1("aa") + spec.block_l1("ab")
    row_b = spec.block_l1("ba") + spec.block_l1("bb")
    balanced = bool(np.abs(row_a - row_b).max() <= atol * scale)
    if not balanced:
        messages.append("buy and sell excitation row sums differ; "
                        "stationary buy/sell intensities will not match")
    diff1 = _merged_block_diff(spec, "bb", "ab")
    diff2 = _merged_block_diff(spec, "aa", "ba")
    compatible = True
    for i in range(spec.d):
        for j in range(spec.d):
            betas = set(diff1[i][j]) | set(diff2[i][j])
            for b in betas:
                a1 = diff1[i][j].get(b, 0.0)
                a2 = diff2[i][j].get(b, 0.0)
                if abs(a1 - a2) > atol * scale:
                    compatible = False
    if not compatible:
        messages.append("bb - ab differs from aa - ba; no imbalance kernel")
    return ValidationReport(stable=stable, spectral_radius=radius,
                            balanced=balanced,
                            martingale_compatible=compatible,
                            messages=messages)


def stationary_intensity(spec: HawkesSpec) -> np.ndarray:
    """Per-asset one-sided stationary intensity theta.

    Solves the 2d-dimensional mean fixed point and returns the buy half;
    under the balance condition the sell half is identical.
    """
    report = validate_spec(spec)
    if not report.stable:
        raise HawkesError("unstable model has no stationary intensity")
    d = spec.d
    full = spec.full_l1()
    mu_full = np.concatenate([spec.mu, spec.mu])
    mat = np.eye(2 * d) - full
    try:
        theta_full = np.linalg.solve(mat, mu_full)
    except np.linalg.LinAlgError as exc:
        raise HawkesError("singular mean equations") from exc
    return theta_full[:d]


def analytic_flow_spectrum(spec: HawkesSpec, omega) -> np.ndarray:
    """Spectral density of the signed volume flow at each frequency.

    Units are (contract units)^2 per unit time.  The output is Hermitian
    positive semi-definite at every frequency; with no excitation it is
    the flat white spectrum 2 diag(theta v^2).
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    d = spec.d
    theta = stationary_intensity(spec)
    theta_full = np.concatenate([theta, theta])
    top = np.concatenate([spec.block_fourier("aa", omega),
                          spec.block_fourier("ab", omega)], axis=2)
    bot = np.concatenate([spec.block_fourier("ba", omega),
                          spec.block_fourier("bb", omega)], axis=2)
    phi_hat = np.concatenate([top, bot], axis=1)
    eye = np.eye(2 * d)
    resolvent = np.linalg.inv(eye[None] - phi_hat)
    counts = resolvent @ np.diag(theta_full)[None] @ \
        resolvent.conj().transpose(0, 2, 1)
    u = np.hstack([np.eye(d), -np.eye(d)])
    signed = u[None] @ counts @ u.T[None]
    dv = np.diag(spec.sizes)
    return dv[None] @ signed @ dv[None]


def imbalance_l1(spec: HawkesSpec) -> np.ndarray:
    """Integrated imbalance kernel, entries sum(alpha/beta) of bb - ab."""
    d = spec.d
    out = np.zeros((d, d))
    terms = spec.imbalance_terms()
    for i in range(d):
        for j in range(d):
            out[i, j] = sum(a / b for b, a in terms[i][j].items())
    return out


def imbalance_integral(spec: HawkesSpec, t) -> np.ndarray:
    """Entrywise integral of the imbalance kernel from 0 to t."""
    d = spec.d
    out = np.zeros((d, d))
    terms = spec.imbalance_terms()
    for i in range(d):
        for j in range(d):
            out[i, j] = sum((a / b) * (1.0 - np.exp(-b * t))
                            for b, a in terms[i][j].items())
    return out


def analytic_kernel(spec: HawkesSpec, lam, delta, tau_max):
    """Martingale price-impact kernel sampled on the lag lattice.

    In volume units the kernel decays as K(t) = K(0)(I - int_0^t psi)
    with psi = diag(v) phi diag(v)^{-1}, where phi is the imbalance
    kernel, and K(0) is fixed by the permanent matrix lam through
    K(0) diag(v) (I - int phi) = lam diag(v), so that K(t) -> lam.
    """
    from .kernels import ImpactKernel
    report = validate_spec(spec)
    if not report.martingale_compatible:
        raise HawkesError("martingale-compatibility check failed; the "
                          "imbalance kernel is not defined")
    lam = np.asarray(lam, dtype=float)
    d = spec.d
    dv = np.diag(spec.sizes)
    dv_inv = np.diag(1.0 / spec.sizes)
    phi_l1 = imbalance_l1(spec)
    mat = np.eye(d) - phi_l1
    try:
        k0 = lam @ dv @ np.linalg.inv(mat) @ dv_inv
    except np.linalg.LinAlgError as exc:
        raise HawkesError("I - integrated imbalance kernel is singular") from exc
    values = np.zeros((tau_max + 1, d, d))
    for t in range(tau_max + 1):
        psi_int = dv @ imbalance_integral(spec, t * delta) @ dv_inv
        values[t] = k0 @ (np.eye(d) - psi_int)
    return ImpactKernel(delta=delta, values=values, k0=k0, lam=lam,
                        provenance="analytic")


# ---------------------------------------------------------------------------
# Events and simulation
# ---------------------------------------------------------------------------

@dataclasses.dataclass
class EventStream:
    """Timestamped market orders: (time, asset, side, size) in columns."""

    times: np.ndarray
    assets: np.ndarray
    sides: np.ndarray        # +1 buy, -1 sell
    sizes: np.ndarray
    horizon: float
    d: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.assets = np.asarray(self.assets, dtype=int)
        self.sides = np.asarray(self.sides, dtype=int)
        self.sizes = np.asarray(self.sizes, dtype=float)
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            raise HawkesError("event times must be strictly increasing")
        if len(self.assets) and (self.assets.min() < 0
                                 or self.assets.max() >= self.d):
            raise HawkesError("asset index out of range")

    def __len__(self):
        return len(self.times)

    def net_volume(self) -> np.ndarray:
        out = np.zeros(self.d)
        np.add.at(out, self.assets, self.sides * self.sizes)
        return out

    def counts(self) -> np.ndarray:
        """Event counts per (asset, side): shape (d, 2), buy column first."""
        out = np.zeros((self.d, 2))
        np.add.at(out, (self.assets, (1 - self.sides) // 2), 1.0)
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "asset", "side", "size"])
            for t, a, s, v in zip(self.times, self.assets, self.sides,
                                  self.sizes):
                writer.writerow([f"{t:.9f}", a, "B" if s > 0 else "S",
                                 f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path, d=None, horizon=None):
        times, assets, sides, sizes = [], [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                times.append(float(row["time"]))
                assets.append(int(row["asset"]))
                sides.append(BUY if row["side"].strip().upper() == "B"
                             else SELL)
                sizes.append(float(row["size"]))
        times = np.asarray(times)
        if d is None:
            d = int(max(assets)) + 1 if assets else 1
        if horizon is None:
            horizon = float(times[-1]) if len(times) else 0.0
        return cls(times=times, assets=np.asarray(assets),
                   sides=np.asarray(sides), sizes=np.asarray(sizes),
                   horizon=horizon, d=d)


def _flatten_terms(spec):
    """Flatten excitation terms into parallel arrays for the simulator.

    Components are indexed side*d + asset with side 0 = buy, 1 = sell.
    """
    alphas, betas, src, tgt = [], [], [], []
    d = spec.d
    side_of = {"aa": (0, 0), "ab": (0, 1), "ba": (1, 0), "bb": (1, 1)}
    for key in BLOCK_KEYS:
        tside, sside = side_of[key]
        for i in range(d):
            for j in range(d):
                for t in spec.phi[key][i][j]:
                    if t.alpha == 0.0:
                        continue
                    alphas.append(t.alpha)
                    betas.append(t.beta)
                    tgt.append(tside * d + i)
                    src.append(sside * d + j)
    return (np.asarray(alphas), np.asarray(betas), np.asarray(src),
            np.asarray(tgt))


def simulate(spec: HawkesSpec, horizon: float, seed: int) -> EventStream:
    """Exact-law sample of the order flow on [0, horizon] by thinning.

    A piecewise-constant dominating intensity is recomputed at every
    candidate point; the exponential states make the recursion exact.
    Deterministic given the seed.
    """
    report = validate_spec(spec)
    if not report.stable:
        raise HawkesError("refusing to simulate an unstable model")
    if horizon < 0:
        raise HawkesError("horizon must be nonnegative")
    rng = np.random.default_rng(seed)
    d = spec.d
    alphas, betas, src, tgt = _flatten_terms(spec)
    n_terms = len(alphas)
    mu_full = np.concatenate([spec.mu, spec.mu])
    n_comp = 2 * d
    if n_terms:
        tmat = np.zeros((n_comp, n_terms))
        tmat[tgt, np.arange(n_terms)] = 1.0
        smat = [np.where(src == c)[0] for c in range(n_comp)]
    state = np.zeros(n_terms)
    t = 0.0
    times, assets, sides = [], [], []
    base = mu_full.sum()
    while base + state.sum() > 0.0:
        bound = base + state.sum()
        w = rng.exponential(1.0 / bound)
        if t + w > horizon:
            break
        t = t + w
        if n_terms:
            state = state * np.exp(-betas * w)
            lam = mu_full + tmat @ state
        else:
            lam = mu_full.copy()
        total = lam.sum()
        if rng.uniform() * bound <= total:
            x = rng.uniform() * total
            comp = min(int(np.searchsorted(np.cumsum(lam), x)), n_comp - 1)
            asset = comp % d
            side = BUY if comp < d else SELL
            times.append(t)
            assets.append(asset)
            sides.append(side)
            if n_terms and len(smat[comp]):
                state[smat[comp]] += alphas[smat[comp]]
    sizes = spec.sizes[np.asarray(assets, dtype=int)] if assets else \
        np.zeros(0)
    return EventStream(times=np.asarray(times), assets=np.asarray(assets),
                       sides=np.asarray(sides), sizes=sizes,
                       horizon=horizon, d=d)
