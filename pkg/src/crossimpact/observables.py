"""Binning of event/price data and estimation of flow and return covariances.

Events and prices are aggregated on a uniform lattice of width delta.
Per-day estimates of the return covariance sigma and the signed-flow lag
covariances omega(tau) are averaged with equal weights across days.  The
bin width is the unit of time for everything downstream.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import pathlib
import warnings

import numpy as np

from .hawkes import EventStream
from .polymat import LaurentMatrix


class ObservablesError(ValueError):
    pass


@dataclasses.dataclass
class PricePath:
    """Sampled mid prices: parallel (time, asset, price) columns."""

    times: np.ndarray
    assets: np.ndarray
    prices: np.ndarray
    d: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.assets = np.asarray(self.assets, dtype=int)
        self.prices = np.asarray(self.prices, dtype=float)

    def __len__(self):
        return len(self.times)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "asset", "price"])
            for t, a, p in zip(self.times, self.assets, self.prices):
                writer.writerow([f"{t:.9f}", a, f"{p:.17g}"])

    @classmethod
    def from_csv(cls, path, d=None):
        times, assets, prices = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                times.append(float(row["time"]))
                assets.append(int(row["asset"]))
                prices.append(float(row["price"]))
        if d is None:
            d = int(max(assets)) + 1 if assets else 1
        return cls(times=np.asarray(times), assets=np.asarray(assets),
                   prices=np.asarray(prices), d=d)


@dataclasses.dataclass
class BinnedSeries:
    """Per-bin open/close prices and net signed flow on a uniform lattice."""

    delta: float
    open_prices: np.ndarray   # (n_bins, d)
    close_prices: np.ndarray  # (n_bins, d)
    flows: np.ndarray         # (n_bins, d), contract units
    day: int = 0

    @property
    def n_bins(self):
        return self.flows.shape[0]

    @property
    def d(self):
        return self.flows.shape[1]

    @property
    def returns(self):
        return self.close_prices - self.open_prices


def bin_events(stream: EventStream, prices: PricePath | None, delta: float,
               t_start: float = 0.0, t_end: float | None = None,
               day: int = 0) -> BinnedSeries:
    """Aggregate signed flow and open/close prices on bins of width delta.

    Empty bins carry the last close forward as both open and close, so
    they contribute zero return.  Passing a start/end pair trims session
    edges before binning.  prices may be None when only flows are needed.
    """
    if delta <= 0:
        raise ObservablesError("bin width must be positive")
    if t_end is None:
        t_end = stream.horizon
    if t_end <= t_start:
        raise ObservablesError("empty time window")
    if prices is not None and len(prices) == 0:
        raise ObservablesError("empty price path")
    if prices is not None and len(prices) and \
            prices.times.max() < min(t_end, stream.times.max()
                                     if len(stream) else t_start):
        raise ObservablesError("price path is shorter than the event stream")
    n_bins = int(np.floor((t_end - t_start) / delta + 1e-9))
    if n_bins < 1:
        raise ObservablesError("window shorter than one bin")
    d = stream.d
    flows = np.zeros((n_bins, d))
    mask = (stream.times > t_start) & (stream.times <= t_start + n_bins * delta)
    idx = np.ceil((stream.times[mask] - t_start) / delta).astype(int) - 1
    idx = np.clip(idx, 0, n_bins - 1)
    np.add.at(flows, (idx, stream.assets[mask]),
              stream.sides[mask] * stream.sizes[mask])
    opens = np.zeros((n_bins, d))
    closes = np.zeros((n_bins, d))
    if prices is None:
        return BinnedSeries(delta=delta, open_prices=opens,
                            close_prices=closes, flows=flows, day=day)
    order = np.argsort(prices.times, kind="stable")
    pt, pa, pv = (prices.times[order], prices.assets[order],
                  prices.prices[order])
    for a in range(d):
        sel = pa == a
        ta, va = pt[sel], pv[sel]
        if len(ta) == 0:
            raise ObservablesError(f"no prices for asset {a}")
        edges = t_start + delta * np.arange(n_bins + 1)
        # last observation at or before each edge, first price before start
        pos = np.searchsorted(ta, edges, side="right") - 1
        pos = np.clip(pos, 0, len(ta) - 1)
        at_edges = va[pos]
        opens[:, a] = at_edges[:-1]
        closes[:, a] = at_edges[1:]
    return BinnedSeries(delta=delta, open_prices=opens, close_prices=closes,
                        flows=flows, day=day)


def estimate_sigma(series: list) -> np.ndarray:
    """Average of per-day return covariances (1/(T-1)) sum r_t r_t^T."""
    if not series:
        raise ObservablesError("no binned series")
    mats = []
    for s in series:
        r = s.returns
        if r.shape[0] < 2:
            continue
        mats.append(r.T @ r / (r.shape[0] - 1))
    if not mats:
        raise ObservablesError("need at least 2 bins in some day")
    sigma = np.mean(mats, axis=0)
    return 0.5 * (sigma + sigma.T)


def estimate_omega(series: list, tau_max: int) -> np.ndarray:
    """Per-day lag covariances omega(tau) = (1/T) sum q_{t+tau} q_t^T.

    The biased 1/T normalization keeps Bartlett-tapered spectral
    estimates positive semi-definite.  Days shorter than tau_max + 2
    bins are dropped with a warning.
    """
    if not series:
        raise ObservablesError("no binned series")
    d = series[0].d
    acc = np.zeros((tau_max + 1, d, d))
    used = 0
    for s in series:
        q = s.flows
        n = q.shape[0]
        if n < tau_max + 2:
            warnings.warn(f"day {s.day}: {n} bins < tau_max + 2, dropped")
            continue
        day = np.zeros_like(acc)
        for tau in range(tau_max + 1):
            day[tau] = q[tau:].T @ q[:n - tau] / n
        acc += day
        used += 1
    if used == 0:
        raise ObservablesError("tau_max too large for every day")
    return acc / used


def bartlett_weights(tau_max: int) -> np.ndarray:
    return 1.0 - np.arange(tau_max + 1) / (tau_max + 1.0)


def omega_aggregates(omega, taper: str = "bartlett",
                     neg_tol: float = 1e-8):
    """Aggregate lag covariances into (omega_zero, omega_inf).

    omega_inf is the lattice zero-frequency value omega(0) +
    sum_tau w_tau (omega(tau) + omega(tau)^T), symmetrized; small
    negative eigenvalues from estimation noise are clipped, larger
    violations raise (insufficient data).
    """
    omega = np.asarray(omega, dtype=float)
    tau_max = omega.shape[0] - 1
    if taper == "bartlett":
        w = bartlett_weights(tau_max)
    elif taper == "none":
        w = np.ones(tau_max + 1)
    else:
        raise ObservablesError(f"unknown taper policy {taper!r}")
    omega_zero = 0.5 * (omega[0] + omega[0].T)
    agg = omega_zero.copy()
    for tau in range(1, tau_max + 1):
        agg += w[tau] * (omega[tau] + omega[tau].T)
    agg = 0.5 * (agg + agg.T)
    eigvals, eigvecs = np.linalg.eigh(agg)
    floor = -neg_tol * max(np.trace(agg), np.abs(eigvals).max())
    if eigvals.min() < floor:
        raise ObservablesError(
            f"aggregate flow covariance strongly indefinite "
            f"(min eigenvalue {eigvals.min():.3e}); not enough data")
    if eigvals.min() < 0:
        agg = eigvecs @ np.diag(np.maximum(eigvals, 0.0)) @ eigvecs.T
        agg = 0.5 * (agg + agg.T)
    return omega_zero, agg


@dataclasses.dataclass
class ObservableSet:
    """Estimated observables on the lag lattice plus sample metadata."""

    sigma: np.ndarray
    omega: np.ndarray          # (tau_max+1, d, d)
    omega_zero: np.ndarray
    omega_inf: np.ndarray
    delta: float
    n_days: int
    n_bins: int
    taper: str = "bartlett"

    @property
    def d(self):
        return self.sigma.shape[0]

    @property
    def tau_max(self):
        return self.omega.shape[0] - 1


def build_observables(series: list, tau_max: int,
                      taper: str = "bartlett") -> ObservableSet:
    sigma = estimate_sigma(series)
    omega = estimate_omega(series, tau_max)
    omega_zero, omega_inf = omega_aggregates(omega, taper=taper)
    n_bins = sum(s.n_bins for s in series)
    return ObservableSet(sigma=sigma, omega=omega, omega_zero=omega_zero,
                         omega_inf=omega_inf, delta=series[0].delta,
                         n_days=len(series), n_bins=n_bins, taper=taper)


def omega_laurent(obs_or_lags, taper: str = "bartlett") -> LaurentMatrix:
    """Tapered lattice spectral density as a para-Hermitian Laurent matrix."""
    if isinstance(obs_or_lags, ObservableSet):
        lags = obs_or_lags.omega
    else:
        lags = np.asarray(obs_or_lags, dtype=float)
    tau_max = lags.shape[0] - 1
    if taper == "bartlett":
        w = bartlett_weights(tau_max)
    elif taper == "none":
        w = np.ones(tau_max + 1)
    else:
        raise ObservablesError(f"unknown taper policy {taper!r}")
    return LaurentMatrix.from_lag_list(
        lags[0], [w[t] * lags[t] for t in range(1, tau_max + 1)])


# ---------------------------------------------------------------------------
# Serialization: directory of CSV matrices plus a JSON metadata file
# ---------------------------------------------------------------------------

def save_observables(directory, obs: ObservableSet):
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "sigma.csv", obs.sigma, fmt="%.17g", delimiter=",")
    np.savetxt(directory / "omega_zero.csv", obs.omega_zero, fmt="%.17g",
               delimiter=",")
    np.savetxt(directory / "omega_inf.csv", obs.omega_inf, fmt="%.17g",
               delimiter=",")
    for tau in range(obs.tau_max + 1):
        np.savetxt(directory / f"omega_lag_{tau}.csv", obs.omega[tau],
                   fmt="%.17g", delimiter=",")
    meta = {"delta": obs.delta, "tau_max": obs.tau_max, "taper": obs.taper,
            "n_days": obs.n_days, "n_bins": obs.n_bins, "d": obs.d}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True,
                                                    indent=1))


def load_observables(directory) -> ObservableSet:
    directory = pathlib.Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    sigma = np.atleast_2d(np.loadtxt(directory / "sigma.csv", delimiter=","))
    omega_zero = np.atleast_2d(np.loadtxt(directory / "omega_zero.csv",
                                          delimiter=","))
    omega_inf = np.atleast_2d(np.loadtxt(directory / "omega_inf.csv",
                                         delimiter=","))
    tau_max = meta["tau_max"]
    d = meta["d"]
    omega = np.zeros((tau_max + 1, d, d))
    for tau in range(tau_max + 1):
        omega[tau] = np.atleast_2d(
            np.loadtxt(directory / f"omega_lag_{tau}.csv", delimiter=","))
    return ObservableSet(sigma=sigma, omega=omega, omega_zero=omega_zero,
                         omega_inf=omega_inf, delta=meta["delta"],
                         n_days=meta["n_days"], n_bins=meta["n_bins"],
                         taper=meta["taper"])
