"""Batch front door: simulate -> estimate -> factorize -> calibrate -> check -> predict.

Every run is driven by a JSON config with explicit tolerances, echoed
into the diagnostics report, and is deterministic given its seed.  Exit
codes: 0 success, 1 admissibility failure (check), 2 input error,
3 numerical stage failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import pathlib
import sys

import numpy as np

from . import arbitrage, hawkes, kernels, observables, polymat

ENV_CONFIG = "CROSSIMPACT_CONFIG"

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclasses.dataclass
class RunConfig:
    spec: dict | None = None
    events: list | None = None
    prices: list | None = None
    delta: float = 1.0
    tau_max: int = 128
    grid: int = 4096
    seed: int = 0
    horizon: float = 2000.0
    n_days: int = 8
    taper: str = "bartlett"
    trim: float = 0.0
    p0: list | None = None
    impact_scale: float = 1.0
    lam: list | None = None
    sbr2_tol: float = 1e-7
    sbr2_max_iter: int = 60000
    trunc_tol: float = 1e-13
    tail_tol: float = 1e-3
    nsa_tol: float = 1e-6
    factor_residual_bound: float = 1e-4
    threads: int = 1
    output_dir: str = "out"

    @classmethod
    def from_file(cls, path):
        raw = json.loads(pathlib.Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        tol = raw.pop("tolerances", {})
        raw.update(tol)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        for tol_name in ("delta", "sbr2_tol", "trunc_tol", "tail_tol",
                         "nsa_tol", "factor_residual_bound"):
            if getattr(cfg, tol_name) <= 0:
                raise ValueError(f"{tol_name} must be positive")
        if cfg.spec is not None and cfg.events is not None:
            raise ValueError("config must carry either a spec or data "
                             "paths, not both")
        return cfg

    def echo(self) -> dict:
        out = dataclasses.asdict(self)
        return kernels._json_safe(out)


def parse_spec(blob) -> hawkes.HawkesSpec:
    mu = np.asarray(blob["mu"], dtype=float)
    sizes = np.asarray(blob.get("sizes", np.ones_like(mu)), dtype=float)
    d = len(mu)
    phi = {}
    for key in hawkes.BLOCK_KEYS:
        block = [[[] for _ in range(d)] for _ in range(d)]
        for i, row in enumerate(blob.get("blocks", {}).get(key, [])):
            for j, terms in enumerate(row):
                block[i][j] = [hawkes.ExpTerm(float(a), float(b))
                               for a, b in terms]
        phi[key] = block
    return hawkes.HawkesSpec(mu=mu, phi=phi, sizes=sizes)


def spec_to_json(spec: hawkes.HawkesSpec) -> dict:
    blocks = {}
    for key in hawkes.BLOCK_KEYS:
        blocks[key] = [[[[t.alpha, t.beta] for t in spec.phi[key][i][j]]
                        for j in range(spec.d)] for i in range(spec.d)]
    return {"mu": spec.mu.tolist(), "sizes": spec.sizes.tolist(),
            "blocks": blocks}


def _default_lambda(spec, cfg) -> np.ndarray:
    if cfg.lam is not None:
        return np.asarray(cfg.lam, dtype=float)
    d = spec.d
    dv = np.diag(spec.sizes)
    dv_inv = np.diag(1.0 / spec.sizes)
    mat = np.eye(d) - hawkes.imbalance_l1(spec)
    return cfg.impact_scale * dv @ mat @ dv_inv


def _event_prices(spec, stream, lam, p0) -> observables.PricePath:
    """Exact event-time prices of the decay-law kernel along a stream.

    The kernel splits as lam plus exponential transients, so a per-term
    decayed sum of signed counts gives the exact price at every jump.
    """
    d = spec.d
    dv = np.diag(spec.sizes)
    dv_inv = np.diag(1.0 / spec.sizes)
    k0 = lam @ dv @ np.linalg.inv(np.eye(d) - hawkes.imbalance_l1(spec)) \
        @ dv_inv
    terms = spec.imbalance_terms()
    rows, cols, alphas, betas = [], [], [], []
    for i in range(d):
        for j in range(d):
            for beta, alpha in sorted(terms[i][j].items()):
                rows.append(i)
                cols.append(j)
                alphas.append(alpha)
                betas.append(beta)
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    alphas = np.asarray(alphas)
    betas = np.asarray(betas)
    weights = np.divide(alphas, betas, out=np.zeros_like(alphas),
                        where=betas > 0)
    loading = k0 @ dv       # price response to per-source decayed counts
    n_terms = len(rows)
    state = np.zeros(n_terms)
    net = np.zeros(d)
    times, assets_out, prices_out = [], [], []
    prev = 0.0
    for t, a, s, v in zip(stream.times, stream.assets, stream.sides,
                          stream.sizes):
        if n_terms:
            state *= np.exp(-betas * (t - prev))
            state[cols == a] += s
        prev = t
        net[a] += s * v
        impact = np.zeros(d)
        if n_terms:
            contrib = np.zeros((d, d))
            np.add.at(contrib, (rows, cols), weights * state)
            impact = loading @ contrib.sum(axis=1)
        price = p0 + lam @ net + impact
        times.extend([t] * d)
        assets_out.extend(range(d))
        prices_out.extend(price.tolist())
    return observables.PricePath(times=np.asarray(times),
                                 assets=np.asarray(assets_out),
                                 prices=np.asarray(prices_out), d=d)


def cmd_simulate(cfg: RunConfig, out_dir) -> int:
    if cfg.spec is None:
        raise StageError("input", "simulate needs a hawkes spec in config")
    spec = parse_spec(cfg.spec)
    report = hawkes.validate_spec(spec)
    if not report.stable:
        print("invalid spec:", "; ".join(report.messages), file=sys.stderr)
        return EXIT_INPUT
    if cfg.horizon == 0:
        print("warning: zero horizon, writing empty streams", file=sys.stderr)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lam = _default_lambda(spec, cfg)
    p0 = np.asarray(cfg.p0 if cfg.p0 is not None else [100.0] * spec.d,
                    dtype=float)
    manifest = {"n_days": cfg.n_days, "config": cfg.echo(),
                "validation": dataclasses.asdict(report)}
    for day in range(cfg.n_days):
        stream = hawkes.simulate(spec, cfg.horizon, cfg.seed + day)
        prices = _event_prices(spec, stream, lam, p0)
        stream.to_csv(out / f"events_{day:03d}.csv")
        prices.to_csv(out / f"prices_{day:03d}.csv")
    (out / "manifest.json").write_text(json.dumps(
        kernels._json_safe(manifest), sort_keys=True, indent=1))
    return EXIT_OK


def _load_day_files(cfg, out_dir):
    if cfg.events is not None:
        event_files = [pathlib.Path(p) for p in cfg.events]
        price_files = [pathlib.Path(p) for p in (cfg.prices or [])]
        if len(price_files) not in (0, len(event_files)):
            raise StageError("input", "events/prices file counts differ")
        if not price_files:
            price_files = [None] * len(event_files)
        for f in event_files + [p for p in price_files if p is not None]:
            if not f.exists():
                raise StageError("input", f"missing data file {f}")
        return list(zip(event_files, price_files))
    data_dir = pathlib.Path(out_dir)
    event_files = sorted(data_dir.glob("events_*.csv"))
    if not event_files:
        raise StageError("input", f"no events_*.csv under {data_dir}")
    pairs = []
    for ef in event_files:
        pf = data_dir / ef.name.replace("events_", "prices_")
        pairs.append((ef, pf if pf.exists() else None))
    return pairs


def _bin_one_day(cfg, day, ef, pf):
    stream = hawkes.EventStream.from_csv(ef)
    prices = observables.PricePath.from_csv(pf, d=stream.d) \
        if pf is not None else None
    t_end = stream.horizon if stream.horizon > 0 else \
        (stream.times[-1] if len(stream) else cfg.delta)
    return observables.bin_events(stream, prices, cfg.delta,
                                  t_start=cfg.trim, t_end=t_end - cfg.trim,
                                  day=day)


def _estimate(cfg, pairs) -> observables.ObservableSet:
    # days are binned in parallel but reduced in day order, so the
    # result does not depend on scheduling
    if cfg.threads > 1 and len(pairs) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            series = list(pool.map(
                lambda item: _bin_one_day(cfg, item[0], *item[1]),
                enumerate(pairs)))
    else:
        series = [_bin_one_day(cfg, day, ef, pf)
                  for day, (ef, pf) in enumerate(pairs)]
    return observables.build_observables(series, cfg.tau_max,
                                         taper=cfg.taper)


def cmd_estimate(cfg: RunConfig, out_dir) -> int:
    pairs = _load_day_files(cfg, out_dir)
    obs = _estimate(cfg, pairs)
    observables.save_observables(pathlib.Path(out_dir) / "observables", obs)
    print(f"estimated observables from {obs.n_days} days, "
          f"{obs.n_bins} bins")
    return EXIT_OK


def _factorize(cfg, obs):
    laurent = observables.omega_laurent(obs, taper=obs.taper)
    result = polymat.sbr2_pevd(laurent, tol=cfg.sbr2_tol,
                               max_iter=cfg.sbr2_max_iter,
                               trunc_tol=cfg.trunc_tol)
    if not result.converged:
        raise StageError("factorize", "sbr2 did not converge")
    factor = polymat.assemble_factor(result, R=laurent, n_grid=cfg.grid)
    return factor


def cmd_factorize(cfg: RunConfig, out_dir) -> int:
    obs_dir = pathlib.Path(out_dir) / "observables"
    obs = observables.load_observables(obs_dir)
    factor = _factorize(cfg, obs)
    polymat.save_factor(pathlib.Path(out_dir) / "factor", factor)
    print(f"factor residual {factor.residual:.3e}, "
          f"diagonalization off-mass {factor.gamma_offdiag_mass:.3e}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, out_dir) -> int:
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics = {"config": cfg.echo()}
    stage = "estimate"
    try:
        if cfg.spec is not None:
            stage = "simulate"
            rc = cmd_simulate(cfg, out)
            if rc != EXIT_OK:
                return rc
        stage = "estimate"
        pairs = _load_day_files(cfg, out)
        obs = _estimate(cfg, pairs)
        observables.save_observables(out / "observables", obs)
        if cfg.spec is not None:
            spec = parse_spec(cfg.spec)
            theta = hawkes.stationary_intensity(spec)
            one_sided = np.diag(theta * spec.sizes ** 2)
            _, atom_diag = kernels.compute_K0(obs, atom_reference=one_sided)
            diagnostics["atom_diagnostic"] = atom_diag
        stage = "factorize"
        factor = _factorize(cfg, obs)
        polymat.save_factor(out / "factor", factor)
        diagnostics["factor_residual"] = factor.residual
        diagnostics["gamma_offdiag_mass"] = factor.gamma_offdiag_mass
        stage = "invert"
        inverse = polymat.invert_factor(factor)
        diagnostics["pole_modulus"] = inverse.pole_modulus
        diagnostics["inverse_tail_bound"] = inverse.tail_bound
        stage = "build_k1"
        k1 = kernels.build_K1(obs, factor, inverse=inverse,
                              tau_max=cfg.tau_max, n_grid=cfg.grid,
                              tail_tol=cfg.tail_tol,
                              residual_bound=cfg.factor_residual_bound)
        kernels.save_kernel(out / "k1", k1)
        stage = "regularize_k2"
        k2 = kernels.regularize_K2(k1, n_grid=cfg.grid)
        kernels.save_kernel(out / "k2", k2)
        stage = "check"
        rep1 = kernels.nsa_check(k1, tol=cfg.nsa_tol)
        rep2 = kernels.nsa_check(k2, tol=cfg.nsa_tol)
        diagnostics["k1_boundaries"] = {"k0": k1.k0.tolist(),
                                        "lambda": k1.lam.tolist()}
        diagnostics["k1_diagnostics"] = kernels._json_safe(k1.diagnostics)
        diagnostics["k2_diagnostics"] = kernels._json_safe(k2.diagnostics)
        diagnostics["k1_admissibility"] = rep1.to_dict()
        diagnostics["k2_admissibility"] = rep2.to_dict()
    except StageError:
        raise
    except Exception as exc:
        raise StageError(stage, exc) from exc
    (out / "diagnostics.json").write_text(json.dumps(
        kernels._json_safe(diagnostics), sort_keys=True, indent=1))
    print(f"calibrated kernels under {out}; factor residual "
          f"{diagnostics['factor_residual']:.3e}")
    print(f"k1 {diagnostics['k1_admissibility']['label']}; "
          f"k2 {diagnostics['k2_admissibility']['label']}")
    return EXIT_OK


def cmd_check(kernel_dir, tol, n_steps=(4, 8, 16), horizons=(1.0, 10.0),
              bps=False) -> int:
    kernel = kernels.load_kernel(kernel_dir)
    report = kernels.nsa_check(kernel, tol=tol)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=1))
    scale = 1e4 if bps else 1.0
    unit = "bps" if bps else "price units"
    print(f"immediate matrix ({unit}):")
    print(np.array2string(scale * kernel.k0, precision=4))
    print(f"permanent matrix ({unit}):")
    print(np.array2string(scale * kernel.lam, precision=4))
    worst = 0.0
    for n in n_steps:
        for T in horizons:
            value, witness, info = arbitrage.min_roundtrip_cost(kernel, n, T)
            rel = value / max(info["gram_norm"] * info["step"] ** 2, 1e-300)
            worst = min(worst, rel)
            print(f"min roundtrip cost n={n} T={T}: {value:.3e} "
                  f"({rel:.2e} of gram scale)")
    print(f"worst relative roundtrip cost: {worst:.3e}")
    return EXIT_OK if report.verdict else EXIT_FAIL


def cmd_predict(kernel_dir, events_csv, p0, out_path) -> int:
    kernel = kernels.load_kernel(kernel_dir)
    stream = hawkes.EventStream.from_csv(events_csv, d=kernel.d)
    horizon = stream.horizon if stream.horizon > 0 else kernel.delta
    flows = observables.bin_events(stream, None, kernel.delta,
                                   t_end=horizon)
    p0 = np.asarray(p0, dtype=float)
    if p0.size == 1:
        p0 = np.full(kernel.d, float(p0))
    path = arbitrage.predict_prices(kernel, flows, p0)
    times = kernel.delta * (1 + np.arange(path.shape[0]))
    arbitrage.save_predicted_prices(out_path, times, path)
    print(f"wrote {out_path}")
    return EXIT_OK


def demo_config(seed=7, output_dir="demo_out") -> RunConfig:
    """Canonical two-asset walkthrough: lead-lag excitation, moderate decay."""
    beta = 0.25
    A = [[0.06, 0.02], [0.035, 0.08]]
    spec = {"mu": [0.6, 0.45], "sizes": [1.0, 2.0],
            "blocks": {"aa": [[[[A[0][0], beta]], [[A[0][1], beta]]],
                              [[[A[1][0], beta]], [[A[1][1], beta]]]],
                       "bb": [[[[A[0][0], beta]], [[A[0][1], beta]]],
                              [[[A[1][0], beta]], [[A[1][1], beta]]]]}}
    return RunConfig(spec=spec, delta=1.0, tau_max=64, grid=4096,
                     seed=seed, horizon=1200.0, n_days=5,
                     output_dir=output_dir)


def cmd_demo(cfg: RunConfig, out_dir) -> int:
    rc = cmd_calibrate(cfg, out_dir)
    if rc != EXIT_OK:
        return rc
    out = pathlib.Path(out_dir)
    rc = cmd_check(out / "k2", cfg.nsa_tol)
    if rc not in (EXIT_OK,):
        print("warning: clipped kernel failed its own check",
              file=sys.stderr)
    rc2 = cmd_predict(out / "k1", out / "events_000.csv",
                      [100.0] * 2, out / "predicted_prices.csv")
    return rc2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crossimpact",
        description="calibrate kernel cross-impact models from trade data")
    parser.add_argument("--config", help="JSON run config "
                        f"(or ${ENV_CONFIG})")
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate")
    sub.add_parser("estimate")
    sub.add_parser("factorize")
    sub.add_parser("calibrate")
    check = sub.add_parser("check")
    check.add_argument("kernel_dir")
    check.add_argument("--tol", type=float, default=1e-6)
    check.add_argument("--bps", action="store_true",
                       help="display boundary matrices in basis points")
    predict = sub.add_parser("predict")
    predict.add_argument("kernel_dir")
    predict.add_argument("events_csv")
    predict.add_argument("--p0", type=float, default=100.0)
    predict.add_argument("--out", default="predicted_prices.csv")
    sub.add_parser("demo")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg_path = args.config or os.environ.get(ENV_CONFIG)
        if args.command == "demo" and cfg_path is None:
            cfg = demo_config(seed=args.seed if args.seed is not None else 7)
        elif cfg_path is not None:
            cfg = RunConfig.from_file(cfg_path)
        elif args.command in ("check", "predict"):
            cfg = RunConfig()
        else:
            print("error: this command needs --config or "
                  f"${ENV_CONFIG}", file=sys.stderr)
            return EXIT_INPUT
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        out_dir = args.output_dir or cfg.output_dir
        if args.command == "simulate":
            return cmd_simulate(cfg, out_dir)
        if args.command == "estimate":
            return cmd_estimate(cfg, out_dir)
        if args.command == "factorize":
            return cmd_factorize(cfg, out_dir)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out_dir)
        if args.command == "check":
            return cmd_check(args.kernel_dir, args.tol, bps=args.bps)
        if args.command == "predict":
            return cmd_predict(args.kernel_dir, args.events_csv,
                               args.p0, args.out)
        if args.command == "demo":
            return cmd_demo(cfg, out_dir)
        return EXIT_INPUT
    except (FileNotFoundError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        if exc.stage == "input":
            print(f"input error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
