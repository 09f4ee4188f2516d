"""Command-line interface.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 config error,
4 data or I/O error, 5 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import analytics as an
from . import econometrics as em
from .errors import ConfigError, DataError, LstLabError, NumericalError
from .ingest import load_price_series, load_staking_curve
from .lsp import write_state_csv
from .market import load_scenario, run_scenario

log = logging.getLogger("lstlab")

OUT_ENV = "LSTLAB_OUT"
EXIT_IO = DataError.exit_code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: dict, inputs: list[Path], outputs: list[Path], seed: int | None) -> Path:
    manifest = {
        "command": command,
        "arguments": args,
        "config_paths": {str(p): _sha256(p) for p in inputs},
        "seed": seed,
        "output_dir": str(out),
        "outputs": {p.name: _sha256(p) for p in outputs},
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _curve(args):
    if args.baseline_curve is None and args.flat_rate is None:
        raise ConfigError("give --baseline-curve or --flat-rate")
    return load_staking_curve(args.baseline_curve, args.flat_rate)


def cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate needs --config")
    config = load_scenario(args.config, seed=args.seed)
    trace = run_scenario(config)
    out = _out_dir(args)
    files = [out / "trace.csv", out / "events.csv", out / "trades.csv", out / "lsp_state.csv"]
    trace.write_csv(files[0])
    trace.write_events(files[1])
    trace.write_trades(files[2])
    write_state_csv(trace.states, files[3])
    write_manifest(out, "simulate", {"seed": config.seed, "horizon_days": config.horizon_days},
                   [Path(args.config)], files, config.seed)
    last = trace.rows[-1]
    print(f"simulated {config.horizon_days} days; final fair value {last.fair_value:.6f}, "
          f"market value {last.market_value:.6f}")
    return 0


def _load_all(paths):
    return [load_price_series(p) for p in paths]


def cmd_analyze(args) -> int:
    curve = _curve(args)
    series = _load_all(args.inputs)
    out = _out_dir(args)
    stats = {}
    ecdf_rows, prem_rows, peg_rows = [], [], []
    for s in series:
        mask = ~np.isnan(s.price_native)
        if mask.sum() < 2:
            raise DataError(f"{s.token}: fewer than two price_native values")
        dates = tuple(d for d, k in zip(s.dates, mask) if k)
        p = s.price_native[mask]
        r = an.daily_returns(p, dates, s.token, exclude_gaps=False)
        stake = an.staking_returns(curve, dates)
        xs = an.excess_returns(r, stake)
        keep = ~r.gap if args.exclude_gaps else np.ones(len(r), dtype=bool)
        stats[s.token] = an.descriptive_stats(xs.values[keep])
        for v, f in an.ecdf(100.0 * xs.values[keep]):
            ecdf_rows.append((s.token, repr(v), repr(f)))
        lst_idx = p / p[0]
        base_idx = an.cumulative_index(stake.values)
        if args.premium_mode == "index":
            prem = an.premium_series(lst_idx, base_idx)
        else:
            prem = an.premium_series(p, None, mode="price", fair_value=p[0] * base_idx)
        fair = p[0] * base_idx
        dev, labels = an.peg_deviation(p, fair, args.band)
        for i, d in enumerate(dates):
            prem_rows.append((d.isoformat(), s.token, repr(float(prem[i]))))
            peg_rows.append((d.isoformat(), s.token, repr(float(p[i])), repr(float(fair[i])), repr(float(dev[i])), labels[i]))
    files = [out / "descriptive.tsv", out / "ecdf.csv", out / "premium.csv", out / "peg.csv"]
    files[0].write_text(an.format_descriptive_table(stats), encoding="utf-8")
    an.write_rows(files[1], ("token", "excess_return_pct", "cumulative_fraction"), ecdf_rows)
    an.write_rows(files[2], ("date", "token", "premium_pp"), prem_rows)
    an.write_rows(files[3], ("date", "token", "market_value", "fair_value", "deviation", "class"), peg_rows)
    inputs = [Path(p) for p in args.inputs] + ([Path(args.baseline_curve)] if args.baseline_curve else [])
    write_manifest(out, "analyze", {"flat_rate": args.flat_rate, "premium_mode": args.premium_mode, "band": args.band},
                   inputs, files, args.seed)
    print(an.format_descriptive_table(stats), end="")
    return 0


def cmd_regress(args) -> int:
    curve = _curve(args)
    if not args.base:
        raise ConfigError("regress needs --base (base-currency price file)")
    lsts = _load_all(args.inputs)
    base = load_price_series(args.base)
    panels, reports = em.build_regression_panel(
        lsts, base, curve, standardize_usd=not args.raw_usd,
        delta_source=args.delta_source, size_source=args.size_source,
    )
    out = _out_dir(args)
    results: dict[str, em.RegressionResult | Exception] = {}
    for tok, panel in panels.items():
        try:
            if args.model == "excess":
                results[tok] = em.excess_regression(panel, tok)
            else:
                results[tok] = em.premium_regression(panel, tok, lags=args.lags)
        except NumericalError as exc:
            log.warning("%s: %s", tok, exc)
            results[tok] = exc

    files = [out / f"regression_{args.model}.tsv", out / "vif.tsv"]
    files[0].write_text(em.format_regression_table(results), encoding="utf-8")
    vif_rows = []
    for tok, res in results.items():
        if isinstance(res, em.RegressionResult):
            for name, v in res.vif.items():
                vif_rows.append((tok, name, f"{v:.6f}", "collinear" if v > em.VIF_THRESHOLD else ""))
    with files[1].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("token", "regressor", "vif", "flag"))
        w.writerows(vif_rows)
    if args.model == "premium":
        files.append(out / "pacf.tsv")
        with files[-1].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(("token", "lag", "pacf", "band", "significant", "selected_lag"))
            for tok, res in results.items():
                pc = res.metadata.get("pacf") if isinstance(res, em.RegressionResult) else None
                if pc is None:
                    continue
                for k, v in enumerate(pc.values, start=1):
                    w.writerow((tok, k, f"{v:.6f}", f"{pc.band:.6f}", int(abs(v) > pc.band), res.metadata["selected_lag"]))
    errors = {t: r for t, r in results.items() if isinstance(r, Exception)}
    drops = out / "drops.tsv"
    with drops.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("token", "reason", "rows"))
        for tok, rep in reports.items():
            for reason, count in rep.items():
                w.writerow((tok, reason, count))
    files.append(drops)
    if errors:
        files.append(out / "errors.tsv")
        with files[-1].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(("token", "error"))
            w.writerows((t, str(e)) for t, e in errors.items())
    inputs = [Path(p) for p in args.inputs] + [Path(args.base)] + ([Path(args.baseline_curve)] if args.baseline_curve else [])
    write_manifest(out, "regress", {"model": args.model, "lags": args.lags, "raw_usd": args.raw_usd,
                                    "delta_source": args.delta_source, "size_source": args.size_source,
                                    "flat_rate": args.flat_rate}, inputs, files, args.seed)
    print(files[0].read_text(encoding="utf-8"), end="")
    return 0 if len(errors) < len(results) else NumericalError.exit_code


def _read_column(path: Path, column: str) -> np.ndarray:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise DataError(f"{path}: no column {column!r}")
        vals = []
        for lineno, row in enumerate(reader, start=2):
            try:
                vals.append(float(row[column]))
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: {column} is not a number: {row[column]!r}") from None
    return np.array(vals)


def cmd_pacf(args) -> int:
    path = Path(args.input)
    if args.column:
        y = _read_column(path, args.column)
        label = args.column
    else:
        curve = _curve(args)
        s = load_price_series(path)
        mask = ~np.isnan(s.price_native)
        dates = tuple(d for d, k in zip(s.dates, mask) if k)
        p = s.price_native[mask]
        stake = an.staking_returns(curve, dates)
        y = an.premium_series(p / p[0], an.cumulative_index(stake.values))
        label = "premium"
    res = em.pacf(y, args.max_lag)
    p_sel = em.select_lags(res.values, res.band, min(args.max_lag, em.MAX_LAGS)) if args.max_lag >= em.MAX_LAGS else None
    out = _out_dir(args)
    target = out / "pacf.tsv"
    with target.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("series", "lag", "pacf", "band", "significant"))
        for k, v in enumerate(res.values, start=1):
            w.writerow((label, k, f"{v:.6f}", f"{res.band:.6f}", int(abs(v) > res.band)))
    write_manifest(out, "pacf", {"column": args.column, "max_lag": args.max_lag}, [path], [target], args.seed)
    print(f"n={res.nobs} band=±{res.band:.4f} selected_lag={p_sel}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    common.add_argument("--seed", type=int, default=None, help="random seed (overrides the config)")
    curve = argparse.ArgumentParser(add_help=False)
    curve.add_argument("--baseline-curve", help="CSV with date,annual_rate")
    curve.add_argument("--flat-rate", type=float, help="flat annual staking rate, e.g. 0.0482")

    p = argparse.ArgumentParser(prog="lstlab", description="Liquid staking simulation and econometrics.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario and write its daily trace")
    s.add_argument("--config", help="scenario config file (TOML)")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", parents=[common, curve], help="descriptive tables, ECDF and premium series")
    a.add_argument("inputs", nargs="+", help="LST price files (token = file stem)")
    a.add_argument("--band", type=float, default=0.005, help="peg band for the at-peg label")
    a.add_argument("--premium-mode", choices=("index", "price"), default="index")
    a.add_argument("--exclude-gaps", action=argparse.BooleanOptionalAction, default=True)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("regress", parents=[common, curve], help="excess-return or premium regressions")
    r.add_argument("inputs", nargs="+", help="LST price files")
    r.add_argument("--base", help="base-currency price file (USD price, market cap, volume)")
    r.add_argument("--model", choices=("excess", "premium"), required=True)
    r.add_argument("--lags", type=int, default=em.MAX_LAGS)
    r.add_argument("--raw-usd", action="store_true", help="do not z-score market cap and volume")
    r.add_argument("--delta-source", choices=("base", "lst"), default="base")
    r.add_argument("--size-source", choices=("base", "lst"), default="base")
    r.set_defaults(func=cmd_regress)

    q = sub.add_parser("pacf", parents=[common, curve], help="partial autocorrelation of a series")
    q.add_argument("input", help="price file, or any CSV with --column")
    q.add_argument("--column", help="read this column instead of deriving the premium")
    q.add_argument("--max-lag", type=int, default=em.MAX_LAGS)
    q.set_defaults(func=cmd_pacf)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except LstLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
