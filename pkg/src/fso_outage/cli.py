"""Command-line front end: ``fso-outage {info,outage,tables,exponent,dlc,power-alloc}``.

Every command prints or writes CSV (JSON for ``exponent``) with ``#``-prefixed
``key=value`` header lines echoing the configuration, so identical runs give
byte-identical files.  Options may also come from a flat ``key=value`` file
given with ``--config``; command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import csit, outage_csir, tables
from .outage_csir import CSI_MODES, CSIR, CSIT_LT, CSIT_ST, OutageCurve, fmt
from .ppm import InfoTable, MonteCarloSpec, default_rho_grid, get_table
from .scintillation import ChannelConfig, ScintillationModel

MODELS = ("lognormal", "exponential", "gamma-gamma")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    channel: ChannelConfig
    start_db: float
    stop_db: float
    step_db: float
    csi_mode: str = CSIR
    method: str | None = None
    trials: int = outage_csir.DEFAULT_TRIALS
    seed: int = 0
    out: str | None = None
    cache: str | None = None
    samples: int = 10**6

    def __post_init__(self):
        if not self.start_db < self.stop_db:
            raise UsageError(f"empty SNR grid: start {self.start_db} dB must be below stop {self.stop_db} dB")
        if not self.step_db > 0:
            raise UsageError("snr step must be positive")
        if self.method == "mc" and self.trials < 1000:
            raise UsageError("Monte-Carlo runs need --trials >= 1000")
        if self.csi_mode not in CSI_MODES:
            raise UsageError(f"unknown CSI mode {self.csi_mode!r}")

    @property
    def snr_grid(self) -> np.ndarray:
        n = int(math.floor((self.stop_db - self.start_db) / self.step_db + 1e-9)) + 1
        return np.round(self.start_db + self.step_db * np.arange(n), 10)

    @property
    def mc(self) -> MonteCarloSpec:
        return MonteCarloSpec(self.samples, self.seed)

    def describe(self) -> dict:
        d = dict(self.channel.describe())
        d.update(snr_start_db=self.start_db, snr_stop_db=self.stop_db, snr_step_db=self.step_db,
                 csi=self.csi_mode, trials=self.trials, seed=self.seed, table_samples=self.samples)
        return d


def _model(args) -> ScintillationModel:
    if args.model == "lognormal":
        return ScintillationModel.lognormal(args.si2)
    if args.model == "exponential":
        return ScintillationModel.exponential()
    if args.model == "gamma-gamma":
        return ScintillationModel.gamma_gamma(args.alpha, args.beta)
    raise UsageError(f"unknown model {args.model!r}; choose from {', '.join(MODELS)}")


def _channel(args) -> ChannelConfig:
    return ChannelConfig(_model(args), M=args.M, N=args.N, B=args.B, Q=args.Q, Rc=args.rc)


def _run_config(args, start=0.0, stop=60.0) -> RunConfig:
    return RunConfig(_channel(args),
                     start if args.snr_start is None else args.snr_start,
                     stop if args.snr_stop is None else args.snr_stop,
                     args.snr_step, args.csi, getattr(args, "method", None), args.trials, args.seed,
                     args.out, args.cache, args.samples)


def _table(args, Q=None) -> InfoTable:
    return get_table(Q or args.Q, MonteCarloSpec(args.samples, args.seed), args.cache)


def _emit(text: str, out: str | None):
    """Write the finished text in one go; nothing is written if an earlier step failed."""
    if out is None:
        sys.stdout.write(text)
        return
    tmp = out + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, out)


def _header(meta: dict) -> str:
    return "".join(f"# {k}={fmt(v) if isinstance(v, float) else v}\n" for k, v in meta.items())


# commands ---------------------------------------------------------------


def cmd_info(args) -> int:
    rho = default_rho_grid(args.rho_points, args.rho_min, args.rho_max)
    table = InfoTable.build(args.Q, MonteCarloSpec(args.samples, args.seed), rho)
    _emit(table.to_csv(), args.out)
    return 0


def cmd_outage(args) -> int:
    rc = _run_config(args)
    cfg, grid = rc.channel, rc.snr_grid
    table = _table(args)
    if rc.csi_mode == CSIR:
        curve = outage_csir.outage_curve(cfg, grid, rc.method, rc.trials, rc.seed, table)
    elif rc.csi_mode == CSIT_LT:
        if rc.method == "mc" or cfg.B > 1:
            p, se = csit.outage_csit_mc(cfg, grid, rc.trials, rc.seed, table=table)
            curve = OutageCurve(grid, p, se, cfg, CSIT_LT, "mc", {"trials": rc.trials, "seed": rc.seed})
        else:
            curve = csit.csit_lt_curve(cfg, grid, table=table)
    else:
        if cfg.B == 1 and rc.method != "mc":
            # one block: the short-term budget is spent in full, as without CSIT
            base = outage_csir.outage_curve(cfg, grid, None, table=table)
            curve = OutageCurve(grid, base.p_out, base.std_err, cfg, CSIT_ST, base.method)
        else:
            p, se = csit.outage_csit_st_mc(cfg, grid, rc.trials, rc.seed, table)
            curve = OutageCurve(grid, p, se, cfg, CSIT_ST, "mc", {"trials": rc.trials, "seed": rc.seed})
    meta = dict(rc.describe())
    meta.update(method=curve.method, **curve.meta)
    text = _header(meta)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr_db", "p_out", "std_err", "method"])
    for s, p, e in zip(curve.snr_db, curve.p_out, curve.std_err):
        w.writerow([fmt(float(s)), fmt(float(p)), fmt(float(e)), curve.method])
    _emit(text + buf.getvalue(), rc.out)
    return 0


def cmd_tables(args) -> int:
    mc = MonteCarloSpec(args.samples, args.seed)
    rows1 = tables.min_snr_table(mc=mc, cache_dir=args.cache)
    rows2 = tables.comparison_table(Q=args.Q, Rc=args.rc, table=get_table(args.Q, mc, args.cache))
    t1 = tables.min_snr_csv(rows1, mc)
    t2 = tables.comparison_csv(rows2, args.Q, args.rc)
    if args.out is None:
        sys.stdout.write(t1 + "\n" + t2)
    else:
        os.makedirs(args.out, exist_ok=True)
        _emit(t1, os.path.join(args.out, "min_snr.csv"))
        _emit(t2, os.path.join(args.out, "csir_csit.csv"))
    return 0


def cmd_exponent(args) -> int:
    rc = _run_config(args, 60.0, 120.0)
    cfg = rc.channel
    report = outage_csir.snr_exponent(cfg)
    k = args.order or report.order_k
    table = _table(args)
    curve = outage_csir.outage_curve(cfg, rc.snr_grid, rc.method, rc.trials, rc.seed, table)
    fitted = outage_csir.empirical_exponent(curve, k)
    try:
        lt = csit.lt_exponent(cfg)
        lt = "inf" if math.isinf(lt) else lt
    except csit.BoundaryUndefinedError:
        lt = "undefined"
    out = {"config": rc.describe(), "method": curve.method, "order_k": k, "theoretical": report.value,
           "fitted": fitted, "relative_gap": fitted / report.value - 1.0,
           "singleton_factor": report.singleton_factor, "channel_factor": report.channel_factor,
           "spatial_factor": report.spatial_factor, "long_term_exponent": lt}
    if cfg.model.kind == "lognormal":
        out["lognormal_approx"] = outage_csir.snr_exponent_lognormal_approx(cfg)
    _emit(json.dumps(out, indent=2, sort_keys=True) + "\n", rc.out)
    return 0


def cmd_dlc(args) -> int:
    rc = _run_config(args, 0.0, 30.0)
    cfg = rc.channel
    table = _table(args)
    bar = csit.lt_snr_threshold(cfg, table)
    meta = dict(rc.describe())
    meta.update(snr_bar_db="inf" if math.isinf(bar) else 10 * math.log10(bar))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr_db", "capacity_bits"])
    for s in rc.snr_grid:
        w.writerow([fmt(float(s)), fmt(csit.delay_limited_capacity(cfg, float(s), table))])
    _emit(_header(meta) + buf.getvalue(), rc.out)
    return 0


def cmd_power_alloc(args) -> int:
    cfg = _channel(args)
    table = _table(args)
    meta = dict(cfg.describe())
    meta.update(csi=args.csi)
    if args.policy_samples:
        if args.budget_db is None:
            raise UsageError("--policy-samples needs --budget-db")
        P = 10 ** (args.budget_db / 10)
        h, totals = csit.sample_min_power(cfg, args.policy_samples, args.seed, table=table)
        policy = csit.LongTermPolicy(csit.policy_threshold(cfg, P, totals, table), cfg.rate, cfg, P)
        _emit(policy.dump_csv(h, totals), args.out)
        return 0
    if not args.h:
        raise UsageError("give a fading vector with --h or a sample size with --policy-samples")
    h = np.array([float(v) for v in args.h.split(",")])
    if args.csi == CSIT_ST:
        if args.budget_db is None:
            raise UsageError("short-term allocation needs --budget-db")
        alloc = csit.st_allocation(h, 10 ** (args.budget_db / 10), args.Q, table)
        meta.update(budget_db=args.budget_db)
    elif args.csi == CSIT_LT:
        alloc = csit.lt_min_power(h, cfg.rate, args.Q, table)
    else:
        raise UsageError("power-alloc needs --csi csit-st or csit-lt")
    meta.update(eta=alloc.eta, total=alloc.total)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", "h", "power", "rho"])
    for b, (hb, pb) in enumerate(zip(h, alloc.powers)):
        w.writerow([b + 1, fmt(float(hb)), fmt(float(pb)), fmt(float(pb * hb * hb))])
    _emit(_header(meta) + buf.getvalue(), args.out)
    return 0


# parser -----------------------------------------------------------------


def _common(p: argparse.ArgumentParser, snr=True):
    p.add_argument("--config", help="flat key=value file; flags override its values")
    p.add_argument("--model", choices=MODELS, default="lognormal")
    p.add_argument("--si2", type=float, default=1.0, help="lognormal scintillation index")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--M", type=int, default=1, help="lasers")
    p.add_argument("--N", type=int, default=1, help="apertures")
    p.add_argument("--B", type=int, default=1, help="blocks per codeword")
    p.add_argument("--Q", type=int, default=2, help="PPM order")
    p.add_argument("--rc", type=float, default=0.5, help="binary code rate")
    p.add_argument("--csi", choices=CSI_MODES, default=CSIR)
    p.add_argument("--trials", type=int, default=outage_csir.DEFAULT_TRIALS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=10**6, help="Monte-Carlo samples per information table")
    p.add_argument("--cache", help="directory caching information tables as CSV")
    p.add_argument("--out", help="output path (stdout if omitted)")
    if snr:
        p.add_argument("--snr-start", type=float)
        p.add_argument("--snr-stop", type=float)
        p.add_argument("--snr-step", type=float, default=1.0)
        p.add_argument("--method", choices=("mc", "closed", "fft"))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fso-outage", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("info", help="tabulate PPM mutual information and MMSE")
    _common(s, snr=False)
    s.add_argument("--rho-min", type=float, default=1e-3)
    s.add_argument("--rho-max", type=float, default=1e4)
    s.add_argument("--rho-points", type=int, default=400)
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("outage", help="outage probability curve")
    _common(s)
    s.set_defaults(func=cmd_outage)

    s = sub.add_parser("tables", help="minimum-SNR and CSIR/CSIT comparison tables")
    _common(s, snr=False)
    s.set_defaults(func=cmd_tables)

    s = sub.add_parser("exponent", help="theoretical and fitted outage SNR exponent")
    _common(s)
    s.add_argument("--order", type=int, choices=(1, 2))
    s.set_defaults(func=cmd_exponent)

    s = sub.add_parser("dlc", help="delay-limited capacity against long-term SNR")
    _common(s)
    s.set_defaults(func=cmd_dlc)

    s = sub.add_parser("power-alloc", help="power allocation for a fading vector, or a policy dump")
    _common(s, snr=False)
    s.add_argument("--h", help="comma-separated fading coefficients, one per block")
    s.add_argument("--budget-db", type=float)
    s.add_argument("--policy-samples", type=int, default=0)
    s.set_defaults(func=cmd_power_alloc)
    return p


def read_config(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, keys use flag spelling."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{n}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = val.strip()
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.cmd]
        known = {a.dest for a in sub._actions}
        try:
            values = read_config(args.config)
        except (OSError, UsageError) as e:
            parser.error(str(e))
        unknown = sorted(set(values) - known - {"config"})
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        parser.error(str(e))
    except (ValueError, ArithmeticError, OSError) as e:
        print(f"fso-outage: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
