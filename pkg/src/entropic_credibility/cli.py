"""Command-line front end: aggregate, fit, premiums, dispersion, all.

Exit codes: 0 ok, 2 data error, 3 sampler failure, 4 refit failure,
5 dispersion failure (both paths on an interval endpoint).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import dataio
from .config import RunConfig, load_config
from .edf import get_family
from .entropic import (
    dispersion_general,
    dispersion_proper,
    entropic_premium,
    expected_deviance,
    rn_stability,
)
from .errors import (
    ConvergenceError,
    CredibilityError,
    DataError,
    EndpointError,
    InsufficientDrawsError,
    RankDeficiencyError,
    SamplerInitError,
)
from .glm import GlmSpec, fit_irls
from .posterior import (
    PosteriorDraws,
    diagnostics,
    predictive_draws,
    predictive_mean,
    read_draws_csv,
    run_mcmc,
    write_draws_csv,
)

logger = logging.getLogger("entropic_credibility")

EXIT_OK, EXIT_DATA, EXIT_SAMPLER, EXIT_REFIT, EXIT_DISPERSION = 0, 2, 3, 4, 5


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _workers() -> int:
    raw = os.environ.get("CRED_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError:
            raise CommandError(EXIT_DATA, f"CRED_THREADS must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def load_table(cfg: RunConfig) -> dataio.RiskClassTable:
    if cfg.classes_path:
        return dataio.read_class_table(cfg.classes_path)
    if not cfg.data_path:
        raise DataError("no dataset given: set data.path (or data.classes) in the config")
    if not Path(cfg.data_path).is_file():
        raise DataError(f"dataset not found: {cfg.data_path}")
    records, errors = dataio.read_policies(cfg.data_path, cfg.schema)
    for err in errors[:20]:
        logger.warning("%s: %s", cfg.data_path, err)
    if len(errors) > 20:
        logger.warning("%s: %d more rejected rows", cfg.data_path, len(errors) - 20)
    records = dataio.transform_covariates(records, cfg.rules)
    table = dataio.aggregate_classes(
        records, cfg.get("data.response"), cfg.get("data.weight"), cfg.covariates, cfg.response_is_total
    )
    if not len(table):
        raise DataError("aggregation produced no classes with positive weight")
    return table


def build_spec(cfg: RunConfig, table: dataio.RiskClassTable) -> GlmSpec:
    X, names = dataio.build_design(table, cfg.references)
    return GlmSpec(
        family=get_family(cfg.family),
        link=cfg.link,
        design=X,
        weights=table.w,
        class_labels=tuple(r.class_id for r in table.rows),
        column_names=tuple(names),
    )


def _out(cfg: RunConfig, name: str) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path / name


def _write_csv(path: Path, header_lines, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def cmd_aggregate(cfg: RunConfig, dry_run: bool = False) -> int:
    table = load_table(cfg)
    if dry_run:
        print(f"{len(table)} classes")
        return EXIT_OK
    path = _out(cfg, "classes.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        dataio.write_class_table(table, fh, cfg.header_lines())
    print(f"wrote {len(table)} classes to {path}")
    return EXIT_OK


def _diagnostics_report(cfg: RunConfig, draws: PosteriorDraws) -> str:
    lines = [f"# {h}" for h in cfg.header_lines()]
    lines.append(f"chains: {draws.n_chains}")
    lines.append(f"warmup per chain: {draws.warmup}")
    lines.append(f"kept per chain: {draws.n_kept}")
    lines.append("acceptance: " + ", ".join(f"{a:.3f}" for a in draws.acceptance_rates))
    try:
        rhat, ess = diagnostics(draws)
    except InsufficientDrawsError:
        rhat, ess = None, draws.ess
    if rhat is None:
        lines.append("rhat: unavailable (needs >= 2 chains of >= 100 draws)")
    lines.append("")
    lines.append(f"{'parameter':<24}{'mean':>14}{'sd':>12}{'rhat':>10}{'ess':>10}")
    summary = draws.summary()
    flagged = []
    for j, name in enumerate(draws.names):
        mean, sd = summary[name]
        r = "n/a" if rhat is None else f"{rhat[j]:.4f}"
        e = "n/a" if ess is None else f"{ess[j]:.0f}"
        flag = ""
        if rhat is not None and rhat[j] > 1.05:
            flag = "  WARNING rhat > 1.05"
            flagged.append(name)
        lines.append(f"{name:<24}{mean:>14.6g}{sd:>12.4g}{r:>10}{e:>10}{flag}")
    if flagged:
        lines.append("")
        lines.append(f"WARNING: chains may not have converged for {', '.join(flagged)}")
    return "\n".join(lines) + "\n"


def cmd_fit(cfg: RunConfig) -> int:
    table = load_table(cfg)
    spec = build_spec(cfg, table)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            draws = run_mcmc(spec, cfg.prior, table.ybar, cfg.mcmc, workers=_workers())
    except SamplerInitError as exc:
        raise CommandError(EXIT_SAMPLER, f"sampler initialization failed: {exc}")
    with open(_out(cfg, "draws.csv"), "w", newline="", encoding="utf-8") as fh:
        write_draws_csv(draws, fh, cfg.header_lines())
    report = _diagnostics_report(cfg, draws)
    _out(cfg, "diagnostics.txt").write_text(report, encoding="utf-8")
    print(f"wrote {draws.n_chains} chains x {draws.n_kept} draws to {_out(cfg, 'draws.csv')}")
    return EXIT_OK


def _load_draws(cfg: RunConfig, spec: GlmSpec, draws_path) -> PosteriorDraws:
    path = Path(draws_path) if draws_path else Path(cfg.out_dir) / "draws.csv"
    if not path.is_file():
        raise DataError(f"draws file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        draws = read_draws_csv(fh)
    expected = tuple(spec.column_names) + ("phi",)
    if draws.names != expected:
        raise DataError(f"draws columns {draws.names} do not match the model {expected}")
    return draws


def cmd_premiums(cfg: RunConfig, draws_path=None) -> int:
    table = load_table(cfg)
    spec = build_spec(cfg, table)
    draws = _load_draws(cfg, spec, draws_path)
    ey = predictive_mean(spec, draws)
    try:
        ent = fit_irls(spec, ey)
        freq = fit_irls(spec, table.ybar)
    except (ConvergenceError, RankDeficiencyError) as exc:
        raise CommandError(EXIT_REFIT, f"GLM refit failed: {exc}")
    mu_star = entropic_premium(spec, ent.beta)
    head = cfg.header_lines()
    _write_csv(
        _out(cfg, "coefficients.csv"),
        head,
        ["coefficient", "value"],
        [[n, _fmt(b)] for n, b in zip(spec.column_names, ent.beta)],
    )
    _write_csv(
        _out(cfg, "premiums.csv"),
        head,
        ["class_id", *table.covariates, "w", "ybar", "entropic_premium", "glm_premium"],
        [
            [r.class_id, *r.levels, _fmt(r.w), _fmt(r.ybar), _fmt(m), _fmt(g)]
            for r, m, g in zip(table.rows, mu_star, freq.mu)
        ],
    )
    # Classes in increasing entropic premium, each paired with its GLM premium.
    order = np.argsort(mu_star, kind="stable")
    _write_csv(
        _out(cfg, "comparison.csv"),
        head,
        ["rank", "entropic", "frequentist"],
        [[k + 1, _fmt(mu_star[i]), _fmt(freq.mu[i])] for k, i in enumerate(order)],
    )
    print(f"wrote coefficients, premiums and comparison for {len(table)} classes to {cfg.out_dir}")
    return EXIT_OK


def cmd_dispersion(cfg: RunConfig, draws_path=None) -> int:
    table = load_table(cfg)
    spec = build_spec(cfg, table)
    lines = [f"# {h}" for h in cfg.header_lines()]
    path = _out(cfg, "dispersion.txt")
    if spec.family.dispersion_fixed is not None:
        lines.append(f"family: {spec.family.name}")
        lines.append(f"phi fixed at {spec.family.dispersion_fixed:g}; no optimization run")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {path}")
        return EXIT_OK
    draws = _load_draws(cfg, spec, draws_path)
    ey = predictive_mean(spec, draws)
    try:
        ent = fit_irls(spec, ey)
    except (ConvergenceError, RankDeficiencyError) as exc:
        raise CommandError(EXIT_REFIT, f"GLM refit failed: {exc}")
    mu_star = entropic_premium(spec, ent.beta)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.mcmc.seed, 1]))
    n = cfg.replicates
    reps = predictive_draws(spec, draws, n, rng)
    interval = cfg.dispersion_interval()
    method = cfg.dispersion_method
    lines.append(f"family: {spec.family.name}")
    lines.append(f"replicates: {n}")
    lines.append(f"interval: [{interval[0]:g}, {interval[1]:g}]")
    e_dev = expected_deviance(spec, reps, mu_star)
    lines.append(f"expected deviance E[D(Y, mu*)]: {e_dev:.10g}")
    results = {}
    failures = 0
    attempted = 0
    if method in ("both", "proper"):
        attempted += 1
        try:
            results["proper"] = dispersion_proper(spec.family, spec.weights, e_dev, interval).phi
        except EndpointError as exc:
            failures += 1
            lines.append(f"proper path: FAILED ({exc})")
    if method in ("both", "monte_carlo"):
        attempted += 1
        try:
            results["monte_carlo"] = dispersion_general(spec, reps, mu_star, interval).phi
        except EndpointError as exc:
            failures += 1
            lines.append(f"monte carlo path: FAILED ({exc})")
    for key, label in (("proper", "proper-dispersion phi*"), ("monte_carlo", "monte carlo phi*")):
        if key in results:
            lines.append(f"{label}: {results[key]:.10g}")
    if len(results) == 2:
        rel = abs(results["proper"] - results["monte_carlo"]) / results["proper"]
        lines.append(f"relative difference: {rel:.4g}")
    centre = next(iter(results.values()), math.sqrt(interval[0] * interval[1]))
    grid = centre * np.geomspace(0.5, 2.0, 9)
    lines.append(f"stability max|R_N - R_2N| over phi grid (N={n // 2}): {rn_stability(spec, reps, mu_star, grid):.6g}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {path}")
    if attempted and failures == attempted:
        raise CommandError(EXIT_DISPERSION, "every dispersion path hit an interval endpoint")
    return EXIT_OK


def cmd_all(cfg: RunConfig, draws_path=None) -> int:
    cmd_aggregate(cfg)
    cmd_fit(cfg)
    cmd_premiums(cfg, draws_path)
    return cmd_dispersion(cfg, draws_path)


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--seed", type=int, help="master MCMC seed")
    common.add_argument("--chains", type=int)
    common.add_argument("--warmup", type=int)
    common.add_argument("--kept", type=int, help="kept draws per chain")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--data", metavar="PATH", help="policy CSV (data.path)")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key"
    )
    common.add_argument("--draws", metavar="PATH", help="draws CSV (default OUT/draws.csv)")
    common.add_argument("--dry-run", action="store_true", help="aggregate: print the class count only")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="entcred", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("aggregate", "aggregate policies into risk classes"),
        ("fit", "sample the posterior by MCMC"),
        ("premiums", "entropic coefficients and premiums"),
        ("dispersion", "entropic dispersion estimate"),
        ("all", "run the whole pipeline"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise CommandError(EXIT_DATA, f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for flag, key in (
        ("seed", "mcmc.seed"),
        ("chains", "mcmc.chains"),
        ("warmup", "mcmc.warmup"),
        ("kept", "mcmc.kept"),
        ("out", "output.dir"),
        ("data", "data.path"),
    ):
        val = getattr(args, flag)
        if val is not None:
            out[key] = str(val)
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "aggregate":
            return cmd_aggregate(cfg, dry_run=args.dry_run)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "premiums":
            return cmd_premiums(cfg, args.draws)
        if args.command == "dispersion":
            return cmd_dispersion(cfg, args.draws)
        return cmd_all(cfg, args.draws)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CredibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
