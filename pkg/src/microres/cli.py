"""Command-line entry point: generate, ingest, fit, simulate, evaluate, report.

Every subcommand writes into ``--out-dir`` and refuses to replace existing
files unless ``--force`` is given.  Failures exit with a code that names
the error class (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .chain_ladder import cl_project, odp_bootstrap, write_quantile_report
from .claims_data import TRANSITIONS, ClaimAnomaly, TransactionParseError, build_triangle, discretize_claim, \
    parse_transactions, write_period_rows
from .config import ConfigError, ModelConfig, load_config
from .evaluation import evaluate, percentage_error, write_comparison
from .ibnr_counts import RunoffTriangle, expected_ibnr, fit_ibnr_counts, sample_ibnr, variance_ibnr, write_draws
from .pipeline import MODEL_FILES, ModelsNotFound, SchemaMismatch, fit_all, load_models, open_states, save_models
from .rng import substream
from .simulator import simulate_portfolio
from .synthetic import SpecError, default_spec, generate_portfolio, load_spec, write_spec
from .time_model import partial_dependence

log = logging.getLogger("microres")


class InputError(ValueError):
    pass


class OutputExists(FileExistsError):
    pass


EXIT_CODES = {
    InputError: 2,
    ModelsNotFound: 3,
    SchemaMismatch: 4,
    ConfigError: 5,
    SpecError: 5,
    TransactionParseError: 6,
    OutputExists: 7,
}


# -- helpers -------------------------------------------------------------------

def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _config(args) -> ModelConfig:
    config = load_config(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        config = config.replace(rng_seed=args.seed)
    return config


def _targets(args, *names: str) -> list[Path]:
    out = Path(args.out_dir)
    paths = [out / n for n in names]
    clash = [str(p) for p in paths if p.exists()]
    if clash and not args.force:
        raise OutputExists(f"refusing to overwrite {', '.join(clash)} (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return paths


def _read_claims(path, config: ModelConfig):
    try:
        with open(path, newline="") as fh:
            parsed = parse_transactions(fh, config)
    except FileNotFoundError:
        raise InputError(f"transaction file not found: {path}") from None
    for a in parsed.anomalies:
        log.warning("anomaly %s: %s", a.policy_id, a.reason)
    return parsed


def _read_triangle(path) -> RunoffTriangle:
    try:
        with open(path, newline="") as fh:
            return RunoffTriangle.read_csv(fh)
    except FileNotFoundError:
        raise InputError(f"triangle file not found: {path}") from None
    except ValueError as err:
        raise InputError(f"{path}: {err}") from None


def _models_dir(args) -> Path:
    return Path(args.models) if args.models else Path(args.out_dir) / "models"


# -- subcommands ---------------------------------------------------------------

def cmd_generate(args) -> None:
    config = _config(args)
    spec = load_spec(args.spec) if args.spec else default_spec()
    if args.n_claims is not None:
        spec.n_claims = args.n_claims
        spec.validate()
    names = ["transactions.csv", "spec.yaml"] + (["truth.csv"] if args.as_of else [])
    paths = _targets(args, *names)
    pf = generate_portfolio(spec, config, seed=config.rng_seed)
    with open(paths[0], "w", newline="") as fh:
        pf.write_transactions(fh)
    with open(paths[1], "w") as fh:
        write_spec(spec, fh)
    if args.as_of:
        with open(paths[2], "w") as fh:
            pf.write_truth(fh, args.as_of)


def cmd_ingest(args) -> None:
    config = _config(args)
    parsed = _read_claims(args.transactions, config)
    names = ["periods.csv", "anomalies.csv", "transitions.csv"] + (["triangle.csv"] if args.as_of else [])
    paths = _targets(args, *names)
    rows, anomalies = [], [(a.policy_id, a.reason) for a in parsed.anomalies]
    for claim in sorted(parsed.claims, key=lambda c: c.policy_id):
        try:
            rows.extend(discretize_claim(claim, config, args.as_of))
        except ClaimAnomaly as err:
            anomalies.append((claim.policy_id, str(err)))
    with open(paths[0], "w", newline="") as fh:
        write_period_rows(rows, fh, config)
    with open(paths[1], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["polNumb", "reason"])
        writer.writerows(sorted(anomalies))
    counts: dict[int, np.ndarray] = {}
    for r in rows:
        counts.setdefault(r.state_index, np.zeros(4, dtype=int))[TRANSITIONS.index(r.transition)] += 1
    with open(paths[2], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "rows"] + list(TRANSITIONS))
        for state in sorted(counts):
            c = counts[state]
            writer.writerow([f"S{state}", int(c.sum())] + [int(v) for v in c])
    if args.as_of:
        with open(paths[3], "w", newline="") as fh:
            build_triangle(parsed.claims, args.as_of).write_csv(fh)


def cmd_fit(args) -> None:
    config = _config(args)
    if args.as_of:
        config = config.replace(eval_date=args.as_of)
    parsed = _read_claims(args.transactions, config)
    model_dir = _models_dir(args)
    clash = [str(model_dir / f) for f in MODEL_FILES if (model_dir / f).exists()]
    if clash and not args.force:
        raise OutputExists(f"refusing to overwrite {', '.join(clash)} (use --force)")
    if not parsed.claims:
        raise InputError("no claims to fit")
    result = fit_all(parsed.claims, config, args.as_of, with_ibnr=not args.no_ibnr)
    save_models(result.models, config, model_dir, args.as_of, result.summary)
    log.info("fitted %d models on %d period rows", len(result.models.time_models), len(result.table))


def cmd_simulate(args) -> None:
    models, config, _ = load_models(_models_dir(args))
    if args.config:
        config = load_config(args.config)
    config = config.replace(rng_seed=args.seed, eval_date=args.as_of)
    if args.payment_mode:
        config = config.replace(payment_mode=args.payment_mode)
    parsed = _read_claims(args.transactions, config)
    paths = _targets(args, "reserve_summary.csv", "claim_quantiles.csv", "histogram.csv", "draws.csv",
                     "claim_draws.csv")
    states, paid = open_states(parsed.claims, config, args.as_of)
    dist = simulate_portfolio(states, models, config, as_of=args.as_of, n_sims=args.n_sims, seed=args.seed,
                              workers=args.workers, cum_at_eval=paid)
    for path, writer in zip(paths[:4], (dist.write_summary, dist.write_claim_quantiles, dist.write_histogram,
                                         dist.write_draws)):
        with open(path, "w") as fh:
            writer(fh)
    with open(paths[4], "w") as fh:
        fh.write("polNumb," + ",".join(f"d{r}" for r in range(dist.n_sims)) + "\n")
        for pid, row in zip(dist.policy_ids, dist.rbns):
            fh.write(pid + "," + ",".join(f"{v:.2f}" for v in row) + "\n")


def cmd_ibnr(args) -> None:
    config = _config(args)
    tri = _read_triangle(args.triangle)
    paths = _targets(args, "ibnr_counts.csv", "ibnr_draws.csv")
    try:
        model = fit_ibnr_counts(tri)
    except ValueError as err:
        raise InputError(str(err)) from None
    n = args.draws if args.draws is not None else config.n_ibnr_draws
    draws = sample_ibnr(model, n, substream(config.rng_seed, 2000))
    mean, _ = expected_ibnr(model)
    var = variance_ibnr(model)
    with open(paths[0], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["origin", "reported", "p", "expected", "variance", "q0.05", "q0.5", "q0.95"])
        for i, o in enumerate(model.origins):
            q = np.quantile(draws.per_year[:, i], [0.05, 0.5, 0.95])
            writer.writerow([o, f"{model.r[i]:.0f}", f"{model.p[i]:.6f}", f"{mean[i]:.4f}", f"{var[i]:.4f}"]
                            + [f"{v:.1f}" for v in q])
        q = np.quantile(draws.totals, [0.05, 0.5, 0.95])
        writer.writerow(["total", f"{model.r.sum():.0f}", "", f"{mean.sum():.4f}", f"{var.sum():.4f}"]
                        + [f"{v:.1f}" for v in q])
    with open(paths[1], "w", newline="") as fh:
        write_draws(draws, model.origins, fh)


def cmd_chainladder(args) -> None:
    config = _config(args)
    tri = _read_triangle(args.triangle)
    paths = _targets(args, "cl_projection.csv", "cl_bootstrap.csv")
    proj = cl_project(tri)
    with open(paths[0], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["origin", "latest", "ultimate", "reserve"])
        for o, a, u, r in zip(tri.origins, proj.latest, proj.ultimate, proj.reserve):
            writer.writerow([o, f"{a:.6f}", f"{u:.6f}", f"{r:.6f}"])
        writer.writerow(["total", f"{proj.latest.sum():.6f}", f"{proj.ultimate.sum():.6f}", f"{proj.total:.6f}"])
        writer.writerow(["factors"] + [f"{f:.8f}" for f in proj.factors])
    boot = odp_bootstrap(tri, args.bootstrap, substream(config.rng_seed, 4000))
    with open(paths[1], "w", newline="") as fh:
        write_quantile_report(boot, proj, fh)


def _read_claim_draws(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            ids, rows = [], []
            for rec in reader:
                ids.append(rec[0])
                rows.append([float(v) for v in rec[1:]])
    except FileNotFoundError:
        raise InputError(f"draw file not found: {path}") from None
    except ValueError as err:
        raise InputError(f"{path}: {err}") from None
    return ids, np.array(rows, dtype=float).reshape(len(ids), -1)


def _read_truth(path) -> dict[str, float]:
    try:
        with open(path, newline="") as fh:
            return {r["polNumb"]: float(r["reserve"]) for r in csv.DictReader(fh)}
    except FileNotFoundError:
        raise InputError(f"truth file not found: {path}") from None
    except (KeyError, ValueError) as err:
        raise InputError(f"{path}: malformed truth file ({err})") from None


def cmd_evaluate(args) -> None:
    ids, draws = _read_claim_draws(args.claim_draws)
    truth = _read_truth(args.truth)
    missing = [p for p in ids if p not in truth]
    if missing:
        raise InputError(f"no true reserve for {len(missing)} claims, e.g. {missing[0]}")
    paths = _targets(args, "metrics.csv")
    y = np.array([truth[p] for p in ids])
    scores = evaluate(draws, y, args.alpha) if len(ids) else {}
    if len(ids):
        scores["total_predicted"] = float(draws.sum(axis=0).mean())
        scores["total_observed"] = float(y.sum())
        if y.sum() != 0:
            scores["total_pe"] = percentage_error(scores["total_predicted"], float(y.sum()))
    with open(paths[0], "w") as fh:
        write_comparison({"micro": scores}, fh)


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def _copy_section(out, title: str, path: Path) -> None:
    if path.exists():
        out.write(f"# {title}\n")
        out.write(path.read_text())
        out.write("\n")


def cmd_report(args) -> None:
    model_dir = _models_dir(args)
    models, _, _ = load_models(model_dir)
    summary_path = model_dir / "data_summary.json"
    summary = _read_json(summary_path) if summary_path.exists() else None
    (path,) = _targets(args, "report.txt")
    results = Path(args.results) if args.results else Path(args.out_dir)
    with open(path, "w") as out:
        if summary:
            out.write("# transition percentages\nmodel,rows," + ",".join(TRANSITIONS) + "\n")
            for m, counts in enumerate(summary["transition_counts"]):
                total = sum(counts)
                pct = [100.0 * c / total if total else 0.0 for c in counts]
                out.write(f"S{m},{total}," + ",".join(f"{v:.2f}" for v in pct) + "\n")
            out.write("\n")
        out.write("# split points\nmodel," + ",".join(f"b{i + 1}" for i in range(len(models.payment_models[0].splits)))
                  + "\n")
        for pm in models.payment_models:
            out.write(f"S{pm.model_index}," + ",".join(f"{b:.2f}" for b in pm.splits) + "\n")
        out.write("\n# bin means\nmodel," + ",".join(f"B{i + 1}" for i in range(models.payment_models[0].n_bins))
                  + "\n")
        for pm in models.payment_models:
            out.write(f"S{pm.model_index}," + ",".join(f"{v:.2f}" for v in pm.means) + "\n")
        out.write("\n")
        if summary:
            out.write("# bin probabilities\nmodel,payments,"
                      + ",".join(f"B{i + 1}" for i in range(models.payment_models[0].n_bins)) + "\n")
            for m, counts in enumerate(summary["bin_counts"]):
                total = sum(counts)
                pct = [100.0 * c / total if total else 0.0 for c in counts]
                out.write(f"S{m},{total}," + ",".join(f"{v:.2f}" for v in pct) + "\n")
            out.write("\n")
        if models.ibnr is not None:
            mean, total = expected_ibnr(models.ibnr)
            var = variance_ibnr(models.ibnr)
            out.write("# ibnr counts\norigin,reported,expected,sd\n")
            for o, r, e, v in zip(models.ibnr.origins, models.ibnr.r, mean, var):
                out.write(f"{o},{r:.0f},{e:.2f},{np.sqrt(v):.2f}\n")
            out.write(f"total,{models.ibnr.r.sum():.0f},{total:.2f},{np.sqrt(var.sum()):.2f}\n\n")
        if models.reporting is not None:
            out.write(f"# reporting\nprobability,{models.reporting.probability:.6f}\n\n")
        _copy_section(out, "best estimate", results / "reserve_summary.csv")
        _copy_section(out, "chain-ladder", results / "cl_bootstrap.csv")
        _copy_section(out, "metrics", results / "metrics.csv")


def cmd_binning(args) -> None:
    models, _, _ = load_models(_models_dir(args))
    (path,) = _targets(args, "binning.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "variable", "bin", "interval"])
        for hm in models.time_models:
            for name in sorted(hm.specs):
                for i, label in enumerate(hm.specs[name].labels()):
                    writer.writerow([f"S{hm.model_index}", name, i + 1, label])


def cmd_pdp(args) -> None:
    from .claims_data import build_state_datasets, discretize_portfolio

    models, config, as_of = load_models(_models_dir(args))
    parsed = _read_claims(args.transactions, config)
    table, _ = discretize_portfolio(parsed.claims, config, args.as_of or as_of)
    datasets = build_state_datasets(table, config)
    (path,) = _targets(args, f"pdp_{args.variable}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "level"] + list(TRANSITIONS))
        for hm, ds in zip(models.time_models, datasets):
            if len(ds.table) == 0:
                continue
            for label, probs in partial_dependence(hm, ds.table, args.variable):
                writer.writerow([f"S{hm.model_index}", label] + [f"{p:.6f}" for p in probs])


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--as-of", type=_date, help="evaluation date YYYY-MM-DD")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="microres", description="Micro-level multi-state claims reserving")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthetic portfolio with a known truth")
    p.add_argument("--spec", help="synthetic spec (YAML); default toy spec if omitted")
    p.add_argument("--n-claims", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", parents=[common], help="discretize a transaction log")
    p.add_argument("--transactions", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", parents=[common], help="fit and persist all models")
    p.add_argument("--transactions", required=True)
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.add_argument("--no-ibnr", action="store_true", help="skip the IBNR count model")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[common], help="simulate the reserve distribution")
    p.add_argument("--transactions", required=True)
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.add_argument("--n-sims", type=int)
    p.add_argument("--payment-mode", choices=["expected", "sample"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ibnr", parents=[common], help="negative-binomial IBNR counts from a triangle")
    p.add_argument("--triangle", required=True)
    p.add_argument("--draws", type=int)
    p.set_defaults(func=cmd_ibnr)

    p = sub.add_parser("chainladder", parents=[common], help="chain-ladder and ODP bootstrap")
    p.add_argument("--triangle", required=True)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.set_defaults(func=cmd_chainladder)

    p = sub.add_parser("evaluate", parents=[common], help="score per-claim draws against true reserves")
    p.add_argument("--claim-draws", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--alpha", type=float, default=0.95)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="tables from persisted artifacts")
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.add_argument("--results", help="directory with simulate/evaluate outputs (default OUT_DIR)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("binning", parents=[common], help="dump the covariate binning of the time models")
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.set_defaults(func=cmd_binning)

    p = sub.add_parser("pdp", parents=[common], help="partial-dependence table of one covariate")
    p.add_argument("--transactions", required=True)
    p.add_argument("--variable", required=True)
    p.add_argument("--models", help="model directory (default OUT_DIR/models)")
    p.set_defaults(func=cmd_pdp)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "simulate" and (args.as_of is None or args.seed is None):
        parser.error("simulate requires --as-of and --seed")
    try:
        args.func(args)
    except tuple(EXIT_CODES) as err:
        name = type(err).__name__
        print(f"error: {name}: {err}", file=sys.stderr)
        return next(code for cls, code in EXIT_CODES.items() if isinstance(err, cls))
    return 0


if __name__ == "__main__":
    sys.exit(main())
