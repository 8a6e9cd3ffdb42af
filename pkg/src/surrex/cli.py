"""Command-line interface: ``surrex run|match|reconstruct|fit|cv``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
Errors are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import InputError, SurrexError, ValidationError

log = logging.getLogger("surrex")


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--iterations", type=int, help="sampler iterations including burn-in")
    p.add_argument("--burn-in", type=int, dest="burn_in", help="burn-in iterations")


def _add_fit_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--studies", required=True, help="study CSV")
    p.add_argument("--scale", choices=["log", "hr"], default="log", help="scale of y1/y2 in the study CSV")
    p.add_argument("--model", choices=["dh", "pnf", "pnf-bias"], default="dh")
    p.add_argument("--scenario", default="RCT,cRWE,sRWE", help="evidence classes, e.g. RCT,cRWE")
    p.add_argument("--model-config", dest="model_config", help="model config JSON")
    p.add_argument("--chains", type=int, help="number of chains")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surrex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"surrex {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    _add_overrides(p)

    p = sub.add_parser("match", help="match single-arm studies by covariate distance")
    p.add_argument("--arms", required=True, help="arm CSV with covariate columns")
    p.add_argument("--covariates", help="covariate spec JSON (default: built-in panel)")
    p.add_argument("--threshold", type=float, help="override the RCT-derived threshold")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="pseudo-IPD from a digitised KM curve")
    p.add_argument("--curve", required=True, help="curve CSV (time,survival)")
    p.add_argument("--n-start", type=int, required=True, dest="n_start")
    p.add_argument("--risk", help="risk-table CSV (time,n_at_risk)")
    p.add_argument("--total-events", type=int, dest="total_events")
    p.add_argument("--control-curve", dest="control_curve", help="second arm; fits a Cox model when given")
    p.add_argument("--control-n-start", type=int, dest="control_n_start")
    p.add_argument("--control-risk", dest="control_risk")
    p.add_argument("--control-total-events", type=int, dest="control_total_events")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit one surrogacy model")
    _add_fit_inputs(p)
    _add_overrides(p)

    p = sub.add_parser("cv", help="take-one-out cross-validation")
    _add_fit_inputs(p)
    _add_overrides(p)
    return parser


def _base(args):
    from .evidence import build_evidence_base, read_studies_csv

    return build_evidence_base(read_studies_csv(args.studies, args.scale), args.scenario)


def _model_config(args):
    from .surrogacy.config import ModelConfig, read_model_config

    if args.model_config:
        return read_model_config(args.model_config, args.model)
    return ModelConfig(args.model)


def _sampler(args, cv: bool):
    from .mcmc.sampler import SamplerConfig

    base = SamplerConfig.cv_default() if cv else SamplerConfig()
    return base.replace(seed=args.seed, iterations=args.iterations, burn_in=args.burn_in,
                        n_chains=args.chains)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    from .pipeline import load_pipeline_config, run_pipeline

    cfg = load_pipeline_config(args.config).with_overrides(args.seed, args.out, args.iterations, args.burn_in)
    manifest = run_pipeline(cfg)
    print(json.dumps({"status": manifest.status, "out": str(cfg.out), "warnings": manifest.warnings}))
    return 0


def cmd_match(args) -> int:
    from .matching import (
        DEFAULT_COVARIATES, derive_threshold, match_studies, rct_arm_pairs,
        read_arms_csv, read_covariate_spec, write_match_report,
    )

    specs = read_covariate_spec(args.covariates) if args.covariates else list(DEFAULT_COVARIATES)
    arms = read_arms_csv(args.arms, specs)
    pairs, singles = rct_arm_pairs(arms)
    threshold = derive_threshold(pairs, specs, args.threshold)
    result = match_studies([a for a in singles if a.role == "treatment"],
                           [a for a in singles if a.role == "control"], specs, threshold)
    write_match_report(result, _out(args, "."))
    print(json.dumps({"threshold": threshold, "candidates": result.candidate_count,
                      "pairs": [[t, c, d] for t, c, d in result.pairs]}))
    return 0


def cmd_reconstruct(args) -> int:
    from .ipd import fit_cox, read_curve_csv, read_risk_csv, reconstruct_ipd, write_ipd_csv

    out = _out(args, ".")
    curve = read_curve_csv(args.curve, args.n_start, args.total_events)
    risk = read_risk_csv(args.risk) if args.risk else None
    treated = reconstruct_ipd(curve, risk, arm=1)
    write_ipd_csv(out / "ipd_treatment.csv", treated)
    report = {"treatment": {"n": len(treated), "events": treated.n_events,
                            "max_km_error": treated.max_km_error}}
    if args.control_curve:
        if args.control_n_start is None:
            raise ValidationError("--control-n-start is required with --control-curve")
        c_curve = read_curve_csv(args.control_curve, args.control_n_start, args.control_total_events)
        c_risk = read_risk_csv(args.control_risk) if args.control_risk else None
        control = reconstruct_ipd(c_curve, c_risk, arm=0)
        write_ipd_csv(out / "ipd_control.csv", control)
        fit = fit_cox(treated, control)
        report["control"] = {"n": len(control), "events": control.n_events, "max_km_error": control.max_km_error}
        report["cox"] = {"loghr": fit.loghr, "se": fit.se, "n_events": fit.n_events}
    print(json.dumps(report))
    return 0


def cmd_fit(args) -> int:
    from .mcmc.diagnostics import write_summary_csv
    from .pipeline import emit_scatter_data, write_scatter_data
    from .surrogacy.models import fit_model, stream_key, write_parameter_csv

    base = _base(args)
    mc = _model_config(args)
    fit = fit_model(base, mc, _sampler(args, cv=False), (stream_key(args.scenario), stream_key(mc.model)))
    out = _out(args, f"fit-{mc.model}")
    write_parameter_csv(out / "parameters.csv", fit)
    write_summary_csv(out / "diagnostics.csv", fit.summaries)
    verdict = fit.verdict().to_dict()
    (out / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    if mc.model == "dh":
        write_scatter_data(out, emit_scatter_data(base, fit))
    conv = fit.convergence()
    if not conv.passed:
        log.warning(conv.message())
    print(json.dumps({"model": mc.model, "verdict": verdict, "converged": conv.passed}))
    return 0


def cmd_cv(args) -> int:
    from .crossval import take_one_out, write_cv_csv, write_forest_csv
    from .surrogacy.models import stream_key

    base = _base(args)
    mc = _model_config(args)
    summary = take_one_out(base, mc, _sampler(args, cv=True), label=args.scenario,
                           stream=(stream_key(args.scenario), stream_key(mc.model)))
    out = _out(args, f"cv-{mc.model}")
    write_cv_csv(out / "cv.csv", summary)
    write_forest_csv(out / "forest.csv", summary)
    (out / "cv_summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary.to_dict()))
    return 0


COMMANDS = {"run": cmd_run, "match": cmd_match, "reconstruct": cmd_reconstruct, "fit": cmd_fit, "cv": cmd_cv}


def _error(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    stage = getattr(exc, "stage", None)
    if stage:
        payload["stage"] = stage
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SurrexError as exc:
        return _error(exc, exc.exit_code)
    except OSError as exc:
        return _error(InputError(str(exc)), 4)
    except (ArithmeticError, ValueError) as exc:
        # numerical trouble that escaped the typed errors
        return _error(exc, 3 if isinstance(exc, ArithmeticError) else 2)


if __name__ == "__main__":
    sys.exit(main())
