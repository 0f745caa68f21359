"""Command-line experiment runner.

Each subcommand reads one JSON configuration, writes its data files into the
output directory and finishes with a ``manifest.json`` holding the resolved
configuration, its hash and a checksum of every data file. Exit codes: 0 ok,
2 validation error, 3 targets missed, 4 solver failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import math
import sys
from fractions import Fraction
from pathlib import Path

from .config import ExperimentConfig
from .covering import IncompatibleScales, standard_covering, verify_plan
from .errors import InsufficientRange, ResolventBlowUp, SolverError, ValidationError
from .hamiltonian import GOOD, JGOOD, GoodnessParams, assemble, evaluate_goodness
from .io import RunManifest, now_iso, write_csv, write_json, write_jsonl
from .lattice import EtaGrid, classify_acceptable, eta_of_scale
from .measurement import SudecParams, default_times, measure_instance
from .msa import parallel_map, run_msa, trial_seed, wegner_measure
from .point_process import (Box, PoissonParams, bracket_check, check_deviation_bounds, sample_marked,
                            sample_poisson, split_marked)
from .rng import derive_seed

EXIT_OK, EXIT_VALIDATION, EXIT_TARGETS, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
MEASURE_LABEL = 77


# -- sample ----------------------------------------------------------------------

def cmd_sample(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    hd = cfg.high_disorder()
    records, report = [], []
    for L in cfg.resolved_scales():
        rho = cfg.rho_at(L)
        box = Box.cube(L, cfg.d)
        for i in range(cfg.trials):
            seed = trial_seed(cfg.seed, L, i)
            Y = sample_marked(box, 2 * rho, seed)
            X, Xp = split_marked(Y)
            records.append({"L": L, "trial": i, "seed": seed, "rho": rho, "n_Y": len(Y), "n_X": len(X),
                            "n_Xp": len(Xp), "identity_ok": len(X) + len(Xp) == len(Y),
                            "X": X.to_list(), "Xp": Xp.to_list()})
        mu_box = 2 * rho * L ** cfg.d
        mu_cell = 2 * rho * hd.delta1 ** cfg.d
        lo, exact, hi = bracket_check(mu_cell, hd.K0)
        report.append({"L": L, "rho": rho,
                       "box": check_deviation_bounds(mu_box, a=8.0).to_dict(),
                       "cell": check_deviation_bounds(mu_cell, k=hd.K0).to_dict(),
                       "bracket": {"mu": mu_cell, "k": hd.K0, "lower": lo, "exact": exact, "upper": hi,
                                   "passed": lo <= exact <= hi}})
    write_jsonl(out / "samples.jsonl", records)
    write_json(out / "deviation_report.json", report)
    return ["samples.jsonl", "deviation_report.json"], EXIT_OK


# -- goodbox ---------------------------------------------------------------------

def _goodbox_task(args):
    L, rho, master, i, cfg_dict = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    seed = trial_seed(master, L, i)
    box = Box.cube(L, cfg.d)
    X, _ = split_marked(sample_marked(box, 2 * rho, seed))
    H = assemble(box, X, profile=cfg.profile_obj(), h=cfg.h)
    params = GoodnessParams(eps1=cfg.eps1, kappa=cfg.kappa, probe_seed=seed)
    out = []
    for E in cfg.resolved_energies():
        rep = evaluate_goodness(H, E, cfg.resolved_mass(), params)
        out.append({"L": L, "trial": i, "seed": seed, "rho": rho, "E": E, "report": rep.to_dict()})
    return out


def cmd_goodbox(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    cd = cfg.to_dict()
    tasks = [(L, cfg.rho_at(L), cfg.seed, i, cd) for L in cfg.resolved_scales() for i in range(cfg.trials)]
    records = [r for rs in parallel_map(_goodbox_task, tasks) for r in rs]
    rows = []
    for L in cfg.resolved_scales():
        for E in cfg.resolved_energies():
            sel = [r for r in records if r["L"] == L and r["E"] == E]
            passes = sum(r["report"]["verdict"] in (GOOD, JGOOD) for r in sel)
            rows.append([L, E, len(sel), passes, passes / len(sel)])
    write_jsonl(out / "goodbox_trials.jsonl", records)
    write_csv(out / "goodbox_summary.csv", ["L", "E", "trials", "passes", "pass_fraction"], rows)
    return ["goodbox_trials.jsonl", "goodbox_summary.csv"], EXIT_OK


# -- msa -------------------------------------------------------------------------

SCALE_HEADER = ["L", "rho", "trials", "passes", "fraction", "ci_low", "ci_high", "target", "meets_target",
                "acceptable_fraction", "mass_hat"]
WEGNER_HEADER = ["L", "E", "threshold", "trials", "fraction", "target", "meets_target"]


def _scale_row(s) -> list:
    d = s.summary()
    return [d[k] for k in SCALE_HEADER]


def _wegner_row(w) -> list:
    d = w.summary()
    return [d[k] for k in WEGNER_HEADER]


def cmd_msa(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    done_scales, done_wegner = [], []

    def persist(est, wl):
        done_scales.append(est)
        done_wegner.extend(wl)
        write_csv(out / "msa_scales.csv", SCALE_HEADER, [_scale_row(s) for s in done_scales])
        write_csv(out / "msa_wegner.csv", WEGNER_HEADER, [_wegner_row(w) for w in done_wegner])
        write_jsonl(out / "msa_trials.jsonl", [r.to_dict() for s in done_scales for r in s.records])

    report = run_msa(cfg, on_scale=persist)
    write_json(out / "msa_report.json", report.to_dict())
    write_jsonl(out / "wegner_trials.jsonl",
                [{"L": w.L, "E": w.E, **r.__dict__} for w in report.wegner for r in w.records])
    files = ["msa_scales.csv", "msa_wegner.csv", "msa_trials.jsonl", "msa_report.json", "wegner_trials.jsonl"]
    return files, EXIT_OK if report.all_meet_targets else EXIT_TARGETS


# -- wegner ----------------------------------------------------------------------

def cmd_wegner(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    settings = cfg.trial_settings()
    results = []
    for L in cfg.resolved_scales():
        for E in settings.energies:
            results.append(wegner_measure(L, E, cfg.rho_at(L), cfg.C1, cfg.rho1,
                                          cfg.wegner_trials or cfg.trials, cfg.seed, cfg.p, settings))
    write_csv(out / "wegner.csv", WEGNER_HEADER, [_wegner_row(w) for w in results])
    write_jsonl(out / "wegner_trials.jsonl",
                [{"L": w.L, "E": w.E, **r.__dict__} for w in results for r in w.records])
    ok = all(w.meets_target for w in results)
    return ["wegner.csv", "wegner_trials.jsonl"], EXIT_OK if ok else EXIT_TARGETS


# -- measure ---------------------------------------------------------------------

def _measure_task(args):
    i, master, cfg_dict = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    mz = cfg.measure
    seed = derive_seed(master, MEASURE_LABEL, i)
    box = Box.cube(float(mz["L"]), cfg.d)
    X = sample_poisson(box, PoissonParams(float(mz["rho"]), seed))
    H = assemble(box, X, profile=cfg.profile_obj(), h=cfg.h)
    times = default_times(int(mz["n_times"]), float(mz["t_max"]))
    res = measure_instance(H, float(mz["E0"]), float(mz["moment_p"]), times,
                           SudecParams(mz["tau"], mz["s"], mz["nu"]))
    return i, seed, res


def cmd_measure(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    tasks = [(i, cfg.seed, cfg.to_dict()) for i in range(int(cfg.measure["instances"]))]
    results = parallel_map(_measure_task, tasks)
    inst, decay, fits, moments, mult, sud = [], [], [], [], [], []
    for i, seed, res in results:
        inst.append({"instance": i, "seed": seed, **res.to_dict()})
        for k, (lam, fit) in enumerate(zip(res.eigenvalues, res.fits)):
            if fit is None:
                fits.append([i, k, lam, None, None, None])
                continue
            fits.append([i, k, lam, fit.mass, fit.intercept, fit.r_squared])
            decay.extend([i, k, lam, r, math.log(v)] for r, v in fit.shells)
        moments.extend([i, t, v] for t, v in zip(res.moment.times, res.moment.values))
        mult.extend([i, c["eigenvalue"], c["multiplicity"]] for c in res.multiplicities)
        sud.extend([i, s["i"], s["j"], s["eigenvalue"], s["C"]] for s in res.sudec)
    write_jsonl(out / "measure_instances.jsonl", inst)
    write_csv(out / "decay.csv", ["instance", "eig", "eigenvalue", "radius", "log_norm"], decay)
    write_csv(out / "fits.csv", ["instance", "eig", "eigenvalue", "mass", "intercept", "r_squared"], fits)
    write_csv(out / "moments.csv", ["instance", "t", "moment"], moments)
    write_csv(out / "multiplicity.csv", ["instance", "eigenvalue", "multiplicity"], mult)
    write_csv(out / "sudec.csv", ["instance", "i", "j", "eigenvalue", "C"], sud)
    return ["measure_instances.jsonl", "decay.csv", "fits.csv", "moments.csv", "multiplicity.csv",
            "sudec.csv"], EXIT_OK


# -- covering-check --------------------------------------------------------------

COVER_HEADER = ["d", "L", "ell", "compatible", "alpha", "n", "centers", "coverage", "containment",
                "core_disjoint", "cardinality", "nearest"]


def cmd_covering_check(cfg: ExperimentConfig, out: Path) -> tuple[list[str], int]:
    cv = cfg.covering
    rows, ok = [], True
    for d in cv["dims"]:
        for ell in cv["ells"]:
            for r in range(math.ceil(cv["ratio_min"]), math.floor(cv["ratio_max"]) + 1):
                L = r * ell
                try:
                    plan = standard_covering(Box.cube(L, int(d)), ell)
                except IncompatibleScales as exc:
                    rows.append([d, L, ell, False, None, None, None, None, None, None, None,
                                 float(exc.nearest) if exc.nearest is not None else None])
                    continue
                rep = verify_plan(plan, reach=Fraction(str(cv["reach"])))
                ok &= rep.all_hold
                rows.append([d, L, ell, True, float(plan.alpha), plan.n, len(plan), rep.coverage,
                             rep.containment, rep.core_disjoint, rep.cardinality, None])
    write_csv(out / "covering.csv", COVER_HEADER, rows)
    return ["covering.csv"], EXIT_OK if ok else EXIT_TARGETS


COMMANDS = {"sample": cmd_sample, "goodbox": cmd_goodbox, "msa": cmd_msa, "measure": cmd_measure,
            "wegner": cmd_wegner, "covering-check": cmd_covering_check}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msalab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON configuration (or a previous run's manifest.json)")
    ap.add_argument("--out", type=Path, help="output directory (overrides config)")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--trials", type=int, help="trials per scale (overrides config)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(seed=args.seed, trials=args.trials,
                                 out=str(args.out) if args.out else None)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(cfg.out)
    manifest = RunManifest(args.command, cfg.to_dict(), cfg.config_hash(), now_iso())
    try:
        out.mkdir(parents=True, exist_ok=True)
        files, code = COMMANDS[args.command](cfg, out)
        manifest.finalize(out, files, code)
    except (ValidationError, InsufficientRange) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ResolventBlowUp) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if code == EXIT_TARGETS:
        print("targets missed; report written", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
