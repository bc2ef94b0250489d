"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--config <file>`` and ``--out <dir>``.
The config file holds one ``key = value`` per line (``#`` starts a comment);
command-line flags override it and ``SBI_SEED`` is the last-resort seed.
Exit codes: 0 success, 1 numeric failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline, designs, gradcheck, optim, sbi, scm, stats_io


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> list[float]:
    return [float(x) for x in str(s).split(",") if x.strip()]


def _ints(s: str) -> list[int]:
    return [int(x) for x in str(s).split(",") if x.strip()]


def _names(s: str) -> list[str]:
    return [x.strip() for x in str(s).split(",") if x.strip()]


# key -> parser; shared by the config file and the flags
KEYS = {
    "seed": int, "out": str, "jobs": int,
    "design": str, "family": str, "n": int, "k": int,
    "lam": float, "t": float, "t_mode": str, "p": float,
    "epochs": int, "batch_size": int, "scaling": str, "single_instance": _bool,
    "alpha": float, "max_retries": int,
    "cate_x": float,
    "warmup_steps": int, "steps": int, "delta": float, "repetitions": int, "mode": str,
    "families": _names, "designs": _names, "distances": _floats,
    "normalize": _bool, "n_grid": _ints, "reps": int, "perturb": float, "states": int,
}


def read_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def _add_common(p: argparse.ArgumentParser, keys):
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    for key in keys:
        kind = KEYS[key]
        p.add_argument("--" + key.replace("_", "-"), dest=key,
                       type=str if kind in (_names, _floats, _ints, _bool) else kind)


SBI_KEYS = ["design", "family", "n", "k", "lam", "t", "t_mode", "p", "epochs",
            "batch_size", "scaling", "single_instance", "alpha", "max_retries", "jobs", "cate_x"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simident",
                                     description="Simulation-based identifiability tests")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="one SBI report"), SBI_KEYS)
    _add_common(sub.add_parser("baseline", help="profile-likelihood range"),
                ["design", "family", "n", "warmup_steps", "steps", "delta", "repetitions",
                 "mode", "alpha"])
    _add_common(sub.add_parser("table", help="decision table over the catalog"),
                ["families", "designs", "n", "k", "lam", "epochs", "batch_size", "jobs"])
    _add_common(sub.add_parser("rdd-sweep", help="conditional-effect gap vs distance"),
                ["family", "distances", "normalize", "n", "k", "lam", "epochs", "batch_size",
                 "jobs"])
    _add_common(sub.add_parser("gradcheck", help="finite-difference gradient suites"),
                ["states", "n"])
    _add_common(sub.add_parser("diagnostics", help="likelihood-ratio curve"),
                ["design", "family", "n_grid", "reps", "perturb"])
    cat = sub.add_parser("catalog", help="catalog utilities")
    cat.add_argument("action", choices=["list"])
    _add_common(cat, [])
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Config file values overridden by explicit flags; seed fallback chain."""
    opts = read_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config", "action") or value is None:
            continue
        if key in KEYS and KEYS[key] in (_names, _floats, _ints, _bool):
            try:
                value = KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"bad value for --{key}: {exc}") from exc
        opts[key] = value
    if "seed" not in opts:
        env = os.environ.get("SBI_SEED")
        try:
            opts["seed"] = int(env) if env else 0
        except ValueError as exc:
            raise ConfigError(f"SBI_SEED is not an integer: {env!r}") from exc
    return opts


def _need(opts, *keys):
    missing = [k for k in keys if k not in opts]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join(missing))


def _check_design(opts):
    _need(opts, "design", "family")
    try:
        designs.get_entry(opts["design"], opts["family"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc


def sbi_config(opts: dict, family: str) -> sbi.SbiConfig:
    base = sbi.default_config(family)
    o = base.optim
    try:
        ocfg = optim.OptimConfig(
            epochs=opts.get("epochs", o.epochs), batch_size=opts.get("batch_size", o.batch_size),
            lam=opts.get("lam", o.lam), scaling=opts.get("scaling", o.scaling),
            single_instance=opts.get("single_instance", o.single_instance),
            alpha=opts.get("alpha", o.alpha))
        est = scm.EstimandSpec()
        if "cate_x" in opts:
            est = scm.EstimandSpec("CATE", conditioning=("X", opts["cate_x"]))
        cfg = replace(base, n=opts.get("n", base.n), k=opts.get("k", base.k),
                      t=opts.get("t", base.t), t_mode=opts.get("t_mode", base.t_mode),
                      p=opts.get("p", base.p), optim=ocfg, estimand=est, seed=opts["seed"],
                      max_retries=opts.get("max_retries", base.max_retries),
                      jobs=opts.get("jobs", 1))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.optim.batch_size > cfg.n:
        raise ConfigError("batch_size must not exceed n")
    return cfg


def _out_dir(opts) -> Path:
    out = Path(opts.get("out", "."))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write(path: Path, text: str):
    path.write_text(text)
    print(f"wrote {path}")


def cmd_run(opts):
    _check_design(opts)
    cfg = sbi_config(opts, opts["family"])
    out = _out_dir(opts)
    report = sbi.run(opts["design"], opts["family"], cfg)
    entry = designs.get_entry(opts["design"], opts["family"])
    row = stats_io.row_from_report(report, entry.ground_truth_id)
    stem = f"run_{opts['design']}_{opts['family']}"
    _write(out / f"{stem}.json", stats_io.report_to_json(report))
    _write(out / f"{stem}.csv", stats_io.rows_to_csv([row]))
    print(f"{report.design}/{report.family}: dq_norm={row.dq_norm:.4f} "
          f"decision={row.decision} ground_truth={row.ground_truth}")
    return 0


def cmd_baseline(opts):
    _check_design(opts)
    try:
        bcfg = baseline.BaselineConfig(**{k: opts[k] for k in
                                          ("warmup_steps", "steps", "delta", "repetitions",
                                           "mode", "alpha") if k in opts})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(opts)
    design = designs.get_design(opts["design"], opts["family"])
    rng = np.random.default_rng(opts["seed"])
    n = opts.get("n", 2000)
    sample = scm.sample_prior(design, n, rng)
    data = scm.simulate(design, sample)
    res = baseline.profile_range(opts["design"], opts["family"], data, bcfg, rng)
    q_true = scm.true_effect(design, sample, data, scm.EstimandSpec())
    payload = {"design": opts["design"], "family": opts["family"], "n": n,
               "seed": opts["seed"], "q_true": q_true, "q_min": res.q_min,
               "q_max": res.q_max, "q_warmup": res.q_warmup, "spread": res.spread,
               "spread_norm": res.spread / abs(q_true) if q_true else None,
               "skipped": res.skipped, "recorded": len(res.qs)}
    _write(out / f"baseline_{opts['design']}_{opts['family']}.json", stats_io.to_json(payload))
    print(f"baseline spread={res.spread:.4f}")
    return 0


def cmd_table(opts):
    families = opts.get("families", ["linear"])
    for fam in families:
        if fam not in designs.FAMILIES:
            raise ConfigError(f"unknown family {fam!r}")
        sbi_config(opts, fam)   # validate overrides before any run starts
    out = _out_dir(opts)
    for fam in families:
        rows = stats_io.table_reproduce(
            [fam], n=opts.get("n"), k=opts.get("k"), seed=opts["seed"],
            designs_subset=opts.get("designs"), jobs=opts.get("jobs", 1),
            optim_overrides={k: opts[k] for k in ("lam", "epochs", "batch_size") if k in opts},
            progress=lambda r: print(f"{r.design}/{r.family}: dq_norm={r.dq_norm:.4f} "
                                     f"{r.decision} (truth {r.ground_truth})", flush=True))
        _write(out / f"table_all_{fam}.csv", stats_io.rows_to_csv(rows))
    return 0


def cmd_rdd_sweep(opts):
    family = opts.get("family", "gp")
    if ("rdd", family) not in designs.CATALOG:
        raise ConfigError(f"no rdd design for family {family!r}")
    distances = opts.get("distances", [0.05, 0.25, 0.5, 1.0, 1.5])
    cfg = sbi_config(opts, family)
    out = _out_dir(opts)
    rows = stats_io.rdd_cate_sweep(family, distances, cfg,
                                   normalize=opts.get("normalize", False))
    _write(out / f"rdd-sweep_rdd_{family}.csv", stats_io.sweep_to_csv(rows))
    return 0


def cmd_gradcheck(opts):
    results = gradcheck.run_all(seed=opts["seed"], states=opts.get("states", 2),
                                n=opts.get("n", 6))
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")
    return 1 if failed else 0


def cmd_diagnostics(opts):
    _check_design(opts)
    if opts["family"] == "gp":
        raise ConfigError("diagnostics need a parametric family")
    out = _out_dir(opts)
    curve = sbi.likelihood_ratio_diagnostic(
        opts["design"], opts["family"], opts.get("n_grid", [100, 1000, 10000]),
        reps=opts.get("reps", 10), perturb=opts.get("perturb", 0.1), seed=opts["seed"])
    payload = {"n_grid": curve.n_grid, "mean_log_lr": curve.mean_log_lr,
               "spearman": curve.spearman, "linear_r2": curve.linear_r2}
    _write(out / f"diagnostics_{opts['design']}_{opts['family']}.json",
           stats_io.to_json(payload))
    return 0


def cmd_catalog(opts):
    for e in designs.list_catalog():
        print(f"{e.key[0]:16s} {e.key[1]:10s} ground_truth={e.ground_truth_id}")
    print(f"{len(designs.list_catalog())} entries")
    return 0


COMMANDS = {"run": cmd_run, "baseline": cmd_baseline, "table": cmd_table,
            "rdd-sweep": cmd_rdd_sweep, "gradcheck": cmd_gradcheck,
            "diagnostics": cmd_diagnostics, "catalog": cmd_catalog}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (optim.OptimAbort, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
