"""Command-line entry point.

Commands::

    prtebounds bound     closed-form (discrete) or plug-in (continuous) bounds
    prtebounds estimate  debiased estimates with standard errors
    prtebounds simulate  grid of synthetic experiments
    prtebounds baseline  moment-relaxation (MTR sieve) bounds
    prtebounds compare   both bound families side by side

Settings come from an optional JSON document (``--config``); command-line
flags override its fields. Results are printed as JSON with every float
written to 17 significant digits, and tables go to ``--out`` as CSV. The
exit code is 0 on success, 2 on invalid input and 3 when the data are too
thin for a required fit.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset, load_csv
from .errors import BoundsError, InsufficientDataError, ValidationError
from .weights import PolicySpec

COMMANDS = ("bound", "estimate", "simulate", "baseline", "compare")


@dataclass
class RunConfig:
    """Resolved settings of one run; unknown JSON keys are rejected."""

    data: str | None = None
    columns: dict = field(default_factory=dict)
    stratum: str | None = None
    y_min: float | None = None
    y_max: float | None = None
    instrument_kind: str = "discrete"
    outcome_kind: str = "auto"
    policy: dict = field(default_factory=lambda: {"type": "uniform_shift", "alpha": 0.05})
    c_gap: float = 0.05
    c_pi: float = 0.01
    bandwidth: float | None = None
    grid: int | None = None
    delta: float | None = None
    seed: int = 0
    cross_fit: bool = False
    learners: dict = field(default_factory=dict)
    mr: dict = field(default_factory=dict)
    dgp: dict | None = None
    alphas: list | None = None
    methods: list | None = None
    seeds: list | None = None
    threads: int | None = None

    def validate(self):
        if self.y_min is not None and self.y_max is not None and not self.y_min < self.y_max:
            raise ValidationError("need y_min < y_max")
        if self.instrument_kind not in ("discrete", "continuous"):
            raise ValidationError("instrument_kind must be discrete or continuous")
        if self.outcome_kind not in ("auto", "continuous", "binary"):
            raise ValidationError("outcome_kind must be auto, continuous or binary")
        for name in ("c_gap", "c_pi", "bandwidth", "delta"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be positive")
        if self.grid is not None and self.grid < 2:
            raise ValidationError("grid must be at least 2")
        if self.threads is not None and self.threads < 1:
            raise ValidationError("threads must be at least 1")
        make_policy(self.policy)
        return self


def make_policy(spec) -> PolicySpec:
    if not isinstance(spec, dict):
        raise ValidationError("policy must be an object")
    kind = spec.get("type", "uniform_shift")
    unknown = set(spec) - {"type", "alpha", "targets"}
    if unknown:
        raise ValidationError(f"unknown policy fields {sorted(unknown)}")
    alpha = float(spec.get("alpha", 0.0))
    if not math.isfinite(alpha):
        raise ValidationError("policy alpha must be finite")
    targets = spec.get("targets", {})
    if kind == "explicit":
        for k, v in targets.items():
            if not 0.0 <= float(v) <= 1.0:
                raise ValidationError(f"target propensity for {k!r} outside [0, 1]")
    return PolicySpec(kind, alpha, dict(targets))


def read_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    return raw


def load_config(source=None, overrides=None) -> RunConfig:
    """Build a config from a JSON path or dict, then apply ``overrides``."""
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = dict(source)
    else:
        raw = read_config(source)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config fields {sorted(unknown)}")
    return RunConfig(**raw).validate()


# ---------------------------------------------------------------------------
# output


def _plain(v):
    """Convert to JSON-compatible values; floats stay floats."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


def dumps(obj) -> str:
    """JSON text with floats at 17 significant digits; NaN and inf become null."""
    obj = _plain(obj)

    def emit(v, ind):
        pad = "  " * (ind + 1)
        if isinstance(v, dict):
            if not v:
                return "{}"
            items = [f"{pad}{json.dumps(k)}: {emit(x, ind + 1)}" for k, x in v.items()]
            return "{\n" + ",\n".join(items) + "\n" + "  " * ind + "}"
        if isinstance(v, list):
            if not v:
                return "[]"
            return "[" + ", ".join(emit(x, ind + 1) for x in v) + "]"
        if isinstance(v, float):
            return "%.17g" % v if math.isfinite(v) else "null"
        return json.dumps(v)

    return emit(obj, 0) + "\n"


def fmt_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return "" if v is None else str(v)


def write_table(rows, header, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for r in rows:
            out.writerow([fmt_cell(r.get(h)) for h in header])


# ---------------------------------------------------------------------------
# commands


def _dataset(cfg: RunConfig) -> Dataset:
    if cfg.data is not None:
        opts = {"instrument_kind": cfg.instrument_kind, "columns": cfg.columns}
        if cfg.y_min is not None:
            opts["y_min"] = cfg.y_min
        if cfg.y_max is not None:
            opts["y_max"] = cfg.y_max
        if cfg.stratum is not None:
            opts["x_columns"] = [cfg.stratum]
        return load_csv(cfg.data, opts)
    if cfg.dgp is not None:
        from .simlab import generate

        return generate(_dgp_spec(cfg))
    raise ValidationError("give a data file (--data) or a synthetic design (dgp)")


def _dgp_spec(cfg: RunConfig):
    from .simlab import DgpSpec

    if not isinstance(cfg.dgp, dict) or "kind" not in cfg.dgp:
        raise ValidationError("dgp needs at least a 'kind'")
    extra = set(cfg.dgp) - {"kind", "n", "params"}
    if extra:
        raise ValidationError(f"unknown dgp fields {sorted(extra)}")
    return DgpSpec(cfg.dgp["kind"], int(cfg.dgp.get("n", 1000)), int(cfg.seed),
                   dict(cfg.dgp.get("params", {})))


def _dml_config(cfg: RunConfig):
    from .dml import DmlConfig

    lr = cfg.learners
    return DmlConfig(policy=make_policy(cfg.policy), outcome_kind=cfg.outcome_kind,
                     c_gap=cfg.c_gap, c_pi=cfg.c_pi, seed=cfg.seed, cross_fit=cfg.cross_fit,
                     prob_learner=lr.get("prob", "auto"), reg_learner=lr.get("reg", "auto"),
                     quantile_learner=lr.get("quantile", "auto"))


def _cont_config(cfg: RunConfig):
    from .continuous import ContConfig

    lr = cfg.learners
    return ContConfig(policy=make_policy(cfg.policy), bandwidth=cfg.bandwidth,
                      delta=cfg.delta, grid=cfg.grid, seed=cfg.seed, cross_fit=cfg.cross_fit,
                      prop_learner=lr.get("prop", "logistic"), g_learner=lr.get("g", "auto"),
                      q_learner=lr.get("q", "auto"))


def _interval(name, lower, upper, **extra):
    return {"method": name, "lower": lower, "upper": upper, "width": upper - lower, **extra}


def _discrete_policy(cfg, ds):
    from .plugin import snapped_policy

    return snapped_policy(ds, make_policy(cfg.policy), cfg.c_gap)


def _ivot_bounds(cfg, ds):
    if ds.instrument_kind == "discrete":
        from .plugin import closed_form_from_data

        b = closed_form_from_data(ds, _discrete_policy(cfg, ds))
        return _interval("ivot_closed_form", b.lower, b.upper,
                         levels=b.components.get("levels"))
    from .continuous import continuous_estimate

    b = continuous_estimate(ds, _cont_config(cfg))
    return _interval("ivot_continuous", b.lower, b.upper)


def _ivot_estimate(cfg, ds):
    if ds.instrument_kind == "discrete":
        from .dml import dml_estimate

        r = dml_estimate(ds, _dml_config(cfg))
        return _interval("ivot_dml", r.lower.point, r.upper.point,
                         se_lower=r.lower.se, se_upper=r.upper.se,
                         ci95=[r.ci[0], r.ci[1]])
    return _ivot_bounds(cfg, ds)


def _mr(cfg, ds):
    from .baseline import mr_bounds_from_data

    allowed = {"degree", "knots", "continuity", "bins", "grid", "breaks"}
    extra = set(cfg.mr) - allowed
    if extra:
        raise ValidationError(f"unknown mr fields {sorted(extra)}")
    policy = _discrete_policy(cfg, ds) if ds.instrument_kind == "discrete" \
        else make_policy(cfg.policy)
    b = mr_bounds_from_data(ds, policy, **cfg.mr)
    return _interval("mr_baseline", b.lower, b.upper, sieve_size=b.components.get("sieve_size"))


def _describe(ds: Dataset):
    return {"n": ds.n, "instrument_kind": ds.instrument_kind, "y_min": ds.y_min,
            "y_max": ds.y_max, "labels": len(ds.labels())
            if ds.instrument_kind == "discrete" else None,
            "covariates": list(ds.x_names)}


TABLE_HEADER = ("method", "lower", "upper", "width", "se_lower", "se_upper")


def run_command(command, cfg: RunConfig, out=None):
    """Run ``command``; returns the JSON-ready result (without the config)."""
    if command not in COMMANDS:
        raise ValidationError(f"unknown command {command!r}")
    if command == "simulate":
        return _simulate(cfg, out)
    ds = _dataset(cfg)
    if command == "bound":
        rows = [_ivot_bounds(cfg, ds)]
    elif command == "estimate":
        rows = [_ivot_estimate(cfg, ds)]
    elif command == "baseline":
        rows = [_mr(cfg, ds)]
    else:
        rows = [_ivot_estimate(cfg, ds), _mr(cfg, ds)]
        if ds.instrument_kind == "discrete":
            rows.insert(0, _ivot_bounds(cfg, ds))
    if out is not None:
        write_table(rows, TABLE_HEADER, out)
    return {"data": _describe(ds), "results": rows}


def _simulate(cfg: RunConfig, out=None):
    from .simlab import HEADER, DEFAULT_ALPHAS, rows_to_csv, run_experiment

    if cfg.dgp is None:
        raise ValidationError("simulate needs a dgp")
    spec = _dgp_spec(cfg)
    alphas = DEFAULT_ALPHAS if cfg.alphas is None else [float(a) for a in cfg.alphas]
    methods = cfg.methods or (["ivot_continuous"] if spec.kind == "continuous_logistic"
                              else ["ivot_closed_form"])
    options = {"mr": dict(cfg.mr)}
    if spec.kind == "continuous_logistic":
        c = _cont_config(cfg)
        options["continuous"] = {k: getattr(c, k) for k in
                                 ("bandwidth", "delta", "grid", "seed", "cross_fit",
                                  "prop_learner", "g_learner", "q_learner")}
    else:
        d = _dml_config(cfg)
        options["dml"] = {k: getattr(d, k) for k in
                          ("outcome_kind", "c_gap", "c_pi", "seed", "cross_fit",
                           "prob_learner", "reg_learner", "quantile_learner")}
    rows = run_experiment(spec, alphas, tuple(methods), cfg.seeds, options,
                          workers=cfg.threads or 1)
    if out is not None:
        rows_to_csv(rows, out)
    table = [dict(zip(HEADER, r.as_tuple()), error=r.error) for r in rows]
    covered = {m: sum(r.covered for r in rows if r.method == m) for m in methods}
    return {"rows": table, "covered": covered, "total": len(alphas) * len(cfg.seeds or [0])}


def _limit_threads(n):
    if n is None:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(limits=int(n))


def build_parser():
    ap = argparse.ArgumentParser(prog="prtebounds", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON settings file")
    ap.add_argument("--data", help="CSV with columns y, w, z and optional x*")
    ap.add_argument("--out", help="write the result table here as CSV")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--threads", type=int, help="grid workers for simulate and cap on BLAS threads")
    ap.add_argument("--alpha", type=float, help="uniform shift of the propensity")
    ap.add_argument("--y-min", type=float, dest="y_min")
    ap.add_argument("--y-max", type=float, dest="y_max")
    ap.add_argument("--instrument-kind", choices=("discrete", "continuous"),
                    dest="instrument_kind")
    ap.add_argument("--outcome-kind", choices=("auto", "continuous", "binary"),
                    dest="outcome_kind")
    ap.add_argument("--stratum", help="column holding a discrete covariate")
    ap.add_argument("--c-gap", type=float, dest="c_gap")
    ap.add_argument("--c-pi", type=float, dest="c_pi")
    ap.add_argument("--bandwidth", type=float)
    ap.add_argument("--grid", type=int, help="number of grid nodes M")
    ap.add_argument("--delta", type=float)
    ap.add_argument("--cross-fit", action="store_true", default=None, dest="cross_fit")
    ap.add_argument("--dgp", help="synthetic design kind, used instead of --data")
    ap.add_argument("--n", type=int, help="sample size of the synthetic design")
    return ap


def _overrides(args, raw):
    ov = {k: getattr(args, k) for k in ("data", "seed", "threads", "y_min", "y_max",
                                        "instrument_kind", "outcome_kind", "stratum", "c_gap",
                                        "c_pi", "bandwidth", "grid", "delta", "cross_fit")}
    if args.alpha is not None:
        ov["policy"] = {**raw.get("policy", RunConfig().policy), "alpha": args.alpha}
    if args.dgp is not None or args.n is not None:
        dgp = dict(raw.get("dgp") or {})
        if args.dgp is not None:
            dgp["kind"] = args.dgp
        if args.n is not None:
            dgp["n"] = args.n
        ov["dgp"] = dgp
    return ov


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = read_config(args.config) if args.config else {}
        cfg = load_config(raw, _overrides(args, raw))
        limiter = _limit_threads(cfg.threads)
        try:
            result = run_command(args.command, cfg, args.out)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InsufficientDataError as exc:
        print(f"insufficient data: {exc}", file=sys.stderr)
        return 3
    except BoundsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(dumps({"command": args.command, "config": asdict(cfg), **result}))
    return 0
