"""Batch experiment runner.

Usage::

    pamlab free-energy --set beta=1 --set T=5 --out runs/
    pamlab run config.json --workers 4
    pamlab report runs/

A config file is JSON::

    {"command": "free-energy", "seed": 0, "workers": 1, "output_dir": "runs",
     "params": {"beta": 1.0, "T": 5.0, "reps": 200}}

Every run writes ``results.csv``, ``report.json`` and ``manifest.json`` in
``<output_dir>/<run_id>/``.  The first two hold only numbers derived from
the config and the seed, so they are byte-identical across repeats and
worker counts; timing and versions live in the manifest.

Exit codes: 0 success, 2 validation error, 3 numerical failure or cap,
4 certificate inequality violated.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from . import estimators as est
from .coarse_grain import CoarseGrainSpec, d1_bound_certificate, d2_bound_certificate
from .errors import CapExceededError, ConfigurationError, DomainError, NumericalFailure, OutOfBoxError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_CERTIFICATE = 0, 2, 3, 4


class ValidationError(Exception):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


# parameter schema ------------------------------------------------------------

F, I, S, FL = "float", "int", "str", "floats"
OPT = object()  # marks optional parameters whose default is None

_COMMON_SOLVER = {"kappa": (F, 1.0), "d": (I, 1), "L": (I, OPT), "dt": (F, OPT), "chunk": (I, 256)}

SCHEMA = {
    "free-energy": dict(beta=(FL, [1.0]), T=(F, 5.0), reps=(I, 200), boundary=(S, "absorbing"),
                        backend=(S, "solver"), n_paths=(I, 10_000), **_COMMON_SOLVER),
    "martingale-check": dict(beta=(F, 0.5), T=(F, 1.0), reps=(I, 1000), **dict(_COMMON_SOLVER, L=(I, 6))),
    "rescale-check": dict(beta=(F, 1.0), T=(F, 5.0), reps=(I, 1000), **dict(_COMMON_SOLVER, kappa=(F, 4.0))),
    "overlap": dict(beta=(FL, [0.5]), T=(F, 5.0), reps=(I, 50), n_paths=(I, 500), kappa=(F, 1.0), d=(I, 1),
                    L=(I, OPT), chunk=(I, 8)),
    "lnz-identity": dict(betas=(FL, [0.0, 0.25, 0.5]), T=(F, 5.0), reps=(I, 100), n_paths=(I, 500),
                         kappa=(F, 1.0), d=(I, 1), L=(I, OPT), dt=(F, OPT)),
    "fractional-decay": dict(theta=(F, 0.5), beta=(F, 2.0), Ts=(FL, [2.0, 4.0, 6.0, 8.0, 10.0, 12.0]),
                             reps=(I, 1000), **_COMMON_SOLVER),
    "beta4-fit": dict(betas=(FL, [0.6, 0.8, 1.0, 1.2]), psi=(FL, OPT), stderr=(FL, OPT), T=(F, 50.0),
                      reps=(I, 500), **_COMMON_SOLVER),
    "large-beta": dict(betas=(FL, [2.0, 3.0, 4.0]), T=(F, 5.0), reps=(I, 100), kappa=(F, 1.0), d=(I, 1),
                       L=(I, OPT), dt=(F, OPT)),
    "certify-d1": dict(n=(F, 16.0), m=(I, 2), theta=(F, 0.5), C1=(F, 4.0), C2=(F, 1.0), R=(I, 2), delta=(F, OPT),
                       beta=(F, 1.0), kappa=(F, 1.0), reps=(I, 10_000), L=(I, 64), dt=(F, 2.0 ** -5),
                       link_reps=(I, OPT), tilt_sign=(F, -1.0), chunk=(I, 256)),
    "certify-d2": dict(n=(F, 9.0), m=(I, 2), theta=(F, 0.5), C3=(F, 3.0), C4=(F, 2.0), C5=(F, 1.0), K=(F, 2.0),
                       R=(I, 2), norm=(S, "euclidean"), dt_R=(F, 0.25), beta=(F, 1.0), kappa=(F, 1.0),
                       reps=(I, 1000), L=(I, 12), dt=(F, 2.0 ** -5), second_reps=(I, OPT), r0_reps=(I, OPT),
                       var_reps=(I, OPT), link_reps=(I, OPT), exit_reps=(I, OPT), chunk=(I, 128)),
}

TOP_LEVEL = {"command", "seed", "workers", "output_dir", "params", "run_id"}


def _coerce(field, kind, value):
    if value is None:
        return None
    if kind == F:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(field, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ValidationError(field, "must be finite")
        return float(value)
    if kind == I:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ValidationError(field, f"expected an integer, got {value!r}")
        return int(value)
    if kind == S:
        if not isinstance(value, str):
            raise ValidationError(field, f"expected a string, got {value!r}")
        return value
    if kind == FL:
        vals = value if isinstance(value, list) else [value]
        return [_coerce(field, F, v) for v in vals]
    raise AssertionError(kind)


def validate(config):
    """Fill defaults and check types; returns a normalised copy of ``config``."""
    if not isinstance(config, dict):
        raise ValidationError("config", "must be a JSON object")
    extra = set(config) - TOP_LEVEL
    if extra:
        raise ValidationError(sorted(extra)[0], "unknown top-level field")
    cmd = config.get("command")
    if cmd not in SCHEMA:
        raise ValidationError("command", f"must be one of {sorted(SCHEMA)}")
    params = config.get("params", {})
    if not isinstance(params, dict):
        raise ValidationError("params", "must be an object")
    schema = SCHEMA[cmd]
    for k in params:
        if k not in schema:
            raise ValidationError(f"params.{k}", f"unknown parameter for {cmd}")
    out = {}
    for k, (kind, default) in schema.items():
        v = params.get(k, None if default is OPT else default)
        out[k] = _coerce(f"params.{k}", kind, v)
    seed = _coerce("seed", I, config.get("seed", 0))
    if seed < 0:
        raise ValidationError("seed", "must be >= 0")
    workers = _coerce("workers", I, config.get("workers", 1))
    if workers < 1:
        raise ValidationError("workers", "must be >= 1")
    for k in ("reps", "n_paths", "chunk", "m"):
        if out.get(k) is not None and out[k] < 1:
            raise ValidationError(f"params.{k}", "must be >= 1")
    if out.get("dt") is not None:
        if out["dt"] <= 0:
            raise ValidationError("params.dt", "must be positive")
        d = 2 if cmd == "certify-d2" else out.get("d", 1)
        if 2 * d * out.get("kappa", 1.0) * out["dt"] >= 1:
            raise ValidationError("params.dt", "unstable step: need 2 d kappa dt < 1")
        horizons = list(out.get("Ts") or []) + ([out["T"]] if out.get("T") is not None else [])
        for t in horizons:
            steps = t / out["dt"]
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValidationError("params.dt", f"dt must divide every horizon, not {t}")
    norm = {"command": cmd, "seed": seed, "workers": workers, "output_dir": str(config.get("output_dir", "runs")),
            "params": out}
    if config.get("run_id") is not None:
        norm["run_id"] = _coerce("run_id", S, config["run_id"])
    return norm


def digest(config):
    """Stable hash of the fields that determine the numbers (not workers or paths)."""
    core = {"command": config["command"], "seed": config["seed"], "params": config["params"]}
    text = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# dispatch ------------------------------------------------------------------


def _rows_from_estimate(e, **key):
    return dict(key, value=e.value, stderr=e.stderr, replicas=e.replicas)


def _run_free_energy(p, seed, workers):
    rows, flags = [], {}
    for i, b in enumerate(p["beta"]):
        e = est.free_energy(b, p["kappa"], p["T"], p["reps"], seed + i, p["d"], p["L"], p["boundary"], p["dt"],
                            p["backend"], p["n_paths"], p["chunk"], workers)
        rows.append(dict(_rows_from_estimate(e, beta=b, kappa=p["kappa"], T=p["T"], d=p["d"]),
                         median=e.metadata["median"] if "median" in e.metadata else e.value,
                         lost_mass=e.metadata["lost_mass"]))
        flags[str(b)] = list(e.flags)
    return rows, {"points": rows, "flags": flags}, None


def _run_martingale(p, seed, workers):
    e = est.martingale_check(p["beta"], p["kappa"], p["T"], p["reps"], seed, p["d"], p["L"], p["dt"], p["chunk"],
                             workers)
    row = dict(_rows_from_estimate(e, beta=p["beta"], kappa=p["kappa"], T=p["T"], d=p["d"]), z=e.metadata["z"])
    return [row], dict(row, within_3se=abs(e.metadata["z"]) < 3), None


def _run_rescale(p, seed, workers):
    r = est.kappa_rescale_check(p["beta"], p["kappa"], p["T"], p["reps"], seed, p["d"], p["L"], p["dt"], p["chunk"],
                                workers)
    rows = [dict(arm=a, **{k: v for k, v in r["arm_" + a].items()}) for a in ("a", "b")]
    return rows, r, None


def _run_overlap(p, seed, workers):
    rows = []
    flags = {}
    for i, b in enumerate(p["beta"]):
        e = est.overlap(b, p["T"], p["reps"], p["n_paths"], seed + i, p["d"], p["kappa"], p["L"], p["chunk"], workers)
        rows.append(dict(_rows_from_estimate(e, beta=b, kappa=p["kappa"], T=p["T"], d=p["d"]),
                         min_ess=e.metadata["min_ess"]))
        flags[str(b)] = list(e.flags)
    return rows, {"points": rows, "flags": flags}, None


def _run_lnz(p, seed, workers):
    r = est.lnZ_overlap_identity(p["betas"], p["T"], p["reps"], p["n_paths"], seed, p["d"], p["kappa"], p["L"],
                                 p["dt"], workers)
    rows = [{k: v for k, v in row.items() if k != "flags"} for row in r["rows"]]
    return rows, r, None


def _run_decay(p, seed, workers):
    r = est.fractional_decay(p["theta"], p["beta"], p["Ts"], p["reps"], seed, p["d"], p["kappa"], p["L"], p["dt"],
                             p["chunk"], workers)
    rows = [{"T": t, "log_moment": v, "log_moment_se": s} for t, v, s in zip(r["T"], r["log_moment"],
                                                                            r["log_moment_se"])]
    return rows, r, None


def _run_beta4(p, seed, workers):
    if p["psi"] is not None:
        if len(p["psi"]) != len(p["betas"]):
            raise ValidationError("params.psi", "needs one value per beta")
        r = est.beta4_fit(p["betas"], p["psi"], p["stderr"])
    else:
        r = est.beta4_slope(p["betas"], p["kappa"], p["T"], p["reps"], seed, p["d"], p["L"], p["dt"], workers)
    se = r["stderr"]
    rows = [{"beta": b, "psi": v, "stderr": s, "used": u} for b, v, s, u in zip(r["betas"], r["psi"], se, r["used"])]
    return rows, r, None


def _run_large_beta(p, seed, workers):
    r = est.large_beta_profile(p["betas"], p["T"], p["reps"], seed, p["d"], p["kappa"], p["L"], p["dt"], workers)
    return r["rows"], r, None


def _cg_spec(p, d):
    keys = ("n", "m", "theta", "R") + (("C1", "C2", "delta") if d == 1 else ("C3", "C4", "C5", "K", "norm", "dt_R"))
    kw = {k: p[k] for k in keys if p.get(k) is not None}
    return CoarseGrainSpec(d=d, **kw)


def _cert_rows(r):
    return [{"term": t["name"], "value": t["value"], "stderr": t["stderr"], "holds": t.get("holds", ""),
             "gating": t.get("gating", "")} for t in r["terms"]]


def _run_d1(p, seed, workers):
    r = d1_bound_certificate(_cg_spec(p, 1), p["beta"], p["reps"], seed, p["kappa"], p["L"], p["dt"], p["link_reps"],
                             tilt_sign=p["tilt_sign"], chunk=p["chunk"], workers=workers)
    return _cert_rows(r), r, r["pass"]


def _run_d2(p, seed, workers):
    kw = {k: p[k] for k in ("second_reps", "r0_reps", "var_reps", "link_reps", "exit_reps")}
    r = d2_bound_certificate(_cg_spec(p, 2), p["beta"], p["reps"], seed, p["kappa"], p["L"], p["dt"],
                             chunk=p["chunk"], workers=workers, **kw)
    return _cert_rows(r), r, r["pass"]


COMMANDS = {
    "free-energy": _run_free_energy,
    "martingale-check": _run_martingale,
    "rescale-check": _run_rescale,
    "overlap": _run_overlap,
    "lnz-identity": _run_lnz,
    "fractional-decay": _run_decay,
    "beta4-fit": _run_beta4,
    "large-beta": _run_large_beta,
    "certify-d1": _run_d1,
    "certify-d2": _run_d2,
}


# output ------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _csv_text(rows):
    buf = io.StringIO()
    if rows:
        cols = list(rows[0])
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def _headline(cmd, report):
    if cmd.startswith("certify"):
        return {"value": report.get("lhs"), "stderr": report["terms"][0]["stderr"], "pass": report.get("pass")}
    if cmd in ("free-energy", "overlap"):
        pt = report["points"][0]
        return {"value": pt["value"], "stderr": pt["stderr"]}
    if cmd == "martingale-check":
        return {"value": report["value"], "stderr": report["stderr"]}
    if cmd == "fractional-decay":
        return {"value": report["slope"], "stderr": report["slope_se"]}
    if cmd == "beta4-fit":
        return {"value": report["slope"], "stderr": report["slope_se"]}
    if cmd == "rescale-check":
        return {"value": report["z_mean"], "stderr": None}
    if cmd == "large-beta":
        return {"value": report["alpha2_fit"], "stderr": None}
    if cmd == "lnz-identity":
        return {"value": report["rows"][-1]["z"], "stderr": None}
    return {}


def execute(config, out_root=None):
    """Run a validated config and write its artifacts; returns ``(exit status, run dir)``."""
    cfg = validate(config)
    dig = digest(cfg)
    run_id = cfg.get("run_id") or f"{cfg['command']}-{dig[:12]}"
    out_dir = os.path.join(out_root or cfg["output_dir"], run_id)
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    rows, report, passed = COMMANDS[cfg["command"]](cfg["params"], cfg["seed"], cfg["workers"])
    report = _jsonable({"command": cfg["command"], "digest": dig, "result": report})
    rows = [dict(r, digest=dig) for r in _jsonable(rows)]
    csv_text = _csv_text(rows)
    rep_text = json.dumps(report, sort_keys=True, indent=1) + "\n"
    status = EXIT_CERTIFICATE if passed is False else EXIT_OK
    with open(os.path.join(out_dir, "results.csv"), "w") as fh:
        fh.write(csv_text)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(rep_text)
    manifest = {
        "run_id": run_id,
        "command": cfg["command"],
        "digest": dig,
        "seed": cfg["seed"],
        "workers": cfg["workers"],
        "config": cfg,
        "headline": _jsonable(_headline(cfg["command"], report["result"])),
        "params": cfg["params"],
        "exit_status": status,
        "files": {"results.csv": _sha(csv_text), "report.json": _sha(rep_text)},
        "versions": {"pamlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "started": started,
        "wall_time_s": time.time() - t0,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return status, out_dir


# report ------------------------------------------------------------------------

REPORT_COLUMNS = ["run_id", "command", "beta", "T", "d", "value", "stderr", "pass", "digest", "status"]


def _first(v):
    return v[0] if isinstance(v, list) and v else v


def collect(directory):
    """One row per manifest under ``directory``, sorted by ``(command, beta)``."""
    rows = []
    seen = {}
    for root, _, files in sorted(os.walk(directory)):
        if "manifest.json" not in files:
            continue
        path = os.path.join(root, "manifest.json")
        try:
            with open(path) as fh:
                man = json.load(fh)
            params = man.get("params", {})
            head = man.get("headline", {})
            row = {"run_id": man["run_id"], "command": man["command"], "beta": _first(params.get("beta",
                   params.get("betas"))), "T": params.get("T", params.get("Ts")), "d": params.get("d", ""),
                   "value": head.get("value"), "stderr": head.get("stderr"), "pass": head.get("pass", ""),
                   "digest": man["digest"], "status": "ok"}
        except (OSError, ValueError, KeyError, TypeError) as exc:
            rows.append({"run_id": os.path.basename(root), "command": "", "beta": None, "T": None, "d": "",
                         "value": None, "stderr": None, "pass": "", "digest": "",
                         "status": f"corrupt manifest: {type(exc).__name__}"})
            continue
        prev = seen.get(row["run_id"])
        if prev is not None and prev["digest"] != row["digest"]:
            row["status"] = prev["status"] = "digest clash"
        seen.setdefault(row["run_id"], row)
        rows.append(row)

    def key(r):
        b = r["beta"]
        return (r["command"], -math.inf if not isinstance(b, (int, float)) else b, r["run_id"])

    return sorted(rows, key=key)


def format_table(rows):
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in REPORT_COLUMNS})
    return out.getvalue()


# entry point ---------------------------------------------------------------------


def _parse_set(items):
    params = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(item, "overrides look like key=value")
        k, v = item.split("=", 1)
        try:
            params[k.strip()] = json.loads(v)
        except ValueError:
            params[k.strip()] = v
    return params


def build_parser():
    p = argparse.ArgumentParser(prog="pamlab", description="Lattice parabolic Anderson model numerical lab.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add_run_opts(sp):
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a parameter (JSON value)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output root directory")

    r = sub.add_parser("run", help="run a JSON config file")
    r.add_argument("config")
    add_run_opts(r)
    rep = sub.add_parser("report", help="summarise the runs under a directory")
    rep.add_argument("directory")
    rep.add_argument("--out", help="also write the table to this CSV file")
    for name in SCHEMA:
        add_run_opts(sub.add_parser(name, help=f"run {name} from defaults and overrides"))
    return p


def _error(kind, message, field=None):
    payload = {"error": kind, "message": message}
    if field is not None:
        payload["field"] = field
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "report":
        if not os.path.isdir(args.directory):
            _error("validation", "not a directory", "directory")
            return EXIT_VALIDATION
        text = format_table(collect(args.directory))
        sys.stdout.write(text)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        return EXIT_OK
    try:
        if args.cmd == "run":
            try:
                with open(args.config) as fh:
                    config = json.load(fh)
            except (OSError, ValueError) as exc:
                raise ValidationError("config", f"cannot read config: {exc}")
        else:
            config = {"command": args.cmd}
        if not isinstance(config, dict):
            raise ValidationError("config", "must be a JSON object")
        config = dict(config)
        params = dict(config.get("params", {}))
        params.update(_parse_set(args.set))
        config["params"] = params
        if args.seed is not None:
            config["seed"] = args.seed
        if args.workers is not None:
            config["workers"] = args.workers
        status, out_dir = execute(config, args.out)
    except ValidationError as exc:
        _error("validation", exc.message, exc.field)
        return EXIT_VALIDATION
    except (ConfigurationError, DomainError) as exc:
        _error("validation", str(exc))
        return EXIT_VALIDATION
    except (CapExceededError, NumericalFailure, OutOfBoxError, FloatingPointError) as exc:
        _error("numeric", str(exc))
        return EXIT_NUMERIC
    print(out_dir)
    if status == EXIT_CERTIFICATE:
        _error("certificate", "certificate inequality violated", "pass")
    return status


if __name__ == "__main__":
    sys.exit(main())
