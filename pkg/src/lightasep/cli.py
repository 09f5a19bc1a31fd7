"""Command line entry point.

Every command writes its data file(s) into the output directory (``--outdir``,
else ``$LIGHTASEP_OUTDIR``, else ``./lightasep-out``) together with a manifest
``<stem>.manifest.json`` holding the resolved arguments, seed and package
version.  The manifest's wall-clock timestamp sits in its own ``created``
field; everything else is a deterministic function of the arguments.

Exit codes: 0 success, 1 failed verdict, 2 usage or parameter error,
3 numeric guard violation.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, exact, experiments, mpa, sim
from .errors import LightAsepError, NumericError, ParameterError, ResourceError
from .phase import (
    BoundaryParams,
    Phase,
    RateParams,
    boundary_sigmas,
    boundary_to_rates,
    bulk_profile,
    classify,
    limiting_densities,
    rates_to_boundary,
)

OUTDIR_ENV = "LIGHTASEP_OUTDIR"
DEFAULT_OUTDIR = "lightasep-out"

EXIT_OK, EXIT_VERDICT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- emission


def fmt_float(x: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def to_csv(rows: list, columns: list | None = None) -> str:
    """Comma separated, header first; an empty row list gives the header alone."""
    if columns is None:
        columns = []
        for row in rows:
            for k in row:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_csv(text: str) -> list:
    """Inverse of :func:`to_csv` (numbers and booleans are converted back)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    return [{k: _parse_cell(v) for k, v in zip(header, row)} for row in reader]


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats printed at 17 significant digits; keys keep their order."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(report, fmt: str, path, columns: list | None = None) -> Path:
    """Write ``report`` as CSV (row list, or a report's raw rows) or JSON (one object)."""
    path = Path(path)
    if fmt == "csv":
        rows = report.raw if isinstance(report, experiments.ScalingReport) else list(report)
        atomic_write(path, to_csv(rows, columns))
    elif fmt == "json":
        obj = report.summary() if isinstance(report, experiments.ScalingReport) else report
        if not isinstance(obj, dict):
            raise ParameterError("JSON output must be a single object")
        atomic_write(path, to_json(obj) + "\n")
    else:
        raise ParameterError(f"unknown format {fmt!r}")
    return path


def write_manifest(outdir: Path, stem: str, args: argparse.Namespace, outputs: list) -> Path:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "outdir")}
    manifest = dict(
        command=stem,
        arguments=resolved,
        seed=getattr(args, "seed", None),
        version=__version__,
        outputs=[Path(p).name for p in outputs],
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    return emit(manifest, "json", outdir / f"{stem}.manifest.json")


def _outdir(args) -> Path:
    return Path(args.outdir or os.environ.get(OUTDIR_ENV) or DEFAULT_OUTDIR)


def _finish(args, stem: str, outputs: list) -> None:
    write_manifest(_outdir(args), stem, args, outputs)


# ---------------------------------------------------------------- parameter helpers


def _add_rates(p: argparse.ArgumentParser, abcd: bool = False) -> None:
    g = p.add_argument_group("parameters")
    g.add_argument("--q", type=float, default=0.0)
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--gamma", type=float, default=0.0)
    g.add_argument("--delta", type=float, default=0.0)
    if abcd:
        for k in "ABCD":
            g.add_argument(f"--{k}", type=float, dest=k)


def _has_abcd(args) -> bool:
    return any(getattr(args, k, None) is not None for k in "ABCD")


def _rates(args) -> RateParams:
    if _has_abcd(args):
        return boundary_to_rates(_boundary(args))
    if args.alpha is None or args.beta is None:
        raise ParameterError("--alpha and --beta are required (or --A/--B/--C/--D where accepted)")
    return RateParams(args.q, args.alpha, args.beta, args.gamma, args.delta)


def _boundary(args) -> BoundaryParams:
    if _has_abcd(args):
        if args.alpha is not None or args.beta is not None:
            raise ParameterError("give either jump rates or A, B, C, D, not both")
        return BoundaryParams(args.A or 0.0, args.B or 0.0, args.C or 0.0, args.D or 0.0, args.q)
    return rates_to_boundary(_rates(args))


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma separated list of integers, got {text!r}") from None


def _floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ParameterError(f"expected a comma separated list of numbers, got {text!r}") from None


def _state_str(s) -> str:
    return "".join(str(int(v)) for v in s)


# ---------------------------------------------------------------- handlers


def cmd_phase(args) -> int:
    b = _boundary(args)
    label = classify(b)
    lim = limiting_densities(b)
    out = dict(A=b.A, B=b.B, C=b.C, D=b.D, q=b.q, phase=label.phase.value, region=label.region.value,
               sigma_left=lim.sigma_left, sigma_right=lim.sigma_right, rho_left=lim.rho_left,
               rho_right=lim.rho_right)
    if label.phase is Phase.COEXISTENCE:
        out["bulk"] = "linear-profile"
        out["bulk_endpoints"] = [bulk_profile(b, 0.0), bulk_profile(b, 1.0)]
    else:
        out["bulk"] = lim.bulk
    path = emit(out, "json", _outdir(args) / "phase.json")
    print(to_json(out))
    _finish(args, "phase", [path])
    return EXIT_OK


def cmd_exact(args) -> int:
    rates = _rates(args)
    od = _outdir(args)
    if args.what == "verify-relation":
        res = exact.verify_simple_relation(args.n, rates)
        ok = res <= args.tol
        path = emit([dict(n=args.n, max_residual=res, tol=args.tol, passed=ok)], "csv", od / "exact-verify-relation.csv")
        print(f"residual {fmt_float(res)}")
        _finish(args, "exact-verify-relation", [path])
        return EXIT_OK if ok else EXIT_VERDICT
    gen = exact.build_generator(args.n, args.r, rates)
    pi = exact.stationary(gen)
    extra = []
    if args.what == "stationary":
        dens = exact.site_densities(gen, pi)
        rows = [dict(site=k + 1, density=float(d)) for k, d in enumerate(dens)]
        path = emit(rows, "csv", od / "exact-stationary.csv", columns=["site", "density"])
        full = [dict(state=_state_str(s), prob=float(p)) for s, p in zip(gen.states, pi)]
        extra.append(emit(full, "csv", od / "exact-stationary-states.csv", columns=["state", "prob"]))
    elif args.what == "loc":
        m = exact.loc_marginals(gen, pi)
        rows = [dict(i=i + 1, site=s + 1, prob=float(m[i, s])) for i in range(gen.r) for s in range(gen.n)]
        path = emit(rows, "csv", od / "exact-loc.csv", columns=["i", "site", "prob"])
    else:
        eps = _floats(args.eps)
        rows = [dict(eps=e, tmix=exact.mixing_time_exact(args.n, args.r, rates, e)) for e in eps]
        path = emit(rows, "csv", od / "exact-mix.csv", columns=["eps", "tmix"])
    print(path)
    _finish(args, f"exact-{args.what}", [path] + extra)
    return EXIT_OK


def cmd_mpa(args) -> int:
    b = _boundary(args)
    od = _outdir(args)
    stem = f"mpa-{args.what}"
    if args.what == "density":
        rep = mpa.representation_for(b, args.n, args.precision)
        sites = _ints(args.sites) if args.sites else list(range(1, args.n + 1))
        if any(not 1 <= s <= args.n for s in sites):
            raise ParameterError(f"sites must lie in [1, {args.n}]")
        d = mpa.site_densities_mpa(rep, args.n)
        rows = [dict(site=s, density=float(d[s - 1])) for s in sites]
        cols = ["site", "density"]
    elif args.what == "loc1":
        n_rep = args.n + 1 if args.method == "relation" else args.n
        rep = mpa.representation_for(b, n_rep, args.precision)
        p = mpa.loc1_distribution(rep, args.n, via=args.method)
        rows = [dict(site=i + 1, prob=float(v)) for i, v in enumerate(p)]
        cols = ["site", "prob"]
    elif args.what == "verify-dehp":
        rep = mpa.build_representation(b, args.m, args.precision)
        bulk, left, right = mpa.verify_dehp(rep)
        ok = max(bulk, left, right) <= args.tol
        rows = [dict(m=args.m, bulk=bulk, left=left, right=right, tol=args.tol, passed=ok)]
        cols = None
    else:
        rows = []
        for t in _floats(args.t_list):
            rows.append(dict(t=t, sigma_left=mpa.sigma_left_via_aw(b, t)))
        sl = boundary_sigmas(b)[0]
        for row in rows:
            row["closed_form"] = sl
        cols = ["t", "sigma_left", "closed_form"]
    path = emit(rows, "csv", od / f"{stem}.csv", columns=cols)
    print(path)
    _finish(args, stem, [path])
    if args.what == "verify-dehp" and not rows[0]["passed"]:
        return EXIT_VERDICT
    return EXIT_OK


def _initial_state(args, rates: RateParams, rep: int) -> sim.SimState:
    n, r = args.n, args.r
    seed = experiments.derive_seed(args.seed, rep, 0)
    if args.init == "all-ones":
        return sim.extremal_state(n, r, True)
    if args.init == "all-zeros":
        return sim.extremal_state(n, r, False)
    if args.init == "file":
        if not args.init_file:
            raise ParameterError("--init file needs --init-file")
        text = Path(args.init_file).read_text().strip()
        if not text or set(text) - set("012"):
            raise ParameterError("initial state file must hold one word over {0,1,2}")
        occ = np.array([int(c) for c in text], dtype=np.int8)
        if occ.size != n or int((occ == 2).sum()) != r:
            raise ParameterError(f"initial state must have length {n} and {r} light particles")
        return sim.open_state(occ)
    # stationary: exact where possible, burn-in otherwise
    if r == 0 and mpa.guard_nonzero(rates_to_boundary(rates)):
        return sim.sample_stationary(n, 0, rates, "mpa", seed)
    if exact.sector_size(n, r) <= exact.SECTOR_CAP:
        return sim.sample_stationary(n, r, rates, "exact-small", seed)
    return sim.sample_stationary(n, r, rates, "burnin", seed)


def rle(word) -> str:
    """Run-length encoding over {0,1,2}: ``symbol*count`` runs separated by spaces."""
    word = [int(v) for v in word]
    runs, start = [], 0
    for i in range(1, len(word) + 1):
        if i == len(word) or word[i] != word[start]:
            runs.append(f"{word[start]}*{i - start}")
            start = i
    return " ".join(runs)


def cmd_simulate(args) -> int:
    rates = _rates(args)
    if args.n < 1 or not 0 <= args.r <= args.n or args.reps < 1 or args.t < 0:
        raise ParameterError("need n >= 1, 0 <= r <= n, reps >= 1, t >= 0")
    od = _outdir(args)
    cols = ["rep", "t"] + [f"loc_{i}" for i in range(1, args.r + 1)] + ["n_ones", "left_occupied", "right_occupied"]
    rows, snaps = [], []
    for rep in range(args.reps):
        init = _initial_state(args, rates, rep)
        tr = sim.simulate_open(init, rates, args.t, experiments.derive_seed(args.seed, rep, 1), args.sample_dt,
                               snapshots=True)
        for j, t in enumerate(tr.times):
            s = tr.snapshots[j]
            row = dict(rep=rep, t=float(t))
            for i in range(args.r):
                row[f"loc_{i + 1}"] = int(tr.loc[j, i])
            row.update(n_ones=int((s == 1).sum()), left_occupied=int(s[0] == 1), right_occupied=int(s[-1] == 1))
            rows.append(row)
            if args.snapshots:
                snaps.append(f"{rep} {fmt_float(float(t))} {rle(s)}")
    outputs = [emit(rows, "csv", od / "simulate.csv", columns=cols)]
    if args.snapshots:
        p = od / "simulate-snapshots.txt"
        atomic_write(p, "".join(line + "\n" for line in snaps))
        outputs.append(p)
    print(outputs[0])
    _finish(args, "simulate", outputs)
    return EXIT_OK


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        # flat "key = value" / "key: value" lines
        data = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ParameterError(f"cannot parse config line {line!r}")
            k, v = (x.strip() for x in line.split(sep, 1))
            try:
                data[k] = json.loads(v)
            except json.JSONDecodeError:
                data[k] = v
    if not isinstance(data, dict):
        raise ParameterError("config must be a flat key-value document")
    return data


def cmd_experiment(args) -> int:
    data = _load_config(args.config)
    data["seed"] = args.seed
    cfg = experiments.ExperimentConfig.from_mapping(args.name, data)
    report = experiments.run_experiment(cfg)
    od = Path(cfg.output) if cfg.output and not args.outdir else _outdir(args)
    stem = f"experiment-{args.name}"
    outputs = [emit(report, "csv", od / f"{stem}.csv"), emit(report, "json", od / f"{stem}.json")]
    args.resolved_config = cfg.to_dict()
    write_manifest(od, stem, args, outputs)
    for k, v in report.verdicts.items():
        print(f"{k}: {'pass' if v else 'FAIL'}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from . import acceptance

    only = _ints(args.only) if args.only else None
    results = acceptance.run_all(args.seed, only=only, echo=True)
    od = _outdir(args)
    rows = [r.as_row() for r in results]
    outputs = [emit(rows, "csv", od / "reproduce.csv", columns=list(acceptance.CriterionResult.COLUMNS)),
               emit(dict(suite=args.suite, seed=args.seed, passed=all(r.passed for r in results), criteria=rows),
                    "json", od / "reproduce.json")]
    _finish(args, "reproduce", outputs)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERDICT


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lightasep", description="Open ASEP with light particles: exact, matrix product, simulation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or ./{DEFAULT_OUTDIR})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ph = sub.add_parser("phase", help="(A,B,C,D), phase and boundary densities")
    _add_rates(ph, abcd=True)
    ph.set_defaults(func=cmd_phase)

    ex = sub.add_parser("exact", help="brute-force stationary computations")
    exs = ex.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("stationary", "loc", "mix", "verify-relation"):
        e = exs.add_parser(name)
        e.add_argument("--n", type=int, required=True)
        if name != "verify-relation":
            e.add_argument("--r", type=int, default=1 if name == "loc" else 0)
        if name == "mix":
            e.add_argument("--eps", default="0.25", help="comma separated list")
        if name == "verify-relation":
            e.add_argument("--tol", type=float, default=1e-9)
        _add_rates(e, abcd=True)
        e.set_defaults(func=cmd_exact)

    mp = sub.add_parser("mpa", help="matrix product computations")
    mps = mp.add_subparsers(dest="what", required=True, parser_class=_Parser)
    for name in ("density", "loc1", "verify-dehp", "sigma-aw"):
        m = mps.add_parser(name)
        if name in ("density", "loc1"):
            m.add_argument("--n", type=int, required=True)
        if name == "density":
            m.add_argument("--sites", "--site", dest="sites", help="comma separated sites (default all)")
        if name == "loc1":
            m.add_argument("--method", choices=("direct", "relation"), default="direct")
        if name == "verify-dehp":
            m.add_argument("--m", type=int, default=20)
            m.add_argument("--tol", type=float, default=1e-10)
        if name == "sigma-aw":
            m.add_argument("--t-list", default="0.2,0.5,0.9")
        m.add_argument("--precision", choices=("double", "high"), default="double")
        _add_rates(m, abcd=True)
        m.set_defaults(func=cmd_mpa)

    si = sub.add_parser("simulate", help="simulate the open system")
    si.add_argument("--n", type=int, required=True)
    si.add_argument("--r", type=int, default=0)
    si.add_argument("--t", type=float, required=True)
    si.add_argument("--seed", type=int, required=True)
    si.add_argument("--reps", type=int, default=1)
    si.add_argument("--sample-dt", type=float, default=1.0)
    si.add_argument("--init", choices=("stationary", "all-ones", "all-zeros", "file"), default="stationary")
    si.add_argument("--init-file")
    si.add_argument("--snapshots", action="store_true", help="also write run-length encoded configurations")
    _add_rates(si, abcd=True)
    si.set_defaults(func=cmd_simulate)

    xp = sub.add_parser("experiment", help="run one experiment")
    xp.add_argument("name", choices=experiments.EXPERIMENT_NAMES)
    xp.add_argument("--config", help="flat key-value file (JSON accepted)")
    xp.add_argument("--seed", type=int, required=True)
    xp.set_defaults(func=cmd_experiment)

    rp = sub.add_parser("reproduce", help="run the acceptance suite")
    rp.add_argument("--suite", choices=("primary",), default="primary")
    rp.add_argument("--seed", type=int, required=True)
    rp.add_argument("--only", help="comma separated criterion numbers")
    rp.set_defaults(func=cmd_reproduce)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"lightasep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**63:
        print("lightasep: error: --seed must lie in [0, 2^63)", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"lightasep: numeric guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, ResourceError, OSError, IndexError) as exc:
        print(f"lightasep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LightAsepError as exc:
        print(f"lightasep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
