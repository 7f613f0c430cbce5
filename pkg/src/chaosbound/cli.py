"""Command-line driver: ``chaosbound {bound-sweep,reduce-demo,converge,sandwich-check}``.

Configuration files are INI-style ``key = value`` stanzas, one section per
subcommand.  Exit codes: 0 pass, 1 configuration or input error, 2 a checked
inequality failed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import re
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2

DEFAULT_CONFIGS = {
    "bound-sweep": "bound_sweep.ini",
    "converge": "converge.ini",
    "sandwich-check": "sandwich.ini",
    "reduce-demo": "reduce_demo.ini",
}


class ConfigError(ValueError):
    """Bad or missing configuration value."""


# ---------------------------------------------------------------------------
# Config helpers
# ---------------------------------------------------------------------------

_POW = re.compile(r"^\s*([0-9.]+)\s*\^\s*(-?[0-9.]+)\s*$")


def _number(tok: str, key: str) -> float:
    m = _POW.match(tok)
    try:
        if m:
            return float(m.group(1)) ** float(m.group(2))
        return float(tok)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {tok!r} as a number") from None


def _list(section, key: str, default=None, cast=float) -> tuple:
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return tuple(default)
    toks = [t for t in re.split(r"[,\s]+", raw.strip()) if t]
    if not toks:
        raise ConfigError(f"{key}: empty list")
    if cast is int:
        out = []
        for t in toks:
            try:
                out.append(int(t))
            except ValueError:
                raise ConfigError(f"{key}: {t!r} is not an integer") from None
        return tuple(out)
    if cast is str:
        return tuple(toks)
    return tuple(_number(t, key) for t in toks)


def _scalar(section, key: str, default=None, cast=float):
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    if cast is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: {raw!r} is not an integer") from None
    return _number(raw, key)


def _theta_grid(section, theta_max_flag):
    """``theta_grid = start:stop:step`` (start must be 0) or separate keys."""
    step, tmax = 0.05, 50.0
    raw = section.get("theta_grid")
    if raw:
        parts = raw.split(":")
        if len(parts) != 3:
            raise ConfigError("theta_grid: expected start:stop:step")
        start, tmax, step = (_number(p, "theta_grid") for p in parts)
        if start != 0:
            raise ConfigError("theta_grid: start must be 0")
    if theta_max_flag is not None:
        tmax = theta_max_flag
    if not (tmax > 0 and step > 0):
        raise ConfigError("theta_grid: stop and step must be positive")
    return tmax, step


def load_config(path: str | None, subcommand: str) -> configparser.SectionProxy:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        text = resources.files("chaosbound.data").joinpath(DEFAULT_CONFIGS[subcommand]).read_text()
        parser.read_string(text)
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {path} not found")
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    section = subcommand.replace("-", "_")
    if section not in parser:
        raise ConfigError(f"config has no [{section}] section")
    return parser[section]


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {path}: {exc}") from None
    return out


def _seed(args, section) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in section:
        return _scalar(section, "seed", cast=int)
    raise ConfigError("a seed is required (config key 'seed' or --seed)")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_bound_sweep(args) -> int:
    from .bounds import BoundSweepConfig, ratio_sweep, summary_lines

    sec = load_config(args.config, "bound-sweep")
    m_list = _list(sec, "m", cast=int)
    r_list = _list(sec, "r", (0,), cast=int)
    if any(m < 0 for m in m_list):
        raise ConfigError("m: must be nonnegative")
    if any(r < 0 for r in r_list):
        raise ConfigError("r: must be nonnegative")
    tmax, step = _theta_grid(sec, args.theta_max)
    try:
        cfg = BoundSweepConfig(families=_list(sec, "families", cast=str),
                               K_list=_list(sec, "K", cast=int), m_list=m_list, r_list=r_list,
                               eps_list=_list(sec, "eps_list"), theta_max=tmax, theta_step=step,
                               alpha=_scalar(sec, "alpha"), seed=_seed(args, sec))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = ratio_sweep(cfg, jobs=args.jobs)
    out = _outdir(args.out)
    (out / "bound_sweep.csv").write_text(report.to_csv())
    (out / "bound_sweep.json").write_text(report.to_json())
    for line in summary_lines(report):
        print(line)
    print(f"Lambda={report.lam:.4f} C0={report.C0:.4f} L={report.L:g}")
    if not report.passed:
        for v in report.violations:
            print(f"VIOLATION {v}", file=sys.stderr)
        for s in report.summary:
            if not s["uniform"]:
                print(f"VIOLATION theta-uniformity {s['family']} K={s['K']} m={s['m']} r={s['r']}: "
                      f"relative change {s['rel_change_near_to_full']:.3e}", file=sys.stderr)
        return EXIT_CHECK
    print("bound-sweep: PASS")
    return EXIT_OK


def cmd_reduce_demo(args) -> int:
    from .covariance import fractional_covariance, gram_matrix, mollified_covariance
    from .gaussian import rhs_moment
    from .graphs import (CertificateError, ClusterGraph, Clustering, GraphFileError, PreconditionError,
                         enhance_graph, no_singleton_bound, omega_star_member, read_edge_list,
                         reduce_graph)
    from .scaling import bump

    sec = load_config(args.config, "reduce-demo")
    if args.graph is None:
        text = resources.files("chaosbound.data").joinpath("case1_triangle.txt").read_text()
    else:
        p = Path(args.graph)
        if not p.is_file():
            raise ConfigError(f"graph file {args.graph} not found")
        text = p.read_text()
    try:
        spec = read_edge_list(text)
    except GraphFileError as exc:
        raise ConfigError(f"graph file: {exc}") from None
    alpha = _scalar(sec, "alpha", 0.5)
    eps = spec["eps"] if spec["eps"] is not None else _scalar(sec, "eps", 0.125)
    L = spec["L"] if spec["L"] is not None else _scalar(sec, "L", 4.0)
    K, m = spec["K"], spec["m"]
    pts = spec["points"] if spec["points"] is not None else eps * 100.0 * np.arange(K)
    model = mollified_covariance(fractional_covariance(alpha), bump(), eps)
    gv = gram_matrix(model, pts)
    cl = Clustering(spec["labels"], L, eps)
    try:
        graph = ClusterGraph.from_edges(gv, spec["edges"])
    except ValueError as exc:
        raise ConfigError(f"graph file: {exc}") from None
    print(f"K={K} m={m} eps={eps:g} L={L:g} Lambda={model.lam:.4f} "
          f"singletons={cl.singletons} clusters={[list(b) for b in cl.clusters]}")
    print(f"initial degrees {graph.degrees().tolist()} |G|={graph.value():.6e}")
    ok, why = omega_star_member(graph, cl, m)
    print(f"minimal: {ok}" + ("" if ok else f" ({'; '.join(why)})"))
    try:
        reduced, rcerts = reduce_graph(graph, cl, m, alpha, lam=model.lam)
        for c in rcerts:
            print("  " + c.line())
        print(f"reduction: {len(rcerts)} step(s); degrees {reduced.degrees().tolist()}")
        cap = max(16, K * (m + 1))
        rhs = rhs_moment(gv, m, leg_cap=cap)
        C_total = float(np.prod([c.factor for c in rcerts])) if rcerts else 1.0
        if cl.singletons:
            final, ecerts = enhance_graph(reduced, cl, m, alpha, lam=model.lam)
            for c in ecerts:
                print("  " + c.line())
            C_total *= float(np.prod([c.factor for c in ecerts])) if ecerts else 1.0
            print(f"enhancement: {len(ecerts)} step(s); degrees {final.degrees().tolist()}")
            degrees_ok = all(d in (m, m + 1) for d in final.degrees())
        else:
            bound = no_singleton_bound(gv, cl, m, alpha, lam=model.lam)
            print(f"no singletons: rhs >= {bound:.6e}")
            degrees_ok = True
        holds = graph.value() <= C_total * rhs * (1 + 1e-12)
        print(f"|G|={graph.value():.6e} <= C_total*rhs = {C_total:.4e}*{rhs:.6e}: {holds}")
    except PreconditionError as exc:
        raise ConfigError(f"graph: {exc}") from None
    except CertificateError as exc:
        print(f"CERTIFICATE FAILURE {exc}", file=sys.stderr)
        return EXIT_CHECK
    if not (degrees_ok and holds):
        print("reduce-demo: FAIL", file=sys.stderr)
        return EXIT_CHECK
    print("reduce-demo: PASS")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .convergence import ConfigError as CError
    from .convergence import ConvergenceConfig, convergence_error, named_nonlinearity

    sec = load_config(args.config, "converge")
    names = [t.strip() for t in sec.get("F", "|x|").split(",") if t.strip()]
    try:
        Fs = tuple(named_nonlinearity(n) for n in names)
        cfg = ConvergenceConfig(
            F=Fs, m=_scalar(sec, "m", cast=int), alpha=_scalar(sec, "alpha"),
            kappa=_scalar(sec, "kappa", 0.1), eps_list=_list(sec, "eps_list"),
            lam_list=_list(sec, "lambda_list"), n=_scalar(sec, "n", 1, cast=int),
            samples=_scalar(sec, "samples", cast=int), seed=_seed(args, sec),
            h=_scalar(sec, "h", 2.0 ** -11), length=_scalar(sec, "length", 8.0))
    except CError as exc:
        msg = str(exc)
        if "|s|/alpha" in msg:
            msg += " (the convergence statement requires m < |s|/alpha)"
        raise ConfigError(msg) from None
    t0 = time.time()
    report = convergence_error(cfg, jobs=args.jobs)
    out = _outdir(args.out)
    (out / "converge.csv").write_text(report.to_csv())
    (out / "converge.json").write_text(report.to_json())
    for name, s in report.slopes.items():
        print(f"{name:5s} eps-slope {s['slope']:.4f} +- {s['stderr']:.4f} "
              f"95% CI [{s['ci_low']:.4f}, {s['ci_high']:.4f}]  a_m={report.a_m[name]:.6f}")
    print(f"sigma^2={report.sigma2:.6f}  runtime {time.time() - t0:.1f}s")
    if not report.positive:
        print("converge: FAIL (an eps-slope is not positive at 95% confidence)", file=sys.stderr)
        return EXIT_CHECK
    print("converge: PASS")
    return EXIT_OK


def cmd_sandwich_check(args) -> int:
    from .covariance import default_probes, fractional_covariance, mollified_covariance, sandwich_check
    from .scaling import bump

    sec = load_config(args.config, "sandwich-check")
    alpha = _scalar(sec, "alpha")
    eps_list = _list(sec, "eps_list")
    n = _scalar(sec, "probes", 64, cast=int)
    r_max = _scalar(sec, "r_max", 10.0)
    lam = _scalar(sec, "Lambda", 0.0)
    if n < 2 or r_max <= 0:
        raise ConfigError("probes must be >= 2 and r_max positive")
    if any(not 0 < e <= 1 for e in eps_list):
        raise ConfigError("eps_list: values must lie in (0, 1]")
    try:
        base = fractional_covariance(alpha)
    except ValueError as exc:
        raise ConfigError(f"alpha: {exc}") from None
    out = _outdir(args.out)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps", "r", "covariance", "ratio"])
    ok = True
    for eps in eps_list:
        model = mollified_covariance(base, bump(), eps)
        rep = sandwich_check(model, default_probes(n, r_max), lam=lam or None)
        for r, v, q in zip(rep.probes, rep.values, rep.ratios):
            w.writerow([repr(eps), repr(float(r)), repr(float(v)), repr(float(q))])
        print(f"eps={eps:g} Lambda_fit={rep.lam_fit:.6f} passed={rep.passed}")
        ok &= rep.passed
    (out / "sandwich.csv").write_text(buf.getvalue())
    if not ok:
        print("sandwich-check: FAIL", file=sys.stderr)
        return EXIT_CHECK
    print("sandwich-check: PASS")
    return EXIT_OK


COMMANDS = {
    "bound-sweep": cmd_bound_sweep,
    "reduce-demo": cmd_reduce_demo,
    "converge": cmd_converge,
    "sandwich-check": cmd_sandwich_check,
}


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1); exit 2 is reserved for failed checks."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chaosbound", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file (default: bundled configuration)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default=".", help="output directory (default: .)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "bound-sweep":
            sp.add_argument("--theta-max", type=float, help="upper end of the theta grid")
        if name == "reduce-demo":
            sp.add_argument("graph", nargs="?", help="edge-list file (default: bundled triangle)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        print("config error: --jobs must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
