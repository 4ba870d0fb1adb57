"""Command-line entry point ``dglab``.

Exit codes: 0 success, 1 invalid usage or configuration, 2 a stage failed.
"""
import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .errors import ConfigError, DGLabError
from .harness import (
    ExperimentConfig,
    classify_point,
    default_out_dir,
    export_report,
    run_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


_STAGES = {
    "run": None,
    "check-space": ("space", "structural"),
    "solve": ("space", "trajectory"),
    "verify-dgc": ("space", "trajectory", "dgc"),
    "reduce-osc": ("space", "trajectory", "reduction"),
    "holder": ("space", "trajectory", "reduction"),
}

_HELP = {
    "run": "run every stage",
    "check-space": "measure structural constants of the space",
    "solve": "compute a minimizing-movement trajectory",
    "verify-dgc": "sweep the energy inequality over sampled cylinders",
    "classify": "decide which alternative holds at the reduction point",
    "reduce-osc": "iterate the reduction of oscillation",
    "holder": "fit a Holder exponent from the oscillation decay",
    "lemma-demo": "show the fast-convergence threshold on the sqrt(2)/2 example",
}


def build_parser():
    parser = _Parser(prog="dglab", description="Regularity diagnostics on weighted graphs.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in _HELP.items():
        sp = sub.add_parser(name, help=help_)
        needs_config = name != "lemma-demo"
        sp.add_argument("--config", required=needs_config, help="experiment config JSON")
        sp.add_argument("--out", help="output directory (default $DGLAB_OUT or ./dglab_out)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--format", choices=("json", "csv"), help="payload format")
    return parser


def _load(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.format is not None:
        cfg.output["format"] = args.format
    return cfg


def _out_dir(args, cfg):
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output["dir"] is not None:
        return cfg.resolve(cfg.output["dir"])
    return default_out_dir()


def _summary(command, manifest):
    lines = []
    for st in manifest.stages:
        extra = f" ({st.error_type}: {st.message})" if st.status == "failed" else ""
        lines.append(f"{st.name:<11} {st.status}{extra}")
    report = json.loads((Path(manifest.out_dir) / "report.json").read_text())
    if command == "holder" and "reduction" in report:
        red = report["reduction"]
        lines.append(f"status {red['status']}  exponent {red['exponent']}  R^2 {red['r_squared']}")
        lines.append("osc " + " ".join("%.6g" % o for o in red["osc_sequence"]))
    elif command == "verify-dgc" and "dgc" in report:
        d = report["dgc"]
        lines.append(f"instances {d['n']}  finite {d['n_finite']}  max C {d['max']:.6g}  median C {d['median']:.6g}")
    elif command == "reduce-osc" and "reduction" in report:
        red = report["reduction"]
        lines.append(f"status {red['status']}  sigma {red['sigma']}")
    return "\n".join(lines)


def _lemma_demo(args):
    from .degiorgi import classical_threshold, fast_convergence, lemma3_threshold

    C, b, a = 2.0, 4.0, 0.5
    thr = lemma3_threshold(C, b, a)
    res = fast_convergence(C, b, a, thr, n_max=40)
    cls = classical_threshold(C, b, a)
    res_c = fast_convergence(C, b, a, cls, n_max=40)
    payload = {"C": C, "b": b, "alpha": a, "threshold": thr, "threshold_closed_form": float(np.sqrt(2) / 2),
               "trace": res.trace.tolist(), "converged": res.converged, "diverged": res.diverged,
               "classical_threshold": cls, "classical_trace": res_c.trace.tolist(),
               "classical_converged": res_c.converged}
    print(f"Y_(n+1) = C b^n Y_n^(1+alpha) with C={C:g}, b={b:g}, alpha={a:g}")
    print(f"threshold C^(-1/alpha) b^(1-alpha^2) = {thr:.17g} (sqrt(2)/2 = {np.sqrt(2) / 2:.17g})")
    for n, y in enumerate(res.trace[:12]):
        print(f"  n={n:<3d} Y_n={y:.6g}")
    verdict = "converges" if res.converged else ("diverges" if res.diverged else "undecided")
    print(f"starting at the threshold the iteration {verdict}")
    print(f"classical threshold C^(-1/alpha) b^(-1/alpha^2) = {cls:.6g}; "
          f"iteration {'converges' if res_c.converged else 'does not converge'}")
    if args.out or args.format:
        export_report(payload, args.format or "json", args.out, "lemma_demo")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    if args.command == "lemma-demo":
        return _lemma_demo(args)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print("invalid configuration:", file=sys.stderr)
        for msg in exc.problems:
            print(f"  - {msg}", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(args, cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if args.command == "classify":
            return _classify(cfg, out)
        manifest = run_experiment(cfg, out, _STAGES[args.command])
    print(_summary(args.command, manifest))
    if manifest.stage("space").status == "failed":
        return EXIT_USAGE
    return EXIT_OK if manifest.ok else EXIT_STAGE


def _classify(cfg, out):
    from .harness import build_trajectory

    try:
        space = cfg.load_space()
    except DGLabError as exc:
        print(f"space: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        u = build_trajectory(cfg, space)
        res = classify_point(cfg, u)
    except (DGLabError, ValueError) as exc:
        print(f"classify failed ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_STAGE
    export_report(res, cfg.output["format"], out, "classification")
    print(f"branch {res['branch']}  t* {res['t_star']}  alpha0 {res['alpha0']:.6g} (raw {res['alpha0_raw']:.6g})")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
