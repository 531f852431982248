"""Batch command-line front-end.

Subcommands generate trees, compute entropy estimates, build measures,
verify variational principles, and run the property suite. Every command
writes a JSON artifact (deterministic for a fixed configuration and seed)
and prints a one-line summary; tree and measure artifacts round-trip
through the package loaders. All stored numbers are in nats; --base2
converts displayed values only.

Exit codes: 0 on success, 1 on a domain error (bad configuration,
infeasible construction, malformed input file), 2 when --assert is given
and the requested verification fails.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .engines import (
    bowen_entropy,
    capacity_entropy,
    packing_entropy,
    weighted_entropy,
)
from .errors import DomainError
from .measures import (
    bernoulli,
    frostman_bound_margin,
    frostman_measure,
    integral_local_entropy,
    load_measure,
    packing_frostman,
    save_measure,
)
from .trees import (
    full_shift,
    level_branching,
    load_tree,
    random_pruned_tree,
    save_tree,
    save_tree_text,
    sft,
)
from .verify import (
    besicovitch_tree,
    nontypical_tree,
    run_property_suite,
    separator_tree,
    upper_density_tree,
    verify_bowen_vp,
    verify_packing_vp,
)

SCHEMA_VERSION = 1
OUT_DIR_ENV = "SHIFTENT_OUT_DIR"
LN2 = math.log(2.0)

GEN_HELP = """\
generator specs (colon-separated, key=value options):
  full:L                        full shift on L symbols
  sft:L:forbid=W1|W2            subshift of finite type, forbidden words
  freq:P1,P2,...[:delta=X]      symbol frequencies within delta of targets
  upper-density                 sparse branching positions of density 2/3
  separator                     bushy crown, thin stalks
  nontypical:L:s=X              oscillating-frequency block schedule
  random:L[:seed=K][:keep=P]    seeded random pruned tree
  level:L:widths=a,b,c,...      per-depth branching widths
"""

CSV_HELP = """\
CSV columns by command:
  entropy: depth,rate            (per-depth diagnostics when available)
  vp:      kind,s,witness,tail_integral,boundary
  suite:   invariant,subject,passed,detail
"""


@dataclass
class RunConfig:
    """Validated bundle of everything a single CLI run depends on."""

    command: str
    subcommand: str
    gen: str = None
    tree_path: str = None
    depth: int = None
    scale: int = 1
    n_window: int = None
    tol: float = 1e-3
    s: float = None
    seed: int = 0
    count: int = 200
    stages: int = 3
    jobs: int = 1
    n_max: int = None
    samples: int = 100
    side: str = "lower"
    method: str = "auto"
    probs: tuple = None
    measure_path: str = None
    out: str = None
    fmt: str = "json"
    csv: bool = False
    base2: bool = False
    do_assert: bool = False
    verbose: bool = False
    extras: dict = field(default_factory=dict)

    def validate(self):
        if self.tol <= 0:
            raise DomainError(f"tol must be positive, got {self.tol}")
        if self.scale < 1:
            raise DomainError(f"m must be >= 1, got {self.scale}")
        if self.depth is not None and self.depth < 2:
            raise DomainError(f"depth must be >= 2, got {self.depth}")
        if self.fmt not in ("json", "text"):
            raise DomainError(f"unknown format {self.fmt!r}")
        if self.fmt == "text" and self.command != "tree":
            raise DomainError("--format text applies to `tree gen` only")
        return self


# ---------------------------------------------------------------------------
# generator specs
# ---------------------------------------------------------------------------


def _spec_options(parts):
    opts = {}
    for part in parts:
        if "=" not in part:
            raise DomainError(
                f"generator option {part!r} must look like key=value"
            )
        key, value = part.split("=", 1)
        opts[key] = value
    return opts


def _parse_probs(text):
    try:
        probs = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise DomainError(f"cannot parse probabilities from {text!r}")
    if not probs:
        raise DomainError("empty probability list")
    return probs


def build_from_spec(spec: str, depth: int):
    """Build a tree from a generator spec string (see GEN_HELP)."""
    parts = spec.split(":")
    kind = parts[0]
    if kind in ("upper-density", "separator"):
        if len(parts) > 1:
            raise DomainError(f"generator {kind!r} takes no options")
        if depth is None:
            return upper_density_tree() if kind == "upper-density" \
                else separator_tree()
        return (upper_density_tree(depth) if kind == "upper-density"
                else separator_tree(depth))
    if depth is None:
        raise DomainError(f"generator {kind!r} needs --depth")
    if len(parts) < 2:
        raise DomainError(
            f"generator {kind!r} needs an alphabet size, e.g. {kind}:2"
        )
    if kind == "freq":
        targets = _parse_probs(parts[1])
        opts = _spec_options(parts[2:])
        delta = float(opts.pop("delta", 0.05))
        if opts:
            raise DomainError(f"unknown freq options {sorted(opts)}")
        return besicovitch_tree(targets, delta, depth)
    try:
        ell = int(parts[1])
    except ValueError:
        raise DomainError(f"alphabet size {parts[1]!r} is not an integer")
    opts = _spec_options(parts[2:])
    if kind == "full":
        if opts:
            raise DomainError(f"unknown full-shift options {sorted(opts)}")
        return full_shift(ell, depth)
    if kind == "sft":
        words = opts.pop("forbid", "")
        if opts:
            raise DomainError(f"unknown sft options {sorted(opts)}")
        forbidden = [w for w in words.replace(",", "|").split("|") if w]
        if not forbidden:
            raise DomainError("sft spec needs forbid=..., e.g. sft:2:forbid=11")
        return sft(ell, depth, forbidden)
    if kind == "nontypical":
        if "s" not in opts:
            raise DomainError("nontypical spec needs s=..., the target exponent")
        s = float(opts.pop("s"))
        if opts:
            raise DomainError(f"unknown nontypical options {sorted(opts)}")
        return nontypical_tree(ell, s, depth)
    if kind == "random":
        seed = int(opts.pop("seed", 0))
        keep = opts.pop("keep", None)
        if opts:
            raise DomainError(f"unknown random options {sorted(opts)}")
        rng = np.random.default_rng(seed)
        return random_pruned_tree(
            rng, ell=ell, depth=depth,
            keep_prob=float(keep) if keep is not None else None,
        )
    if kind == "level":
        widths = opts.pop("widths", "")
        if opts or not widths:
            raise DomainError("level spec needs widths=a,b,c,...")
        return level_branching(ell, depth,
                               [int(w) for w in widths.split(",")])
    raise DomainError(
        f"unknown generator {kind!r}; see --help for the spec grammar"
    )


def _tree_from_config(config: RunConfig):
    if (config.gen is None) == (config.tree_path is None):
        raise DomainError("give exactly one tree source: --gen or --tree")
    if config.tree_path is not None:
        return load_tree(config.tree_path)
    return build_from_spec(config.gen, config.depth)


# ---------------------------------------------------------------------------
# output plumbing
# ---------------------------------------------------------------------------


def _out_path(config: RunConfig, default_name: str) -> str:
    if config.out:
        return config.out
    return os.path.join(os.environ.get(OUT_DIR_ENV, "."), default_name)


def _write_json(obj, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(lines, path):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def _csv_path(json_path):
    stem, _ = os.path.splitext(json_path)
    return stem + ".csv"


def _display(value, base2):
    if value is None:
        return "none"
    if base2:
        return f"{value / LN2:.6f} bits"
    return f"{value:.6f} nats"


def _envelope(config: RunConfig, result: dict) -> dict:
    shown = {k: v for k, v in (
        ("command", f"{config.command} {config.subcommand}"),
        ("gen", config.gen), ("tree", config.tree_path),
        ("depth", config.depth), ("m", config.scale),
        ("n_window", config.n_window), ("tol", config.tol),
        ("s", config.s), ("seed", config.seed),
    ) if v is not None}
    return {
        "schema_version": SCHEMA_VERSION,
        "units": "nats",
        "config": shown,
        "result": result,
    }


def _verbose_diag(config: RunConfig, diagnostics: dict):
    if not config.verbose:
        return
    for key, value in sorted(diagnostics.items()):
        if isinstance(value, dict):
            for sub, num in sorted(value.items(), key=lambda kv: kv[0]):
                print(f"# {key}[{sub}] = {num}", file=sys.stderr)
        else:
            print(f"# {key} = {value}", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _cmd_tree(config: RunConfig) -> int:
    tree = _tree_from_config(config)
    suffix = ".txt" if config.fmt == "text" else ".json"
    path = _out_path(config, "tree" + suffix)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    if config.fmt == "text":
        save_tree_text(tree, path)
    else:
        save_tree(tree, path)
    counts = tree.depth_counts()
    head = ", ".join(str(c) for c in counts[: min(8, len(counts))])
    print(f"tree depth={tree.depth} alphabet={tree.alphabet.size} "
          f"counts=[{head}{', ...' if len(counts) > 8 else ''}] -> {path}")
    return 0


_ENTROPY_ENGINES = {
    "bowen": bowen_entropy,
    "packing": packing_entropy,
    "weighted": weighted_entropy,
}


def _cmd_entropy(config: RunConfig) -> int:
    tree = _tree_from_config(config)
    if config.subcommand == "capacity":
        est = capacity_entropy(tree, n_window=config.n_window,
                               scale=config.scale)
    else:
        engine = _ENTROPY_ENGINES[config.subcommand]
        est = engine(tree, n_window=config.n_window, scale=config.scale,
                     tol=config.tol)
    _verbose_diag(config, est.diagnostics)
    result = {
        "kind": config.subcommand,
        "value": est.value,
        "bracket": list(est.bracket),
        "depth": est.depth,
        "n_window": est.n_window,
        "m": est.scale,
        "tol": est.tol,
        "converged": est.converged,
        "diagnostics": est.diagnostics,
    }
    path = _out_path(config, f"entropy-{config.subcommand}.json")
    _write_json(_envelope(config, result), path)
    if config.csv:
        rates = est.diagnostics.get("level_rates", {})
        lines = ["depth,rate"] + [
            f"{d},{r}" for d, r in sorted(rates.items(),
                                          key=lambda kv: int(kv[0]))
        ]
        _write_csv(lines, _csv_path(path))
    print(f"{config.subcommand} value={_display(est.value, config.base2)} "
          f"bracket=[{est.bracket[0]:.6f}, {est.bracket[1]:.6f}] -> {path}")
    return 0


def _cmd_measure(config: RunConfig) -> int:
    if config.subcommand == "local":
        return _cmd_measure_local(config)
    tree = _tree_from_config(config)
    if config.s is None:
        raise DomainError(
            f"measure {config.subcommand} needs --s, the weight exponent"
        )
    if config.subcommand == "frostman":
        result = frostman_measure(
            tree, config.s, n_window=config.n_window or 1,
            scale=config.scale,
        )
        measure = result.measure
        margin = frostman_bound_margin(result)
    else:
        measure = packing_frostman(
            tree, config.s, n_window=config.n_window or 1,
            scale=config.scale, stages=config.stages,
        )
        margin = measure.bound_margin()
    path = _out_path(config, f"measure-{config.subcommand}.json")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_measure(measure, path)
    print(f"{config.subcommand} s={config.s} bound_margin={margin:.3e} "
          f"boundary={measure.boundary_mass()} -> {path}")
    return 0


def _cmd_measure_local(config: RunConfig) -> int:
    if config.measure_path is not None:
        measure = load_measure(config.measure_path)
    elif config.probs is not None:
        measure = bernoulli(_tree_from_config(config), config.probs)
    else:
        raise DomainError(
            "measure local needs --measure FILE or --bernoulli P1,P2,..."
        )
    est = integral_local_entropy(
        measure, config.side, n_max=config.n_max, scale=config.scale,
        method=config.method, samples=config.samples, seed=config.seed,
    )
    result = {
        "kind": f"local-{config.side}",
        "value": est.value,
        "n_max": est.n_max,
        "method": est.method,
        "samples": est.n_samples,
    }
    path = _out_path(config, "measure-local.json")
    _write_json(_envelope(config, result), path)
    print(f"local {config.side} integral="
          f"{_display(est.value, config.base2)} method={est.method} "
          f"-> {path}")
    return 0


def _cmd_vp(config: RunConfig) -> int:
    tree = _tree_from_config(config)
    if config.subcommand == "bowen":
        report = verify_bowen_vp(tree, scale=config.scale, tol=config.tol,
                                 n_window=config.n_window, seed=config.seed)
    else:
        report = verify_packing_vp(tree, scale=config.scale, tol=config.tol,
                                   stages=config.stages,
                                   n_window=config.n_window,
                                   seed=config.seed)
    path = _out_path(config, f"vp-{config.subcommand}.json")
    obj = _envelope(config, report.to_json_obj())
    _write_json(obj, path)
    if config.csv:
        lines = ["kind,s,witness,tail_integral,boundary"]
        for cand in report.candidates:
            lines.append(
                f"{cand['kind']},{cand.get('s', '')},{cand['witness']},"
                f"{cand.get('tail_integral', '')},{cand['boundary']}"
            )
        _write_csv(lines, _csv_path(path))
    est = report.entropy_estimate
    print(f"vp {config.subcommand} "
          f"entropy={_display(est.value, config.base2)} "
          f"measure_side={_display(report.measure_side, config.base2)} "
          f"gap={report.gap:.6f} passed={report.passed} -> {path}")
    if config.do_assert and not report.passed:
        failed = [k for k, v in report.checks.items() if not v]
        print(f"assertion failed: {', '.join(failed)}", file=sys.stderr)
        return 2
    return 0


def _cmd_suite(config: RunConfig) -> int:
    progress = None
    if config.verbose:
        def progress(subject, rows, failures):
            print(f"# {subject}: {rows} rows, {failures} failures",
                  file=sys.stderr)
    report = run_property_suite(
        seed=config.seed, count=config.count, depth=config.depth or 12,
        tol=config.tol, jobs=config.jobs, progress=progress,
    )
    path = _out_path(config, "suite.json")
    _write_json(_envelope(config, report.to_json_obj()), path)
    if config.csv:
        _write_csv(report.csv_text().splitlines(), _csv_path(path))
    failures = report.failures()
    print(f"suite seed={report.seed} count={report.count} "
          f"depth={report.depth} rows={len(report.rows)} "
          f"failures={len(failures)} -> {path}")
    for row in failures[:10]:
        print(f"  FAIL {row.invariant} [{row.subject}] {row.detail}",
              file=sys.stderr)
    if config.do_assert and failures:
        return 2
    return 0


_COMMANDS = {
    "tree": _cmd_tree,
    "entropy": _cmd_entropy,
    "measure": _cmd_measure,
    "vp": _cmd_vp,
    "suite": _cmd_suite,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_tree_source(parser, required=True):
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument("--gen", help="generator spec, e.g. full:2")
    group.add_argument("--tree", dest="tree_path",
                       help="tree file (.json or .txt)")
    parser.add_argument("--depth", type=int, help="tree depth D")


def _add_common(parser):
    parser.add_argument("--m", dest="scale", type=int, default=1,
                        help="ball scale index m >= 1 (default 1)")
    parser.add_argument("--n-window", type=int, default=None,
                        help="admissible window start N (default depth/2)")
    parser.add_argument("--tol", type=float, default=1e-3,
                        help="bisection or report tolerance")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output path (default under "
                        f"${OUT_DIR_ENV} or the working directory)")
    parser.add_argument("--format", dest="fmt", default="json",
                        choices=("json", "text"))
    parser.add_argument("--csv", action="store_true",
                        help="also write CSV diagnostics next to the JSON")
    parser.add_argument("--base2", action="store_true",
                        help="display values in bits (stored values stay nats)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for suite runs")
    parser.add_argument("--verbose", action="store_true",
                        help="stream per-depth/per-tree diagnostics to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftent",
        description="Entropy estimates, witness measures, and verification "
                    "reports for pruned cylinder trees.",
        epilog=GEN_HELP + "\n" + CSV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    tree = sub.add_parser("tree", help="generate and store trees")
    tree_sub = tree.add_subparsers(dest="subcommand", required=True)
    gen = tree_sub.add_parser("gen", help="build a tree from a spec")
    _add_tree_source(gen)
    _add_common(gen)

    entropy = sub.add_parser("entropy", help="entropy estimates")
    entropy_sub = entropy.add_subparsers(dest="subcommand", required=True)
    for name in ("bowen", "packing", "capacity", "weighted"):
        p = entropy_sub.add_parser(name)
        _add_tree_source(p)
        _add_common(p)

    measure = sub.add_parser("measure", help="witness measures")
    measure_sub = measure.add_subparsers(dest="subcommand", required=True)
    for name in ("frostman", "packing-frostman"):
        p = measure_sub.add_parser(name)
        _add_tree_source(p)
        _add_common(p)
        p.add_argument("--s", type=float, help="weight exponent")
        p.add_argument("--stages", type=int, default=3)
    local = measure_sub.add_parser("local")
    _add_tree_source(local, required=False)
    _add_common(local)
    local.add_argument("--measure", dest="measure_path",
                       help="measure file written by `measure ...`")
    local.add_argument("--bernoulli", dest="probs",
                       help="product measure weights, e.g. 0.3,0.7")
    local.add_argument("--side", choices=("lower", "upper"),
                       default="lower")
    local.add_argument("--n-max", type=int, default=None)
    local.add_argument("--samples", type=int, default=100)
    local.add_argument("--method", default="auto",
                       choices=("auto", "exact", "constant", "stage",
                                "monte-carlo"))

    vp = sub.add_parser("vp", help="variational-principle reports")
    vp_sub = vp.add_subparsers(dest="subcommand", required=True)
    for name in ("bowen", "packing"):
        p = vp_sub.add_parser(name)
        _add_tree_source(p)
        _add_common(p)
        p.add_argument("--stages", type=int, default=3)
        p.add_argument("--assert", dest="do_assert", action="store_true",
                       help="exit 2 unless the report passes")
        p.set_defaults(tol=0.05)

    suite = sub.add_parser("suite", help="randomized property suite")
    suite_sub = suite.add_subparsers(dest="subcommand", required=True)
    run = suite_sub.add_parser("run")
    _add_common(run)
    run.add_argument("--count", type=int, default=200)
    run.add_argument("--depth", type=int, default=12)
    run.add_argument("--assert", dest="do_assert", action="store_true",
                     help="exit 2 when any invariant fails")
    run.set_defaults(seed=42)

    return parser


def config_from_args(args) -> RunConfig:
    fields = {
        name: getattr(args, name)
        for name in RunConfig.__dataclass_fields__
        if hasattr(args, name)
    }
    if getattr(args, "probs", None) is not None:
        fields["probs"] = _parse_probs(args.probs)
    return RunConfig(**fields).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        return _COMMANDS[config.command](config)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
