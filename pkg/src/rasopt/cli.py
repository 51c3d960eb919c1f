"""Command-line experiment runner.

Example::

    rasopt --problem pca --optimizer rasa-lr --alpha0 0.5,0.1,0.05 \\
        --iters 5000 --out runs/pca.csv

Options may also come from ``--config FILE`` holding ``key=value`` lines
(keys are the long option names); command-line flags win over the file.
Exit status: 0 on success, 2 on configuration errors, 3 on data errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DataError
from .harness import (
    RunConfig,
    convergence_diagnostics,
    emit_csv,
    final_value,
    grid_search_alpha0,
    primary_metric,
)
from .optim import OPTIMIZERS

log = logging.getLogger("rasopt")


def _floats(text):
    try:
        vals = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty step-size grid")
    return vals


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="rasopt", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="file of key=value lines")
    p.add_argument("--problem", choices=["pca", "ica", "mc"])
    p.add_argument("--optimizer", choices=OPTIMIZERS)
    p.add_argument("--manifold", choices=["stiefel", "grassmann"])
    p.add_argument("--alpha0", type=_floats, help="initial step size or comma-separated grid")
    p.add_argument("--beta", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lam", type=float, help="MC ridge parameter")
    p.add_argument("--dataset", help="'synthetic' or a data file path")
    p.add_argument("--format", dest="fmt", choices=["doublecolon", "csv"], help="ratings file format")
    p.add_argument("--n", type=int, help="synthetic ambient dimension")
    p.add_argument("--N", type=int, help="synthetic sample / column / matrix count")
    p.add_argument("--rank", type=int)
    p.add_argument("--condition", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--density", type=float)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--record-every", type=int)
    p.add_argument("--clock", choices=["none", "wall"])
    p.add_argument("--optimal", type=float, help="externally known optimal cost")
    p.add_argument("--symmetrize", type=_bool, nargs="?", const=True)
    p.add_argument("--audit", type=_bool, nargs="?", const=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="CSV path; a grid writes one file per step size")
    p.add_argument("--diagnostics", action="store_true", help="print gradient-norm rate diagnostics")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


_FIELDS = {
    "problem", "optimizer", "manifold", "alpha0", "beta", "epsilon", "batch_size", "iters",
    "seed", "lam", "dataset", "fmt", "n", "N", "rank", "condition", "noise_sd", "density",
    "data_seed", "record_every", "clock", "optimal", "symmetrize", "audit", "jobs",
}  # fmt: skip

_ALIASES = {"lambda": "lam", "format": "fmt"}


def read_config_file(path, parser):
    """Parse ``key=value`` lines into parser defaults (types follow the parser)."""
    actions = {a.dest: a for a in parser._actions}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in actions or key in ("config", "help"):
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        act = actions[key]
        try:
            out[key] = act.type(value) if act.type else value
        except (ValueError, argparse.ArgumentTypeError) as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
        if act.choices and out[key] not in act.choices:
            raise ConfigError(f"{path}:{lineno}: {key} must be one of {list(act.choices)}")
    return out


def config_from_args(args) -> RunConfig:
    kw = {k: v for k, v in vars(args).items() if k in _FIELDS and v is not None}
    for req in ("problem", "optimizer", "iters"):
        if req not in kw:
            raise ConfigError(f"--{req} is required")
    if "alpha0" in kw:
        kw["alpha0"] = tuple(kw["alpha0"])
    return RunConfig(**kw)


def _out_path(out, alpha, grid_size):
    if grid_size == 1:
        return Path(out)
    out = Path(out)
    suffix = out.suffix or ".csv"
    return out.with_name(f"{out.stem}-alpha{alpha!r}{suffix}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.config:
            parser.set_defaults(**read_config_file(args.config, parser))
            args = parser.parse_args(argv)
        cfg = config_from_args(args)
        best, results = grid_search_alpha0(cfg)
    except ConfigError as e:
        print(f"rasopt: config error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError, ValueError) as e:
        print(f"rasopt: data error: {e}", file=sys.stderr)
        return 3

    metric = primary_metric(cfg.problem, results[best])
    grid = list(dict.fromkeys(cfg.alpha0))
    for a in grid:
        recs = results[a]
        line = f"alpha0={a!r} final {metric}={final_value(recs, metric):.6g}"
        if args.out:
            path = _out_path(args.out, a, len(grid))
            path.parent.mkdir(parents=True, exist_ok=True)
            try:
                emit_csv(recs, path)
            except OSError as e:
                print(f"rasopt: cannot write {path}: {e}", file=sys.stderr)
                return 3
            line += f" -> {path}"
        print(line)
        if args.diagnostics:
            d = convergence_diagnostics(recs)
            print(
                f"  min gradnorm2={d.running_min[-1]:.6g} rate ratio={d.ratio[-1]:.6g} H={d.H:.6g}"
            )
    print(f"best alpha0={best!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
