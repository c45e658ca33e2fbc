"""Command-line front end: ``sipmsim {phs,nrf,fit,fastpath,dump-waveforms} [options]``.

Exit codes: 0 success, 2 configuration error, 3 degenerate analysis,
4 fit failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import PRESETS, config_schema, from_flat, load_config
from .errors import ConfigError, DegenerateSpectrum, FitFailed

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_FIT = 0, 2, 3, 4


def _kv(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file (flat dotted keys)")
    common.add_argument("--preset", help=f"start from a shipped preset: {', '.join(sorted(PRESETS))}")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--shots", type=int, help="shots per spectrum or per sweep point")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--set", dest="overrides", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, value parsed as JSON when possible")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="sipmsim", description=__doc__.splitlines()[0])
    p.add_argument("--schema", action="store_true", help="print the config JSON schema and exit")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("phs", parents=[common], help="pulse-height spectra, gamma and visibility")
    sub.add_parser("nrf", parents=[common], help="noise reduction factor through the full chain (+ fit)")
    f = sub.add_parser("fit", parents=[common], help="fit the R model to a curve CSV")
    f.add_argument("curve", help="CSV with columns mean_k, R, sigma_R (mean_k1, mean_k2 optional)")
    sub.add_parser("fastpath", parents=[common], help="noise reduction factor from avalanche counts")
    d = sub.add_parser("dump-waveforms", parents=[common], help="binary dump of digitized traces")
    d.add_argument("--max-shots", type=int, default=1000)
    return p


def config_from_args(args):
    flat = {}
    if args.preset:
        flat["preset"] = args.preset
    for name in ("seed", "shots", "threads"):
        if getattr(args, name) is not None:
            flat[name] = getattr(args, name)
    if args.out is not None:
        flat["outputs"] = args.out
    flat.update(dict(args.overrides))
    if args.config:
        return load_config(args.config, flat)
    return from_flat(flat)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.schema:
        json.dump(config_schema(), sys.stdout, indent=2)
        print()
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "phs":
            res = harness.run_phs(cfg)
        elif args.command == "nrf":
            res = harness.run_nrf(cfg)
        elif args.command == "fastpath":
            res = harness.run_fastpath(cfg)
        elif args.command == "fit":
            res = harness.run_fit(args.curve, cfg)
        else:
            res = harness.dump_waveforms(cfg, max_shots=args.max_shots)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateSpectrum as exc:
        print(f"degenerate analysis: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FitFailed as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in res.manifest.notices:
        print(f"notice: {line}", file=sys.stderr)
    print(f"wrote {len(res.manifest.outputs)} file(s) + {harness.MANIFEST} to {res.out_dir}")
    return EXIT_DEGENERATE if res.degenerate else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
