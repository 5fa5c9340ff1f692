"""Command-line entry point: ``invguard {parse,infer,check,combine,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AnalysisConfig
from .errors import ConfigError, ConfigMissing, InvGuardError
from .pipeline import Pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits with 2 by default, which here means a data error
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="analysis config JSON")
    common.add_argument("--target", help="target contract address")
    common.add_argument("--train-fraction", help="chronological training share, e.g. 0.7")
    common.add_argument("--fixtures", help="offline corpus directory (reads its config.json when --config is absent)")
    common.add_argument("--cache-dir", help="where analyses, manifests and reports live")
    common.add_argument("--templates", help="comma-separated template ids to enable")
    common.add_argument("--out", help="manifest path for infer, output directory otherwise")
    common.add_argument("--manifest", help="manifest to check against (default: cache manifest)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="invguard", description="Mine and evaluate invariant guards from transaction traces.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("parse", "analyse every corpus transaction into the cache"),
        ("infer", "synthesize the invariant manifest from the training split"),
        ("check", "evaluate the manifest on the test split"),
        ("combine", "rank AND/OR combinations of templates"),
        ("report", "write the per-template FP/TP table"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return p


def load_config(args) -> AnalysisConfig:
    data: dict = {}
    base = None
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        base = path.parent
    elif args.fixtures and (Path(args.fixtures) / "config.json").is_file():
        data = json.loads((Path(args.fixtures) / "config.json").read_text())
    if args.fixtures:
        data["fixtures"] = str(Path(args.fixtures).resolve())
    if args.target:
        data["target"] = args.target
    if args.train_fraction:
        data["trainFraction"] = args.train_fraction
    if args.cache_dir:
        data["cacheDir"] = args.cache_dir
    if args.templates:
        data["templates"] = [t.strip() for t in args.templates.split(",") if t.strip()]
    return AnalysisConfig.from_dict(data, base)


def run(args) -> int:
    cfg = load_config(args)
    pl = Pipeline(cfg)
    cmd = args.command
    if cmd == "parse":
        res = pl.parse()
        print(f"parsed {len(res.parsed)}, cached {len(res.cached)}, skipped {len(res.skipped)}")
        for s in res.skipped:
            print(f"  skipped {s['txHash']}: {s['error']}")
    elif cmd == "infer":
        m = pl.infer(args.out)
        applied = len(m.applied())
        print(f"{len(m.instances)} instances, {applied} applied -> {args.out or pl.manifest_file}")
    else:
        manifest = pl.load_manifest(args.manifest)
        out = Path(args.out) if args.out else pl.cache
        if cmd == "check":
            vs = pl.check(manifest, out)
            blocked = sum(v.blocked for v in vs)
            print(f"{len(vs)} test transactions, {blocked} blocked -> {out / 'verdicts.json'}")
        elif cmd == "combine":
            doc = pl.combine(manifest, out)
            best = doc["metric2"][0] if doc["metric2"] else None
            print(f"{len(doc['metric1'])} combinations; best under 1% FP: "
                  f"{best['expr'] if best else 'none'} -> {out / 'combinations.json'}")
        else:
            rows = pl.report(manifest, out)
            for r in rows:
                print(f"{r.template:5} {r.cell:>6} {'TP' if r.tp else ''}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(args)
    except (ConfigError, ConfigMissing) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvGuardError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
