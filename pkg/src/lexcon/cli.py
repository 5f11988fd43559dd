"""``lexcon`` command line.

Every configuration key doubles as a flag, e.g. ``--train.steps 300`` or
``--decode.beam_size 10``; flags win over the ``--config`` file.

Exit codes: 0 ok, 2 bad configuration, 3 bad or missing data, 4 too many
constrained-decoding failures, 1 anything else raised by the package.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from lexcon.config import config_keys, load_config
from lexcon.errors import DataError, LexconError
from lexcon.pipeline import KINDS, SETTINGS, FailureThresholdExceeded, Workspace, gradcheck_suite

log = logging.getLogger("lexcon")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI experiment config")
    p.add_argument("--workdir", type=Path, default=Path("work"), help="artifact directory (default: ./work)")
    p.add_argument("--force", action="store_true", help="recompute stages and verify they reproduce stored artifacts")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("config overrides")
    for section, key, default in config_keys():
        group.add_argument(f"--{section}.{key}", dest=f"cfg:{section}.{key}", metavar="VALUE",
                           help=f"default {_show(default)}")


def _show(v) -> str:
    return ", ".join(map(str, v)) if isinstance(v, tuple) else str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexcon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="generate the toy corpus, constraints and vocabulary")
    _add_common(p)

    p = sub.add_parser("train", help="train one model")
    _add_common(p)
    p.add_argument("--kind", choices=KINDS, default="leca")
    p.add_argument("--seed", type=int, help="defaults to every configured seed (leca) or the first one (base)")

    for name, text in (("decode", "decode the test split"), ("postprocess", "repair decoder output"),
                       ("evaluate", "score repaired output")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--setting", choices=list(SETTINGS), required=True)
        p.add_argument("--beam", type=int, help="defaults to decode.beam_size")
        p.add_argument("--seed", type=int, help="single-model settings: which trained seed (default: the first)")
        if name == "evaluate":
            p.add_argument("--raw", action="store_true", help="score decoder output before repairs")

    p = sub.add_parser("run", help="all stages, all settings, results table")
    _add_common(p)

    p = sub.add_parser("sweep-beam", help="dba over decode.sweep_beams for both scorers, CSV out")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--entries", type=int, default=24, help="entries probed per tensor (0 = all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _workspace(args) -> Workspace:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    cfg = load_config(args.config, overrides)
    return Workspace(args.workdir, cfg, force=args.force)


def _dispatch(args) -> int:
    if args.command == "gradcheck":
        errs = gradcheck_suite(d_model=args.d_model, seed=args.seed, max_entries=args.entries or None)
        worst = 0.0
        for (pointer, segments), err in errs.items():
            print(f"pointer={str(pointer):5s} segments={str(segments):5s} max_rel_err={err:.3e}")
            worst = max(worst, err)
        return 0 if worst < args.tolerance else 1

    ws = _workspace(args)
    if args.command == "prepare":
        files = ws.prepare()
        for p in (files.train, files.test, files.vocab):
            print(p)
    elif args.command == "train":
        ex = ws.cfg.experiment
        seeds = [args.seed] if args.seed is not None else (list(ex.seeds) if args.kind == "leca" else [ex.seeds[0]])
        for s in seeds:
            print(ws.train_model(args.kind, s))
    elif args.command == "decode":
        path, failures = ws.decode_setting(args.setting, args.beam, args.seed)
        print(path)
        mode = SETTINGS[args.setting][1]
        rate = failures / ws.cfg.toy.n_test
        if mode != "plain" and rate > ws.cfg.decode.max_failure_rate:
            raise FailureThresholdExceeded(
                f"{failures} of {ws.cfg.toy.n_test} sentences failed (limit {ws.cfg.decode.max_failure_rate:.0%})"
            )
    elif args.command == "postprocess":
        print(ws.postprocess_setting(args.setting, args.beam, args.seed))
    elif args.command == "evaluate":
        beam = args.beam or ws.cfg.decode.beam_size
        path = ws.output_path(args.setting, beam, stage="out" if args.raw else "post", seed=args.seed)
        if not path.exists():
            raise DataError(f"missing {path}; run decode/postprocess first")
        print(json.dumps(ws.evaluate_file(path).summary(), indent=1))
    elif args.command == "run":
        try:
            result = ws.run()
        except FailureThresholdExceeded as exc:
            if exc.result is not None:
                print(exc.result.table)
            raise
        print(result.table)
        print(f"\nreport: {result.report_path}")
    elif args.command == "sweep-beam":
        path = ws.sweep_beam()
        sys.stdout.write(path.read_text())
        print(f"\ncsv: {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except LexconError as exc:
        print(f"lexcon {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
