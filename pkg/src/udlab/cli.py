"""Command-line entry point: ``udlab <subcommand> ...``.

Exit codes: 0 success, 2 validation or parse failure, 3 bound violation
(bounds-check only).
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import UdlabError
from .harness import (
    ExperimentConfig,
    capacity_memoryless,
    generate_codebook,
    load_model,
    run,
    run_estimate,
    save_codebook,
    write_csv,
)
from .lz import joint_parse, v_metric

EXIT_OK, EXIT_INVALID, EXIT_VIOLATION = 0, 2, 3


def _add_common(p, trials=False):
    p.add_argument("--model", required=True, help="model file (JSON)")
    p.add_argument("--n", type=int, nargs="+", default=[4], help="block length(s)")
    p.add_argument("--rate", type=float, default=0.1, help="rate R in nats per symbol")
    p.add_argument("--decoder", nargs="+", default=["ml", "universal"],
                   help="decoders: ml, universal, threshold")
    p.add_argument("--alpha", type=float, default=None, help="threshold alpha override (> 1)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    if trials:
        p.add_argument("--trials", type=int, default=10_000)
        p.add_argument("--plug-in", default=None,
                       help="model file whose induced source replaces log P(y) in the universal metric")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="udlab", description="Universal decoding with side information: "
                                 "exact evaluation, simulation and bound checks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("simulate", help="Monte-Carlo average error probability"), trials=True)
    _add_common(sub.add_parser("exact-eval", help="exact average error probability by enumeration"))

    p = sub.add_parser("bounds-check", help="check every proof inequality on all (y, z)")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, nargs="+", default=[3])
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("estimate", help="floored Baum-Welch fit of the induced source to a codebook")
    p.add_argument("--codebook", required=True, help="codebook file from the `codebook` subcommand")
    p.add_argument("--states", type=int, default=2, help="hidden-state count H")
    p.add_argument("--floor", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--y-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output model file")

    p = sub.add_parser("parse", help="joint LZ78 parse of a (y, z) pair")
    p.add_argument("--y", required=True, help="digit string, e.g. 010001")
    p.add_argument("--z", required=True)

    p = sub.add_parser("capacity", help="I(Y;Z) in nats for a memoryless model")
    p.add_argument("--model", required=True)

    p = sub.add_parser("codebook", help="draw a random codebook x ~ G, y ~ V")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rate", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def _digits(s: str) -> list[int]:
    if not s.isdigit():
        raise ValueError(f"expected a digit string, got {s!r}")
    return [int(c) for c in s]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except (UdlabError, ValueError, FileNotFoundError) as exc:
        print(f"udlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "parse":
        p = joint_parse(_digits(args.y), _digits(args.z))
        print(f"c(y,z)={p.c_yz}")
        print(f"c(z)={p.c_z}")
        print("c_l=(" + ",".join(map(str, p.c_ell)) + ")")
        print("boundaries=" + ",".join(map(str, p.boundaries)))
        print(f"v={v_metric(p):g}")
        return EXIT_OK
    if cmd == "capacity":
        print("%.17g" % capacity_memoryless(load_model(args.model)))
        return EXIT_OK
    if cmd == "codebook":
        cb = generate_codebook(load_model(args.model), args.n, args.rate, args.seed)
        save_codebook(cb, args.out)
        print(f"wrote {cb.M} codewords of length {cb.n} to {args.out}")
        return EXIT_OK
    if cmd == "estimate":
        res = run_estimate(args.codebook, args.states, args.out, args.floor, args.max_iter,
                           args.tol, args.seed, args.y_size)
        print(f"iterations={res.iterations} converged={res.converged} loglik={res.loglik[-1]:.17g}")
        return EXIT_OK

    mode = {"simulate": "monte-carlo", "exact-eval": "exact", "bounds-check": "bounds-check"}[cmd]
    cfg = ExperimentConfig(
        mode=mode,
        model=args.model,
        n=args.n,
        rate=args.rate,
        decoders=getattr(args, "decoder", ["ml"]),
        trials=getattr(args, "trials", 1),
        seed=getattr(args, "seed", 0),
        out=args.out,
        alpha=args.alpha,
        plug_in=getattr(args, "plug_in", None),
    )
    rows = run(cfg)
    write_csv(rows, cfg.out)
    if mode == "bounds-check":
        bad = [r for r in rows if r["holds"] is False and "logged_only" not in (r["instance"] or "")]
        if bad:
            print(f"udlab: {len(bad)} bound violation(s)", file=sys.stderr)
            return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
