"""``ngram-tf``: generate, estimate, compile, verify and inspect."""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from typing import Optional, Sequence

from .compiler import Construction, HistoryIndexer, compile_lm
from .ngram import Alphabet, NGramError, dumps_lm, estimate_mle, history_before, load_lm, pad, random_lm
from .numeric import Backend, format_scalar
from .transformer import ForwardTrace, ModelError, dumps_model, load_model, transformer_forward
from .verify import DEFAULT_TOL, EXACT, TOL, check_dims, float_margin_note, verify_model


def _order(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"order must be an integer, got {text!r}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("order must be >= 2")
    return n


def _alphabet(text: str) -> tuple:
    syms = tuple(s.strip() for s in text.split(","))
    if not syms or any(not s for s in syms):
        raise argparse.ArgumentTypeError(f"bad alphabet {text!r}; use a comma-separated list like a,b")
    return syms


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _write(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)


def cmd_gen(args) -> int:
    lm = random_lm(args.order, Alphabet(args.alphabet), args.seed, args.max_denominator, args.zero_fraction)
    _write(dumps_lm(lm), args.out)
    print(f"lm fingerprint {lm.fingerprint()}", file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return 0


def cmd_estimate(args) -> int:
    with open(args.corpus, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    if args.alphabet:
        alphabet = Alphabet(args.alphabet)
    else:
        syms = sorted({s for line in lines for s in (line.split() if any(c.isspace() for c in line) else line)})
        alphabet = Alphabet(tuple(syms))
    corpus = [alphabet.tokenize(line) for line in lines]
    lm = estimate_mle(corpus, args.order, alphabet, Fraction(args.add_lambda))
    _write(dumps_lm(lm), args.out)
    print(f"lm fingerprint {lm.fingerprint()}", file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return 0


def cmd_compile(args) -> int:
    lm = load_lm(args.lm)
    model = compile_lm(lm, args.construction, args.backend)
    _write(dumps_model(model), args.out)
    log = sys.stderr if args.out in (None, "-") else sys.stdout
    print(f"compiled {model.construction} ({model.backend.value}): {len(model.layers)} layer(s), "
          f"{sum(len(l.heads) for l in model.layers)} head(s)", file=log)
    print(check_dims(model).summary(), file=log)
    note = float_margin_note(model)
    if note:
        print(note, file=log)
    return 0


def cmd_verify(args) -> int:
    lm = load_lm(args.lm)
    model = load_model(args.model)
    if lm.alphabet != model.alphabet or lm.order != model.order:
        raise ModelError("model and LM files disagree on alphabet or order")
    mode = EXACT if model.backend is Backend.RATIONAL else TOL
    report = verify_model(lm, model, args.max_len, mode, args.tol, args.audit_len)
    print(report.summary())
    if args.report:
        _write(report.to_json(), args.report)
    return 0 if report.passed else 1


def cmd_inspect(args) -> int:
    model = load_model(args.model)
    y = model.alphabet.tokenize(args.string)
    padded = pad(y, model.order, model.alphabet.bos)
    trace = ForwardTrace()
    xs = transformer_forward(model, y, trace)
    print(f"construction {model.construction} ({model.backend.value}), padded: {' '.join(padded)}")
    positions = range(1, len(padded) + 1)
    for li, layer_weights in enumerate(trace.weights, start=1):
        for h, weights in enumerate(layer_weights):
            print(f"layer {li} head {h}: attention weights (rows = query position)")
            print("      " + " ".join(f"{j:>8}" for j in positions))
            for p, w in zip(positions, weights):
                cells = [format_scalar(v) if v else "." for v in w] + [""] * (len(padded) - p)
                print(f"{p:>5} " + " ".join(f"{str(c)[:8]:>8}" for c in cells))
    if model.construction == Construction.MULTILAYER.value:
        B = len(model.alphabet.bos_symbols)
        for li, states in enumerate(trace.states):
            cols = []
            for x in states:
                blocks = []
                for b in range(model.order - 1):
                    block = x[b * B:(b + 1) * B]
                    hot = [i for i, v in enumerate(block) if v == 1]
                    blocks.append(model.alphabet.bos_symbols[hot[0]] if len(hot) == 1 else "-")
                cols.append("[" + " ".join(blocks) + "]")
            print(f"after layer {li}: " + " ".join(cols))
    indexer = HistoryIndexer(model.alphabet, model.order - 1)
    enc = model.final.apply(xs[-1])
    hot = [i for i, v in enumerate(enc) if v == 1]
    true_history = history_before(padded, len(padded), model.order)
    if len(hot) == 1 and all(v == 0 for i, v in enumerate(enc) if i != hot[0]):
        print(f"decoded history index {hot[0]} = {' '.join(indexer.history(hot[0]))} "
              f"(true {' '.join(true_history)}, index {indexer.index(true_history)})")
    else:
        print(f"representation is not one-hot (true history index {indexer.index(true_history)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngram-tf", description="Compile n-gram LMs into transformer weights.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a random n-gram LM")
    g.add_argument("-n", "--order", type=_order, required=True)
    g.add_argument("-a", "--alphabet", type=_alphabet, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-denominator", type=int, default=1000)
    g.add_argument("--zero-fraction", type=float, default=0.0, help="chance that a transition gets probability 0")
    g.add_argument("-o", "--out")
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", help="estimate an LM from a corpus, one string per line")
    e.add_argument("corpus")
    e.add_argument("-n", "--order", type=_order, required=True)
    e.add_argument("-a", "--alphabet", type=_alphabet)
    e.add_argument("--lambda", dest="add_lambda", default="0", help="additive smoothing, e.g. 1 or 1/2")
    e.add_argument("-o", "--out")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("compile", help="compile an LM file into a model file")
    c.add_argument("lm")
    c.add_argument("-c", "--construction", choices=[k.value for k in Construction], required=True)
    c.add_argument("--backend", choices=[b.value for b in Backend])
    c.add_argument("-o", "--out")
    c.set_defaults(func=cmd_compile)

    v = sub.add_parser("verify", help="check weak equivalence and audit a compiled model")
    v.add_argument("lm")
    v.add_argument("model")
    v.add_argument("--max-len", type=_nonneg, default=6)
    v.add_argument("--tol", type=float, default=DEFAULT_TOL, help="log-probability tolerance for float models")
    v.add_argument("--audit-len", type=_nonneg, help="string length for attention audits (default: --max-len)")
    v.add_argument("--report", help="write the machine-readable report here")
    v.set_defaults(func=cmd_verify)

    i = sub.add_parser("inspect", help="dump attention weights and the decoded history for a prefix")
    i.add_argument("model")
    i.add_argument("string", nargs="?", default="")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NGramError, ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
