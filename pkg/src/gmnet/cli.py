"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 invalid
input, 4 checkpoint error, 5 a verification suite crashed.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INPUT, EXIT_CHECKPOINT, EXIT_CRASH = 0, 1, 2, 3, 4, 5


def _fmt(x) -> str:
    return repr(float(x))


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands -------------------------------------------------------------


def cmd_verify(args) -> int:
    from .verify import SUITES

    names = args.suite or list(SUITES)
    failed = False
    for name in names:
        fn = SUITES[name]
        try:
            res = fn() if args.tol is None or name == "params" else fn(tol=args.tol)
        except Exception:  # noqa: BLE001 - a crashing suite maps to its own exit code
            print(f"[CRASH] {name}", flush=True)
            traceback.print_exc()
            return EXIT_CRASH
        print(res.line(), flush=True)
        for d in res.details:
            print(f"    {d}")
        failed |= not res.passed
    return EXIT_FAIL if failed else EXIT_OK


def _ledger_lines(k, L, preset):
    from .encoder import REFERENCE_LEDGER, ModelConfig, count_parameters

    ledger = count_parameters(ModelConfig.from_preset(preset, k, L))
    lines = [f"parameter ledger  preset={preset} k={k} L={L}"]
    for name, count in ledger.items():
        note = ""
        if (k, L) == (8, 3) and name in REFERENCE_LEDGER:
            ref = REFERENCE_LEDGER[name]
            note = "  [exact match]" if ref == count else f"  [reference {ref:,}, delta {count - ref:+,}]"
        lines.append(f"  {name:<10s} {count:>12,}{note}")
    return lines


def cmd_count_params(args) -> int:
    from .encoder import REFERENCE_TOTALS, ModelConfig, count_parameters

    for line in _ledger_lines(args.k, args.l, args.preset):
        print(line)
    if args.grid:
        print()
        print(f"{'k':>3} {'L':>3} {'ours':>12} {'reference':>12} {'delta':>12}")
        for (k, L), ref in sorted(REFERENCE_TOTALS.items()):
            ours = count_parameters(ModelConfig.from_preset(args.preset, k, L))["total"]
            print(f"{k:>3} {L:>3} {ours:>12,} {ref:>12,} {ours - ref:>+12,}")
    return EXIT_OK


def cmd_init_ckpt(args) -> int:
    from . import checkpoint
    from .encoder import GmNetModel, ModelConfig

    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        overrides[key] = value
    base = ModelConfig.from_preset(args.preset, args.k, args.l)
    text = base.to_text()
    if overrides:
        lines = dict(line.split("=", 1) for line in text.splitlines())
        for key, value in overrides.items():
            if key not in lines:
                raise ValueError(f"unknown config key {key!r}")
            lines[key] = value
        text = "".join(f"{k}={v}\n" for k, v in sorted(lines.items()))
    config = ModelConfig.from_text(text)
    checkpoint.save(GmNetModel(config, seed=args.seed), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_forward(args) -> int:
    from . import checkpoint
    from .errors import VocabularyError
    from .frontend import Vocabulary, read_flags_file, tokenize

    model = checkpoint.load(args.ckpt)
    vocab = Vocabulary.from_file(args.vocab) if args.vocab else Vocabulary.default()
    if vocab.size != model.config.vocab_size:
        raise VocabularyError(f"vocabulary has {vocab.size} tokens, model expects {model.config.vocab_size}")
    flags = None
    if args.flags:
        rows = read_flags_file(args.flags)
        if args.flags_line >= len(rows):
            raise VocabularyError(f"flags file has no line {args.flags_line}")
        flags = rows[args.flags_line]
    seq = tokenize(args.smiles, vocab, add_special=not args.no_special_tokens, flags=flags)
    pooled, out, cache = model.forward(seq.ids, seq.conj, seq.mask)
    print("tokens " + " ".join(seq.tokens))
    print("pooled " + " ".join(_fmt(v) for v in pooled[0]))
    print("output " + " ".join(_fmt(v) for v in out[0]))
    if args.dump_state:
        target = Path(args.dump_state)
        target.mkdir(parents=True, exist_ok=True)
        for i, (m_fwd, m_bwd) in enumerate(model.moment_states(cache)):
            for h in range(m_fwd.shape[1]):
                # Terminal states: forward scan at the last position, reverse scan at the first.
                for tag, state in (("fwd", m_fwd[0, h, -1]), ("bwd", m_bwd[0, h, 0])):
                    rows = "\n".join(",".join(_fmt(v) for v in row) for row in state)
                    (target / f"layer{i}_head{h}_{tag}.csv").write_text(rows + "\n", encoding="utf-8")
        print(f"moment states written to {target}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_table, run_bench

    results = run_bench(tuple(args.seq_lens), reps=args.reps, k=args.k, L=args.l, heads=args.heads, seed=args.seed)
    print(format_table(results))
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .encoder import GmNetModel
    from .gradcheck import make_toy_dataset, train_toy
    from .verify import TOY_CONFIG

    config = TOY_CONFIG
    if args.task == "cls":
        config = type(config)(**{**config.__dict__, "n_out": 2})
    model = GmNetModel(config, seed=args.seed)
    data = make_toy_dataset(args.task, n=64, seq_len=8, vocab_size=config.vocab_size, seed=args.seed)
    curve = train_toy(model, data, steps=args.steps, seed=args.seed, lr=args.lr)
    text = "".join(f"{_fmt(v)}\n" for v in curve)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"initial {_fmt(curve[0])}  final {_fmt(curve[-1])}  ratio {_fmt(curve[-1] / curve[0])}")
    return EXIT_OK


def cmd_kernel_dump(args) -> int:
    from .kernel import ZonalKernel

    kern = ZonalKernel.default(args.k, args.l)
    t = np.linspace(-1.0, 1.0, 1001)
    vals = kern(t)
    lines = ["t,kappa"] + [f"{_fmt(a)},{_fmt(b)}" for a, b in zip(t, vals)]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(t)} rows to {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    p = argparse.ArgumentParser(prog="gmnet", description="Sphere-harmonic encoder toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("verify", help="run invariant suites")
    s.add_argument("--suite", action="append", choices=sorted(SUITES), help="run only this suite (repeatable)")
    s.add_argument("--tol", type=float, default=None, help="override every suite's tolerance")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("count-params", help="print the parameter ledger")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--preset", default="cb10m", choices=["cb10m"])
    s.add_argument("--grid", action="store_true", help="also print the (k, L) grid with reference totals")
    s.set_defaults(func=cmd_count_params)

    s = sub.add_parser("init-ckpt", help="write a randomly initialised checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--l", type=int, default=3)
    s.add_argument("--preset", default="cb10m", choices=["cb10m"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    s.set_defaults(func=cmd_init_ckpt)

    s = sub.add_parser("forward", help="encode one SMILES string")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--smiles", required=True)
    s.add_argument("--flags", help="file of externally computed conjugation flags")
    s.add_argument("--flags-line", type=int, default=0, help="line of the flags file to use")
    s.add_argument("--vocab", help="vocabulary file (default: bundled)")
    s.add_argument("--dump-state", metavar="DIR", help="write per-layer moment matrices as CSV")
    s.add_argument("--no-special-tokens", action="store_true")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("bench", help="time both attention branches")
    s.add_argument("--seq-lens", type=_int_list, default=[128, 256])
    s.add_argument("--reps", type=int, default=20)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--l", type=int, default=3)
    s.add_argument("--heads", type=int, default=12)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("train-toy", help="train a small model on a synthetic task")
    s.add_argument("--task", choices=["reg", "cls"], default="reg")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=3e-5)
    s.add_argument("--out", help="write the loss curve, one value per line")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("kernel-dump", help="write (t, kappa(t)) on a 1001-point grid")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--l", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_kernel_dump)
    return p


def main(argv=None) -> int:
    from .errors import CheckpointError, GmNetError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (GmNetError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
