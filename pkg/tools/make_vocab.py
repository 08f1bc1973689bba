"""Regenerate src/gmnet/data/vocab.txt deterministically.

Layout: four reserved tokens, then organic-subset atoms, bond and branch
symbols, ring-closure digits, two-digit ring closures, and bracket atoms in a
fixed priority order, truncated so the file holds exactly 591 lines.
"""

from __future__ import annotations

import itertools
import sys
from pathlib import Path

VOCAB_SIZE = 591
RESERVED = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]
ORGANIC = ["C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "c", "n", "o", "s", "p", "b"]
SYMBOLS = ["(", ")", ".", "=", "#", "-", "+", "\\", "/", ":", "~", "@", "?", ">", "*", "$"]
DIGITS = [str(i) for i in range(10)]
RING_PERCENT = [f"%{i}" for i in range(10, 100)]

# Frequent bracket atoms first, so truncation only drops exotic ones.
COMMON_BRACKETS = [
    "[nH]", "[C@@H]", "[C@H]", "[C@]", "[C@@]", "[O-]", "[N+]", "[NH+]", "[NH2+]", "[NH3+]",
    "[n+]", "[N-]", "[S@]", "[S@@]", "[S+]", "[n-]", "[o+]", "[s+]", "[Na+]", "[K+]", "[Cl-]",
    "[Br-]", "[I-]", "[Li+]", "[H]", "[2H]", "[13C]", "[14C]", "[18F]", "[11C]", "[123I]", "[125I]",
    "[P+]", "[P@]", "[P@@]", "[Si]", "[se]", "[Se]", "[te]", "[B-]", "[BH-]", "[BH3-]", "[SH]",
    "[OH-]", "[NH-]", "[CH2]", "[CH]", "[C-]", "[CH-]", "[CH2-]", "[c-]", "[cH-]", "[nH+]",
    "[N@]", "[N@@]", "[N@+]", "[N@@+]", "[Zn]", "[Zn+2]", "[Mg]", "[Mg+2]", "[Ca+2]", "[Fe]",
    "[Fe+2]", "[Fe+3]", "[Cu]", "[Cu+2]", "[Co]", "[Ni]", "[Mn]", "[Pt]", "[Pd]", "[Hg]", "[Ag+]",
    "[Au]", "[As]", "[Sn]", "[Al]", "[Ge]", "[Ba+2]", "[Sr+2]", "[Cs+]", "[Rb+]", "[Gd]", "[Ti]",
]
ELEMENTS = [
    "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si", "Se", "Te", "As", "Ge", "Sn", "Na", "K",
    "Li", "Mg", "Ca", "Zn", "Fe", "Cu", "Co", "Ni", "Mn", "Cr", "Al", "Pt", "Pd", "Hg", "Ag", "Au",
]
AROMATIC = ["c", "n", "o", "s", "p", "b", "se", "te", "as"]
CHIRAL = ["", "@", "@@"]
HCOUNT = ["", "H", "H2", "H3"]
CHARGE = ["", "+", "-", "+2", "-2", "+3"]


def bracket_atoms():
    seen = set()
    for tok in COMMON_BRACKETS:
        if tok not in seen:
            seen.add(tok)
            yield tok
    for charge, hcount, chiral in itertools.product(CHARGE, HCOUNT, CHIRAL):
        for el in ELEMENTS + AROMATIC:
            tok = f"[{el}{chiral}{hcount}{charge}]"
            if tok not in seen:
                seen.add(tok)
                yield tok


def build() -> list[str]:
    head = RESERVED + ORGANIC + SYMBOLS + DIGITS + RING_PERCENT
    need = VOCAB_SIZE - len(head)
    return head + list(itertools.islice(bracket_atoms(), need))


def main(argv=None):
    target = Path(argv[0]) if argv else Path(__file__).resolve().parents[1] / "src" / "gmnet" / "data" / "vocab.txt"
    tokens = build()
    assert len(tokens) == VOCAB_SIZE and len(set(tokens)) == VOCAB_SIZE
    target.write_text("\n".join(tokens) + "\n", encoding="utf-8")
    print(f"wrote {len(tokens)} tokens to {target}")


if __name__ == "__main__":
    main(sys.argv[1:])
