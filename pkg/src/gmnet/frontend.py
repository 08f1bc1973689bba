"""SMILES tokenisation and conjugation flags.

Tokens follow the usual atom-level SMILES pattern: bracket atoms are single
tokens, two-letter organic elements (Br, Cl) are kept together, and ``%NN``
ring closures are one token.  Characters the pattern does not recognise are
emitted as single-character tokens that map to the unknown id.

Conjugation flags use a lexical heuristic: lowercase (aromatic) atom tokens,
bare or bracketed, get 1; everything else gets 0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ContractViolation, SequenceLengthError, VocabularyError

MAX_SMILES_CHARS = 200

SMILES_PATTERN = re.compile(
    r"(\[[^\]]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|\/|:|~|@|\?|>|\*|\$|\%[0-9]{2}|[0-9])"
)
_BRACKET_ELEMENT = re.compile(r"\[\d*([A-Za-z])")

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)


class Vocabulary:
    """Token <-> id map; line number in the vocab file is the id."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise VocabularyError(f"vocabulary must start with {RESERVED}")
        index = {}
        for i, tok in enumerate(tokens):
            if not tok:
                raise VocabularyError(f"empty token at line {i + 1}")
            if tok in index:
                raise VocabularyError(f"duplicate token {tok!r}")
            index[tok] = i
        self.tokens = tuple(tokens)
        self._index = index

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.rstrip("\n").split("\n"))

    @classmethod
    def default(cls) -> "Vocabulary":
        text = resources.files("gmnet").joinpath("data/vocab.txt").read_text(encoding="utf-8")
        return cls(text.rstrip("\n").split("\n"))

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    pad_id, unk_id, cls_id, sep_id = 0, 1, 2, 3

    def id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabularyError(f"id {idx} outside [0, {len(self.tokens)})")
        return self.tokens[idx]

    def __contains__(self, token):
        return token in self._index


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    conj: np.ndarray
    mask: np.ndarray
    tokens: tuple

    def __post_init__(self):
        n = len(self.ids)
        if len(self.conj) != n or len(self.mask) != n or len(self.tokens) != n:
            raise ContractViolation("ids, conj, mask and tokens must have equal length")
        if np.any(self.conj[~self.mask] != 0):
            raise ContractViolation("padding positions must carry conj = 0")

    def __len__(self):
        return len(self.ids)


def split_smiles(smiles: str) -> list[str]:
    """Split into tokens; unmatched characters become single-char tokens."""
    out = []
    pos = 0
    for m in SMILES_PATTERN.finditer(smiles):
        out.extend(smiles[pos : m.start()])
        out.append(m.group(0))
        pos = m.end()
    out.extend(smiles[pos:])
    return out


def is_aromatic_token(tok: str) -> bool:
    if tok in ("b", "c", "n", "o", "s", "p"):
        return True
    if tok.startswith("[") and tok.endswith("]"):
        m = _BRACKET_ELEMENT.match(tok)
        return bool(m) and m.group(1).islower()
    return False


def conjugation_flags(tokens) -> np.ndarray:
    """1 for aromatic atom tokens, 0 for everything else (including specials)."""
    toks = tokens.tokens if isinstance(tokens, TokenSequence) else tokens
    flags = np.array([1 if is_aromatic_token(t) else 0 for t in toks], dtype=np.int64)
    if isinstance(tokens, TokenSequence):
        flags[~tokens.mask] = 0
    return flags


def tokenize(smiles: str, vocab: Vocabulary | None = None, add_special: bool = True, flags=None) -> TokenSequence:
    """Tokenise one SMILES string.

    ``flags`` optionally overrides the heuristic with externally computed
    per-content-token flags.
    """
    vocab = vocab or Vocabulary.default()
    if not smiles:
        raise SequenceLengthError("empty SMILES string")
    if len(smiles) > MAX_SMILES_CHARS:
        raise SequenceLengthError(f"SMILES longer than {MAX_SMILES_CHARS} characters")
    content = split_smiles(smiles)
    if flags is None:
        cflags = conjugation_flags(content)
    else:
        cflags = np.asarray(flags, dtype=np.int64)
        if cflags.shape != (len(content),):
            raise ContractViolation(f"expected {len(content)} flags, got {cflags.size}")
        if np.any((cflags != 0) & (cflags != 1)):
            raise ContractViolation("flags must be 0 or 1")
    toks = [CLS] + content + [SEP] if add_special else content
    conj = np.concatenate([[0], cflags, [0]]) if add_special else cflags
    ids = np.array([vocab.id(t) for t in toks], dtype=np.int64)
    return TokenSequence(ids=ids, conj=conj.astype(np.int64), mask=np.ones(len(toks), dtype=bool), tokens=tuple(toks))


def detokenize(seq) -> str:
    toks = seq.tokens if isinstance(seq, TokenSequence) else seq
    return "".join(t for t in toks if t not in RESERVED)


def pad_batch(seqs, vocab: Vocabulary | None = None, length: int | None = None):
    """Stack sequences into (B, T) arrays padded with the pad id."""
    pad_id = (vocab or Vocabulary).pad_id
    length = length or max(len(s) for s in seqs)
    b = len(seqs)
    ids = np.full((b, length), pad_id, dtype=np.int64)
    conj = np.zeros((b, length), dtype=np.int64)
    mask = np.zeros((b, length), dtype=bool)
    for i, s in enumerate(seqs):
        if len(s) > length:
            raise SequenceLengthError(f"sequence {i} longer than pad length {length}")
        ids[i, : len(s)] = s.ids
        conj[i, : len(s)] = s.conj
        mask[i, : len(s)] = s.mask
    return ids, conj, mask


def read_flags_file(path) -> list[list[int]]:
    """One line per molecule, whitespace-separated 0/1 per content token."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        try:
            row = [int(p) for p in parts]
        except ValueError:
            raise ContractViolation(f"flags file line {lineno}: non-integer entry") from None
        if any(v not in (0, 1) for v in row):
            raise ContractViolation(f"flags file line {lineno}: entries must be 0 or 1")
        rows.append(row)
    return rows
