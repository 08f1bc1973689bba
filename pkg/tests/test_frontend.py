import numpy as np
import pytest

from gmnet.errors import ContractViolation, SequenceLengthError, VocabularyError
from gmnet.frontend import (
    Vocabulary,
    conjugation_flags,
    detokenize,
    pad_batch,
    read_flags_file,
    split_smiles,
    tokenize,
)


@pytest.fixture(scope="module")
def vocab():
    return Vocabulary.default()


def test_default_vocabulary(vocab):
    assert vocab.size == 591
    assert vocab.tokens[:4] == ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
    for tok in ("c", "C", "1", "(", "O", "[nH]", "Cl", "Br", "%10"):
        assert tok in vocab


def test_phenol_split():
    assert split_smiles("c1ccc(O)cc1") == ["c", "1", "c", "c", "c", "(", "O", ")", "c", "c", "1"]


@pytest.mark.parametrize("smiles,expected", [
    ("CC", ["C", "C"]),
    ("[nH]", ["[nH]"]),
    ("ClCBr", ["Cl", "C", "Br"]),
    ("C%12C", ["C", "%12", "C"]),
    ("C=C#N", ["C", "=", "C", "#", "N"]),
    ("[C@@H](O)F", ["[C@@H]", "(", "O", ")", "F"]),
])
def test_split(smiles, expected):
    assert split_smiles(smiles) == expected


def test_split_round_trip_with_unmatched_characters():
    s = "C!c1ccccc1 Q"
    assert "".join(split_smiles(s)) == s


def test_flags():
    assert conjugation_flags(["C", "C"]).tolist() == [0, 0]
    assert conjugation_flags(["c", "c"]).tolist() == [1, 1]
    flags = conjugation_flags(split_smiles("c1ccc(O)cc1"))
    assert flags.tolist() == [1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0]
    assert conjugation_flags(["[nH]", "[NH4+]", "[13c]"]).tolist() == [1, 0, 1]


def test_tokenize_adds_specials(vocab):
    seq = tokenize("c1ccc(O)cc1", vocab)
    assert len(seq) == 13
    assert seq.tokens[0] == "[CLS]" and seq.tokens[-1] == "[SEP]"
    assert seq.conj[0] == 0 and seq.conj[-1] == 0
    assert seq.conj.sum() == 6
    assert detokenize(seq) == "c1ccc(O)cc1"
    bare = tokenize("CC", vocab, add_special=False)
    assert bare.tokens == ("C", "C") and bare.conj.tolist() == [0, 0]


def test_unknown_tokens_map_to_unk(vocab):
    seq = tokenize("C!C", vocab, add_special=False)
    assert seq.ids.tolist()[1] == vocab.unk_id


def test_external_flags(vocab):
    seq = tokenize("CC", vocab, flags=[1, 0])
    assert seq.conj.tolist() == [0, 1, 0, 0]
    with pytest.raises(ContractViolation):
        tokenize("CC", vocab, flags=[1])
    with pytest.raises(ContractViolation):
        tokenize("CC", vocab, flags=[1, 2])


def test_length_limits(vocab):
    with pytest.raises(SequenceLengthError):
        tokenize("", vocab)
    with pytest.raises(SequenceLengthError):
        tokenize("C" * 201, vocab)
    assert len(tokenize("C" * 200, vocab)) == 202


def test_pad_batch(vocab):
    ids, conj, mask = pad_batch([tokenize("CC", vocab), tokenize("c1ccccc1", vocab)], vocab)
    assert ids.shape == (2, 10)
    assert mask.sum(axis=1).tolist() == [4, 10]
    assert np.all(ids[0, 4:] == vocab.pad_id) and np.all(conj[0, 4:] == 0)
    with pytest.raises(SequenceLengthError):
        pad_batch([tokenize("CCCC", vocab)], vocab, length=3)


def test_vocabulary_validation(tmp_path):
    with pytest.raises(VocabularyError):
        Vocabulary(["C", "[PAD]", "[UNK]", "[CLS]", "[SEP]"])
    with pytest.raises(VocabularyError):
        Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "C", "C"])
    path = tmp_path / "v.txt"
    path.write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\nC\nc\n", encoding="utf-8")
    v = Vocabulary.from_file(path)
    assert v.size == 6 and v.id("c") == 5 and v.id("N") == v.unk_id
    with pytest.raises(VocabularyError):
        v.token(6)


def test_flags_file(tmp_path):
    path = tmp_path / "flags.txt"
    path.write_text("1 0 1\n0 0\n", encoding="utf-8")
    assert read_flags_file(path) == [[1, 0, 1], [0, 0]]
    path.write_text("1 x\n", encoding="utf-8")
    with pytest.raises(ContractViolation):
        read_flags_file(path)
    path.write_text("1 3\n", encoding="utf-8")
    with pytest.raises(ContractViolation):
        read_flags_file(path)
