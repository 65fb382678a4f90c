"""Uncased WordPiece tokenizer over a fixed vocabulary file.

The vocabulary is plain UTF-8 text, one token per line, line number = id.
Encoding records, per produced subword, the annotations needed by the
capitalization and token-length prediction tasks: whether the piece starts
a source word, whether that source word was capitalized, and the piece's
own character count (excluding the "##" continuation marker).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"

SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)

#: words longer than this are mapped straight to [UNK]
MAX_WORD_CHARS = 100


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class EncodedToken:
    id: int
    piece: str
    is_word_start: bool
    source_capitalized: bool
    source_char_length: int


class Vocabulary:
    """Immutable token <-> id mapping with the five special tokens."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(tokens)
        self.token_to_id: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in self.token_to_id:
                raise VocabError(f"duplicate token {tok!r} at lines "
                                 f"{self.token_to_id[tok]} and {i}")
            self.token_to_id[tok] = i
        for special in SPECIAL_TOKENS:
            if special not in self.token_to_id:
                raise VocabError(f"vocabulary is missing special token {special}")
        if self.token_to_id[PAD] != 0:
            raise VocabError(f"{PAD} must be the first vocabulary line, "
                             f"found at {self.token_to_id[PAD]}")
        self.pad_id = self.token_to_id[PAD]
        self.unk_id = self.token_to_id[UNK]
        self.cls_id = self.token_to_id[CLS]
        self.sep_id = self.token_to_id[SEP]
        self.mask_id = self.token_to_id[MASK]
        self.special_ids = frozenset(self.token_to_id[s] for s in SPECIAL_TOKENS)
        # piece character counts (## stripped), used as regression labels
        self.piece_char_lengths = np.array(
            [max(1, len(t[2:]) if t.startswith("##") else len(t))
             for t in tokens],
            dtype=np.int32,
        )
        # ids that may be sampled as "random vocab token" replacements
        self.sampleable_ids = np.array(
            [i for i in range(len(tokens)) if i not in self.special_ids],
            dtype=np.int64,
        )
        # canonical digest over the token list; corpus stores and trainers
        # use it to detect vocabulary mismatches
        self.content_hash = hashlib.sha256(
            "\n".join(self.id_to_token).encode("utf-8")).digest()

    def __len__(self) -> int:
        return len(self.id_to_token)

    def is_special(self, token_id: int) -> bool:
        return token_id in self.special_ids

    def random_regular_id(self, rng: np.random.Generator) -> int:
        """Uniform draw over non-special vocabulary ids."""
        if len(self.sampleable_ids) == 0:
            raise VocabError("vocabulary has no non-special tokens to sample")
        return int(self.sampleable_ids[rng.integers(0, len(self.sampleable_ids))])


def load_vocab(path) -> Vocabulary:
    """Load a one-token-per-line vocabulary file; line index = token id."""
    with open(path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh]
    while tokens and tokens[-1] == "":
        tokens.pop()
    if any(t == "" for t in tokens):
        raise VocabError(f"blank vocabulary line in {path}")
    return Vocabulary(tokens)


def _is_word_char(ch: str) -> bool:
    return ch.isalnum()


def basic_tokenize(text: str) -> list[str]:
    """Whitespace split plus punctuation isolation, casing preserved."""
    words: list[str] = []
    for chunk in text.split():
        current = []
        for ch in chunk:
            if _is_word_char(ch):
                current.append(ch)
            else:
                if current:
                    words.append("".join(current))
                    current = []
                words.append(ch)
        if current:
            words.append("".join(current))
    return words


def tokenize_word(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match-first WordPiece split of one lowercased word.

    The first piece is looked up bare, continuations with a "##" prefix.
    Words with no full decomposition (or longer than MAX_WORD_CHARS)
    collapse to a single [UNK].
    """
    if not word:
        return []
    if len(word) > MAX_WORD_CHARS:
        return [UNK]
    pieces: list[str] = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        found = None
        while end > start:
            candidate = word[start:end]
            if start > 0:
                candidate = "##" + candidate
            if candidate in vocab.token_to_id:
                found = candidate
                break
            end -= 1
        if found is None:
            return [UNK]
        pieces.append(found)
        start = end
    return pieces


def encode_sentence(text: str, vocab: Vocabulary) -> list[EncodedToken]:
    """Encode raw text to annotated WordPiece tokens.

    Capitalization is read before lowercasing and attached to the first
    subword of each source word only; continuations carry False.
    """
    encoded: list[EncodedToken] = []
    for word in basic_tokenize(text):
        capitalized = word[:1].isupper()
        pieces = tokenize_word(word.lower(), vocab)
        for k, piece in enumerate(pieces):
            if piece == UNK:
                char_len = len(UNK)
            elif piece.startswith("##"):
                char_len = len(piece) - 2
            else:
                char_len = len(piece)
            encoded.append(EncodedToken(
                id=vocab.token_to_id[piece],
                piece=piece,
                is_word_start=(k == 0),
                source_capitalized=capitalized and k == 0,
                source_char_length=max(1, char_len),
            ))
    return encoded


def encode_ids(text: str, vocab: Vocabulary) -> list[int]:
    return [tok.id for tok in encode_sentence(text, vocab)]


def decode(ids, vocab: Vocabulary) -> str:
    """Join pieces, stripping "##"; inverse of encode up to case/whitespace."""
    out: list[str] = []
    for token_id in ids:
        token_id = int(token_id)
        if not 0 <= token_id < len(vocab):
            raise VocabError(f"token id {token_id} out of range "
                             f"for vocabulary of {len(vocab)}")
        piece = vocab.id_to_token[token_id]
        if piece.startswith("##") and out:
            out[-1] = out[-1] + piece[2:]
        elif piece.startswith("##"):
            out.append(piece[2:])
        else:
            out.append(piece)
    return " ".join(out)
