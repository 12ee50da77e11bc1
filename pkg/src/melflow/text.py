"""Text normalization, tokenization, and the pronouncing-lexicon path.

Text is lowercased and whitespace-collapsed; punctuation marks become
individual tokens and word boundaries keep an explicit space token.  With a
lexicon, in-vocabulary words are swapped for their phoneme sequence with
probability ``p_arpabet`` (default 1.0 at inference; training pipelines pass
0.5 so both encodings are seen), falling back to character tokens otherwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_SYMBOL = "<pad>"
SPACE_SYMBOL = " "
PUNCTUATION = ".,!?;:'\"-()"
_BASE_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


class TokenizeError(ValueError):
    pass


class Vocabulary:
    """Symbol <-> id table shared between tokenizer and model checkpoints."""

    def __init__(self, symbols: list[str]):
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary contains duplicate symbols")
        self.symbols = list(symbols)
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: str) -> bool:
        return symbol in self.index

    def id_of(self, symbol: str) -> int:
        return self.index[symbol]

    @staticmethod
    def build(lexicon: "Lexicon | None" = None) -> "Vocabulary":
        symbols = [PAD_SYMBOL, SPACE_SYMBOL] + list(_BASE_CHARS) + list(PUNCTUATION)
        if lexicon is not None:
            phones = sorted({p for phones in lexicon.entries.values() for p in phones})
            symbols += [p for p in phones if p not in symbols]
        return Vocabulary(symbols)


@dataclass
class Lexicon:
    """Word -> phoneme-sequence mapping (one ``WORD  PH ON EMES`` per line)."""

    entries: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @staticmethod
    def load(path) -> "Lexicon":
        entries = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith(";"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise TokenizeError(f"{path}:{lineno}: lexicon line needs a word and phonemes")
            entries[parts[0].lower()] = tuple(parts[1:])
        return Lexicon(entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> tuple[str, ...]:
        return self.entries[word]


@dataclass
class TokenSequence:
    """Encoded text: symbol ids into a vocabulary, plus the speaker id."""

    ids: np.ndarray
    speaker_id: int
    text: str

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.size == 0:
            raise TokenizeError("token sequence is empty")

    def __len__(self) -> int:
        return int(self.ids.size)


def normalize_text(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip()


def _split_units(text: str) -> list[str]:
    """Split into words, punctuation marks, and single spaces."""
    units: list[str] = []
    word = ""
    for ch in text:
        if ch == " ":
            if word:
                units.append(word)
                word = ""
            if units and units[-1] != SPACE_SYMBOL:
                units.append(SPACE_SYMBOL)
        elif ch in PUNCTUATION:
            if word:
                units.append(word)
                word = ""
            units.append(ch)
        else:
            word += ch
    if word:
        units.append(word)
    while units and units[-1] == SPACE_SYMBOL:
        units.pop()
    return units


def tokenize(
    text: str,
    vocab: Vocabulary,
    lexicon: Lexicon | None = None,
    p_arpabet: float = 1.0,
    rng: np.random.Generator | None = None,
    speaker_id: int = 0,
) -> TokenSequence:
    """Encode text as symbol ids.

    Words found in the lexicon become phoneme tokens with probability
    ``p_arpabet`` (deterministic at 0 or 1), otherwise character tokens.
    Characters outside the vocabulary are dropped.
    """
    normalized = normalize_text(text)
    if not normalized:
        raise TokenizeError("text is empty after normalization")
    symbols: list[str] = []
    for unit in _split_units(normalized):
        if unit == SPACE_SYMBOL or unit in PUNCTUATION:
            symbols.append(unit)
            continue
        use_phones = False
        if lexicon is not None and unit in lexicon and p_arpabet > 0:
            if p_arpabet >= 1.0:
                use_phones = True
            elif rng is not None:
                use_phones = bool(rng.random() < p_arpabet)
        if use_phones and all(p in vocab for p in lexicon[unit]):
            symbols.extend(lexicon[unit])
        else:
            symbols.extend(ch for ch in unit)
    ids = [vocab.id_of(s) for s in symbols if s in vocab]
    if not ids:
        raise TokenizeError(f"no tokenizable symbols in {text!r}")
    return TokenSequence(np.asarray(ids, dtype=np.int64), speaker_id, text)
