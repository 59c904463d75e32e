"""Vocabulary, templated sequences and the verbalizer."""
from dataclasses import dataclass, field

PAD = 0
MASK = 1
LIT_IS = 2
LIT_DOT = 3
FIRST_HASHED = 4

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    """FNV-1a 64-bit hash over the UTF-8 bytes of text."""
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Vocab:
    """Hashed vocabulary of V ids; ids 0-3 are reserved."""
    size: int

    def __post_init__(self) -> None:
        if self.size <= FIRST_HASHED:
            raise ValueError(f"Vocab size must exceed {FIRST_HASHED}")

    def token_id(self, word: str) -> int:
        """Stable id of a lowercased word in [4, V)."""
        return FIRST_HASHED + fnv1a_64(word) % (self.size - FIRST_HASHED)


@dataclass(frozen=True)
class TemplatedSeq:
    """Text ids followed by the literal template "is [MASK] ."

    The m soft positions are prepended at forward time, so mask_index
    counts them.
    """
    token_ids: tuple[int, ...]
    mask_index: int
    prompt_len: int

    @property
    def text_len(self) -> int:
        return len(self.token_ids) - 3

    @property
    def total_len(self) -> int:
        return self.prompt_len + len(self.token_ids)


@dataclass(frozen=True)
class Verbalizer:
    """Per-class label words, resolved to token ids at construction."""
    words: tuple[tuple[str, ...], ...]
    vocab: Vocab
    word_ids: tuple[int, ...] = field(init=False)
    word_class: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.words) < 1:
            raise ValueError("Verbalizer needs at least one class")
        ids: list[int] = []
        classes: list[int] = []
        seen: set[str] = set()
        for c, class_words in enumerate(self.words):
            if not class_words:
                raise ValueError(f"Class {c} has no label word")
            for w in class_words:
                w = w.lower()
                if w in seen:
                    raise ValueError(f"Label word {w!r} used by more than one class")
                seen.add(w)
                ids.append(self.vocab.token_id(w))
                classes.append(c)
        object.__setattr__(self, "word_ids", tuple(ids))
        object.__setattr__(self, "word_class", tuple(classes))

    @classmethod
    def from_lists(cls, words: list[list[str]], vocab: Vocab) -> "Verbalizer":
        return cls(tuple(tuple(w) for w in words), vocab)

    @property
    def num_classes(self) -> int:
        return len(self.words)
