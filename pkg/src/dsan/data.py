"""Tokenisation, vocabulary, frozen embeddings, NLI corpus parsing and batching."""
from __future__ import annotations

import hashlib
import json
import logging
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
LABELS = ("entailment", "contradiction", "neutral")
LABEL_IDS = {name: i for i, name in enumerate(LABELS)}


class DataFormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class EmptySentenceError(DataFormatError):
    pass


def _is_punct(ch: str) -> bool:
    return ch in string.punctuation or unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Whitespace split, then peel leading/trailing punctuation off as
    one-character tokens. Case is kept; inner punctuation ("don't") stays.
    """
    tokens: list[str] = []
    for chunk in text.split():
        i, j = 0, len(chunk)
        while i < j and _is_punct(chunk[i]):
            i += 1
        while j > i and _is_punct(chunk[j - 1]):
            j -= 1
        tokens.extend(chunk[:i])
        if i < j:
            tokens.append(chunk[i:j])
        tokens.extend(chunk[j:])
    if not tokens:
        raise EmptySentenceError(f"no tokens in {text!r}")
    return tokens


class Vocabulary:
    """Token <-> id map with PAD = 0 and UNK = 1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]]) -> "Vocabulary":
        vocab = cls()
        for sent in sentences:
            for tok in sent:
                vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def corpus_tokens(self) -> list[str]:
        return self.itos[2:]


@dataclass
class EmbeddingTable:
    """Frozen ``N x d_e`` matrix; row ``i`` embeds vocabulary id ``i``."""

    matrix: np.ndarray
    found: np.ndarray | None = None
    frozen: bool = True

    def __post_init__(self):
        self.matrix = np.array(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got {self.matrix.shape}")
        if np.any(self.matrix[PAD] != 0.0):
            raise ValueError("PAD row of the embedding matrix must be zero")
        if self.frozen:
            self.matrix.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def lookup(self, ids) -> np.ndarray:
        return self.matrix[np.asarray(ids)]

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()


def load_embeddings(path, vocab: Vocabulary, strict: bool = True) -> EmbeddingTable:
    """Read a ``token v1 ... vd`` text file for the tokens in ``vocab``.

    Vocabulary tokens missing from the file keep an all-zero row, exactly
    like UNK. The width is taken from the first line; a line of another
    width is a format error (or skipped with a warning if ``strict`` is off).
    """
    path = Path(path)
    matrix = None
    found = np.zeros(len(vocab), dtype=bool)
    dim = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\r\n ").split(" ")
            if dim is None:
                dim = len(parts) - 1
                if dim < 1:
                    raise DataFormatError("first line has no vector values", path, lineno)
                matrix = np.zeros((len(vocab), dim))
            if len(parts) - 1 != dim:
                msg = f"expected {dim} values, found {len(parts) - 1}"
                if strict:
                    raise DataFormatError(msg, path, lineno)
                log.warning("%s:%d: %s; line skipped", path, lineno, msg)
                continue
            idx = vocab.stoi.get(parts[0])
            if idx is None or found[idx]:
                continue
            try:
                matrix[idx] = np.array(parts[1:], dtype=np.float64)
            except ValueError:
                raise DataFormatError(f"non-numeric vector for {parts[0]!r}", path, lineno) from None
            found[idx] = True
    if dim is None:
        raise DataFormatError("embedding file is empty", path)
    log.info("embeddings: %d/%d vocabulary tokens found (d=%d)", found.sum(), len(vocab) - 2, dim)
    return EmbeddingTable(matrix, found=found)


@dataclass(frozen=True)
class NLIExample:
    """One premise/hypothesis pair; sequences hold tokens or ids."""

    premise: tuple
    hypothesis: tuple
    label: int

    def __post_init__(self):
        if not self.premise or not self.hypothesis:
            raise EmptySentenceError("premise and hypothesis must be non-empty")
        if self.label not in (0, 1, 2):
            raise ValueError(f"label {self.label} out of range")


class Corpus(list):
    """Examples plus the bookkeeping of what was dropped while parsing."""

    def __init__(self, examples=(), lines: int = 0, no_consensus: int = 0, empty: int = 0):
        super().__init__(examples)
        self.lines = lines
        self.no_consensus = no_consensus
        self.empty = empty

    @property
    def retained(self) -> int:
        """Pairs with a gold label (blank sentences included)."""
        return self.lines - self.no_consensus


def parse_nli_jsonl(path) -> Corpus:
    """Parse SNLI/MultiNLI JSON-lines. Gold label ``-`` marks annotator
    disagreement and is dropped; pairs with a sentence that tokenises to
    nothing are dropped and counted separately.
    """
    path = Path(path)
    corpus = Corpus()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            corpus.lines += 1
            try:
                row = json.loads(line)
                label = row["gold_label"]
                s1, s2 = row["sentence1"], row["sentence2"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"malformed record: {exc}", path, lineno) from None
            if label == "-":
                corpus.no_consensus += 1
                continue
            if label not in LABEL_IDS:
                raise DataFormatError(f"unknown label {label!r}", path, lineno)
            try:
                premise, hypothesis = tokenize(s1), tokenize(s2)
            except EmptySentenceError:
                corpus.empty += 1
                log.warning("%s:%d: empty sentence, pair skipped", path, lineno)
                continue
            corpus.append(NLIExample(tuple(premise), tuple(hypothesis), LABEL_IDS[label]))
    return corpus


def index_examples(examples: Iterable[NLIExample], vocab: Vocabulary) -> list[NLIExample]:
    return [NLIExample(tuple(vocab.encode(e.premise)), tuple(vocab.encode(e.hypothesis)), e.label)
            for e in examples]


@dataclass
class SentenceBatch:
    ids: np.ndarray
    lengths: np.ndarray
    pad_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.ids.ndim != 2 or self.lengths.shape != (self.ids.shape[0],):
            raise ValueError(f"ids {self.ids.shape} / lengths {self.lengths.shape} mismatch")
        if np.any(self.lengths < 1) or np.any(self.lengths > self.ids.shape[1]):
            raise ValueError("every sentence length must be in [1, padded width]")
        self.pad_mask = np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]
        if np.any(self.ids[~self.pad_mask] != PAD):
            raise ValueError("positions beyond a sentence's length must hold PAD")

    @classmethod
    def from_sequences(cls, seqs: Sequence[Sequence[int]], width: int | None = None) -> "SentenceBatch":
        lengths = [len(s) for s in seqs]
        width = max(lengths) if width is None else width
        ids = np.full((len(seqs), width), PAD, dtype=np.int64)
        for r, s in enumerate(seqs):
            ids[r, :len(s)] = s
        return cls(ids, lengths)

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


def make_batches(examples: Sequence[NLIExample], batch_size: int, shuffle: bool = False,
                 seed: int = 0) -> Iterator[tuple[SentenceBatch, SentenceBatch, np.ndarray]]:
    """Yield ``(premises, hypotheses, labels)``; each batch padded to its own max length."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(examples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        yield (SentenceBatch.from_sequences([e.premise for e in chunk]),
               SentenceBatch.from_sequences([e.hypothesis for e in chunk]),
               np.array([e.label for e in chunk], dtype=np.int64))


# ------------------------------------------------------------ synthetic data

_SUBJECTS = ("man", "woman", "dog", "child", "chef", "girl", "boy", "cat")
_VERBS = ("runs", "sleeps", "sings", "waits", "cooks", "reads", "jumps", "plays")
_PLACES = ("outside", "at home", "in a park", "near the market", "on a bus", "by the river")
_KEYWORDS = {0: ("certainly", "surely"), 1: ("never", "not"), 2: ("perhaps", "maybe")}


def synthetic_corpus(n: int = 32, seed: int = 0) -> list[NLIExample]:
    """Template pairs whose label is fixed by one keyword in the hypothesis."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        label = k % 3
        subj, verb = rng.choice(_SUBJECTS), rng.choice(_VERBS)
        place = rng.choice(_PLACES)
        kw = rng.choice(_KEYWORDS[label])
        premise = tokenize(f"A {subj} {verb} {place}.")
        if rng.random() < 0.5:
            hypothesis = tokenize(f"The {subj} {kw} {verb}.")
        else:
            hypothesis = tokenize(f"{kw} the {subj} {verb} {place}.")
        out.append(NLIExample(tuple(premise), tuple(hypothesis), label))
    return out


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0, scale: float = 1.0) -> EmbeddingTable:
    """Gaussian vectors for every corpus token; PAD and UNK stay zero."""
    rng = np.random.default_rng(seed)
    m = rng.normal(0.0, scale / np.sqrt(dim), size=(len(vocab), dim))
    m[PAD] = 0.0
    m[UNK] = 0.0
    return EmbeddingTable(m, found=np.r_[False, False, np.ones(len(vocab) - 2, dtype=bool)])
