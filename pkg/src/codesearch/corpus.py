"""Bimodal (docstring, code) corpus handling.

Covers the data side of the search engine: a deterministic rule-based
tokenizer for natural language and code, vocabulary construction, JSONL
ingestion, train/dev/test/candidate splits, minibatch streams with in-batch
negatives, and a synthetic corpus generator used for desk-scale experiments.

Datasets are immutable after load; all randomized operations are
deterministic under an explicit seed.
"""

from __future__ import annotations

import hashlib
import json
import re
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class CorpusError(Exception):
    """Raised for malformed corpora, vocabularies or dataset files."""


class TokenizationError(CorpusError):
    """Raised when a text yields no usable tokens (caller drops the example)."""


class Mode(str, Enum):
    """Input modes understood by the tokenizer and the encoder."""

    NL = "nl"
    PL = "pl"
    PAIR = "pair"


# Reserved vocabulary slots. Ids are fixed: PAD=0, UNK=1, CLS=2, SEP=3,
# then one marker token per input mode.
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
CLS_TOKEN = "<cls>"
SEP_TOKEN = "<sep>"
MODE_NL_TOKEN = "<mode_nl>"
MODE_PL_TOKEN = "<mode_pl>"
MODE_PAIR_TOKEN = "<mode_pair>"

RESERVED_TOKENS = (
    PAD_TOKEN,
    UNK_TOKEN,
    CLS_TOKEN,
    SEP_TOKEN,
    MODE_NL_TOKEN,
    MODE_PL_TOKEN,
    MODE_PAIR_TOKEN,
)

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3

DEFAULT_MAX_NL_LEN = 64
DEFAULT_MAX_PL_LEN = 192

_RUN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
# Camel-case pieces: acronym runs ("HTTP" in "HTTPServer"), capitalized
# words, and everything else (lowercase/digit/non-ascii runs).
_CAMEL_RE = re.compile(r"[A-Z]+(?![a-z0-9])|[A-Z][a-z0-9]*|[^A-Z_]+")


def _split_identifier(run: str) -> list[str]:
    parts: list[str] = []
    for piece in run.split("_"):
        if not piece:
            continue
        found = _CAMEL_RE.findall(piece)
        parts.extend(found if found else [piece])
    return parts


def split_text(text: str, mode: Mode) -> list[str]:
    """Split raw text into token strings.

    Word runs are split on snake_case and camelCase boundaries; punctuation
    characters become single-character tokens. NL text is lowercased after
    splitting, PL text keeps its case.
    """
    if mode not in (Mode.NL, Mode.PL):
        raise ValueError(f"unsupported tokenization mode: {mode!r}")
    if not text or not text.strip():
        raise TokenizationError("empty input text")
    tokens: list[str] = []
    for run in _RUN_RE.findall(text):
        if run[0].isalnum() or run[0] == "_" or run[0].isalpha():
            tokens.extend(_split_identifier(run))
        else:
            tokens.append(run)
    if not tokens:
        raise TokenizationError("text produced no tokens")
    if mode is Mode.NL:
        tokens = [t.lower() for t in tokens]
    return tokens


class Vocabulary:
    """Dense token -> id map with fixed reserved slots at the front."""

    FORMAT_VERSION = 1

    def __init__(self, tokens: Sequence[str]):
        self._tokens: tuple[str, ...] = RESERVED_TOKENS + tuple(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def to_dict(self) -> dict:
        return {
            "format_version": self.FORMAT_VERSION,
            "reserved": {t: i for i, t in enumerate(RESERVED_TOKENS)},
            "tokens": list(self._tokens[len(RESERVED_TOKENS):]),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        version = data.get("format_version")
        if version != cls.FORMAT_VERSION:
            raise CorpusError(f"unsupported vocabulary format version: {version!r}")
        reserved = data.get("reserved", {})
        expected = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        if reserved != expected:
            raise CorpusError("vocabulary reserved-token header does not match")
        return cls(data["tokens"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RawPair:
    """One (docstring, code) record as read from a corpus file."""

    id: str
    docstring: str
    code: str
    lang: str | None = None


@dataclass(frozen=True)
class BimodalPair:
    """A tokenized (NL, PL) example."""

    id: str
    nl_raw: str
    pl_raw: str
    nl_tokens: tuple[int, ...]
    pl_tokens: tuple[int, ...]


def build_vocab(pairs: Iterable[RawPair], min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from raw pairs.

    Contains every token whose corpus frequency is >= ``min_count``. Ids are
    deterministic: reserved tokens first, then by descending frequency with
    lexicographic tie-break.
    """
    pairs = list(pairs)
    if not pairs:
        raise CorpusError("cannot build a vocabulary from zero pairs")
    counts: Counter[str] = Counter()
    for pair in pairs:
        counts.update(split_text(pair.docstring, Mode.NL))
        counts.update(split_text(pair.code, Mode.PL))
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED_TOKENS]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass(frozen=True)
class TokenizerConfig:
    max_nl_len: int = DEFAULT_MAX_NL_LEN
    max_pl_len: int = DEFAULT_MAX_PL_LEN

    def max_len(self, mode: Mode) -> int:
        return self.max_nl_len if mode is Mode.NL else self.max_pl_len


class Tokenizer:
    """Maps raw text to truncated token-id sequences under a vocabulary."""

    def __init__(self, vocab: Vocabulary, config: TokenizerConfig | None = None):
        self.vocab = vocab
        self.config = config or TokenizerConfig()

    def tokenize(self, text: str, mode: Mode) -> list[int]:
        words = split_text(text, mode)
        ids = [self.vocab.id(w) for w in words]
        return ids[: self.config.max_len(mode)]

    def encode_pair(self, raw: RawPair) -> BimodalPair:
        return BimodalPair(
            id=raw.id,
            nl_raw=raw.docstring,
            pl_raw=raw.code,
            nl_tokens=tuple(self.tokenize(raw.docstring, Mode.NL)),
            pl_tokens=tuple(self.tokenize(raw.code, Mode.PL)),
        )


@dataclass(frozen=True)
class LineError:
    line_no: int
    message: str


@dataclass
class LoadResult:
    records: list[RawPair]
    errors: list[LineError]


_REQUIRED_KEYS = ("id", "docstring", "code")


def load_jsonl(path: str | Path) -> LoadResult:
    """Load a JSONL corpus file (one object per line).

    Returns records in file order. Lines that fail to parse or miss a
    required key are reported with their line number; the rest still load.
    An unreadable file raises OSError.
    """
    records: list[RawPair] = []
    errors: list[LineError] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(LineError(line_no, f"invalid JSON: {exc.msg}"))
                continue
            if not isinstance(obj, dict):
                errors.append(LineError(line_no, "line is not a JSON object"))
                continue
            missing = [k for k in _REQUIRED_KEYS if not isinstance(obj.get(k), str)]
            if missing:
                errors.append(
                    LineError(line_no, f"missing or non-string fields: {', '.join(missing)}")
                )
                continue
            lang = obj.get("lang")
            records.append(
                RawPair(
                    id=obj["id"],
                    docstring=obj["docstring"],
                    code=obj["code"],
                    lang=lang if isinstance(lang, str) else None,
                )
            )
    return LoadResult(records=records, errors=errors)


def write_jsonl(records: Iterable[RawPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for rec in records:
            obj = {"id": rec.id, "docstring": rec.docstring, "code": rec.code}
            if rec.lang is not None:
                obj["lang"] = rec.lang
            handle.write(json.dumps(obj) + "\n")


@dataclass
class DatasetSplit:
    """Train/dev/test splits plus the retrieval candidate pool.

    Every dev/test query's gold code must be present in ``candidates``
    (the retrieval metrics are undefined otherwise); train/dev/test are
    pairwise disjoint by id.
    """

    train: list[BimodalPair] = field(default_factory=list)
    dev: list[BimodalPair] = field(default_factory=list)
    test: list[BimodalPair] = field(default_factory=list)
    candidates: list[BimodalPair] = field(default_factory=list)

    FORMAT_VERSION = 1

    def validate(self) -> None:
        for name in ("train", "dev", "test", "candidates"):
            pairs = getattr(self, name)
            ids = [p.id for p in pairs]
            if len(set(ids)) != len(ids):
                raise CorpusError(f"duplicate ids within split {name!r}")
        train_ids = {p.id for p in self.train}
        dev_ids = {p.id for p in self.dev}
        test_ids = {p.id for p in self.test}
        if train_ids & dev_ids or train_ids & test_ids or dev_ids & test_ids:
            raise CorpusError("train/dev/test splits are not disjoint by id")
        pool = {p.id for p in self.candidates}
        missing = (dev_ids | test_ids) - pool
        if missing:
            sample = sorted(missing)[:5]
            raise CorpusError(
                f"{len(missing)} dev/test gold ids missing from candidate pool "
                f"(e.g. {sample})"
            )

    def corpus_hash(self) -> str:
        """Hash of the candidate pool, used as index provenance."""
        digest = hashlib.sha256()
        for pair in self.candidates:
            digest.update(pair.id.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(np.asarray(pair.pl_tokens, dtype=np.int64).tobytes())
            digest.update(b"\x01")
        return digest.hexdigest()

    @staticmethod
    def _pair_to_obj(pair: BimodalPair) -> dict:
        return {
            "id": pair.id,
            "nl_raw": pair.nl_raw,
            "pl_raw": pair.pl_raw,
            "nl_tokens": list(pair.nl_tokens),
            "pl_tokens": list(pair.pl_tokens),
        }

    @staticmethod
    def _pair_from_obj(obj: dict) -> BimodalPair:
        return BimodalPair(
            id=obj["id"],
            nl_raw=obj["nl_raw"],
            pl_raw=obj["pl_raw"],
            nl_tokens=tuple(obj["nl_tokens"]),
            pl_tokens=tuple(obj["pl_tokens"]),
        )

    def save(self, path: str | Path, vocab: Vocabulary, tokenizer_config: TokenizerConfig) -> None:
        doc = {
            "format_version": self.FORMAT_VERSION,
            "tokenizer": {
                "max_nl_len": tokenizer_config.max_nl_len,
                "max_pl_len": tokenizer_config.max_pl_len,
            },
            "vocab": vocab.to_dict(),
            "splits": {
                name: [self._pair_to_obj(p) for p in getattr(self, name)]
                for name in ("train", "dev", "test", "candidates")
            },
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> tuple["DatasetSplit", Vocabulary, TokenizerConfig]:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        version = doc.get("format_version")
        if version != cls.FORMAT_VERSION:
            raise CorpusError(f"unsupported dataset format version: {version!r}")
        vocab = Vocabulary.from_dict(doc["vocab"])
        tok_cfg = TokenizerConfig(
            max_nl_len=doc["tokenizer"]["max_nl_len"],
            max_pl_len=doc["tokenizer"]["max_pl_len"],
        )
        split = cls(
            **{
                name: [cls._pair_from_obj(o) for o in doc["splits"][name]]
                for name in ("train", "dev", "test", "candidates")
            }
        )
        split.validate()
        return split, vocab, tok_cfg


def split_dataset(
    pairs: Sequence[BimodalPair],
    n_dev: int,
    n_test: int,
    pool_size: int | None = None,
    seed: int = 0,
) -> DatasetSplit:
    """Partition pairs into train/dev/test and build the candidate pool.

    The pool always contains every dev/test gold; if ``pool_size`` exceeds
    that, it is padded with codes drawn from the remaining pairs (those
    pairs stay in train: the pool is a set of code snippets, not a split).
    """
    if n_dev + n_test > len(pairs):
        raise CorpusError("not enough pairs for the requested dev/test sizes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    dev = [pairs[i] for i in order[:n_dev]]
    test = [pairs[i] for i in order[n_dev : n_dev + n_test]]
    train = [pairs[i] for i in order[n_dev + n_test :]]
    candidates = list(dev) + list(test)
    if pool_size is not None:
        if pool_size < len(candidates):
            raise CorpusError(
                f"pool_size {pool_size} cannot hold the {len(candidates)} dev/test golds"
            )
        extra = pool_size - len(candidates)
        candidates = candidates + train[:extra]
    split = DatasetSplit(train=train, dev=dev, test=test, candidates=candidates)
    split.validate()
    return split


@dataclass(frozen=True)
class TrainBatch:
    """A minibatch of positive pairs plus an in-batch negative assignment.

    ``negative_assignment[i] = j`` pairs NL i with PL j (j != i) to form the
    mismatched example for the classifier objective.
    """

    pairs: tuple[BimodalPair, ...]
    negative_assignment: tuple[int, ...]

    def __post_init__(self):
        n = len(self.pairs)
        if n < 2:
            raise CorpusError("a training batch needs at least 2 pairs")
        for i, j in enumerate(self.negative_assignment):
            if i == j or not (0 <= j < n):
                raise CorpusError("invalid negative assignment")


def sample_negative_assignment(n: int, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniform j != i per position (marginals of a random derangement)."""
    js = rng.integers(0, n - 1, size=n)
    js = js + (js >= np.arange(n))
    return tuple(int(j) for j in js)


def make_batches(
    pairs: Sequence[BimodalPair], batch_size: int, seed: int
) -> Iterator[TrainBatch]:
    """Deterministically shuffled minibatch stream.

    The final short batch is dropped only when its size falls below 2 (both
    training losses need at least one in-batch negative).
    """
    if batch_size < 2:
        raise CorpusError("batch_size must be >= 2 for in-batch negatives")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        chunk = order[start : start + batch_size]
        if len(chunk) < 2:
            break
        batch_pairs = tuple(pairs[i] for i in chunk)
        yield TrainBatch(
            pairs=batch_pairs,
            negative_assignment=sample_negative_assignment(len(chunk), rng),
        )


# --- synthetic corpus -------------------------------------------------------

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne",
    "pa", "qui", "ro", "su", "ta", "ve", "wi", "xo", "yu", "za",
)

_VERBS = (
    "load", "parse", "fetch", "merge", "sort", "filter", "encode", "decode",
    "validate", "convert", "split", "join", "update", "delete", "create",
    "read", "write", "send", "receive", "cache", "hash", "format", "scan",
    "count",
)

_NOUNS = (
    "file", "record", "buffer", "string", "list", "table", "node", "tree",
    "graph", "queue", "stack", "entry", "array", "token", "stream", "index",
    "batch", "frame", "row", "column", "event", "message", "packet", "config",
)

_FILLERS = (
    "quickly", "safely", "lazily", "eagerly", "given", "provided", "input",
    "output", "result", "target", "source", "optional", "default", "current",
    "pending", "remote", "local", "cached", "raw", "clean", "shared",
    "internal", "external", "primary", "nested", "sparse", "dense", "stale",
    "fresh", "bound", "typed", "final",
)

_NL_TEMPLATES = (
    "{verb} the {concept} {noun}",
    "{verb} a {concept} {noun} for the caller",
    "helper to {verb} every {concept} {noun}",
    "{verb} the {concept} {noun} and return it",
)

_PL_TEMPLATES = (
    "def {verb}_{concept}_{noun}(value):\n    return {concept}_store.{verb}({noun}, value)",
    "def {verb}_{concept}_{noun}(items):\n    out = [{concept}.{verb}(x, {noun}) for x in items]\n    return out",
    "def {verb}_{concept}_{noun}(arg):\n    handle = {concept}_registry.open({noun})\n    return handle.{verb}(arg)",
)


def concept_words(n: int) -> list[str]:
    """The first n synthetic concept keywords (two-syllable coinages)."""
    if n > len(_SYLLABLES) ** 2:
        raise CorpusError(f"at most {len(_SYLLABLES) ** 2} concepts supported")
    words = []
    for i in range(n):
        words.append(_SYLLABLES[i // len(_SYLLABLES)] + _SYLLABLES[i % len(_SYLLABLES)])
    return words


def synth_corpus(
    n_pairs: int,
    n_concepts: int,
    distractor_rate: float = 0.3,
    seed: int = 0,
) -> list[RawPair]:
    """Generate a templated docstring/code corpus.

    Each pair draws a concept keyword that appears verbatim on both sides,
    plus a verb and a noun shared across sides, so gold retrieval is solvable
    from lexical overlap. Distractor tokens are mixed in at
    ``distractor_rate`` without ever displacing the concept keyword.
    Deterministic under ``seed``.
    """
    if n_concepts < 2:
        raise CorpusError("need at least 2 concepts")
    if not 0.0 <= distractor_rate <= 1.0:
        raise CorpusError("distractor_rate must be in [0, 1]")
    concepts = concept_words(n_concepts)
    rng = random.Random(seed)
    records: list[RawPair] = []
    for i in range(n_pairs):
        concept = concepts[i % n_concepts]
        verb = rng.choice(_VERBS)
        noun = rng.choice(_NOUNS)
        nl = rng.choice(_NL_TEMPLATES).format(verb=verb, concept=concept, noun=noun)
        if rng.random() < distractor_rate:
            extras = rng.sample(_FILLERS, rng.randint(1, 3))
            nl = nl + " " + " ".join(extras)
        pl = rng.choice(_PL_TEMPLATES).format(verb=verb, concept=concept, noun=noun)
        if rng.random() < distractor_rate:
            extra = rng.choice(_FILLERS)
            pl = pl + f"\n# uses {extra} path"
        records.append(RawPair(id=f"s{i:05d}", docstring=nl, code=pl, lang="python"))
    return records
