"""Case ingestion, Devanagari preprocessing, token statistics and splitting."""

from __future__ import annotations

import enum
import json
import logging
import re
import statistics
import unicodedata
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DANDA = "।"
DOUBLE_DANDA = "॥"

_URL_RE = re.compile(r"(?:https?://|ftp://|www\.)\S+", re.IGNORECASE)
_SPLIT_RE = re.compile(rf"[\s{DANDA}{DOUBLE_DANDA}]+")


class CorpusError(ValueError):
    """Raised for malformed corpus input."""


class Label(enum.IntEnum):
    DENIED = 0
    GRANTED = 1

    @classmethod
    def parse(cls, value: str) -> "Label":
        try:
            return {"denied": cls.DENIED, "granted": cls.GRANTED}[value.strip().lower()]
        except (KeyError, AttributeError):
            raise CorpusError(f"decision must be 'granted' or 'denied', got {value!r}") from None


class Partition(enum.Enum):
    FULL = "full"
    GRANTED_ONLY = "granted_only"
    DENIED_ONLY = "denied_only"

    def accepts(self, label: Label) -> bool:
        if self is Partition.FULL:
            return True
        if self is Partition.GRANTED_ONLY:
            return label == Label.GRANTED
        return label == Label.DENIED


@dataclass(frozen=True)
class CaseDocument:
    id: str
    facts: str
    label: Label
    district: str | None = None


@dataclass(frozen=True)
class TokenizedCase:
    id: str
    tokens: tuple[str, ...]
    label: Label

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CorpusStats:
    mean: float
    median: float
    min: int
    max: int
    partition: Partition


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)!r}")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def load_corpus(path, sample_n: int | None = None, seed: int = 0) -> list[CaseDocument]:
    """Read a JSON Lines corpus of cases.

    Each non-blank line must be an object with ``id``, ``facts`` and
    ``decision`` ("granted" or "denied"); ``district`` is optional. When
    ``sample_n`` is given, exactly that many records are drawn uniformly
    without replacement using ``seed`` and returned in file order.
    """
    path = Path(path)
    docs: list[CaseDocument] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            missing = [k for k in ("id", "facts", "decision") if k not in rec]
            if missing:
                raise CorpusError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            case_id, facts = rec["id"], rec["facts"]
            if not isinstance(case_id, str) or not case_id:
                raise CorpusError(f"{path}:{lineno}: id must be a non-empty string")
            if not isinstance(facts, str):
                raise CorpusError(f"{path}:{lineno}: facts must be a string")
            try:
                label = Label.parse(rec["decision"])
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if case_id in seen:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate id {case_id!r} (first seen on line {seen[case_id]})"
                )
            seen[case_id] = lineno
            district = rec.get("district")
            docs.append(CaseDocument(case_id, nfc(facts), label, district))

    if sample_n is not None:
        if sample_n < 0 or sample_n > len(docs):
            raise CorpusError(f"sample_n={sample_n} exceeds corpus size {len(docs)}")
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(docs), size=sample_n, replace=False))
        docs = [docs[i] for i in keep]
    return docs


def write_corpus(docs: Iterable[CaseDocument], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            rec = {"id": d.id, "facts": d.facts, "decision": d.label.name.lower()}
            if d.district is not None:
                rec["district"] = d.district
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_stopwords(path=None) -> frozenset[str]:
    """Newline-delimited stopword file; ``#`` lines are comments. ``None`` loads the bundled Hindi list."""
    if path is None:
        text = resources.files("bailfair.data").joinpath("stopwords_hi.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(nfc(line))
    return frozenset(words)


def _strip_punct(token: str) -> str:
    return "".join(ch for ch in token if not unicodedata.category(ch).startswith("P"))


def tokenize(text: str, stopwords: frozenset[str] | set[str] = frozenset()) -> list[str]:
    text = _URL_RE.sub(" ", nfc(text))
    out = []
    for raw in _SPLIT_RE.split(text):
        tok = nfc(_strip_punct(raw))
        if tok and tok not in stopwords:
            out.append(tok)
    return out


def preprocess(doc: CaseDocument, stopwords: frozenset[str] | set[str]) -> TokenizedCase:
    """URLs out first, then split on whitespace/danda, strip punctuation, drop stopwords."""
    return TokenizedCase(doc.id, tuple(tokenize(doc.facts, stopwords)), doc.label)


def raw_token_count(text: str) -> int:
    """Tokens of the unfiltered text, using the same delimiters as :func:`tokenize`."""
    return sum(1 for t in _SPLIT_RE.split(text) if t)


def token_count(case: CaseDocument | TokenizedCase) -> int:
    if isinstance(case, CaseDocument):
        return raw_token_count(case.facts)
    return len(case.tokens)


def corpus_stats(cases: Sequence[CaseDocument | TokenizedCase],
                 partition: Partition = Partition.FULL) -> CorpusStats:
    """Mean/median/min/max per-case token counts over one label partition.

    ``CaseDocument`` inputs are counted on the original text (whitespace/danda delimited),
    ``TokenizedCase`` inputs on their preprocessed tokens.
    """
    counts = [token_count(c) for c in cases if partition.accepts(c.label)]
    if not counts:
        raise CorpusError(f"partition {partition.value!r} is empty")
    return CorpusStats(
        mean=statistics.fmean(counts),
        median=float(statistics.median(counts)),
        min=min(counts),
        max=max(counts),
        partition=partition,
    )


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = max(1, int(round(n * spec.val_frac)))
    n_test = max(1, int(round(n * spec.test_frac)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise CorpusError(f"corpus of {n} cannot be split as {spec}")
    return n_train, n_val, n_test


def split_corpus(cases: Sequence, spec: SplitSpec):
    """Seeded, label-stratified train/val/test split.

    Each label group is shuffled and its members spread evenly over a unit
    interval; merging the groups by position and cutting contiguously keeps
    every split's label mix within one case of the corpus proportion.
    """
    n = len(cases)
    if n < 10:
        raise CorpusError(f"need at least 10 cases to split, got {n}")
    rng = np.random.default_rng(spec.seed)
    keyed = []
    for label in sorted({c.label for c in cases}):
        members = [i for i, c in enumerate(cases) if c.label == label]
        perm = rng.permutation(len(members))
        g = len(members)
        for rank, j in enumerate(perm):
            keyed.append(((rank + 0.5) / g, int(label), members[j]))
    keyed.sort()
    order = [i for _, _, i in keyed]
    n_train, n_val, _ = split_sizes(n, spec)
    train = [cases[i] for i in order[:n_train]]
    val = [cases[i] for i in order[n_train:n_train + n_val]]
    test = [cases[i] for i in order[n_train + n_val:]]
    return train, val, test
