"""Seven-slot categorical case features: five topic keywords plus two crime themes."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .corpus import Label, TokenizedCase, nfc
from .topics import LdaModel, dominant_topics, top_keywords

logger = logging.getLogger(__name__)

OTHER_THEME = "other"
N_KEYWORDS = 5
SLOT_NAMES = ("keyword1", "keyword2", "keyword3", "keyword4", "keyword5", "theme1", "theme2")
NONE_CODE = 0
UNSEEN_CODE = -1


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ThemeLexicon:
    themes: Mapping[str, frozenset[str]]

    def __post_init__(self):
        if len(self.themes) < 2:
            raise FeatureError("theme lexicon needs at least two themes")
        if OTHER_THEME in self.themes:
            raise FeatureError(f"theme name {OTHER_THEME!r} is reserved")
        seen = {}
        for name, seeds in self.themes.items():
            if not seeds:
                raise FeatureError(f"theme {name!r} has no seed words")
            if seeds in seen.values():
                twin = next(k for k, v in seen.items() if v == seeds)
                raise FeatureError(f"themes {twin!r} and {name!r} have identical seed sets")
            seen[name] = seeds

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "ThemeLexicon":
        return cls({str(k): frozenset(nfc(str(w)) for w in v) for k, v in mapping.items()})

    @property
    def names(self) -> list[str]:
        return sorted(self.themes)


def load_theme_lexicon(path=None) -> ThemeLexicon:
    """YAML mapping theme -> list of seed words; ``None`` loads the bundled lexicon."""
    if path is None:
        text = resources.files("bailfair.data").joinpath("themes.yaml").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise FeatureError("theme lexicon must be a mapping of theme -> word list")
    return ThemeLexicon.from_mapping(data)


@dataclass(frozen=True)
class FeatureVector:
    case_id: str
    keywords: tuple[str | None, ...]
    theme1: str
    theme2: str
    label: Label

    def __post_init__(self):
        if len(self.keywords) != N_KEYWORDS:
            raise FeatureError(f"expected {N_KEYWORDS} keyword slots, got {len(self.keywords)}")

    @property
    def values(self) -> tuple[str | None, ...]:
        return (*self.keywords, self.theme1, self.theme2)

    def with_slot(self, slot: int, value: str | None) -> "FeatureVector":
        if not 0 <= slot < N_KEYWORDS:
            raise FeatureError(f"slot {slot} is not a keyword slot")
        kw = list(self.keywords)
        kw[slot] = value
        return FeatureVector(self.case_id, tuple(kw), self.theme1, self.theme2, self.label)


class FeatureSchema:
    """Per-slot integer codes; 0 is None, codes follow first appearance, -1 marks unseen values."""

    def __init__(self, slots: Sequence[Mapping[str, int]]):
        if len(slots) != len(SLOT_NAMES):
            raise FeatureError(f"schema needs {len(SLOT_NAMES)} slots")
        self.slots = [dict(s) for s in slots]
        self._inverse = [{c: v for v, c in s.items()} for s in self.slots]

    @classmethod
    def fit(cls, vectors: Sequence[FeatureVector]) -> "FeatureSchema":
        slots: list[dict[str, int]] = [{} for _ in SLOT_NAMES]
        for v in vectors:
            for j, value in enumerate(v.values):
                if value is not None and value not in slots[j]:
                    slots[j][value] = len(slots[j]) + 1
        return cls(slots)

    def encode_value(self, slot: int, value: str | None) -> int:
        if value is None:
            return NONE_CODE
        return self.slots[slot].get(value, UNSEEN_CODE)

    def encode(self, v: FeatureVector) -> np.ndarray:
        return np.array([self.encode_value(j, x) for j, x in enumerate(v.values)], dtype=np.int64)

    def encode_many(self, vectors: Sequence[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([self.encode(v) for v in vectors], dtype=np.int64).reshape(len(vectors), len(SLOT_NAMES))
        y = np.array([int(v.label) for v in vectors], dtype=np.int64)
        return X, y

    def decode(self, codes: Sequence[int]) -> tuple[str | None, ...]:
        out = []
        for j, c in enumerate(codes):
            c = int(c)
            if c == NONE_CODE:
                out.append(None)
            elif c == UNSEEN_CODE:
                raise FeatureError(f"slot {SLOT_NAMES[j]} holds the unseen code; raw value is unrecoverable")
            else:
                out.append(self._inverse[j][c])
        return tuple(out)

    def to_dict(self) -> dict:
        return {"none_code": NONE_CODE, "unseen_code": UNSEEN_CODE,
                "slots": {name: s for name, s in zip(SLOT_NAMES, self.slots)}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        return cls([d["slots"][name] for name in SLOT_NAMES])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.slots == other.slots


def match_in_rank_order(ranked: Sequence[str], tokens: set[str], n: int) -> list[str | None]:
    hits = [w for w in ranked if w in tokens][:n]
    return hits + [None] * (n - len(hits))


def extract_case_keywords(model: LdaModel, case: TokenizedCase, doc_index: int,
                          M: int = 10) -> tuple[str | None, ...]:
    """Three keywords from the dominant topic and two from the second-dominant.

    Each group walks the topic's top-M list in rank order and keeps words that
    occur in the case; unfilled slots are None.
    """
    first, second = dominant_topics(model, doc_index)
    tokens = set(case.tokens)
    m = min(M, model.V)
    return (*match_in_rank_order(top_keywords(model, first, m).words, tokens, 3),
            *match_in_rank_order(top_keywords(model, second, m).words, tokens, 2))


def theme_scores(dominant_words: Sequence[str], second_words: Sequence[str],
                 lexicon: ThemeLexicon) -> dict[str, float]:
    d, s = set(dominant_words), set(second_words)
    return {name: len(d & seeds) + 0.5 * len(s & seeds) for name, seeds in lexicon.themes.items()}


def assign_themes(dominant_words: Sequence[str], second_words: Sequence[str],
                  lexicon: ThemeLexicon) -> tuple[str, str]:
    """Top two themes by weighted seed overlap (dominant list counts double).

    Ties go to the lexicographically smaller name. No overlap at all gives
    ("other", "other"); a single scoring theme fills both slots.
    """
    scores = theme_scores(dominant_words, second_words, lexicon)
    ranked = sorted(scores, key=lambda t: (-scores[t], t))
    if scores[ranked[0]] == 0:
        return OTHER_THEME, OTHER_THEME
    if scores[ranked[1]] == 0:
        return ranked[0], ranked[0]
    return ranked[0], ranked[1]


def load_external_themes(path, known_ids, known_themes) -> dict[str, tuple[str, str]]:
    """Read JSON Lines theme overrides ``{"id", "theme1", "theme2"}``.

    Every id must be a corpus case and every theme a lexicon theme or "other".
    """
    known_ids = set(known_ids)
    allowed = set(known_themes) | {OTHER_THEME}
    out: dict[str, tuple[str, str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                case_id, t1, t2 = rec["id"], rec["theme1"], rec["theme2"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FeatureError(f"{path}:{lineno}: malformed override ({exc})") from None
            if case_id not in known_ids:
                raise FeatureError(f"{path}:{lineno}: unknown case id {case_id!r}")
            for t in (t1, t2):
                if t not in allowed:
                    raise FeatureError(f"{path}:{lineno}: unknown theme {t!r}")
            out[case_id] = (t1, t2)
    return out


def build_dataset(model: LdaModel, corpus: Sequence[TokenizedCase], lexicon: ThemeLexicon,
                  overrides: Mapping[str, tuple[str, str]] | None = None,
                  M: int = 10) -> tuple[list[FeatureVector], FeatureSchema]:
    """Featurize every non-empty case of ``corpus`` (which the model was trained on)."""
    overrides = overrides or {}
    m = min(M, model.V)
    tops = [top_keywords(model, k, m).words for k in range(model.K)]
    vectors = []
    dropped = []
    for case in corpus:
        if len(case.tokens) == 0:
            dropped.append(case.id)
            continue
        try:
            d = model.doc_index(case.id)
        except KeyError:
            raise FeatureError(f"case {case.id!r} is not part of the topic model") from None
        first, second = dominant_topics(model, d)
        tokens = set(case.tokens)
        keywords = (*match_in_rank_order(tops[first], tokens, 3),
                    *match_in_rank_order(tops[second], tokens, 2))
        if case.id in overrides:
            t1, t2 = overrides[case.id]
        else:
            t1, t2 = assign_themes(tops[first], tops[second], lexicon)
        vectors.append(FeatureVector(case.id, keywords, t1, t2, case.label))
    if dropped:
        logger.info("featurize: excluded %d empty case(s)", len(dropped))
    return vectors, FeatureSchema.fit(vectors)


def write_dataset(vectors: Sequence[FeatureVector], schema: FeatureSchema, csv_path, schema_path) -> None:
    with Path(csv_path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", *SLOT_NAMES, "label"])
        for v in vectors:
            w.writerow([v.case_id, *("" if x is None else x for x in v.values), int(v.label)])
    Path(schema_path).write_text(
        json.dumps(schema.to_dict(), ensure_ascii=False, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_dataset(csv_path, schema_path) -> tuple[list[FeatureVector], FeatureSchema]:
    schema = FeatureSchema.from_dict(json.loads(Path(schema_path).read_text(encoding="utf-8")))
    vectors = []
    with Path(csv_path).open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            kw = tuple(row[f"keyword{i}"] or None for i in range(1, N_KEYWORDS + 1))
            vectors.append(FeatureVector(row["case_id"], kw, row["theme1"], row["theme2"], Label(int(row["label"]))))
    return vectors, schema
