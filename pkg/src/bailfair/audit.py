"""Counterfactual name-swap audit and demographic-parity fairness gaps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .classifier import DecisionTree, predict_label, predict_proba
from .corpus import Label, nfc
from .features import FeatureSchema, FeatureVector

logger = logging.getLogger(__name__)

DIRECTION_NOTE = (
    "Flip direction convention: when cases predicted Denied flip to Granted more often under "
    "Hindu-name replacements than under Muslim-name replacements, the model disadvantages "
    "Muslim-named accused; for cases predicted Granted, more flips to Denied under Hindu "
    "replacements disadvantage Hindu-named accused. The convention is stated outright because a raw "
    "flip count can plausibly be read in either direction."
)


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class NameLexicon:
    communities: Mapping[str, tuple[str, ...]]
    checksum: str = ""

    def __post_init__(self):
        if len(self.communities) < 2:
            raise AuditError("name lexicon needs at least two communities")
        owner: dict[str, str] = {}
        for c, names in self.communities.items():
            if len(set(names)) < 2:
                raise AuditError(f"community {c!r} needs at least two distinct names")
            for n in names:
                if n in owner and owner[n] != c:
                    raise AuditError(f"name {n!r} listed under both {owner[n]!r} and {c!r}")
                owner[n] = c
        if not self.checksum:
            object.__setattr__(self, "checksum", _lexicon_digest(self.communities))

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]], checksum: str = "") -> "NameLexicon":
        comms = {}
        for c, names in mapping.items():
            # dedupe, keep file order
            comms[str(c)] = tuple(dict.fromkeys(nfc(str(n)) for n in names))
        return cls(comms, checksum)

    def community_of(self, name: str | None) -> str | None:
        if name is None:
            return None
        for c, names in self.communities.items():
            if name in names:
                return c
        return None

    def relabeled(self, mapping: Mapping[str, str]) -> "NameLexicon":
        """Same name sets under renamed communities (e.g. Hindu <-> Muslim)."""
        return NameLexicon({mapping.get(c, c): names for c, names in self.communities.items()})


def _lexicon_digest(communities: Mapping[str, Sequence[str]]) -> str:
    blob = json.dumps({c: list(v) for c, v in communities.items()}, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_name_lexicon(path=None) -> NameLexicon:
    """YAML mapping community -> names. The checksum is the SHA-256 of the file bytes."""
    if path is None:
        raw = resources.files("bailfair.data").joinpath("names.yaml").read_bytes()
    else:
        raw = Path(path).read_bytes()
    data = yaml.safe_load(raw.decode("utf-8"))
    if not isinstance(data, dict):
        raise AuditError("name lexicon must map community -> list of names")
    return NameLexicon.from_mapping(data, hashlib.sha256(raw).hexdigest())


@dataclass(frozen=True)
class AuditCase:
    case_id: str
    vector: FeatureVector
    name_slot: int
    original_name: str
    original_community: str
    baseline_label: Label
    baseline_p_denied: float

    @property
    def theme(self) -> str:
        return self.vector.theme1


@dataclass(frozen=True)
class FlipRecord:
    case_id: str
    predicted_label: Label
    changed_label: Label
    flips: Mapping[str, int]


@dataclass
class ThemeResult:
    theme: str
    n_cases: int
    gap: float | None
    flips: list[FlipRecord] = field(default_factory=list)


@dataclass
class FairnessReport:
    communities: tuple[str, str]
    themes: list[ThemeResult]
    overall_gap: float
    overall_n: int
    lexicon_checksum: str

    def theme(self, name: str) -> ThemeResult:
        for t in self.themes:
            if t.theme == name:
                return t
        raise KeyError(name)

    def flip_table(self, theme: str) -> dict[tuple[int, int], list[FlipRecord]]:
        """Flip records grouped by (predicted, changed) label."""
        groups: dict[tuple[int, int], list[FlipRecord]] = {}
        for r in self.theme(theme).flips:
            groups.setdefault((int(r.predicted_label), int(r.changed_label)), []).append(r)
        return groups


def select_audit_cases(vectors: Sequence[FeatureVector], schema: FeatureSchema, tree: DecisionTree,
                       lexicon: NameLexicon, theme_filter: str | None = None) -> list[AuditCase]:
    """Cases (optionally of one theme1) whose keyword slots hold a lexicon name.

    The lowest-index name slot is audited; further name slots are logged.
    """
    tree.check_schema(schema.hash())
    out = []
    for v in vectors:
        if theme_filter is not None and v.theme1 != theme_filter:
            continue
        hits = [(j, w, lexicon.community_of(w)) for j, w in enumerate(v.keywords)]
        hits = [h for h in hits if h[2] is not None]
        if not hits:
            continue
        if len(hits) > 1:
            logger.info("case %s: extra name slot(s) %s not audited", v.case_id, [j for j, _, _ in hits[1:]])
        slot, name, community = hits[0]
        x = schema.encode(v)
        out.append(AuditCase(v.case_id, v, slot, name, community,
                             predict_label(tree, x), predict_proba(tree, x)))
    if not out:
        logger.warning("no audit cases found%s", f" for theme {theme_filter!r}" if theme_filter else "")
    return out


def counterfactual_swap(case: AuditCase, replacement: str) -> FeatureVector:
    if replacement == case.original_name:
        raise AuditError(f"replacement {replacement!r} equals the original name")
    return case.vector.with_slot(case.name_slot, replacement)


def _with_name(case: AuditCase, name: str) -> FeatureVector:
    return case.vector if name == case.original_name else counterfactual_swap(case, name)


def flip_counts(case: AuditCase, tree: DecisionTree, lexicon: NameLexicon,
                schema: FeatureSchema) -> FlipRecord:
    """Per community, how many replacement names change the predicted label."""
    flips = {}
    for community, names in lexicon.communities.items():
        n = 0
        for r in names:
            if r == case.original_name:
                continue
            if predict_label(tree, schema.encode(counterfactual_swap(case, r))) != case.baseline_label:
                n += 1
        flips[community] = n
    changed = Label.GRANTED if case.baseline_label == Label.DENIED else Label.DENIED
    return FlipRecord(case.case_id, case.baseline_label, changed, flips)


def community_probability(case: AuditCase, tree: DecisionTree, names: Sequence[str],
                          schema: FeatureSchema) -> float:
    """Mean denial probability with the audited name set to each of ``names``."""
    probs = Counter(predict_proba(tree, schema.encode(_with_name(case, r))) for r in names)
    # weight distinct leaf values by frequency so a name-blind tree returns its leaf value exactly
    return float(sum(p * (c / len(names)) for p, c in sorted(probs.items())))


def case_gap(case: AuditCase, tree: DecisionTree, lexicon: NameLexicon, schema: FeatureSchema,
             communities: tuple[str, str]) -> float:
    a, b = communities
    return abs(community_probability(case, tree, lexicon.communities[a], schema)
               - community_probability(case, tree, lexicon.communities[b], schema))


def fairness_gap(cases: Sequence[AuditCase], tree: DecisionTree, lexicon: NameLexicon,
                 schema: FeatureSchema, communities: tuple[str, str] = ("Hindu", "Muslim")) -> float:
    """Mean over cases of |P(denied | names of A) - P(denied | names of B)|.

    Each community probability averages the smoothed leaf probability over
    every name in that community, the original name included where it belongs.
    """
    if not cases:
        raise AuditError("fairness gap needs at least one audit case")
    for c in communities:
        if len(lexicon.communities.get(c, ())) < 2:
            raise AuditError(f"community {c!r} needs at least two names")
    return float(np.mean([case_gap(c, tree, lexicon, schema, communities) for c in cases]))


def themed_audit(vectors: Sequence[FeatureVector], schema: FeatureSchema, tree: DecisionTree,
                 lexicon: NameLexicon, themes: Sequence[str],
                 communities: tuple[str, str] = ("Hindu", "Muslim")) -> FairnessReport:
    """Per-theme and overall gaps plus flip records for every audited case."""
    cases = select_audit_cases(vectors, schema, tree, lexicon)
    if not cases:
        raise AuditError("no audit cases: no keyword slot holds a lexicon name")
    gaps = {c.case_id: case_gap(c, tree, lexicon, schema, communities) for c in cases}
    results = []
    for theme in themes:
        sub = [c for c in cases if c.theme == theme]
        gap = float(np.mean([gaps[c.case_id] for c in sub])) if sub else None
        flips = [flip_counts(c, tree, lexicon, schema) for c in sub]
        results.append(ThemeResult(theme, len(sub), gap, flips))
    overall = float(np.mean([gaps[c.case_id] for c in cases]))
    return FairnessReport(tuple(communities), results, overall, len(cases), lexicon.checksum)


# ---------------------------------------------------------------- report files


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def theme_file_slug(theme: str) -> str:
    slug = re.sub(r"[^\w]+", "_", theme, flags=re.UNICODE).strip("_")
    return slug or "theme"


def write_fairness_gap_csv(report: FairnessReport, path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theme", "n_cases", "gap"])
        for t in report.themes:
            w.writerow([t.theme, t.n_cases, _fmt(t.gap)])
        w.writerow(["overall", report.overall_n, _fmt(report.overall_gap)])


def write_flips_csv(report: FairnessReport, theme: str, path) -> None:
    cols = [f"{c.lower()}_flips" for c in report.communities]
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "predicted_label", "changed_label", *cols])
        for r in report.theme(theme).flips:
            w.writerow([r.case_id, int(r.predicted_label), int(r.changed_label),
                        *(r.flips[c] for c in report.communities)])


def flip_asymmetry(records: Sequence[FlipRecord], favoured: str, other: str,
                   predicted: Label = Label.DENIED) -> tuple[int, int]:
    """Total flips under each community's replacements for cases with the given prediction."""
    sel = [r for r in records if r.predicted_label == predicted]
    return sum(r.flips[favoured] for r in sel), sum(r.flips[other] for r in sel)


def report_to_dict(report: FairnessReport) -> dict:
    return {
        "communities": list(report.communities),
        "lexicon_checksum": report.lexicon_checksum,
        "overall": {"n_cases": report.overall_n, "gap": report.overall_gap},
        "themes": [
            {
                "theme": t.theme,
                "n_cases": t.n_cases,
                "gap": t.gap,
                "flips": [
                    {"case_id": r.case_id, "predicted_label": int(r.predicted_label),
                     "changed_label": int(r.changed_label), "flips": dict(r.flips)}
                    for r in t.flips
                ],
            }
            for t in report.themes
        ],
        "note": DIRECTION_NOTE,
    }
