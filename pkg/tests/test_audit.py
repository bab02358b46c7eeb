import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bailfair.audit import (AuditError, NameLexicon, community_probability, counterfactual_swap, fairness_gap,
                            flip_asymmetry, flip_counts, load_name_lexicon, select_audit_cases, themed_audit,
                            write_fairness_gap_csv, write_flips_csv)
from bailfair.classifier import (DecisionTree, Hyperparams, Node, SchemaMismatchError, fit_tree, predict_label,
                                 predict_proba)
from bailfair.corpus import Label
from bailfair.features import FeatureSchema, FeatureVector

LEX = NameLexicon.from_mapping({"Hindu": ["ram", "shyam", "mohan"], "Muslim": ["ali", "salim"]})
ALL_NAMES = ["ram", "shyam", "mohan", "ali", "salim"]


def vec(kw, theme="murder", label=Label.DENIED, id=None):
    return FeatureVector(id or f"c-{'-'.join(map(str, kw))}-{theme}", tuple(kw), theme, theme, label)


# every name appears in slot 0 and slot 1 so the schema knows them
VECS = ([vec([n, "x", None, None, None], id=f"a{i}") for i, n in enumerate(ALL_NAMES)]
        + [vec(["x", n, None, None, None], theme="theft", id=f"b{i}") for i, n in enumerate(ALL_NAMES)]
        + [vec(["x", "y", None, None, None], id="noname")])
SCHEMA = FeatureSchema.fit(VECS)


def chain_tree(slot=0):
    """Muslim names -> leaf (10, 0), anything else -> leaf (0, 10)."""
    ali, salim = SCHEMA.encode_value(slot, "ali"), SCHEMA.encode_value(slot, "salim")
    nodes = [Node((20, 10), slot, ali, 1, 2), Node((10, 0)), Node((10, 10), slot, salim, 3, 4),
             Node((10, 0)), Node((0, 10))]
    return DecisionTree(nodes, Hyperparams(), SCHEMA.hash())


def theme_tree():
    code = SCHEMA.encode_value(5, "murder")
    return DecisionTree([Node((5, 5), 5, code, 1, 2), Node((5, 1)), Node((0, 4))], Hyperparams(), SCHEMA.hash())


class TestLexicon:
    def test_validation(self):
        with pytest.raises(AuditError):
            NameLexicon.from_mapping({"Hindu": ["a", "b"]})
        with pytest.raises(AuditError):
            NameLexicon.from_mapping({"Hindu": ["a", "b"], "Muslim": ["c"]})
        with pytest.raises(AuditError, match="both"):
            NameLexicon.from_mapping({"Hindu": ["a", "b"], "Muslim": ["b", "c"]})

    def test_bundled(self):
        lex = load_name_lexicon()
        assert set(lex.communities) == {"Hindu", "Muslim"} and len(lex.checksum) == 64
        assert lex.community_of("अब्दुल") == "Muslim" and lex.community_of("किशोर") == "Hindu"


class TestSelection:
    def test_picks_name_cases_only(self):
        cases = select_audit_cases(VECS, SCHEMA, chain_tree(), LEX)
        assert len(cases) == 10 and "noname" not in {c.case_id for c in cases}

    def test_name_in_slot_one(self):
        c = select_audit_cases([v for v in VECS if v.case_id == "b3"], SCHEMA, chain_tree(), LEX)[0]
        assert (c.name_slot, c.original_name, c.original_community) == (1, "ali", "Muslim")

    def test_lowest_slot_audited(self):
        v = vec(["salim", "ram", None, None, None], id="two")
        c = select_audit_cases([v], SCHEMA, chain_tree(), LEX)[0]
        assert (c.name_slot, c.original_name) == (0, "salim")

    def test_theme_filter(self):
        assert all(c.theme == "theft" for c in select_audit_cases(VECS, SCHEMA, chain_tree(), LEX, "theft"))

    def test_schema_mismatch(self):
        t = chain_tree()
        t.schema_hash = "0" * 64
        with pytest.raises(SchemaMismatchError):
            select_audit_cases(VECS, SCHEMA, t, LEX)


class TestSwap:
    def test_locality_and_involution(self):
        c = select_audit_cases(VECS[:1], SCHEMA, chain_tree(), LEX)[0]
        swapped = counterfactual_swap(c, "ali")
        diff = [j for j, (a, b) in enumerate(zip(c.vector.values, swapped.values)) if a != b]
        assert diff == [0] and swapped.label == c.vector.label
        assert swapped.with_slot(0, c.original_name) == c.vector

    def test_same_name_rejected(self):
        c = select_audit_cases(VECS[:1], SCHEMA, chain_tree(), LEX)[0]
        with pytest.raises(AuditError):
            counterfactual_swap(c, c.original_name)


class TestGap:
    def test_name_blind_tree_zero(self):
        cases = select_audit_cases(VECS, SCHEMA, theme_tree(), LEX)
        assert fairness_gap(cases, theme_tree(), LEX, SCHEMA) == 0.0

    def test_chain_tree_hand_value(self):
        t = chain_tree()
        cases = select_audit_cases(VECS[:5], SCHEMA, t, LEX)
        c = cases[0]
        assert community_probability(c, t, LEX.communities["Muslim"], SCHEMA) == pytest.approx(11 / 12)
        assert community_probability(c, t, LEX.communities["Hindu"], SCHEMA) == pytest.approx(1 / 12)
        assert fairness_gap(cases, t, LEX, SCHEMA) == pytest.approx(10 / 12, abs=1e-12)

    def test_slot_one_cases_unaffected_by_slot_zero_tree(self):
        t = chain_tree(slot=0)
        cases = select_audit_cases(VECS[5:10], SCHEMA, t, LEX)
        assert fairness_gap(cases, t, LEX, SCHEMA) == 0.0

    def test_relabel_symmetry(self):
        t = chain_tree()
        cases = select_audit_cases(VECS, SCHEMA, t, LEX)
        swapped = LEX.relabeled({"Hindu": "Muslim", "Muslim": "Hindu"})
        assert fairness_gap(cases, t, swapped, SCHEMA) == fairness_gap(cases, t, LEX, SCHEMA)

    def test_empty(self):
        with pytest.raises(AuditError):
            fairness_gap([], chain_tree(), LEX, SCHEMA)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_bounds_and_name_blind(self, seed, depth):
        rng = np.random.default_rng(seed)
        vecs = [vec([ALL_NAMES[rng.integers(5)], ["x", "y"][rng.integers(2)], None, None, None],
                    theme=["murder", "theft"][rng.integers(2)], label=Label(int(rng.integers(2))), id=f"r{i}")
                for i in range(40)]
        schema = FeatureSchema.fit(vecs)
        X, y = schema.encode_many(vecs)
        tree = fit_tree(X, y, Hyperparams(max_depth=depth), schema.hash())
        cases = select_audit_cases(vecs, schema, tree, LEX)
        g = fairness_gap(cases, tree, LEX, schema)
        assert 0.0 <= g <= 1.0
        if 0 not in tree.tested_slots():
            assert g == 0.0


class TestFlips:
    def test_hand_traced(self):
        t = chain_tree()
        c = select_audit_cases([VECS[3]], SCHEMA, t, LEX)[0]   # original "ali", predicted Denied
        r = flip_counts(c, t, LEX, SCHEMA)
        assert (r.predicted_label, r.changed_label) == (Label.DENIED, Label.GRANTED)
        assert dict(r.flips) == {"Hindu": 3, "Muslim": 0}
        c = select_audit_cases([VECS[0]], SCHEMA, t, LEX)[0]   # original "ram", predicted Granted
        r = flip_counts(c, t, LEX, SCHEMA)
        assert r.predicted_label == Label.GRANTED and dict(r.flips) == {"Hindu": 0, "Muslim": 2}

    def test_asymmetry(self):
        rep = themed_audit(VECS, SCHEMA, chain_tree(), LEX, ["murder", "theft"])
        assert flip_asymmetry(rep.theme("murder").flips, "Hindu", "Muslim") == (6, 0)
        assert flip_asymmetry(rep.theme("murder").flips, "Hindu", "Muslim", Label.GRANTED) == (0, 6)
        assert set(rep.flip_table("murder")) == {(0, 1), (1, 0)}


class TestThemedAudit:
    def test_report_and_csv(self, tmp_path):
        rep = themed_audit(VECS, SCHEMA, chain_tree(), LEX, ["murder", "theft", "dowry"])
        assert rep.theme("murder").n_cases == 5 and rep.theme("murder").gap == pytest.approx(10 / 12)
        assert rep.theme("theft").gap == 0.0 and rep.theme("dowry").gap is None
        assert rep.overall_n == 10 and rep.overall_gap == pytest.approx(5 / 12)
        write_fairness_gap_csv(rep, tmp_path / "g.csv")
        rows = list(csv.DictReader((tmp_path / "g.csv").open()))
        assert [r["theme"] for r in rows] == ["murder", "theft", "dowry", "overall"] and rows[2]["gap"] == ""
        write_flips_csv(rep, "murder", tmp_path / "f.csv")
        head = (tmp_path / "f.csv").read_text().splitlines()[0]
        assert head == "case_id,predicted_label,changed_label,hindu_flips,muslim_flips"

    def test_no_cases(self):
        with pytest.raises(AuditError):
            themed_audit(VECS[-1:], SCHEMA, chain_tree(), LEX, ["murder"])


def test_unseen_replacement_gets_unseen_code():
    from bailfair.features import UNSEEN_CODE
    c = select_audit_cases(VECS[:1], SCHEMA, chain_tree(), LEX)[0]
    x = SCHEMA.encode(counterfactual_swap(c, "नया"))
    assert x[c.name_slot] == UNSEEN_CODE
    assert list(np.delete(x, c.name_slot)) == list(np.delete(SCHEMA.encode(c.vector), c.name_slot))


def test_baseline_matches_tree():
    t = chain_tree()
    for c in select_audit_cases(VECS, SCHEMA, t, LEX):
        x = SCHEMA.encode(c.vector)
        assert c.baseline_label == predict_label(t, x) and c.baseline_p_denied == predict_proba(t, x)
