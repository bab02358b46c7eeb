"""Config-driven pipeline stages, run manifest and report bundle."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
import yaml

from . import __version__
from .audit import (DIRECTION_NOTE, FairnessReport, load_name_lexicon, report_to_dict, theme_file_slug,
                    themed_audit, write_fairness_gap_csv, write_flips_csv)
from .classifier import (TuneSpec, evaluate, fit_tree, load_tree, save_tree, tune,
                         write_tuning_log)
from .corpus import (Label, Partition, SplitSpec, TokenizedCase, corpus_stats, load_corpus, load_stopwords,
                     preprocess, raw_token_count, split_corpus)
from .features import build_dataset, load_external_themes, load_theme_lexicon, read_dataset, write_dataset
from .topics import (LdaConfig, load_model, read_sweep_csv, save_model, sweep_topic_counts, train_lda,
                     write_sweep_csv)

logger = logging.getLogger(__name__)

STAGES = ("ingest", "stats", "lda-sweep", "lda-train", "featurize", "train", "audit")

# artifact file -> producing stage
ARTIFACTS = {
    "cases.jsonl": "ingest",
    "token_stats.csv": "stats",
    "topic_sweep.csv": "lda-sweep",
    "lda_model.json": "lda-train",
    "features.csv": "featurize",
    "feature_schema.json": "featurize",
    "tree.json": "train",
    "tuning_log.csv": "train",
    "metrics.json": "train",
    "audit_summary.json": "audit",
}

REPORT_FILES = ("fairness_gap.csv", "flips_*.csv", "audit_summary.json", "report.md",
                "token_stats.csv", "topic_sweep.csv")


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class MissingArtifactError(PipelineError):
    pass


def derive_seed(global_seed: int, stage: str) -> int:
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class PipelineConfig:
    base_dir: Path
    corpus: Path
    output_dir: Path
    stopwords: Path | None = None
    theme_lexicon: Path | None = None
    name_lexicon: Path | None = None
    theme_overrides: Path | None = None
    seed: int = 0
    sample_n: int | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    lda_K: int | None = None
    lda_candidates: list[int] = field(default_factory=list)
    lda_alpha: float | None = None
    lda_beta: float = 0.01
    lda_iterations: int = 500
    lda_burn_in: int = 200
    fold_in_iters: int = 50
    top_words: int = 10
    tune_trials: int = 100
    tune_objective: str = "macro_F1"
    audit_themes: list[str] = field(default_factory=lambda: ["murder", "dowry", "theft", "drugs"])
    communities: tuple[str, str] = ("Hindu", "Muslim")
    audit_subset: str = "all"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, seed: int | None = None, out: str | None = None) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_mapping(raw, path.parent.resolve(), seed=seed, out=out)

    @classmethod
    def from_mapping(cls, raw: dict, base_dir, seed: int | None = None, out: str | None = None):
        base = Path(base_dir)
        known = {"seed", "paths", "sample_n", "split", "lda", "tune", "audit"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        paths = raw.get("paths") or {}
        if "corpus" not in paths:
            raise ConfigError("paths.corpus is required")

        def resolve(key):
            v = paths.get(key)
            return None if v is None else (base / v)

        lda = raw.get("lda") or {}
        tune_cfg = raw.get("tune") or {}
        audit = raw.get("audit") or {}
        split = raw.get("split") or {}
        out_dir = Path(out) if out is not None else resolve("output_dir") or base / "out"
        cfg = cls(
            base_dir=base,
            corpus=resolve("corpus"),
            output_dir=out_dir,
            stopwords=resolve("stopwords"),
            theme_lexicon=resolve("theme_lexicon"),
            name_lexicon=resolve("name_lexicon"),
            theme_overrides=resolve("theme_overrides"),
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            sample_n=raw.get("sample_n"),
            split=(float(split.get("train", 0.8)), float(split.get("val", 0.1)), float(split.get("test", 0.1))),
            lda_K=lda.get("K"),
            lda_candidates=list(lda.get("candidates") or []),
            lda_alpha=lda.get("alpha"),
            lda_beta=float(lda.get("beta", 0.01)),
            lda_iterations=int(lda.get("iterations", 500)),
            lda_burn_in=int(lda.get("burn_in", 200)),
            fold_in_iters=int(lda.get("fold_in_iters", 50)),
            top_words=int(lda.get("top_words", 10)),
            tune_trials=int(tune_cfg.get("trials", 100)),
            tune_objective=str(tune_cfg.get("objective", "macro_F1")),
            audit_themes=list(audit.get("themes", ["murder", "dowry", "theft", "drugs"])),
            communities=tuple(audit.get("communities", ("Hindu", "Muslim"))),
            audit_subset=str(audit.get("subset", "all")),
            raw=raw,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("corpus", "stopwords", "theme_lexicon", "name_lexicon", "theme_overrides"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise ConfigError(f"paths.{name}: {p} does not exist")
        if self.lda_K is None and not self.lda_candidates:
            raise ConfigError("set lda.K, lda.candidates, or both")
        if len(self.communities) != 2:
            raise ConfigError("audit.communities must name exactly two communities")
        if self.audit_subset not in ("all", "test"):
            raise ConfigError("audit.subset must be 'all' or 'test'")
        try:
            self.split_spec(0)
            self.lda_config(self.lda_K or self.lda_candidates[0], 0)
            self.tune_spec(0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(*self.split, seed=seed)

    def lda_config(self, K: int, seed: int) -> LdaConfig:
        return LdaConfig(K=K, alpha=self.lda_alpha, beta=self.lda_beta, iterations=self.lda_iterations,
                         burn_in=self.lda_burn_in, seed=seed)

    def tune_spec(self, seed: int) -> TuneSpec:
        return TuneSpec(trials=self.tune_trials, seed=seed, objective=self.tune_objective)

    @property
    def artifacts_dir(self) -> Path:
        return self.output_dir / "artifacts"

    @property
    def report_dir(self) -> Path:
        return self.output_dir / "report"

    def snapshot(self) -> dict:
        """Config as written (relative paths), with the effective seed."""
        snap = json.loads(json.dumps(self.raw, ensure_ascii=False, default=str))
        snap["seed"] = self.seed
        snap.get("paths", {}).pop("output_dir", None)
        return snap

    def input_checksums(self) -> dict[str, str]:
        out = {}
        for name in ("corpus", "stopwords", "theme_lexicon", "name_lexicon", "theme_overrides"):
            p = getattr(self, name)
            if p is not None:
                out[name] = sha256_file(p)
        return out


class Pipeline:
    def __init__(self, config: PipelineConfig, threads: int = 1):
        self.cfg = config
        self.threads = max(1, int(threads))

    # ------------------------------------------------------------ helpers

    def path(self, artifact: str) -> Path:
        return self.cfg.artifacts_dir / artifact

    def require(self, stage: str, *artifacts: str) -> None:
        for a in artifacts:
            if not self.path(a).is_file():
                producer = ARTIFACTS[a]
                raise MissingArtifactError(
                    stage, f"missing artifact {a}; run the '{producer}' stage first")

    def seed(self, stage: str) -> int:
        return derive_seed(self.cfg.seed, stage)

    def load_cases(self) -> list[dict]:
        with self.path("cases.jsonl").open(encoding="utf-8") as fh:
            return [json.loads(line) for line in fh]

    @staticmethod
    def tokenized(records, split: str | None = None) -> list[TokenizedCase]:
        return [TokenizedCase(r["id"], tuple(r["tokens"]), Label(r["label"]))
                for r in records if split is None or r["split"] == split]

    # ------------------------------------------------------------ stages

    def ingest(self) -> None:
        cfg = self.cfg
        docs = load_corpus(cfg.corpus, cfg.sample_n, seed=self.seed("ingest"))
        stop = load_stopwords(cfg.stopwords)
        if len(docs) >= 10:
            train, val, test = split_corpus(docs, cfg.split_spec(self.seed("split")))
            split_of = {d.id: "train" for d in train} | {d.id: "val" for d in val} | {d.id: "test" for d in test}
        else:
            logger.warning("ingest: %d case(s) is too few to split; all marked train", len(docs))
            split_of = {d.id: "train" for d in docs}
        cfg.artifacts_dir.mkdir(parents=True, exist_ok=True)
        with self.path("cases.jsonl").open("w", encoding="utf-8") as fh:
            for d in docs:
                tc = preprocess(d, stop)
                rec = {"id": d.id, "label": int(d.label), "split": split_of[d.id],
                       "n_original": raw_token_count(d.facts), "tokens": list(tc.tokens)}
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def stats(self) -> None:
        self.require("stats", "cases.jsonl")
        records = self.load_cases()
        original = [_Counted(r["n_original"], Label(r["label"])) for r in records]
        processed = self.tokenized(records)
        with self.path("token_stats.csv").open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["text", "partition", "n_cases", "mean", "median", "min", "max"])
            for text, cases in (("original", original), ("preprocessed", processed)):
                for part in Partition:
                    n = sum(part.accepts(c.label) for c in cases)
                    if n == 0:
                        logger.warning("stats: partition %s is empty", part.value)
                        continue
                    s = corpus_stats(cases, part)
                    w.writerow([text, part.value, n, f"{s.mean:.4f}", f"{s.median:g}", s.min, s.max])

    def lda_sweep(self) -> None:
        self.require("lda-sweep", "cases.jsonl")
        cfg = self.cfg
        records = self.load_cases()
        train = [c for c in self.tokenized(records, "train") if c.tokens]
        held = [c for c in self.tokenized(records, "val") if c.tokens]
        Ks = cfg.lda_candidates or [cfg.lda_K]
        base = cfg.lda_config(Ks[0], self.seed("lda-sweep"))
        try:
            result = sweep_topic_counts(train, Ks, base, held_out=held or None, fold_in_iters=cfg.fold_in_iters,
                                        M=cfg.top_words, threads=self.threads)
        except Exception as exc:
            raise PipelineError("lda-sweep", str(exc)) from exc
        write_sweep_csv(result, self.path("topic_sweep.csv"))

    def resolve_K(self) -> int:
        if self.cfg.lda_K is not None:
            return int(self.cfg.lda_K)
        self.require("lda-train", "topic_sweep.csv")
        return read_sweep_csv(self.path("topic_sweep.csv")).chosen_K

    def lda_train(self) -> None:
        self.require("lda-train", "cases.jsonl")
        K = self.resolve_K()
        corpus = self.tokenized(self.load_cases())
        model = train_lda(corpus, self.cfg.lda_config(K, self.seed("lda-train")))
        save_model(model, self.path("lda_model.json"))

    def featurize(self) -> None:
        self.require("featurize", "cases.jsonl", "lda_model.json")
        cfg = self.cfg
        records = self.load_cases()
        model = load_model(self.path("lda_model.json"))
        lexicon = load_theme_lexicon(cfg.theme_lexicon)
        overrides = None
        if cfg.theme_overrides is not None:
            overrides = load_external_themes(cfg.theme_overrides, [r["id"] for r in records], lexicon.names)
        vectors, schema = build_dataset(model, self.tokenized(records), lexicon, overrides, M=cfg.top_words)
        write_dataset(vectors, schema, self.path("features.csv"), self.path("feature_schema.json"))

    def _split_vectors(self):
        vectors, schema = read_dataset(self.path("features.csv"), self.path("feature_schema.json"))
        split_of = {r["id"]: r["split"] for r in self.load_cases()}
        parts = {s: [v for v in vectors if split_of[v.case_id] == s] for s in ("train", "val", "test")}
        return vectors, schema, parts

    def train(self) -> None:
        self.require("train", "cases.jsonl", "features.csv", "feature_schema.json")
        vectors, schema, parts = self._split_vectors()
        for s in ("train", "val", "test"):
            if not parts[s]:
                raise PipelineError("train", f"the {s} split has no featurized cases")
        tr, va, te = (schema.encode_many(parts[s]) for s in ("train", "val", "test"))
        best, log = tune(tr, va, self.cfg.tune_spec(self.seed("train")), threads=self.threads)
        tree = fit_tree(*tr, best, schema_hash=schema.hash())
        save_tree(tree, self.path("tree.json"))
        write_tuning_log(log, self.path("tuning_log.csv"))
        metrics = {"hyperparams": asdict(best), "depth": tree.depth(), "n_leaves": len(tree.leaves()),
                   "train": evaluate(tree, *tr).to_dict(), "test": evaluate(tree, *te).to_dict()}
        self.path("metrics.json").write_text(json.dumps(metrics, indent=1) + "\n", encoding="utf-8")

    def audit(self) -> FairnessReport:
        self.require("audit", "tree.json", "features.csv", "feature_schema.json", "cases.jsonl")
        cfg = self.cfg
        vectors, schema, parts = self._split_vectors()
        tree = load_tree(self.path("tree.json"))
        lexicon = load_name_lexicon(cfg.name_lexicon)
        for c in cfg.communities:
            if c not in lexicon.communities:
                raise PipelineError("audit", f"community {c!r} is not in the name lexicon")
        pool = vectors if cfg.audit_subset == "all" else parts["test"]
        try:
            report = themed_audit(pool, schema, tree, lexicon, cfg.audit_themes, cfg.communities)
        except Exception as exc:
            raise PipelineError("audit", str(exc)) from exc
        rd = cfg.report_dir
        if rd.exists():
            for old in rd.glob("flips_*.csv"):
                old.unlink()
        rd.mkdir(parents=True, exist_ok=True)
        write_fairness_gap_csv(report, rd / "fairness_gap.csv")
        for t in report.themes:
            write_flips_csv(report, t.theme, rd / f"flips_{theme_file_slug(t.theme)}.csv")
        summary = report_to_dict(report)
        summary["config"] = cfg.snapshot()
        summary["seeds"] = {"global": cfg.seed, **{s: self.seed(s) for s in ("ingest", "split", *STAGES[2:])}}
        summary["lexicon_checksums"] = {
            "name_lexicon": lexicon.checksum,
            "theme_lexicon": sha256_file(cfg.theme_lexicon) if cfg.theme_lexicon else _bundled_sha("themes.yaml"),
            "stopwords": sha256_file(cfg.stopwords) if cfg.stopwords else _bundled_sha("stopwords_hi.txt"),
        }
        summary["input_checksums"] = cfg.input_checksums()
        summary["tree_schema_hash"] = tree.schema_hash
        text = json.dumps(summary, ensure_ascii=False, indent=1, sort_keys=True) + "\n"
        self.path("audit_summary.json").write_text(text, encoding="utf-8")
        (rd / "audit_summary.json").write_text(text, encoding="utf-8")
        return report

    # ------------------------------------------------------------ orchestration

    def run_stage(self, stage: str) -> None:
        fn = {"ingest": self.ingest, "stats": self.stats, "lda-sweep": self.lda_sweep,
              "lda-train": self.lda_train, "featurize": self.featurize, "train": self.train,
              "audit": self.audit}[stage]
        t0 = time.perf_counter()
        try:
            fn()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage, f"{type(exc).__name__}: {exc}") from exc
        self.update_manifest(stage, time.perf_counter() - t0)

    def run_all(self) -> Path:
        for stage in STAGES:
            self.run_stage(stage)
        return emit_report(self.cfg)

    def update_manifest(self, stage: str, seconds: float) -> None:
        path = self.cfg.output_dir / "manifest.json"
        manifest = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else {}
        manifest["tool_version"] = __version__
        manifest["config"] = self.cfg.snapshot()
        manifest["inputs"] = self.cfg.input_checksums()
        manifest.setdefault("timings", {})[stage] = round(seconds, 4)
        manifest["artifacts"] = {p.name: sha256_file(p) for p in sorted(self.cfg.artifacts_dir.glob("*"))
                                 if p.is_file()}
        self.cfg.output_dir.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")


@dataclass(frozen=True)
class _Counted:
    n: int
    label: Label

    @property
    def tokens(self):
        return range(self.n)


def _bundled_sha(name: str) -> str:
    from importlib import resources
    return hashlib.sha256(resources.files("bailfair.data").joinpath(name).read_bytes()).hexdigest()


# ---------------------------------------------------------------- report


def emit_report(cfg: PipelineConfig) -> Path:
    """Assemble the report bundle: audit CSV/JSON, token stats, sweep series, Markdown summary."""
    rd, ad = cfg.report_dir, cfg.artifacts_dir
    missing = []
    for name in ("fairness_gap.csv", "audit_summary.json"):
        if not (rd / name).is_file():
            missing.append(f"{name} (audit)")
    if not list(rd.glob("flips_*.csv")):
        missing.append("flips_<theme>.csv (audit)")
    for name in ("token_stats.csv", "topic_sweep.csv"):
        if not (ad / name).is_file():
            missing.append(f"{name} ({ARTIFACTS[name]})")
    if missing:
        raise PipelineError("report", "cannot emit report, missing: " + ", ".join(missing))
    for name in ("token_stats.csv", "topic_sweep.csv"):
        shutil.copyfile(ad / name, rd / name)
    summary = json.loads((rd / "audit_summary.json").read_text(encoding="utf-8"))
    (rd / "report.md").write_text(render_markdown(summary, rd), encoding="utf-8")
    return rd


def _csv_rows(path: Path) -> list[list[str]]:
    with path.open(encoding="utf-8", newline="") as fh:
        return [row for row in csv.reader(line for line in fh if not line.startswith("#"))]


def _md_table(rows: list[list[str]]) -> str:
    if not rows:
        return "_(empty)_\n"
    head, body = rows[0], rows[1:]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def render_markdown(summary: dict, report_dir: Path) -> str:
    a, b = summary["communities"]
    out = ["# Bail-prediction fairness audit", ""]
    out += ["## Token counts (facts section)", "", _md_table(_csv_rows(report_dir / "token_stats.csv"))]
    out += ["## Topic-count sweep (mean UMass coherence, held-out perplexity)", "",
            _md_table(_csv_rows(report_dir / "topic_sweep.csv"))]
    out += ["## Fairness gap on denial of bail", "",
            f"Mean absolute difference in predicted denial probability between {a}-name and "
            f"{b}-name counterfactuals.", "", _md_table(_csv_rows(report_dir / "fairness_gap.csv"))]
    out += ["## Prediction changes under name replacement[^direction]", ""]
    for t in summary["themes"]:
        out.append(f"### Theme: {t['theme']} (n={t['n_cases']})")
        out.append("")
        rows = [["predicted_label", "changed_label", "cases", f"{a} replacements", f"{b} replacements"]]
        groups: dict[tuple[int, int], list[dict]] = {}
        for r in t["flips"]:
            groups.setdefault((r["predicted_label"], r["changed_label"]), []).append(r)
        for (p, c), recs in sorted(groups.items()):
            rows.append([str(p), str(c), str(len(recs)), str(sum(r["flips"][a] for r in recs)),
                         str(sum(r["flips"][b] for r in recs))])
        out.append(_md_table(rows))
    out.append("Labels: 0 = bail denied, 1 = bail granted.")
    out.append("")
    out += ["## Provenance", ""]
    for k, v in sorted(summary["lexicon_checksums"].items()):
        out.append(f"- {k} sha256: `{v}`")
    out.append(f"- global seed: {summary['seeds']['global']}")
    out += ["", "---", "", f"[^direction]: {DIRECTION_NOTE}", ""]
    return "\n".join(out)
