"""LDA by collapsed Gibbs sampling, UMass coherence, held-out perplexity and K sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class TopicModelError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class LdaConfig:
    """Sampler settings. ``alpha=None`` means the conventional 50/K."""

    K: int
    alpha: float | None = None
    beta: float = 0.01
    iterations: int = 500
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        # K=1 is permitted so that a single-topic model can serve as a unigram baseline.
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError(
                f"need iterations >= 1 and 0 <= burn_in < iterations, got {self.iterations}/{self.burn_in}"
            )

    @property
    def alpha_value(self) -> float:
        return 50.0 / self.K if self.alpha is None else float(self.alpha)


@dataclass
class LdaModel:
    vocab: list[str]
    topic_word_counts: np.ndarray   # K x V
    doc_topic_counts: np.ndarray    # D x K
    topic_totals: np.ndarray        # K
    words: np.ndarray               # flat token -> word id
    doc_offsets: np.ndarray         # D + 1 offsets into ``words``
    assignments: np.ndarray         # flat token -> topic id (z)
    config: LdaConfig
    doc_ids: list[str]
    skipped_ids: list[str] = field(default_factory=list)
    sweeps_done: int = 0

    @property
    def K(self) -> int:
        return self.topic_word_counts.shape[0]

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def alpha(self) -> float:
        return self.config.alpha_value

    @property
    def beta(self) -> float:
        return self.config.beta

    def doc_index(self, case_id: str) -> int:
        try:
            return self._id_index[case_id]
        except AttributeError:
            self._id_index = {d: i for i, d in enumerate(self.doc_ids)}
            return self._id_index[case_id]

    def word_index(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.vocab)}

    def doc_tokens(self, d: int) -> list[str]:
        lo, hi = self.doc_offsets[d], self.doc_offsets[d + 1]
        return [self.vocab[w] for w in self.words[lo:hi]]

    def check_invariants(self) -> None:
        K = self.K
        if np.any(self.assignments < 0) or np.any(self.assignments >= K):
            raise AssertionError("assignment outside [0, K)")
        if not np.array_equal(self.topic_word_counts.sum(axis=1), self.topic_totals):
            raise AssertionError("topic-word row sums differ from topic totals")
        lengths = np.diff(self.doc_offsets)
        if not np.array_equal(self.doc_topic_counts.sum(axis=1), lengths):
            raise AssertionError("doc-topic row sums differ from document lengths")
        docs = np.repeat(np.arange(self.n_docs), lengths)
        ndk = np.zeros_like(self.doc_topic_counts)
        np.add.at(ndk, (docs, self.assignments), 1)
        nkw = np.zeros_like(self.topic_word_counts)
        np.add.at(nkw, (self.assignments, self.words), 1)
        if not (np.array_equal(ndk, self.doc_topic_counts) and np.array_equal(nkw, self.topic_word_counts)):
            raise AssertionError("count matrices inconsistent with assignments")


@dataclass(frozen=True)
class TopicSummary:
    topic_id: int
    top_words: list[tuple[str, float]]

    @property
    def words(self) -> list[str]:
        return [w for w, _ in self.top_words]


@dataclass(frozen=True)
class SweepRecord:
    K: int
    coherence: float
    perplexity: float


@dataclass(frozen=True)
class SweepResult:
    records: list[SweepRecord]
    chosen_K: int


# ---------------------------------------------------------------- kernels


@numba.njit(cache=True, nogil=True)
def _gibbs_sweep(words, docs, z, nkw, ndk, nk, alpha, beta, vbeta, uniforms, p):
    K = nk.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        nkw[k, w] -= 1
        ndk[d, k] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            p[t] = total
        u = uniforms[i] * total
        k = K - 1
        for t in range(K):
            if u < p[t]:
                k = t
                break
        z[i] = k
        nkw[k, w] += 1
        ndk[d, k] += 1
        nk[k] += 1


@numba.njit(cache=True, nogil=True)
def _fold_in_sweep(words, docs, z, ndk, phi, alpha, uniforms, p):
    K = phi.shape[0]
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * phi[t, w]
            p[t] = total
        u = uniforms[i] * total
        k = K - 1
        for t in range(K):
            if u < p[t]:
                k = t
                break
        z[i] = k
        ndk[d, k] += 1


# ---------------------------------------------------------------- training


def _token_lists(corpus) -> list[tuple[str, Sequence[str]]]:
    out = []
    for i, doc in enumerate(corpus):
        if hasattr(doc, "tokens"):
            out.append((doc.id, doc.tokens))
        else:
            out.append((str(i), list(doc)))
    return out


def initialize_lda(corpus, config: LdaConfig) -> LdaModel:
    """Build vocabulary and counts from a uniformly random topic assignment (no sweeps).

    Empty documents are skipped and recorded in ``skipped_ids``.
    """
    docs = _token_lists(corpus)
    if not docs:
        raise TopicModelError("corpus is empty")
    vocab: list[str] = []
    index: dict[str, int] = {}
    flat, offsets, doc_ids, skipped = [], [0], [], []
    for case_id, tokens in docs:
        if len(tokens) == 0:
            skipped.append(case_id)
            continue
        for tok in tokens:
            j = index.get(tok)
            if j is None:
                j = index[tok] = len(vocab)
                vocab.append(tok)
            flat.append(j)
        offsets.append(len(flat))
        doc_ids.append(case_id)
    if skipped:
        logger.warning("skipping %d empty document(s) for LDA: %s", len(skipped), ", ".join(skipped[:5]))
    if not doc_ids:
        raise TopicModelError("every document is empty after preprocessing")

    K, V, D = config.K, len(vocab), len(doc_ids)
    words = np.asarray(flat, dtype=np.int64)
    offsets_arr = np.asarray(offsets, dtype=np.int64)
    doc_of = np.repeat(np.arange(D, dtype=np.int64), np.diff(offsets_arr))
    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, K, size=words.shape[0], dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    np.add.at(nkw, (z, words), 1)
    np.add.at(ndk, (doc_of, z), 1)
    model = LdaModel(
        vocab=vocab,
        topic_word_counts=nkw,
        doc_topic_counts=ndk,
        topic_totals=nkw.sum(axis=1),
        words=words,
        doc_offsets=offsets_arr,
        assignments=z,
        config=config,
        doc_ids=doc_ids,
        skipped_ids=skipped,
    )
    model._rng = rng
    return model


def run_sweeps(model: LdaModel, n_sweeps: int, check_every: int = 0) -> LdaModel:
    """Advance the chain in place by ``n_sweeps`` full Gibbs sweeps."""
    rng = getattr(model, "_rng", None)
    if rng is None:
        raise TopicModelError("model has no live sampler state; re-initialize to continue sampling")
    doc_of = np.repeat(np.arange(model.n_docs, dtype=np.int64), np.diff(model.doc_offsets))
    p = np.empty(model.K, dtype=np.float64)
    vbeta = model.V * model.beta
    for s in range(n_sweeps):
        u = rng.random(model.words.shape[0])
        _gibbs_sweep(model.words, doc_of, model.assignments, model.topic_word_counts,
                     model.doc_topic_counts, model.topic_totals, model.alpha, model.beta, vbeta, u, p)
        model.sweeps_done += 1
        if check_every and (s + 1) % check_every == 0:
            model.check_invariants()
    return model


def train_lda(corpus, config: LdaConfig, check_every: int = 0) -> LdaModel:
    """Collapsed Gibbs LDA; the counts after the final sweep are the point estimate.

    Deterministic for a fixed corpus order, config and seed. ``check_every``
    verifies the count invariants every that many sweeps (0 disables).
    """
    model = initialize_lda(corpus, config)
    run_sweeps(model, config.iterations, check_every)
    logger.debug("trained LDA K=%d on %d docs, V=%d", model.K, model.n_docs, model.V)
    return model


# ---------------------------------------------------------------- estimates


def doc_topic_distribution(model: LdaModel, doc_index: int) -> np.ndarray:
    if not 0 <= doc_index < model.doc_topic_counts.shape[0]:
        raise IndexError(f"doc index {doc_index} out of range [0, {model.doc_topic_counts.shape[0]})")
    counts = model.doc_topic_counts[doc_index]
    return (counts + model.alpha) / (counts.sum() + model.K * model.alpha)


def topic_word_distribution(model: LdaModel, k: int) -> np.ndarray:
    if not 0 <= k < model.K:
        raise IndexError(f"topic {k} out of range [0, {model.K})")
    counts = model.topic_word_counts[k]
    return (counts + model.beta) / (model.topic_totals[k] + model.V * model.beta)


def topic_word_matrix(model: LdaModel) -> np.ndarray:
    return (model.topic_word_counts + model.beta) / (model.topic_totals[:, None] + model.V * model.beta)


def rank_desc(values: np.ndarray) -> np.ndarray:
    """Indices by descending value; equal values keep ascending index order."""
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")


def top_keywords(model: LdaModel, k: int, M: int = 10) -> TopicSummary:
    phi = topic_word_distribution(model, k)
    if M > model.V:
        raise ValueError(f"M={M} exceeds vocabulary size {model.V}")
    order = rank_desc(phi)[:M]
    return TopicSummary(k, [(model.vocab[j], float(phi[j])) for j in order])


def top_two(theta: np.ndarray) -> tuple[int, int]:
    theta = np.asarray(theta)
    if theta.shape[0] < 2:
        raise TopicModelError("dominant/second-dominant topics need K >= 2")
    order = rank_desc(theta)
    return int(order[0]), int(order[1])


def dominant_topics(model: LdaModel, doc_index: int) -> tuple[int, int]:
    if model.K < 2:
        raise TopicModelError("dominant/second-dominant topics need K >= 2")
    return top_two(doc_topic_distribution(model, doc_index))


# ---------------------------------------------------------------- scoring


def umass_coherence(model: LdaModel, corpus, k: int, M: int = 10, eps: float = 1.0) -> float:
    """UMass coherence of topic ``k`` over the document sets of ``corpus``.

    Sum over ranked pairs m > l of log((D(w_m, w_l) + eps) / D(w_l)).
    """
    words = top_keywords(model, k, min(M, model.V)).words
    return umass_from_words(words, [set(t) for _, t in _token_lists(corpus)], eps)


def umass_from_words(words: Sequence[str], doc_sets: Sequence[set], eps: float = 1.0) -> float:
    if len(words) < 2:
        return 0.0
    occ = np.array([[w in s for w in words] for s in doc_sets], dtype=np.int64).reshape(len(doc_sets), len(words))
    df = occ.sum(axis=0)
    co = occ.T @ occ
    total = 0.0
    for m in range(1, len(words)):
        for l in range(m):
            if df[l] == 0:
                raise TopicModelError(f"word {words[l]!r} never occurs in the reference corpus")
            total += math.log((co[m, l] + eps) / df[l])
    return total


def mean_coherence(model: LdaModel, corpus, M: int = 10, eps: float = 1.0) -> float:
    doc_sets = [set(t) for _, t in _token_lists(corpus)]
    m = min(M, model.V)
    scores = [umass_from_words(top_keywords(model, k, m).words, doc_sets, eps) for k in range(model.K)]
    return float(np.mean(scores))


def held_out_perplexity(model: LdaModel, held_out, fold_in_iters: int = 50, seed: int = 0) -> float:
    """Perplexity of held-out documents with topics frozen.

    Topic proportions of each held-out document are estimated by Gibbs
    fold-in (``fold_in_iters`` sweeps with phi fixed). Out-of-vocabulary
    tokens are dropped and logged.
    """
    index = model.word_index()
    flat, doc_of, oov = [], [], 0
    n_docs = 0
    for _, tokens in _token_lists(held_out):
        ids = [index[t] for t in tokens if t in index]
        oov += len(tokens) - len(ids)
        if ids:
            flat.extend(ids)
            doc_of.extend([n_docs] * len(ids))
            n_docs += 1
    if oov:
        logger.info("perplexity: dropped %d out-of-vocabulary held-out token(s)", oov)
    if not flat:
        raise TopicModelError("no in-vocabulary held-out tokens")

    K, alpha = model.K, model.alpha
    phi = topic_word_matrix(model)
    words = np.asarray(flat, dtype=np.int64)
    docs = np.asarray(doc_of, dtype=np.int64)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=words.shape[0], dtype=np.int64)
    ndk = np.zeros((n_docs, K), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    p = np.empty(K, dtype=np.float64)
    for _ in range(fold_in_iters):
        _fold_in_sweep(words, docs, z, ndk, phi, alpha, rng.random(words.shape[0]), p)
    theta = (ndk + alpha) / (ndk.sum(axis=1, keepdims=True) + K * alpha)
    token_prob = np.einsum("ik,ki->i", theta[docs], phi[:, words])
    return float(np.exp(-np.log(token_prob).sum() / words.shape[0]))


def sweep_topic_counts(corpus, candidate_Ks: Sequence[int], base_config: LdaConfig,
                       held_out=None, fold_in_iters: int = 50, M: int = 10,
                       threads: int = 1) -> SweepResult:
    """Train one model per candidate K and pick the K with highest mean UMass coherence.

    Perplexity is computed on ``held_out`` when given, else on the training
    corpus. Coherence ties go to the smaller K.
    """
    Ks = list(candidate_Ks)
    if not Ks:
        raise ValueError("need at least one candidate K")
    reference = held_out if held_out is not None else corpus

    def one(K: int) -> SweepRecord:
        try:
            cfg = replace(base_config, K=K)
            model = train_lda(corpus, cfg)
            coh = mean_coherence(model, corpus, M)
            pp = held_out_perplexity(model, reference, fold_in_iters, seed=base_config.seed)
        except Exception as exc:
            raise SweepError(f"topic sweep failed at K={K}: {exc}") from exc
        logger.info("sweep K=%d coherence=%.4f perplexity=%.3f", K, coh, pp)
        return SweepRecord(K, coh, pp)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, Ks))
    else:
        records = [one(K) for K in Ks]
    return SweepResult(records, choose_K(records))


def choose_K(records: Sequence[SweepRecord]) -> int:
    best = max(records, key=lambda r: (r.coherence, -r.K))
    return best.K


# ---------------------------------------------------------------- artifacts


def save_model(model: LdaModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "vocab": model.vocab,
        "doc_ids": model.doc_ids,
        "skipped_ids": model.skipped_ids,
        "sweeps_done": model.sweeps_done,
        "topic_word_counts": model.topic_word_counts.tolist(),
        "doc_topic_counts": model.doc_topic_counts.tolist(),
        "words": model.words.tolist(),
        "doc_offsets": model.doc_offsets.tolist(),
        "assignments": model.assignments.tolist(),
    }
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, separators=(",", ":")), encoding="utf-8")


def load_model(path) -> LdaModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise TopicModelError(f"model format version {version!r} != supported {MODEL_FORMAT_VERSION}")
    nkw = np.asarray(doc["topic_word_counts"], dtype=np.int64)
    K = doc["config"]["K"]
    n_docs = len(doc["doc_ids"])
    return LdaModel(
        vocab=list(doc["vocab"]),
        topic_word_counts=nkw.reshape(K, len(doc["vocab"])),
        doc_topic_counts=np.asarray(doc["doc_topic_counts"], dtype=np.int64).reshape(n_docs, K),
        topic_totals=nkw.reshape(K, -1).sum(axis=1),
        words=np.asarray(doc["words"], dtype=np.int64),
        doc_offsets=np.asarray(doc["doc_offsets"], dtype=np.int64),
        assignments=np.asarray(doc["assignments"], dtype=np.int64),
        config=LdaConfig(**doc["config"]),
        doc_ids=list(doc["doc_ids"]),
        skipped_ids=list(doc["skipped_ids"]),
        sweeps_done=doc["sweeps_done"],
    )


def write_sweep_csv(result: SweepResult, path, coherence_label: str = "umass_mean") -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# coherence={coherence_label} chosen_K={result.chosen_K}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["K", "coherence", "perplexity"])
        for r in result.records:
            w.writerow([r.K, f"{r.coherence:.10g}", f"{r.perplexity:.10g}"])


def read_sweep_csv(path) -> SweepResult:
    with Path(path).open(encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    records = [SweepRecord(int(r["K"]), float(r["coherence"]), float(r["perplexity"]))
               for r in csv.DictReader(rows)]
    return SweepResult(records, choose_K(records))
