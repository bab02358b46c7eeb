"""Seeded synthetic corpora: planted-topic LDA data and planted-bias bail cases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CaseDocument, Label, TokenizedCase


@dataclass
class PlantedCorpus:
    docs: list[TokenizedCase]
    phi: np.ndarray      # K x V ground-truth topic-word distributions
    theta: np.ndarray    # D x K ground-truth doc-topic proportions
    vocab: list[str]


def planted_topic_corpus(K: int = 3, V: int = 30, n_docs: int = 500, doc_len: int = 50,
                         alpha: float = 0.1, beta: float = 0.1, seed: int = 0) -> PlantedCorpus:
    """Sample a corpus from the LDA generative process with known phi and theta."""
    rng = np.random.default_rng(seed)
    vocab = [f"w{j:02d}" for j in range(V)]
    phi = rng.dirichlet(np.full(V, beta), size=K)
    theta = rng.dirichlet(np.full(K, alpha), size=n_docs)
    docs = []
    for d in range(n_docs):
        z = rng.choice(K, size=doc_len, p=theta[d])
        tokens = tuple(vocab[rng.choice(V, p=phi[k])] for k in z)
        docs.append(TokenizedCase(f"d{d:04d}", tokens, Label.DENIED))
    return PlantedCorpus(docs, phi, theta, vocab)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def greedy_match(true_phi: np.ndarray, est_phi: np.ndarray) -> list[tuple[int, int, float]]:
    """Pair true and estimated topics by repeatedly taking the closest remaining pair (TV distance)."""
    dist = np.array([[total_variation(t, e) for e in est_phi] for t in true_phi])
    pairs = []
    free_t, free_e = set(range(dist.shape[0])), set(range(dist.shape[1]))
    while free_t and free_e:
        i, j = min(((i, j) for i in free_t for j in free_e), key=lambda ij: (dist[ij], ij))
        pairs.append((i, j, float(dist[i, j])))
        free_t.discard(i)
        free_e.discard(j)
    return sorted(pairs)


# ---------------------------------------------------------------- bail cases

THEME_WORDS = {
    "murder": ["हत्या", "मृतक", "शव", "गोली", "चाकू", "पोस्टमार्टम", "खून", "लाश", "तमंचा", "चोटें", "मृत्यु", "वारदात"],
    "dowry": ["दहेज", "ससुराल", "पत्नी", "शादी", "मांग", "मृतका", "प्रताड़ित", "विवाह", "पुत्री", "बहन", "पति", "सास"],
    "theft": ["चोरी", "मोटरसाइकिल", "जेवरात", "नकदी", "ताला", "बरामदगी", "चोर", "मकान", "सामान", "गहने", "रात्रि", "दुकान"],
    "drugs": ["नशीला", "पाउडर", "ग्राम", "नमूना", "स्मैक", "चरस", "गांजा", "तस्करी", "पुड़िया", "बरामद", "स्वापक", "मादक"],
}

HINDU_NAMES = ["किशोर", "कुलदीप", "जयराम", "धीरेन्द्र", "नितिन"]
MUSLIM_NAMES = ["अब्दुल", "अहमद", "रिजवान", "सलीम"]

MITIGATING_WORD = "जमानतदार"
FILLER = ["ने", "के", "की", "में", "से", "को", "है", "और", "पर", "का"]


@dataclass(frozen=True)
class BiasSpec:
    muslim_denial: float = 0.9
    hindu_denial: float = 0.5
    mitigating_rate: float = 0.5
    # Denial probability when a surety is on record; the complementary rate is solved
    # so the community's marginal denial rate matches the target exactly.
    hindu_mitigated_denial: float = 0.1
    muslim_mitigated_denial: float = 0.85

    def denial_prob(self, muslim: bool, mitigated: bool) -> float:
        target = self.muslim_denial if muslim else self.hindu_denial
        low = self.muslim_mitigated_denial if muslim else self.hindu_mitigated_denial
        if mitigated:
            return low
        m = self.mitigating_rate
        return (target - m * low) / (1.0 - m)


def bail_corpus(n_cases: int = 2000, seed: int = 0, bias: BiasSpec | None = None,
                themes: list[str] | None = None, theme_tokens: int = 36,
                name_repeats: int = 6, with_noise: bool = True) -> list[CaseDocument]:
    """Generate Hindi bail cases with a planted community bias in the labels.

    Each case draws one crime theme and one accused name (Hindu or Muslim).
    The text mixes theme vocabulary, the repeated name, an optional
    surety word, Hindi function words, punctuation and occasional URLs.
    Label: denial probability set by community and surety per ``bias``.
    """
    bias = bias or BiasSpec()
    rng = np.random.default_rng(seed)
    themes = themes or list(THEME_WORDS)
    names = [(n, False) for n in HINDU_NAMES] + [(n, True) for n in MUSLIM_NAMES]
    cases = []
    for i in range(n_cases):
        theme = themes[rng.integers(len(themes))]
        name, muslim = names[rng.integers(len(names))]
        mitigated = bool(rng.random() < bias.mitigating_rate)
        vocab = THEME_WORDS[theme]
        # Zipf-like weights so each theme has a stable keyword ranking.
        w = 1.0 / np.arange(1, len(vocab) + 1)
        words = list(rng.choice(vocab, size=theme_tokens, p=w / w.sum()))
        words += [name] * name_repeats
        if mitigated:
            words += [MITIGATING_WORD] * 3
        order = rng.permutation(len(words))
        words = [words[j] for j in order]
        if with_noise:
            out = []
            for tok in words:
                out.append(tok)
                r = rng.random()
                if r < 0.25:
                    out.append(FILLER[rng.integers(len(FILLER))])
                elif r < 0.30:
                    out[-1] = tok + ","
                elif r < 0.33:
                    out.append("।")
            if rng.random() < 0.1:
                out.insert(int(rng.integers(len(out))), "https://districts.ecourts.gov.in/case")
            words = out
        denied = rng.random() < bias.denial_prob(muslim, mitigated)
        label = Label.DENIED if denied else Label.GRANTED
        cases.append(CaseDocument(f"case-{i:05d}", " ".join(words), label))
    return cases
