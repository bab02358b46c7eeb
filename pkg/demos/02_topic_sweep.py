# # Choosing the number of topics
#
# We fit LDA by collapsed Gibbs sampling for a few values of K, score each
# model by mean UMass coherence over its topics, and keep the most coherent
# one. Held-out perplexity is reported alongside but does not drive the choice.

from pathlib import Path

import bailfair.data
from bailfair.corpus import SplitSpec, load_corpus, load_stopwords, preprocess, split_corpus
from bailfair.topics import LdaConfig, sweep_topic_counts, top_keywords, train_lda

DATA = Path(bailfair.data.__file__).parent
stop = load_stopwords()
cases = [preprocess(d, stop) for d in load_corpus(DATA / "synthetic_bail_200.jsonl")]
train, val, _ = split_corpus(cases, SplitSpec(seed=0))

base = LdaConfig(K=3, iterations=200, burn_in=50, seed=1)
sweep = sweep_topic_counts(train, [2, 3, 4, 5, 6], base, held_out=val, fold_in_iters=20)
for r in sweep.records:
    print(f"K={r.K}  coherence={r.coherence:8.2f}  perplexity={r.perplexity:7.2f}")
print("chosen K:", sweep.chosen_K)

# ## What the topics look like
#
# With the chosen K the crime themes usually separate cleanly, while the
# accused names and the surety word gather in topics of their own.

model = train_lda(cases, LdaConfig(K=sweep.chosen_K, iterations=200, burn_in=50, seed=1))
for k in range(model.K):
    print(k, " ".join(top_keywords(model, k, 8).words))
