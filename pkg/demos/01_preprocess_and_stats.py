# # Preprocessing Hindi case text
#
# The bundled corpus holds 200 synthetic bail cases written in Devanagari,
# with commas, dandas, filler words and the odd URL mixed in. Here we load
# it, clean one case by hand, and compare token counts before and after.

from pathlib import Path

import bailfair.data
from bailfair.corpus import Partition, corpus_stats, load_corpus, load_stopwords, preprocess

DATA = Path(bailfair.data.__file__).parent

docs = load_corpus(DATA / "synthetic_bail_200.jsonl")
stop = load_stopwords()
print(len(docs), "cases,", len(stop), "stopwords")

# One raw case next to its cleaned tokens. URLs go first, then the text is
# split on whitespace and dandas, punctuation is stripped and stopwords dropped.

doc = docs[0]
print(doc.facts[:160])
print(preprocess(doc, stop).tokens[:20])

# ## Token counts per label
#
# Original counts use the same delimiters as the tokenizer but keep
# everything; the preprocessed counts can only be smaller.

tokenized = [preprocess(d, stop) for d in docs]
for part in Partition:
    before = corpus_stats(docs, part)
    after = corpus_stats(tokenized, part)
    print(f"{part.value:13s} original mean {before.mean:6.2f} median {before.median:5.1f}"
          f"   cleaned mean {after.mean:6.2f} median {after.median:5.1f} (min {after.min}, max {after.max})")
