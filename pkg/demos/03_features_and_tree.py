# # From topics to a decision tree
#
# Every case becomes seven categorical slots: three keywords from its dominant
# topic, two from the second topic, and two crime themes. A small CART tree is
# tuned by random search on the validation split.

from pathlib import Path

import bailfair.data
from bailfair.classifier import TuneSpec, evaluate, fit_tree, tune
from bailfair.corpus import SplitSpec, load_corpus, load_stopwords, preprocess, split_corpus
from bailfair.features import SLOT_NAMES, build_dataset, load_theme_lexicon
from bailfair.topics import LdaConfig, train_lda

DATA = Path(bailfair.data.__file__).parent
stop = load_stopwords()
cases = [preprocess(d, stop) for d in load_corpus(DATA / "synthetic_bail_200.jsonl")]
model = train_lda(cases, LdaConfig(K=5, iterations=200, burn_in=50, seed=1))
vectors, schema = build_dataset(model, cases, load_theme_lexicon())

for v in vectors[:3]:
    print(dict(zip(SLOT_NAMES, v.values)), v.label.name)

# Split the feature vectors the same way as the cases and integer-encode them.

train, val, test = split_corpus(vectors, SplitSpec(seed=0))
tr, va, te = (schema.encode_many(part) for part in (train, val, test))
best, log = tune(tr, va, TuneSpec(trials=50, seed=2))
tree = fit_tree(*tr, best, schema_hash=schema.hash())
print(best, "depth", tree.depth(), "leaves", len(tree.leaves()))

m = evaluate(tree, *te)
print(f"test accuracy {m.accuracy:.3f}, macro F1 {m.macro_f1:.3f}")
print("confusion (rows true denied/granted):", m.confusion)
print("slots the tree looks at:", sorted(SLOT_NAMES[s] for s in tree.tested_slots()))
