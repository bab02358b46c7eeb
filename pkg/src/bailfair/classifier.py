"""CART over categorical equality splits, with Laplace-smoothed leaves and seeded tuning."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Label

logger = logging.getLogger(__name__)

TREE_FORMAT_VERSION = 1
OBJECTIVES = ("macro_F1", "accuracy")


class ClassifierError(ValueError):
    pass


class SchemaMismatchError(ClassifierError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    max_depth: int = 5
    min_samples_leaf: int = 1
    min_impurity_decrease: float = 0.0

    def __post_init__(self):
        if self.max_depth < 0 or self.min_samples_leaf < 1 or self.min_impurity_decrease < 0:
            raise ValueError(f"invalid hyperparameters {self}")


@dataclass
class Node:
    counts: tuple[int, int]          # (n_denied, n_granted)
    slot: int = -1                   # -1 on leaves
    code: int = 0
    left: int = -1                   # child taken when x[slot] == code
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.slot < 0


@dataclass
class DecisionTree:
    nodes: list[Node]
    hyperparams: Hyperparams
    schema_hash: str | None = None

    def leaf_for(self, x: Sequence[int]) -> Node:
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if x[node.slot] == node.code else node.right]
        return node

    def depth(self) -> int:
        def walk(i):
            n = self.nodes[i]
            return 0 if n.is_leaf else 1 + max(walk(n.left), walk(n.right))
        return walk(0)

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf]

    def tested_slots(self) -> set[int]:
        return {n.slot for n in self.nodes if not n.is_leaf}

    def check_schema(self, schema_hash: str) -> None:
        if self.schema_hash is not None and schema_hash != self.schema_hash:
            raise SchemaMismatchError(
                f"tree was trained on schema {self.schema_hash[:12]}, dataset uses {schema_hash[:12]}")


def gini(counts: Sequence[int]) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("class counts must be nonnegative")
    n = counts.sum()
    if n == 0:
        raise ValueError("gini of an empty node is undefined")
    return float(1.0 - np.sum((counts / n) ** 2))


def _gini_rows(nd: np.ndarray, ng: np.ndarray) -> np.ndarray:
    n = nd + ng
    with np.errstate(invalid="ignore", divide="ignore"):
        g = 1.0 - (nd / n) ** 2 - (ng / n) ** 2
    return np.where(n > 0, g, 0.0)


def _best_split(X: np.ndarray, y: np.ndarray, hp: Hyperparams, n_total: int):
    n = y.shape[0]
    nd_all = int(np.sum(y == 0))
    ng_all = n - nd_all
    parent = gini((nd_all, ng_all))
    best = None  # (decrease, slot, code)
    for slot in range(X.shape[1]):
        codes, inv = np.unique(X[:, slot], return_inverse=True)
        if codes.shape[0] < 2:
            continue
        ng_l = np.bincount(inv, weights=y, minlength=codes.shape[0])
        n_l = np.bincount(inv, minlength=codes.shape[0]).astype(np.float64)
        nd_l = n_l - ng_l
        n_r = n - n_l
        ok = (n_l >= hp.min_samples_leaf) & (n_r >= hp.min_samples_leaf)
        if not ok.any():
            continue
        child = (n_l * _gini_rows(nd_l, ng_l) + n_r * _gini_rows(nd_all - nd_l, ng_all - ng_l)) / n
        dec = parent - child
        dec[~ok] = -np.inf
        j = int(np.argmax(dec))  # first max = lowest code within this slot
        if best is None or dec[j] > best[0]:
            best = (float(dec[j]), slot, int(codes[j]))
    if best is None:
        return None
    decrease, slot, code = best
    if (n / n_total) * decrease < hp.min_impurity_decrease:
        return None
    return slot, code


def fit_tree(X: np.ndarray, y: np.ndarray, hyperparams: Hyperparams | None = None,
             schema_hash: str | None = None) -> DecisionTree:
    """Greedy CART on integer-coded categorical slots.

    Every (slot, observed code) equality test is scored by weighted Gini
    decrease; ties go to the lower slot, then the lower code. Growth stops at
    ``max_depth``, on pure nodes, when no split leaves ``min_samples_leaf`` on
    both sides, or when the sample-weighted decrease falls below
    ``min_impurity_decrease``. Zero-gain splits are allowed, as in CART.
    """
    hp = hyperparams or Hyperparams()
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise ClassifierError("cannot fit a tree on an empty dataset")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ClassifierError(f"X shape {X.shape} does not match {y.shape[0]} labels")
    nodes: list[Node] = []
    n_total = y.shape[0]

    def grow(idx: np.ndarray, depth: int) -> int:
        yi = y[idx]
        nd = int(np.sum(yi == 0))
        me = len(nodes)
        nodes.append(Node((nd, len(idx) - nd)))
        if depth >= hp.max_depth or nd == 0 or nd == len(idx):
            return me
        split = _best_split(X[idx], yi, hp, n_total)
        if split is None:
            return me
        slot, code = split
        mask = X[idx, slot] == code
        nodes[me].slot, nodes[me].code = slot, code
        nodes[me].left = grow(idx[mask], depth + 1)
        nodes[me].right = grow(idx[~mask], depth + 1)
        return me

    grow(np.arange(n_total), 0)
    return DecisionTree(nodes, hp, schema_hash)


def predict_proba(tree: DecisionTree, x: Sequence[int]) -> float:
    """Laplace-smoothed probability of Denied at the reached leaf."""
    nd, ng = tree.leaf_for(x).counts
    return (nd + 1) / (nd + ng + 2)


def predict_label(tree: DecisionTree, x: Sequence[int]) -> Label:
    """Leaf majority; a tied leaf predicts Denied."""
    nd, ng = tree.leaf_for(x).counts
    return Label.DENIED if nd >= ng else Label.GRANTED


def predict_many(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    return np.array([int(predict_label(tree, x)) for x in X], dtype=np.int64)


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalMetrics:
    accuracy: float
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    macro_f1: float
    confusion: tuple[tuple[int, int], tuple[int, int]]  # rows true, cols predicted

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> EvalMetrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape[0] == 0:
        raise ClassifierError("cannot evaluate on an empty set")
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    prec, rec, f1 = [], [], []
    for c in (0, 1):
        tp = cm[c, c]
        p = tp / cm[:, c].sum() if cm[:, c].sum() else 0.0
        r = tp / cm[c, :].sum() if cm[c, :].sum() else 0.0
        prec.append(float(p))
        rec.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r else 0.0)
    return EvalMetrics(
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=tuple(prec),
        recall=tuple(rec),
        f1=tuple(f1),
        macro_f1=float(np.mean(f1)),
        confusion=tuple(tuple(int(v) for v in row) for row in cm),
    )


def evaluate(tree: DecisionTree, X: np.ndarray, y: np.ndarray) -> EvalMetrics:
    if len(y) == 0:
        raise ClassifierError("cannot evaluate on an empty set")
    return metrics_from_predictions(y, predict_many(tree, X))


# ---------------------------------------------------------------- tuning


@dataclass(frozen=True)
class TuneSpec:
    trials: int = 100
    seed: int = 0
    objective: str = "macro_F1"
    max_depth: tuple[int, int] = (2, 12)
    min_samples_leaf: tuple[int, int] = (1, 50)
    min_impurity_decrease: tuple[float, float] = (0.0, 0.05)

    def __post_init__(self):
        if self.trials < 1:
            raise ClassifierError("tuning needs at least one trial")
        if self.objective not in OBJECTIVES:
            raise ClassifierError(f"objective must be one of {OBJECTIVES}")
        for lo, hi in (self.max_depth, self.min_samples_leaf, self.min_impurity_decrease):
            if lo > hi:
                raise ClassifierError("empty search range")


@dataclass(frozen=True)
class Trial:
    trial: int
    hyperparams: Hyperparams
    objective: float


def draw_hyperparams(spec: TuneSpec) -> list[Hyperparams]:
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.trials):
        d = int(rng.integers(spec.max_depth[0], spec.max_depth[1] + 1))
        m = int(rng.integers(spec.min_samples_leaf[0], spec.min_samples_leaf[1] + 1))
        lo, hi = spec.min_impurity_decrease
        out.append(Hyperparams(d, m, float(lo + (hi - lo) * rng.random())))
    return out


def tune(train: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
         spec: TuneSpec, threads: int = 1) -> tuple[Hyperparams, list[Trial]]:
    """Seeded random search; fit on ``train``, score on ``val``.

    The winner maximises the objective; ties prefer the shallower tree, then
    the larger ``min_samples_leaf``, then the earlier trial.
    """
    Xtr, ytr = train
    Xva, yva = val
    draws = draw_hyperparams(spec)

    def score(item):
        i, hp = item
        m = evaluate(fit_tree(Xtr, ytr, hp), Xva, yva)
        return Trial(i, hp, m.macro_f1 if spec.objective == "macro_F1" else m.accuracy)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            log = list(pool.map(score, enumerate(draws)))
    else:
        log = [score(item) for item in enumerate(draws)]
    best = min(log, key=lambda t: (-t.objective, t.hyperparams.max_depth, -t.hyperparams.min_samples_leaf, t.trial))
    logger.info("tuning: best trial %d %s -> %s=%.4f", best.trial, best.hyperparams, spec.objective, best.objective)
    return best.hyperparams, log


def write_tuning_log(log: Sequence[Trial], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "max_depth", "min_samples_leaf", "min_impurity_decrease", "objective"])
        for t in log:
            hp = t.hyperparams
            w.writerow([t.trial, hp.max_depth, hp.min_samples_leaf, f"{hp.min_impurity_decrease:.10g}",
                        f"{t.objective:.10g}"])


# ---------------------------------------------------------------- artifacts


def tree_to_dict(tree: DecisionTree) -> dict:
    return {
        "format_version": TREE_FORMAT_VERSION,
        "schema_hash": tree.schema_hash,
        "hyperparams": asdict(tree.hyperparams),
        "nodes": [{"counts": list(n.counts), "slot": n.slot, "code": n.code, "left": n.left, "right": n.right}
                  for n in tree.nodes],
    }


def save_tree(tree: DecisionTree, path) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree), indent=1) + "\n", encoding="utf-8")


def load_tree(path) -> DecisionTree:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if d.get("format_version") != TREE_FORMAT_VERSION:
        raise ClassifierError(f"tree format version {d.get('format_version')!r} is not supported")
    nodes = [Node(tuple(n["counts"]), n["slot"], n["code"], n["left"], n["right"]) for n in d["nodes"]]
    return DecisionTree(nodes, Hyperparams(**d["hyperparams"]), d["schema_hash"])
