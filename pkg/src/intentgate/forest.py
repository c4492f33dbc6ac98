"""Random-forest classifier over sparse TF-IDF vectors.

Trees are grown with best-Gini splits over seeded random feature subsets.
Split thresholds are midpoints between consecutive distinct observed values;
absent sparse entries count as 0. Everything is deterministic for a fixed
seed: tree t of a fit draws its randomness from (seed, t), trial i of a tune
run from (seed, i), so both could be parallelized without changing results.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .base import ChatMessage, Intent, IntentGateError, IntentPrediction
from .features import FeatureVector, TfIdfModel, tfidf_from_dict, tfidf_to_dict, transform

logger = logging.getLogger(__name__)

MODEL_FORMAT = "1.0.0"

CLASSES: tuple[Intent, Intent] = (Intent.CONTINUE, Intent.CHANGE_TOPIC)


class EmptyCounts(IntentGateError):
    pass


class SingleClassTraining(IntentGateError):
    pass


class DimensionMismatch(IntentGateError):
    pass


class ModelFormatError(IntentGateError):
    pass


@dataclass(frozen=True)
class ForestParams:
    """Tunable surface of the forest."""

    n_trees: int = 200
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | str = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps != "sqrt":
                raise ValueError('features_per_split must be a positive int or "sqrt"')
        elif not isinstance(fps, int) or fps < 1:
            raise ValueError("features_per_split must be a positive int or \"sqrt\"")


@dataclass
class Tree:
    """One fitted tree as flat parallel arrays; feature == -1 marks a leaf.

    Flat storage keeps serialization non-recursive and prediction walks
    cheap; node 0 is the root.
    """

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    count_continue: list[int]
    count_change: list[int]

    def leaf_proportion(self, x: dict[int, float]) -> float:
        """Walk to the leaf for x and return its CHANGE_TOPIC proportion."""
        node = 0
        feature = self.feature
        while feature[node] >= 0:
            if x.get(feature[node], 0.0) <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]
        total = self.count_continue[node] + self.count_change[node]
        return self.count_change[node] / total


@dataclass(frozen=True)
class RandomForestModel:
    trees: tuple[Tree, ...]
    n_features: int
    params: ForestParams

    classes: tuple[Intent, Intent] = CLASSES


def gini(class_counts: Sequence[float]) -> float:
    """CART impurity 1 - sum(p_i^2) over class proportions."""
    if len(class_counts) == 0:
        raise EmptyCounts("no class counts")
    if any(c < 0 for c in class_counts):
        raise ValueError("class counts must be non-negative")
    total = sum(class_counts)
    if total <= 0:
        raise EmptyCounts("class counts sum to zero")
    return 1.0 - sum((c / total) ** 2 for c in class_counts)


def _mask_seed(seed: int) -> int:
    return seed & 0xFFFFFFFFFFFFFFFF


def _resolve_features_per_split(spec_value: int | str, n_features: int) -> int:
    if spec_value == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    return max(1, min(int(spec_value), n_features))


@dataclass
class _Csr:
    """Row-compressed copy of the training matrix."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_rows: int
    n_cols: int


def _to_csr(X: Sequence[FeatureVector]) -> _Csr:
    n_cols = X[0].dimension
    indptr = np.zeros(len(X) + 1, dtype=np.int64)
    cols: list[int] = []
    vals: list[float] = []
    for i, vector in enumerate(X):
        if vector.dimension != n_cols:
            raise DimensionMismatch(
                f"vector {i} has dimension {vector.dimension}, expected {n_cols}"
            )
        for index, weight in vector.entries:
            if not 0 <= index < n_cols:
                raise DimensionMismatch(f"vector {i} has index {index} outside [0, {n_cols})")
            if weight < 0:
                raise ValueError("forest training requires non-negative feature values")
            if weight != 0.0:
                cols.append(index)
                vals.append(weight)
        indptr[i + 1] = len(cols)
    return _Csr(
        indptr=indptr,
        indices=np.asarray(cols, dtype=np.int64),
        data=np.asarray(vals, dtype=np.float64),
        n_rows=len(X),
        n_cols=n_cols,
    )


class _TreeGrower:
    """Grows one tree from a bootstrap sample of a shared CSR matrix.

    The sample's nonzero entries are flattened once into (feature, value,
    row) triples sorted by (feature, value); each node then scans only its
    own triples, so split search cost tracks the node's nonzero count rather
    than n_rows * n_features.
    """

    def __init__(
        self,
        csr: _Csr,
        y01: np.ndarray,
        sample_rows: np.ndarray,
        params: ForestParams,
        rng: np.random.Generator,
    ):
        self.n = sample_rows.size
        self.d = csr.n_cols
        self.params = params
        self.rng = rng
        self.k = _resolve_features_per_split(params.features_per_split, self.d)
        self.y = y01[sample_rows].astype(np.int64)

        counts = csr.indptr[sample_rows + 1] - csr.indptr[sample_rows]
        total = int(counts.sum())
        if total:
            starts = np.repeat(csr.indptr[sample_rows], counts)
            within = np.arange(total, dtype=np.int64) - np.repeat(
                np.cumsum(counts) - counts, counts
            )
            src = starts + within
            efeat = csr.indices[src]
            evalue = csr.data[src]
            erow = np.repeat(np.arange(self.n, dtype=np.int64), counts)
            order = np.lexsort((evalue, efeat))
            self.efeat = efeat[order]
            self.evalue = evalue[order]
            self.erow = erow[order]
        else:
            self.efeat = np.empty(0, dtype=np.int64)
            self.evalue = np.empty(0, dtype=np.float64)
            self.erow = np.empty(0, dtype=np.int64)

    def grow(self) -> Tree:
        tree = Tree([], [], [], [], [], [])
        msl = self.params.min_samples_leaf
        max_depth = self.params.max_depth
        stack: list[tuple[np.ndarray, int, int, bool]] = [
            (np.arange(self.n, dtype=np.int64), 0, -1, False)
        ]
        while stack:
            rows, depth, parent, is_left = stack.pop()
            idx = self._add_node(tree)
            if parent >= 0:
                if is_left:
                    tree.left[parent] = idx
                else:
                    tree.right[parent] = idx
            n_node = rows.size
            n_pos = int(self.y[rows].sum())
            tree.count_continue[idx] = n_node - n_pos
            tree.count_change[idx] = n_pos
            if n_pos == 0 or n_pos == n_node:
                continue
            if max_depth is not None and depth >= max_depth:
                continue
            if n_node < 2 * msl:
                continue
            split = self._best_split(rows, n_node, n_pos)
            if split is None:
                continue
            feat, thr, left_rows, right_rows = split
            tree.feature[idx] = feat
            tree.threshold[idx] = thr
            stack.append((right_rows, depth + 1, idx, False))
            stack.append((left_rows, depth + 1, idx, True))
        return tree

    @staticmethod
    def _add_node(tree: Tree) -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.count_continue.append(0)
        tree.count_change.append(0)
        return len(tree.feature) - 1

    def _best_split(
        self, rows: np.ndarray, n_node: int, n_pos: int
    ) -> tuple[int, float, np.ndarray, np.ndarray] | None:
        selected = self.rng.choice(self.d, size=self.k, replace=False)
        selected.sort()

        member = np.zeros(self.n, dtype=bool)
        member[rows] = True
        selmask = np.zeros(self.d, dtype=bool)
        selmask[selected] = True
        keep = member[self.erow] & selmask[self.efeat]
        f = self.efeat[keep]
        v = self.evalue[keep]
        rowpos = self.erow[keep]
        m = f.size
        if m == 0:
            return None
        yv = self.y[rowpos]

        # per-feature segments of the (feature, value)-sorted triples
        new_seg = np.empty(m, dtype=bool)
        new_seg[0] = True
        new_seg[1:] = f[1:] != f[:-1]
        seg_id = np.cumsum(new_seg) - 1
        seg_first = np.flatnonzero(new_seg)
        seg_len = np.diff(np.append(seg_first, m))
        seg_last = seg_first + seg_len - 1

        cpos = np.cumsum(yv)
        before = np.where(seg_first > 0, cpos[seg_first - 1], 0)
        pos_left = cpos - before[seg_id]
        cnt_left = np.arange(m, dtype=np.int64) - seg_first[seg_id] + 1
        seg_pos_total = pos_left[seg_last]
        zeros = n_node - seg_len
        zeros_pos = n_pos - seg_pos_total

        # (a) cut between the implicit zero block and the smallest nonzero
        amask = zeros >= 1
        a_nL = zeros[amask]
        a_pL = zeros_pos[amask]
        a_thr = v[seg_first[amask]] / 2.0
        a_feat = f[seg_first[amask]]

        # (b) cuts between consecutive distinct nonzero values
        bmask = np.zeros(m, dtype=bool)
        if m > 1:
            bmask[:-1] = (seg_id[:-1] == seg_id[1:]) & (v[:-1] < v[1:])
        b_idx = np.flatnonzero(bmask)
        b_nL = zeros[seg_id[b_idx]] + cnt_left[b_idx]
        b_pL = zeros_pos[seg_id[b_idx]] + pos_left[b_idx]
        b_thr = (v[b_idx] + v[b_idx + 1]) / 2.0
        b_feat = f[b_idx]

        nL = np.concatenate([a_nL, b_nL])
        if nL.size == 0:
            return None
        pL = np.concatenate([a_pL, b_pL])
        thr = np.concatenate([a_thr, b_thr])
        feat = np.concatenate([a_feat, b_feat])

        msl = self.params.min_samples_leaf
        valid = (nL >= msl) & (n_node - nL >= msl)
        if not valid.any():
            return None
        nL, pL, thr, feat = nL[valid], pL[valid], thr[valid], feat[valid]

        nLf = nL.astype(np.float64)
        pLf = pL.astype(np.float64)
        nRf = n_node - nLf
        pRf = n_pos - pLf
        gini_left = 2.0 * pLf * (nLf - pLf) / (nLf * nLf)
        gini_right = 2.0 * pRf * (nRf - pRf) / (nRf * nRf)
        weighted = (nLf * gini_left + nRf * gini_right) / n_node
        parent = 2.0 * n_pos * (n_node - n_pos) / (n_node * n_node)
        gain = parent - weighted

        # argmax gain; exact ties resolved by lowest feature then threshold
        best = np.lexsort((thr, feat, -gain))[0]
        best_feat = int(feat[best])
        best_thr = float(thr[best])

        on_feat = f == best_feat
        pos_of = np.empty(self.n, dtype=np.int64)
        pos_of[rows] = np.arange(rows.size)
        vals = np.zeros(rows.size, dtype=np.float64)
        vals[pos_of[rowpos[on_feat]]] = v[on_feat]
        left_mask = vals <= best_thr
        left_rows = rows[left_mask]
        right_rows = rows[~left_mask]
        if left_rows.size == 0 or right_rows.size == 0:
            # midpoint collapsed onto an observed value (adjacent floats)
            return None
        return best_feat, best_thr, left_rows, right_rows


def fit_forest(
    X: Sequence[FeatureVector], y: Sequence[Intent], params: ForestParams
) -> RandomForestModel:
    """Train a seeded forest; both classes must be present."""
    if len(X) != len(y):
        raise DimensionMismatch(f"{len(X)} vectors but {len(y)} labels")
    if len(X) < 2:
        raise ValueError("training needs at least 2 examples")
    y01 = np.array([1 if label is Intent.CHANGE_TOPIC else 0 for label in y], dtype=np.int64)
    if y01.min() == y01.max():
        raise SingleClassTraining("training labels contain a single class")
    csr = _to_csr(X)
    trees: list[Tree] = []
    base = _mask_seed(params.seed)
    for t in range(params.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([base, 0, t]))
        if params.bootstrap:
            sample_rows = rng.integers(0, csr.n_rows, size=csr.n_rows)
        else:
            sample_rows = np.arange(csr.n_rows, dtype=np.int64)
        trees.append(_TreeGrower(csr, y01, sample_rows, params, rng).grow())
    return RandomForestModel(trees=tuple(trees), n_features=csr.n_cols, params=params)


def predict_proba(model: RandomForestModel, x: FeatureVector) -> float:
    """Mean over trees of the reached leaf's CHANGE_TOPIC proportion."""
    if x.dimension != model.n_features:
        raise DimensionMismatch(
            f"vector dimension {x.dimension} != model dimension {model.n_features}"
        )
    xd = x.as_dict()
    return sum(tree.leaf_proportion(xd) for tree in model.trees) / len(model.trees)


def predict_proba_many(model: RandomForestModel, X: Sequence[FeatureVector]) -> list[float]:
    return [predict_proba(model, x) for x in X]


def classify(
    forest: RandomForestModel,
    tfidf: TfIdfModel,
    text: str,
    threshold: float = 0.5,
) -> IntentPrediction:
    """Vectorize and score one message; CHANGE_TOPIC iff probability >= threshold.

    The boundary is inclusive on purpose: offering navigation is the cheaper
    mistake when a confirmation turn follows.
    """
    start = time.perf_counter()
    probability = predict_proba(forest, transform(tfidf, text))
    latency = time.perf_counter() - start
    intent = Intent.CHANGE_TOPIC if probability >= threshold else Intent.CONTINUE
    return IntentPrediction(
        intent=intent,
        confidence=probability,
        latency_seconds=latency,
        raw=f"p_change={probability:.6f}",
    )


@dataclass(frozen=True)
class ModelBundle:
    """Everything the local classifier needs, as persisted in one file."""

    tfidf: TfIdfModel
    forest: RandomForestModel
    threshold: float = 0.5


class ForestClassifier:
    """Local forest behind the shared classifier interface (context is unused)."""

    def __init__(self, bundle: ModelBundle, label: str = "random_forest"):
        self.bundle = bundle
        self.label = label

    def classify(self, context: Sequence[ChatMessage], text: str) -> IntentPrediction:
        return classify(
            self.bundle.forest, self.bundle.tfidf, text, self.bundle.threshold
        )


def _tree_to_dict(tree: Tree) -> dict:
    return {
        "feature": tree.feature,
        "threshold": tree.threshold,
        "left": tree.left,
        "right": tree.right,
        "count_continue": tree.count_continue,
        "count_change": tree.count_change,
    }


def _tree_from_dict(payload: dict) -> Tree:
    return Tree(
        feature=[int(x) for x in payload["feature"]],
        threshold=[float(x) for x in payload["threshold"]],
        left=[int(x) for x in payload["left"]],
        right=[int(x) for x in payload["right"]],
        count_continue=[int(x) for x in payload["count_continue"]],
        count_change=[int(x) for x in payload["count_change"]],
    )


def save_model(bundle: ModelBundle, path: str | Path) -> None:
    params = bundle.forest.params
    payload = {
        "format": MODEL_FORMAT,
        "kind": "intentgate-forest",
        "threshold": bundle.threshold,
        "tfidf": tfidf_to_dict(bundle.tfidf),
        "forest": {
            "n_features": bundle.forest.n_features,
            "classes": [c.value for c in bundle.forest.classes],
            "params": {
                "n_trees": params.n_trees,
                "max_depth": params.max_depth,
                "min_samples_leaf": params.min_samples_leaf,
                "features_per_split": params.features_per_split,
                "bootstrap": params.bootstrap,
                "seed": params.seed,
            },
            "trees": [_tree_to_dict(tree) for tree in bundle.forest.trees],
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(payload, handle)
        handle.write("\n")


def load_model(path: str | Path) -> ModelBundle:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    fmt = payload.get("format", "")
    try:
        major = int(str(fmt).split(".")[0])
    except ValueError:
        raise ModelFormatError(f"unparseable format field: {fmt!r}") from None
    if major != int(MODEL_FORMAT.split(".")[0]):
        raise ModelFormatError(f"unsupported model format major version: {fmt}")
    forest_payload = payload["forest"]
    raw_params = forest_payload["params"]
    params = ForestParams(
        n_trees=int(raw_params["n_trees"]),
        max_depth=None if raw_params["max_depth"] is None else int(raw_params["max_depth"]),
        min_samples_leaf=int(raw_params["min_samples_leaf"]),
        features_per_split=(
            raw_params["features_per_split"]
            if raw_params["features_per_split"] == "sqrt"
            else int(raw_params["features_per_split"])
        ),
        bootstrap=bool(raw_params["bootstrap"]),
        seed=int(raw_params["seed"]),
    )
    forest = RandomForestModel(
        trees=tuple(_tree_from_dict(t) for t in forest_payload["trees"]),
        n_features=int(forest_payload["n_features"]),
        params=params,
    )
    return ModelBundle(
        tfidf=tfidf_from_dict(payload["tfidf"]),
        forest=forest,
        threshold=float(payload["threshold"]),
    )


@dataclass(frozen=True)
class SearchSpace:
    """Random-search ranges; float feature fractions resolve against the data."""

    n_trees: tuple[int, int] = (50, 400)
    max_depth_choices: tuple[int | None, ...] = tuple(range(4, 33)) + (None,)
    min_samples_leaf: tuple[int, int] = (1, 8)
    features_per_split_choices: tuple[int | float | str, ...] = ("sqrt", 0.1, 0.3)


def sample_params(space: SearchSpace, n_features: int, rng: np.random.Generator) -> ForestParams:
    fps = space.features_per_split_choices[
        int(rng.integers(0, len(space.features_per_split_choices)))
    ]
    if isinstance(fps, float):
        fps = max(1, int(round(fps * n_features)))
    return ForestParams(
        n_trees=int(rng.integers(space.n_trees[0], space.n_trees[1] + 1)),
        max_depth=space.max_depth_choices[int(rng.integers(0, len(space.max_depth_choices)))],
        min_samples_leaf=int(
            rng.integers(space.min_samples_leaf[0], space.min_samples_leaf[1] + 1)
        ),
        features_per_split=fps,
        bootstrap=True,
        seed=int(rng.integers(0, 2**63)),
    )


@dataclass(frozen=True)
class TrialResult:
    index: int
    params: ForestParams
    macro_f1: float


@dataclass(frozen=True)
class TuneResult:
    params: ForestParams
    macro_f1: float
    trials: tuple[TrialResult, ...]


def _depth_rank(depth: int | None) -> float:
    return math.inf if depth is None else float(depth)


def tune(
    train: tuple[Sequence[FeatureVector], Sequence[Intent]],
    val: tuple[Sequence[FeatureVector], Sequence[Intent]],
    space: SearchSpace | None = None,
    budget: int = 25,
    seed: int = 0,
    threshold: float = 0.5,
) -> TuneResult:
    """Seeded uniform random search maximizing validation macro-F1.

    Trial i draws all of its randomness from (seed, i), so growing the budget
    only appends trials: the best result is monotonically non-decreasing in
    budget for a fixed seed. Ties go to fewer trees, then shallower depth.
    """
    from .bench import ConfusionMatrix, metrics_from_confusion

    if budget < 1:
        raise ValueError("budget must be >= 1")
    if space is None:
        space = SearchSpace()
    X_train, y_train = train
    X_val, y_val = val
    if not X_train or not X_val:
        raise ValueError("train and validation sets must be non-empty")
    n_features = X_train[0].dimension
    best: TrialResult | None = None
    trials: list[TrialResult] = []
    base = _mask_seed(seed)
    for i in range(budget):
        rng = np.random.default_rng(np.random.SeedSequence([base, 1, i]))
        params = sample_params(space, n_features, rng)
        try:
            model = fit_forest(X_train, y_train, params)
        except IntentGateError as exc:
            logger.warning("tune trial %d failed: %s", i, exc)
            continue
        probs = predict_proba_many(model, X_val)
        tp = fp = fn = tn = 0
        for p, label in zip(probs, y_val):
            predicted_change = p >= threshold
            if label is Intent.CHANGE_TOPIC:
                if predicted_change:
                    tp += 1
                else:
                    fn += 1
            else:
                if predicted_change:
                    fp += 1
                else:
                    tn += 1
        score = metrics_from_confusion(
            ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)
        ).macro_f1
        trial = TrialResult(index=i, params=params, macro_f1=score)
        trials.append(trial)
        if best is None or _trial_key(trial) > _trial_key(best):
            best = trial
    if best is None:
        raise RuntimeError("all tuning trials failed")
    return TuneResult(params=best.params, macro_f1=best.macro_f1, trials=tuple(trials))


def _trial_key(trial: TrialResult) -> tuple[float, float, float]:
    return (
        trial.macro_f1,
        -float(trial.params.n_trees),
        -_depth_rank(trial.params.max_depth),
    )
