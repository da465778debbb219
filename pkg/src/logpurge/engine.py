"""Two-stage purification.

Stage 1 judges K-means regions through their density-peak representatives,
accumulates low-contamination regions into the training set, and turns
validation disagreements of a cheap detector into domain rules, until the
low-contamination membership stops expanding. Stage 2 projects every
low-contamination region to 2-D, subdivides it, and judges each sub-region
once with the frozen rules.

Ground-truth labels are read only when ``with_labels=True``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import ANOMALOUS, HIGH, LOW, NORMAL, EmbeddingMatrix, RuleSet
from .detector import NgramDetector
from .evaluator import ErrorSample, Evaluator, Representative, select_error_representatives
from .exceptions import InvalidConfig, NoLowRegions, PartitionMismatch, TooFewPoints
from .projection import TSNE, subdivide
from .regions import KMeans, build_regions, select_representatives

log = logging.getLogger(__name__)


def converged(prev, cur, universe=None) -> bool:
    """True once the low-contamination membership no longer expands.

    Sets are compared by member seq ids; shrinkage also counts as converged.
    """
    prev, cur = frozenset(prev), frozenset(cur)
    if universe is not None:
        universe = frozenset(universe)
        if not (prev <= universe and cur <= universe):
            raise PartitionMismatch("membership sets reference ids outside the partition")
    return cur <= prev


@dataclass
class StageState:
    iteration: int
    rules: RuleSet
    low_regions: frozenset
    low_members: frozenset
    train_set: frozenset
    error_set: frozenset = frozenset()
    error_representatives: tuple = ()
    new_rules: tuple = ()


@dataclass
class SubRegionOutcome:
    region_id: int
    members: tuple
    label: str
    score: float
    n_representatives: int


def _as_matrix(X):
    return X.rows if isinstance(X, EmbeddingMatrix) else np.asarray(X, dtype=np.float64)


class LogPurge(BaseEstimator):
    """Select a clean training subset from contaminated log sequences.

    Parameters
    ----------
    evaluator : Evaluator
        Judgment backend; needs the template texts of the corpus.
    K : int, default=20
        Number of Stage-1 regions.
    k_nn, epsilon, r_min, M
        Density-peak representative selection (``r_min="auto"`` uses half the
        median pairwise distance of each region).
    n_max : int, default=5
        Cap on Stage-1 iterations.
    percentile : float, default=80
        Stage-2 cut: a sub-region scoring strictly above this percentile of
        the non-zero sub-region scores is treated as highly contaminated.
    min_size : int, default=10
        Smallest sub-region; smaller regions are not subdivided.
    val_fraction : float, default=0.2
    stage2 : bool, default=True
    with_labels : bool, default=False
        Use ground truth as the reference for validation errors.
    detector_n, detector_top_k
        N-gram detector used in the validation loop.
    perplexity, tsne_iter, learning_rate
        t-SNE settings; perplexity shrinks to ``(n - 1) / 3`` on small regions.
    random_state : int, default=0
    """

    def __init__(self, evaluator=None, K=20, k_nn=10, epsilon=1e-6, r_min="auto", M=5, n_max=5,
                 percentile=80.0, min_size=10, val_fraction=0.2, stage2=True, with_labels=False,
                 detector_n=3, detector_top_k=5, perplexity=30.0, tsne_iter=1000, learning_rate=200.0,
                 random_state=0):
        self.evaluator = evaluator
        self.K = K
        self.k_nn = k_nn
        self.epsilon = epsilon
        self.r_min = r_min
        self.M = M
        self.n_max = n_max
        self.percentile = percentile
        self.min_size = min_size
        self.val_fraction = val_fraction
        self.stage2 = stage2
        self.with_labels = with_labels
        self.detector_n = detector_n
        self.detector_top_k = detector_top_k
        self.perplexity = perplexity
        self.tsne_iter = tsne_iter
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, sequences):
        X = _as_matrix(X)
        if len(sequences) != X.shape[0]:
            raise InvalidConfig("one embedding row per sequence required")
        if self.evaluator is None:
            raise InvalidConfig("an evaluator is required")
        n = X.shape[0]
        if n < self.K:
            raise TooFewPoints(f"{n} sequences for K={self.K}")
        self.timings_ = {}
        self._seqs = [tuple(s.template_ids) for s in sequences]
        self._truth = [s.ground_truth for s in sequences] if self.with_labels else None
        if self.with_labels and any(t is None for t in self._truth):
            raise InvalidConfig("with_labels requires every sequence to be labelled")

        n_templates = 1 + max(max(s) for s in self._seqs)
        df = np.zeros(n_templates, dtype=np.int64)
        for s in self._seqs:
            df[np.unique(s)] += 1
        self._df = df

        train = self._stage1(X)
        self.stage1_train_set_ = frozenset(train)
        if self.stage2:
            train = self._stage2(X, train)
        else:
            self.subregions_ = []
            self.layouts_ = {}
        support = np.zeros(n, dtype=bool)
        support[sorted(train)] = True
        self.support_ = support
        self.selected_ids_ = np.flatnonzero(support)
        del self._seqs, self._truth
        return self

    def get_support(self, indices=False):
        check_is_fitted(self, "support_")
        return self.selected_ids_.copy() if indices else self.support_.copy()

    def transform(self, sequences):
        """The selected sequences, in seq_id order."""
        check_is_fitted(self, "support_")
        return [sequences[i] for i in self.selected_ids_]

    # -- stage 1 -------------------------------------------------------------

    def _reps(self, rep_set):
        return [Representative(i, self._seqs[i]) for i in rep_set.members]

    def _stage1(self, X):
        t0 = time.perf_counter()
        n = X.shape[0]
        rng = np.random.default_rng(self.random_state)
        n_val = max(1, int(round(self.val_fraction * n)))
        val = np.sort(rng.choice(n, n_val, replace=False))
        self.validation_ids_ = val
        val_set = frozenset(val.tolist())

        # Embeddings and seed are fixed across iterations, so re-clustering
        # would reproduce the same partition; compute it once.
        km = KMeans(n_clusters=self.K, random_state=self.random_state).fit(X)
        regions = build_regions(X, km.partition_, self.k_nn, self.r_min, self.M, self.epsilon)
        region_of = km.labels_
        self.regions_ = regions
        n_reps = sum(len(r.representatives.members) for r in regions)
        self.representative_fraction_ = n_reps / n
        if n >= 500 and n_reps > 0.1 * n:
            log.warning("representatives cover %.0f%% of the sequences (soft limit 10%%)", 100 * n_reps / n)
        self.timings_["regions"] = time.perf_counter() - t0

        rules = RuleSet()
        train = set()
        prev_low = None
        history = []
        self.converged_ = False
        for t in range(1, self.n_max + 1):
            verdicts = [self.evaluator.judge_region(self._reps(r.representatives), rules) for r in regions]
            low = frozenset(r.region_id for r, v in zip(regions, verdicts) if v.label == LOW)
            if t == 1 and not low:
                raise NoLowRegions("every region was judged highly contaminated on the first pass")
            low_members = frozenset(i for k in low for i in regions[k].member_ids)
            train |= low_members
            state = StageState(t, rules, low, low_members, frozenset(train))
            history.append(state)
            self.region_verdicts_ = verdicts
            if prev_low is not None and converged(prev_low, low_members, range(n)):
                self.converged_ = True
                break
            prev_low = low_members
            if t == self.n_max:
                break

            fit_ids = sorted(train - val_set)
            if not fit_ids:
                continue
            det = NgramDetector(self.detector_n, self.detector_top_k).fit([self._seqs[i] for i in fit_ids])
            pred = det.predict([self._seqs[i] for i in val])
            errors = {}
            for v, p in zip(val, pred):
                det_label = ANOMALOUS if p else NORMAL
                if self.with_labels:
                    ref = self._truth[v]
                else:
                    ref = ANOMALOUS if verdicts[region_of[v]].label == HIGH else NORMAL
                if det_label != ref:
                    target = ref if self.with_labels else det_label
                    errors[int(v)] = ErrorSample(int(v), self._seqs[v], det_label, ref, target)
            state.error_set = frozenset(errors)
            if not errors:
                continue
            chosen = select_error_representatives(list(errors), X, self.k_nn, self.r_min, self.M)
            new = self.evaluator.induce_rules([errors[i] for i in chosen], t,
                                              document_frequency=self._df, n_documents=n)
            before = len(rules)
            rules = rules.extend(new)
            state.error_representatives = tuple(chosen)
            state.new_rules = rules.rules[before:]
            log.info("stage1 iteration %d: %d low regions, %d errors, %d new rules",
                     t, len(low), len(errors), len(rules) - before)

        self.rules_ = rules
        self.stage1_history_ = history
        self.n_iter_ = len(history)
        self.low_regions_ = frozenset(
            r.region_id for r in regions if set(r.member_ids) <= train)
        self.timings_["stage1"] = time.perf_counter() - t0
        return train

    # -- stage 2 -------------------------------------------------------------

    def _stage2(self, X, train):
        t0 = time.perf_counter()
        floor = max(10, 2 * self.min_size)
        outcomes = []
        layouts = {}
        for k in sorted(self.low_regions_):
            members = np.asarray(self.regions_[k].member_ids)
            if len(members) < floor:
                continue
            perplexity = min(self.perplexity, (len(members) - 1) / 3.0 - 1e-6)
            Y = TSNE(perplexity=perplexity, n_iter=self.tsne_iter, learning_rate=self.learning_rate,
                     random_state=self.random_state, kl_every=0).fit_transform(X[members])
            layouts[k] = (members, Y)
            sub = subdivide(Y, self.min_size, seed=self.random_state)
            for group in sub.groups:
                ids = members[group]
                if len(ids) < self.min_size:
                    outcomes.append(SubRegionOutcome(k, tuple(ids.tolist()), LOW, 0.0, 0))
                    continue
                reps = select_representatives(ids, X, self.k_nn, "auto" if self.r_min == "auto" else self.r_min,
                                              self.M, self.epsilon)
                verdict = self.evaluator.judge_region(self._reps(reps), self.rules_)
                score = verdict.score if verdict.score is not None else float(verdict.label == HIGH)
                outcomes.append(SubRegionOutcome(k, tuple(ids.tolist()), verdict.label, score,
                                                 len(reps.members)))
        if outcomes:
            # Zero scores carry no evidence; over a mostly-zero distribution the
            # percentile would collapse to "any hit", so rank the non-zero ones.
            scores = np.array([o.score for o in outcomes])
            scores = scores[scores > 0]
            cut = float(np.percentile(scores, self.percentile)) if scores.size else np.inf
            self.stage2_cut_ = cut
            for o in outcomes:
                if o.label == LOW and o.score > cut and o.n_representatives:
                    o.label = HIGH
        else:
            self.stage2_cut_ = None
        removed = {i for o in outcomes if o.label == HIGH for i in o.members}
        self.subregions_ = outcomes
        self.layouts_ = layouts
        self.timings_["stage2"] = time.perf_counter() - t0
        return set(train) - removed
