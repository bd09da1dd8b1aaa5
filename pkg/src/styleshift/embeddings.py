"""Bag-of-n-gram classifiers whose last hidden layer doubles as the attribute
embedding space, plus the logistic map from a new label space into it."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils import murmurhash3_32
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_label, check_token_lists, check_X_y
from .corpus import Corpus, Example, balanced_batches


def hash_ngrams(tokens, n_buckets: int, ngram_range=(1, 2)) -> np.ndarray:
    """Bucket ids of the word n-grams of ``tokens`` (murmurhash3, seed 0)."""
    lo, hi = ngram_range
    ids = []
    for n in range(lo, hi + 1):
        for i in range(len(tokens) - n + 1):
            ids.append(murmurhash3_32(" ".join(tokens[i:i + n]), seed=0, positive=True) % n_buckets)
    return np.array(ids, dtype=np.int64)


def _pad(rows):
    width = max(1, max(len(r) for r in rows))
    ids = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width))
    for i, r in enumerate(rows):
        ids[i, :len(r)] = r
        mask[i, :len(r)] = 1.0
    return ids, mask


class NgramClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Averaged hashed n-gram embeddings -> tanh hidden layer -> class scores.

    Class scores are dot products between the hidden vector and one row per
    class of ``class_embeddings_``; ``transform`` returns the unit-norm hidden
    vectors.
    """

    def __init__(self, hidden_dim=8, embed_dim=32, n_buckets=2 ** 16, ngram_range=(1, 2),
                 max_steps=3000, batch_size=64, learning_rate=0.5, gradient_clip_norm=5.0,
                 random_state=0):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.n_buckets = n_buckets
        self.ngram_range = ngram_range
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gradient_clip_norm = gradient_clip_norm
        self.random_state = random_state

    # --------------------------------------------------------------- fitting

    def _init_params(self, n_classes, rng):
        self.ngram_embeddings_ = ad.parameter(rng.normal(0, 0.1, (self.n_buckets, self.embed_dim)),
                                              "ngram_embeddings")
        lim = np.sqrt(6 / (self.embed_dim + self.hidden_dim))
        self.hidden_weights_ = ad.parameter(rng.uniform(-lim, lim, (self.embed_dim, self.hidden_dim)),
                                            "hidden_weights")
        lim = np.sqrt(6 / (self.hidden_dim + n_classes))
        self.class_embeddings_ = ad.parameter(rng.uniform(-lim, lim, (n_classes, self.hidden_dim)),
                                              "class_embeddings")

    @property
    def params_(self):
        return [self.ngram_embeddings_, self.hidden_weights_, self.class_embeddings_]

    def fit(self, X, y=None, validation_data=None):
        """Fit on texts ``X`` with labels ``y``, or on a :class:`Corpus` (keeps its label order)."""
        labels = list(X.labels) if isinstance(X, Corpus) else None
        X, y = check_X_y(X, y)
        labels = labels or sorted(set(y))
        if len(labels) < 2:
            raise ValueError("classifier needs at least two labels")
        self.classes_ = np.array(labels)
        rng = np.random.default_rng(self.random_state)
        self._init_params(len(labels), rng)
        feats = [hash_ngrams(t, self.n_buckets, self.ngram_range) for t in X]
        targets = np.array([labels.index(v) for v in y])
        index = Corpus([Example((), v) for v in y], labels)
        cfg = ad.SgdConfig(self.learning_rate, self.gradient_clip_norm)
        stream = balanced_batches(index, self.batch_size, rng)
        loss = None
        for _ in range(self.max_steps):
            batch = next(stream)
            ids, mask = _pad([feats[i] for i in batch])
            with ad.Tape() as tape:
                loss = ad.softmax_cross_entropy(self._scores(ids, mask), targets[batch])
            ad.backward(loss, tape)
            ad.sgd_step(self.params_, cfg)
        self.training_loss_ = loss.item() if loss is not None else float("nan")
        if validation_data is not None:
            self.validation_accuracy_ = self.score(*validation_data)
        return self

    # ------------------------------------------------------------- forward

    def _hidden(self, ids, mask):
        bag = ad.embedding_bag(self.ngram_embeddings_, ids, mask)
        return ad.tanh(ad.matmul(bag, self.hidden_weights_))

    def _scores(self, ids, mask):
        return ad.matmul(self._hidden(ids, mask), ad.transpose(self.class_embeddings_))

    def _features(self, X):
        return _pad([hash_ngrams(t, self.n_buckets, self.ngram_range) for t in check_token_lists(X)])

    def hidden(self, X) -> np.ndarray:
        """Raw (unnormalized) last hidden layer."""
        check_is_fitted(self, "class_embeddings_")
        with ad.no_grad():
            return self._hidden(*self._features(X)).value.copy()

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "class_embeddings_")
        with ad.no_grad():
            return self._scores(*self._features(X)).value.copy()

    def predict_proba(self, X) -> np.ndarray:
        s = self.decision_function(X)
        s = s - s.max(axis=1, keepdims=True)
        p = np.exp(s)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def score(self, X, y=None, sample_weight=None):
        X, y = check_X_y(X, y)
        return float(np.mean(self.predict(X) == np.array(y)))

    def transform(self, X) -> np.ndarray:
        """Unit-norm attribute embeddings, one row per input text."""
        return ad.l2_normalize(ad.Tensor(self.hidden(X))).value

    def embed_text(self, text) -> np.ndarray:
        return self.transform([text])[0]

    def class_embedding(self, label: str) -> np.ndarray:
        check_is_fitted(self, "class_embeddings_")
        row = self.class_embeddings_.value[check_label(label, list(self.classes_))]
        return ad.l2_normalize(ad.Tensor(row)).value

    def class_embedding_table(self) -> np.ndarray:
        """Unit-norm class embeddings, rows in ``classes_`` order."""
        check_is_fitted(self, "class_embeddings_")
        return ad.l2_normalize(ad.Tensor(self.class_embeddings_.value)).value

    @property
    def embedding_dim(self) -> int:
        return self.hidden_dim


class BottleneckClassifier(NgramClassifier):
    """Classifier with a small (default 8-d) last hidden layer used as embedding space."""

    def __init__(self, hidden_dim=8, embed_dim=32, n_buckets=2 ** 16, ngram_range=(1, 2),
                 max_steps=3000, batch_size=64, learning_rate=0.5, gradient_clip_norm=5.0,
                 random_state=0):
        super().__init__(hidden_dim, embed_dim, n_buckets, ngram_range, max_steps, batch_size,
                         learning_rate, gradient_clip_norm, random_state)


class EvalClassifier(NgramClassifier):
    """Same architecture with a wide hidden layer; used only to score transfers."""

    def __init__(self, hidden_dim=64, embed_dim=64, n_buckets=2 ** 16, ngram_range=(1, 2),
                 max_steps=3000, batch_size=64, learning_rate=0.5, gradient_clip_norm=5.0,
                 random_state=0):
        super().__init__(hidden_dim, embed_dim, n_buckets, ngram_range, max_steps, batch_size,
                         learning_rate, gradient_clip_norm, random_state)


class LabelMap(ClassifierMixin, BaseEstimator):
    """Logistic regression from an existing embedding space to new labels.

    ``fit`` accepts texts (embedded through ``embedder``) or, when
    ``embedder`` is None, precomputed embedding rows.  Each new label's target
    embedding is its weight row scaled to unit norm.
    """

    def __init__(self, embedder=None, max_iter=2000, learning_rate=1.0, l2=1e-4, random_state=0):
        self.embedder = embedder
        self.max_iter = max_iter
        self.learning_rate = learning_rate
        self.l2 = l2
        self.random_state = random_state

    def _embed(self, X):
        if self.embedder is None:
            X = np.asarray(X, dtype=np.float64)
            if X.ndim != 2 or len(X) == 0:
                raise ValueError("expected a non-empty 2-D array of embeddings")
            return X
        return self.embedder.transform(check_token_lists(X))

    def fit(self, X, y=None):
        if isinstance(X, Corpus):
            if len(X) == 0:
                raise ValueError("empty corpus")
            X, y = check_X_y(X)
        if y is None or len(y) == 0:
            raise ValueError("empty corpus")
        E = self._embed(X)
        y = [str(v) for v in y]
        labels = sorted(set(y))
        self.classes_ = np.array(labels)
        t = np.array([labels.index(v) for v in y])
        rng = np.random.default_rng(self.random_state)
        self.weights_ = ad.parameter(rng.normal(0, 0.01, (len(labels), E.shape[1])), "label_map")
        self.bias_ = ad.parameter(np.zeros(len(labels)), "label_map_bias")
        X_t = ad.Tensor(E)
        cfg = ad.SgdConfig(self.learning_rate, None)
        loss = None
        for _ in range(self.max_iter):
            with ad.Tape() as tape:
                scores = ad.add(ad.matmul(X_t, ad.transpose(self.weights_)), self.bias_)
                loss = ad.softmax_cross_entropy(scores, t)
                if self.l2:
                    loss = ad.add(loss, ad.mul(ad.sum(ad.mul(self.weights_, self.weights_)), self.l2))
            ad.backward(loss, tape)
            ad.sgd_step([self.weights_, self.bias_], cfg)
        self.training_loss_ = loss.item() if loss is not None else float("nan")
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        return self._embed(X) @ self.weights_.value.T + self.bias_.value

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def score(self, X, y=None, sample_weight=None):
        if isinstance(X, Corpus):
            X, y = check_X_y(X)
        return float(np.mean(self.predict(X) == np.array([str(v) for v in y])))

    def target_embedding(self, label: str) -> np.ndarray:
        check_is_fitted(self, "weights_")
        row = self.weights_.value[check_label(label, list(self.classes_))]
        return ad.l2_normalize(ad.Tensor(row)).value

    def target_table(self) -> np.ndarray:
        check_is_fitted(self, "weights_")
        return ad.l2_normalize(ad.Tensor(self.weights_.value)).value


class ClassTable:
    """Frozen unit-norm class embeddings; stands in for a classifier when only targets are needed."""

    def __init__(self, labels, table):
        self.classes_ = np.array(list(labels))
        table = np.atleast_2d(np.asarray(table, dtype=np.float64))
        if len(table) != len(self.classes_):
            raise ValueError(f"{len(self.classes_)} labels but {len(table)} embedding rows")
        self.table_ = ad.l2_normalize(ad.Tensor(table)).value

    @classmethod
    def from_classifier(cls, clf) -> "ClassTable":
        return cls(clf.classes_, clf.class_embedding_table())

    def class_embedding(self, label: str) -> np.ndarray:
        return self.table_[check_label(label, list(self.classes_))]

    def class_embedding_table(self) -> np.ndarray:
        return self.table_

    @property
    def embedding_dim(self) -> int:
        return self.table_.shape[1]
