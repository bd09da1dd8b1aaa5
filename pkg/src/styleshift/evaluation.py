"""Automatic metrics for rewrites: attribute control, self-BLEU and language-model
perplexity, the two trivial baselines, and the all-directions driver."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_label, check_token_lists
from .corpus import BOS, EOS, Corpus, Vocabulary, balanced_batches, build_vocab
from .transfer import pad_batch

MAX_ORDER = 4


# -------------------------------------------------------------------- BLEU

def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(candidate: Sequence, reference: Sequence) -> float:
    """BLEU-4 in [0, 100] with uniform weights and a brevity penalty.

    Orders 2-4 add one to both the clipped match count and the candidate
    n-gram count; unigram precision is not smoothed, so a candidate sharing
    no token with the reference scores 0.
    """
    candidate, reference = list(candidate), list(reference)
    if not candidate:
        return 0.0
    log_p = 0.0
    for n in range(1, MAX_ORDER + 1):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        matches = sum(min(c, ref[g]) for g, c in cand.items())
        total = max(len(candidate) - n + 1, 0)
        if n == 1:
            if matches == 0:
                return 0.0
        else:
            matches, total = matches + 1, total + 1
        log_p += math.log(matches / total) / MAX_ORDER
    c, r = len(candidate), len(reference)
    bp = 0.0 if c > r else 1.0 - r / c
    return 100.0 * math.exp(bp + log_p)


def _split(x):
    return x.split() if isinstance(x, str) else list(x)


def self_bleu(generations: Sequence, sources: Sequence) -> float:
    """Mean sentence BLEU of each generation against its own source."""
    if len(generations) != len(sources):
        raise ValueError(f"{len(generations)} generations vs {len(sources)} sources")
    if not generations:
        raise ValueError("self_bleu of an empty set")
    return float(np.mean([sentence_bleu(_split(g), _split(s)) for g, s in zip(generations, sources)]))


# --------------------------------------------------------- language model

class LanguageModel(BaseEstimator):
    """Two-layer LSTM next-token model; predicts every token and the final EOS."""

    def __init__(self, vocab=None, hidden_dim=64, steps=2000, batch_size=32, learning_rate=1.0,
                 gradient_clip_norm=5.0, random_state=0):
        self.vocab = vocab
        self.hidden_dim = hidden_dim
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gradient_clip_norm = gradient_clip_norm
        self.random_state = random_state

    def _init(self, vocab: Vocabulary, rng):
        h, v = self.hidden_dim, len(vocab)
        self.vocab_ = vocab

        def u(*shape):
            return rng.uniform(-0.1, 0.1, shape)

        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0
        self.params_ = {
            "emb": u(v, h), "l0_wx": u(h, 4 * h), "l0_wh": u(h, 4 * h), "l0_b": bias.copy(),
            "l1_wx": u(h, 4 * h), "l1_wh": u(h, 4 * h), "l1_b": bias.copy(),
            "out_w": u(h, v), "out_b": np.zeros(v),
        }
        self.params_ = {k: ad.parameter(val, k) for k, val in self.params_.items()}

    @classmethod
    def uniform(cls, vocab: Vocabulary, hidden_dim: int = 8) -> "LanguageModel":
        """Untrained model with a zero output layer: every next-token distribution is uniform."""
        lm = cls(vocab=vocab, hidden_dim=hidden_dim)
        lm._init(vocab, np.random.default_rng(0))
        lm.params_["out_w"].value[:] = 0.0
        return lm

    def fit(self, X, y=None):
        token_lists = check_token_lists(X)
        vocab = self.vocab or build_vocab(token_lists)
        rng = np.random.default_rng(self.random_state)
        self._init(vocab, rng)
        encoded = [vocab.encode(t) for t in token_lists]
        if isinstance(X, Corpus):
            stream = balanced_batches(X, self.batch_size, rng)
        else:
            stream = (list(rng.integers(0, len(encoded), self.batch_size)) for _ in iter(int, 1))
        cfg = ad.SgdConfig(self.learning_rate, self.gradient_clip_norm)
        params = list(self.params_.values())
        for _ in range(self.steps):
            batch = [encoded[i] for i in next(stream)]
            with ad.Tape() as tape:
                loss = self._loss(batch)
            ad.backward(loss, tape)
            ad.sgd_step(params, cfg)
        return self

    def _logits(self, batch):
        p = self.params_
        inp, mask = pad_batch([[BOS] + list(s) for s in batch])
        x = ad.embedding(p["emb"], inp)
        x = ad.lstm_sequence(x, p["l0_wx"], p["l0_wh"], p["l0_b"], mask)
        x = ad.lstm_sequence(x, p["l1_wx"], p["l1_wh"], p["l1_b"], mask)
        tgt, _ = pad_batch([list(s) + [EOS] for s in batch])
        return ad.add(ad.matmul(x, p["out_w"]), p["out_b"]), tgt, mask

    def _loss(self, batch):
        logits, tgt, mask = self._logits(batch)
        return ad.softmax_cross_entropy(logits, tgt, mask)

    def next_token_distributions(self, tokens) -> np.ndarray:
        """(len(tokens) + 1, |V|) predictive distributions for one sequence."""
        check_is_fitted(self, "params_")
        with ad.no_grad():
            logits, _, _ = self._logits([self.vocab_.encode(check_token_lists([tokens], True)[0])])
        return ad.softmax(ad.Tensor(logits.value[0])).value

    def perplexity(self, X, batch_size: int = 256) -> float:
        """``exp`` of the mean NLL over every predicted token, EOS included."""
        check_is_fitted(self, "params_")
        token_lists = check_token_lists(X, allow_empty=True) if len(X) else []
        if not token_lists:
            raise ValueError("perplexity of an empty evaluation set")
        encoded = [self.vocab_.encode(t) for t in token_lists]
        nll, count = 0.0, 0
        with ad.no_grad():
            for lo in range(0, len(encoded), batch_size):
                logits, tgt, mask = self._logits(encoded[lo:lo + batch_size])
                logp = ad._log_softmax(logits.value)
                picked = np.take_along_axis(logp, tgt[..., None], axis=-1)[..., 0]
                nll -= float((picked * mask).sum())
                count += int(mask.sum())
        return math.exp(nll / count)


# ------------------------------------------------------- attribute control

def _classifiable(generations) -> list:
    # an empty generation is scored as a lone <unk>
    return [g if len(_split(g)) else "<unk>" for g in generations]


def attribute_control(eval_clf, generations: Sequence, target_label: str, source_label: str
                      ) -> tuple[float, float]:
    """Percent of generations classified as the target label and as the source label."""
    classes = list(eval_clf.classes_)
    check_label(target_label, classes)
    check_label(source_label, classes)
    if not len(generations):
        raise ValueError("no generations to classify")
    pred = eval_clf.predict([_split(g) for g in _classifiable(generations)])
    return 100.0 * float(np.mean(pred == target_label)), 100.0 * float(np.mean(pred == source_label))


# ----------------------------------------------------------------- reports

@dataclass
class DirectionResult:
    source: str
    target: str
    target_pct: float
    source_pct: float
    self_bleu: float
    ppl: float
    n: int

    @property
    def direction(self) -> str:
        return f"{self.source}->{self.target}"


COLUMNS = ("direction", "target_pct", "source_pct", "self_bleu", "ppl", "n")


def _fmt(row: Sequence) -> str:
    return "\t".join(v if isinstance(v, str) else (str(v) if isinstance(v, int) else f"{v:.1f}")
                     for v in row)


@dataclass
class EvalReport:
    name: str
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    def average(self) -> dict:
        if not self.rows:
            raise ValueError(f"report {self.name!r} has no evaluated directions")
        out = {k: float(np.mean([getattr(r, k) for r in self.rows]))
               for k in ("target_pct", "source_pct", "self_bleu", "ppl")}
        out["n"] = int(sum(r.n for r in self.rows))
        return out

    @property
    def target_pct(self) -> float:
        return self.average()["target_pct"]

    @property
    def source_pct(self) -> float:
        return self.average()["source_pct"]

    @property
    def self_bleu(self) -> float:
        return self.average()["self_bleu"]

    @property
    def ppl(self) -> float:
        return self.average()["ppl"]

    def summary_row(self) -> str:
        a = self.average()
        return _fmt([self.name] + [a[k] for k in COLUMNS[1:]])

    def to_tsv(self) -> str:
        lines = ["\t".join(COLUMNS)]
        lines += [_fmt([r.direction, r.target_pct, r.source_pct, r.self_bleu, r.ppl, r.n]) for r in self.rows]
        lines += [f"# skipped\t{s}" for s in self.skipped]
        a = self.average()
        lines.append(_fmt(["average"] + [a[k] for k in COLUMNS[1:]]))
        return "\n".join(lines) + "\n"


def summary_table(reports: Sequence[EvalReport]) -> str:
    """One averaged row per report under the standard header."""
    return "\n".join(["\t".join(COLUMNS)] + [r.summary_row() for r in reports]) + "\n"


def _score(source, target, gens, srcs, eval_clf, lm):
    t_pct, s_pct = attribute_control(eval_clf, gens, target, source)
    return DirectionResult(source, target, t_pct, s_pct, self_bleu(gens, srcs),
                           lm.perplexity([_split(g) for g in gens]), len(gens))


def embedding_generator(rewrite: Callable[[list, np.ndarray], list],
                        target_embedding: Callable[[str], np.ndarray]) -> Callable:
    """Adapt ``rewrite(token_lists, target_rows)`` to the ``generate(sources, label)`` form."""
    def generate(srcs, label):
        return rewrite(list(srcs), np.repeat(np.atleast_2d(target_embedding(label)), len(srcs), axis=0))
    return generate


def evaluate_directions(generate: Callable[[list, str], list], eval_clf, lm, test: Corpus, cap: int = 900,
                        source_labels: Sequence[str] | None = None,
                        target_labels: Sequence[str] | None = None, name: str = "model") -> EvalReport:
    """Rewrite up to ``cap`` test sequences of every source label toward every
    other target label and score each direction.

    ``generate(sources, target_label)`` returns one string per source token list.
    """
    if cap < 1:
        raise ValueError("cap must be positive")
    source_labels = list(source_labels or test.labels)
    target_labels = list(target_labels or test.labels)
    by_label = test.by_label()
    report = EvalReport(name)
    for s in source_labels:
        srcs = [test[i].tokens for i in by_label.get(s, [])][:cap]
        for t in target_labels:
            if s == t:
                continue
            if not srcs:
                report.skipped.append(f"{s}->{t}")
                continue
            report.rows.append(_score(s, t, generate(srcs, t), srcs, eval_clf, lm))
    return report


def identity_baseline(eval_clf, lm, test: Corpus, cap: int = 900, source_labels=None, target_labels=None
                      ) -> EvalReport:
    """Generations are the unmodified sources."""
    return evaluate_directions(lambda srcs, t: [" ".join(s) for s in srcs], eval_clf, lm, test, cap,
                               source_labels, target_labels, "Identity")


def target_sample_baseline(eval_clf, lm, test: Corpus, train: Corpus, rng: np.random.Generator,
                           cap: int = 900, source_labels=None, target_labels=None) -> EvalReport:
    """Generations are random training sentences carrying the target label."""
    pools = train.by_label()

    def generate(srcs, label):
        pool = pools.get(label)
        if not pool:
            raise ValueError(f"no training examples for label {label!r}")
        return [train[pool[i]].text for i in rng.integers(0, len(pool), len(srcs))]

    return evaluate_directions(generate, eval_clf, lm, test, cap, source_labels, target_labels,
                               "Target-attr-sample")
