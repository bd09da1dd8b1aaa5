"""Tokenization, vocabularies, noise for denoising, labeled corpora and the
synthetic marker corpus used in place of real sentiment data."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>")
_LABEL_RE = re.compile(r"^[A-Za-z0-9_]+$")


class CorpusFormatError(ValueError):
    """Malformed labeled-text input; ``bad_lines`` holds 1-based line numbers."""

    def __init__(self, message: str, bad_lines: Sequence[int] = ()):
        super().__init__(message)
        self.bad_lines = list(bad_lines)


class Vocabulary:
    """Token <-> id bijection with ids 0..3 reserved for PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos = list(SPECIAL_TOKENS)
        self._stoi = {t: i for i, t in enumerate(self._itos)}
        for tok in tokens:
            if tok in self._stoi:
                raise ValueError(f"duplicate or reserved token {tok!r}")
            self._stoi[tok] = len(self._itos)
            self._itos.append(tok)

    def __len__(self):
        return len(self._itos)

    def __contains__(self, token):
        return token in self._stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._itos == other._itos

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self._itos[len(SPECIAL_TOKENS):]

    def id(self, token: str) -> int:
        return self._stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._itos[idx]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._stoi.get(t, UNK) for t in tokens], dtype=np.int64)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._itos[i] for i in ids if i not in (PAD, BOS, EOS)]

    def extend(self, tokens: Iterable[str]) -> "Vocabulary":
        """New vocabulary with unseen ``tokens`` appended; existing ids keep their value."""
        extra = []
        for t in tokens:
            if t not in self._stoi and t not in extra:
                extra.append(t)
        return Vocabulary(self.tokens + extra)


def split_text(text: str) -> list[str]:
    return text.lower().split()


def tokenize(text: str, vocab: Vocabulary) -> np.ndarray:
    return vocab.encode(split_text(text))


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.decode(ids))


def build_vocab(corpus, max_size: int | None = None, min_count: int = 1) -> Vocabulary:
    """Most frequent tokens first, ties broken lexicographically.

    ``corpus`` is a :class:`Corpus`, or an iterable of texts / token lists.
    """
    counts: Counter = Counter()
    n = 0
    for item in _iter_token_lists(corpus):
        counts.update(item)
        n += 1
    if n == 0 or not counts:
        raise ValueError("build_vocab: empty corpus")
    ranked = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIAL_TOKENS),
                    key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocabulary(ranked)


def _iter_token_lists(corpus) -> Iterator[Sequence[str]]:
    if isinstance(corpus, Corpus):
        corpus = corpus.examples
    for item in corpus:
        if isinstance(item, Example):
            yield item.tokens
        elif isinstance(item, str):
            yield split_text(item)
        else:
            yield list(item)


# --------------------------------------------------------------------- data

@dataclass(frozen=True)
class Example:
    tokens: tuple
    label: str

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Corpus:
    examples: list
    labels: list = field(default_factory=list)

    def __post_init__(self):
        present = sorted({e.label for e in self.examples})
        if not self.labels:
            self.labels = present
        else:
            unknown = set(present) - set(self.labels)
            if unknown:
                raise ValueError(f"examples carry labels outside the label set: {sorted(unknown)}")
            self.labels = list(self.labels)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.examples]

    @property
    def y(self) -> list[str]:
        return [e.label for e in self.examples]

    def by_label(self) -> dict:
        out = {label: [] for label in self.labels}
        for i, e in enumerate(self.examples):
            out[e.label].append(i)
        return out

    def subset(self, labels: Iterable[str]) -> "Corpus":
        keep = [l for l in self.labels if l in set(labels)]
        return Corpus([e for e in self.examples if e.label in keep], keep)

    def without(self, labels: Iterable[str]) -> "Corpus":
        drop = set(labels)
        return self.subset([l for l in self.labels if l not in drop])


def load_corpus(path, labels: Sequence[str] | None = None) -> Corpus:
    """Read ``label<TAB>text`` lines; text is everything after the first tab."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusFormatError(f"cannot read corpus {path}: {exc}") from exc
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    examples, bad = [], []
    for lineno, line in enumerate(lines, 1):
        label, sep, text = line.partition("\t")
        tokens = split_text(text)
        if not sep or not _LABEL_RE.match(label) or not tokens:
            bad.append(lineno)
            continue
        examples.append(Example(tuple(tokens), label))
    if bad:
        shown = ", ".join(map(str, bad[:20])) + (" ..." if len(bad) > 20 else "")
        raise CorpusFormatError(f"{path}: malformed lines {shown}", bad)
    if not examples:
        raise CorpusFormatError(f"{path}: empty corpus")
    return Corpus(examples, list(labels) if labels else [])


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in corpus.examples:
            fh.write(f"{e.label}\t{e.text}\n")


# -------------------------------------------------------------------- noise

@dataclass(frozen=True)
class NoiseConfig:
    word_drop: float = 0.1
    shuffle_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.word_drop < 1.0:
            raise ValueError(f"word_drop must lie in [0, 1), got {self.word_drop}")
        if self.shuffle_window < 0:
            raise ValueError(f"shuffle_window must be >= 0, got {self.shuffle_window}")


def corrupt(x: Sequence[int], cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Word dropout then local shuffle (no token moves more than ``shuffle_window``).

    At least one token always survives the dropout.
    """
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("corrupt: empty sequence")
    if cfg.word_drop > 0:
        keep = rng.random(x.size) >= cfg.word_drop
        if not keep.any():
            keep[rng.integers(x.size)] = True
        x = x[keep]
    if cfg.shuffle_window > 0 and x.size > 1:
        # sorting i + U(0, k+1) keys bounds every displacement by k
        keys = np.arange(x.size) + rng.uniform(0, cfg.shuffle_window + 1, size=x.size)
        x = x[np.argsort(keys, kind="stable")]
    return x.copy()


# --------------------------------------------------------------- sampling

def balanced_batches(corpus: Corpus, batch_size: int, rng: np.random.Generator,
                     labels: Sequence[str] | None = None) -> Iterator[list]:
    """Endless stream of index batches with labels drawn in shuffled rounds.

    Each round visits every label once, so any window of ``L * batch_size``
    samples holds each label ``batch_size +- 1`` times; rare labels are
    oversampled by cycling through reshuffled pools.
    """
    labels = list(labels) if labels is not None else list(corpus.labels)
    groups = corpus.by_label()
    missing = [l for l in labels if not groups.get(l)]
    if missing:
        raise ValueError(f"balanced_batches: no examples for labels {missing}")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    pools = {l: [] for l in labels}

    def draw(label):
        if not pools[label]:
            pools[label] = list(rng.permutation(groups[label]))
        return int(pools[label].pop())

    pending: list = []
    while True:
        while len(pending) < batch_size:
            pending.extend(draw(labels[j]) for j in rng.permutation(len(labels)))
        yield pending[:batch_size]
        pending = pending[batch_size:]


# -------------------------------------------------------- synthetic corpus

LABEL_NAMES = ("happy", "angry", "sad", "curious", "grateful", "annoyed", "hopeful", "shocked",
               "confused", "ecstatic", "frustrated", "joyful", "heartbroken", "pumped",
               "sleepy", "thankful", "aggravated", "fantastic", "overwhelmed", "fabulous",
               "delighted", "emotional", "irritated", "perplexed")


@dataclass(frozen=True)
class SynthSpec:
    num_labels: int = 8
    content_vocab_size: int = 300
    markers_per_label: int = 5
    marker_purity: float = 0.9
    min_len: int = 5
    max_len: int = 12
    examples_per_label: int = 6000
    valid_per_label: int = 150
    test_per_label: int = 150
    successors: int = 4
    label_names: tuple = ()
    content_prefix: str = "w"

    def __post_init__(self):
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if not 0.5 < self.marker_purity <= 1.0:
            raise ValueError(f"marker_purity must lie in (0.5, 1], got {self.marker_purity}")
        if self.markers_per_label < 1 or self.content_vocab_size < 1 or self.successors < 1:
            raise ValueError("markers_per_label, content_vocab_size and successors must be positive")
        if not 4 <= self.min_len <= self.max_len:
            raise ValueError(f"need 4 <= min_len <= max_len, got {self.min_len}..{self.max_len}")
        if min(self.examples_per_label, self.valid_per_label, self.test_per_label) < 1:
            raise ValueError("split sizes must be positive")
        if self.label_names and len(self.label_names) != self.num_labels:
            raise ValueError("label_names must have num_labels entries")
        if not self.label_names and self.num_labels > len(LABEL_NAMES):
            raise ValueError(f"at most {len(LABEL_NAMES)} default label names")

    @property
    def labels(self) -> list[str]:
        return list(self.label_names or LABEL_NAMES[:self.num_labels])


@dataclass
class SyntheticCorpus:
    train: Corpus
    valid: Corpus
    test: Corpus
    markers: dict
    content_tokens: list
    successors: np.ndarray | None = None

    @property
    def labels(self) -> list[str]:
        return self.train.labels

    def oracle(self, tokens: Sequence[str]) -> str:
        """Label whose markers occur most often (ties -> earliest label)."""
        counts = [sum(t in self._marker_sets[l] for t in tokens) for l in self.labels]
        return self.labels[int(np.argmax(counts))]

    def __post_init__(self):
        self._marker_sets = {l: set(m) for l, m in self.markers.items()}

    def oracle_accuracy(self, corpus: Corpus) -> float:
        return float(np.mean([self.oracle(e.tokens) == e.label for e in corpus.examples]))


def generate_synthetic_corpus(spec: SynthSpec, rng: np.random.Generator,
                              markers: dict | None = None,
                              content_tokens: Sequence[str] | None = None,
                              successors: np.ndarray | None = None,
                              start_states: Sequence[int] | None = None) -> SyntheticCorpus:
    """Marker corpus: Markov-chain content shared by all labels plus 1-3 markers.

    Each marker comes from the example's own label with probability
    ``marker_purity``, else from a uniformly chosen other label.  ``markers``,
    ``content_tokens`` and ``successors`` override the generated inventories
    (used to build related corpora that alias labels or share the language);
    ``start_states`` restricts where content walks begin.
    """
    labels = spec.labels
    if content_tokens is None:
        content_tokens = [f"{spec.content_prefix}{i:03d}" for i in range(spec.content_vocab_size)]
    content_tokens = list(content_tokens)
    if markers is None:
        markers = {l: [f"{l}{j}" for j in range(spec.markers_per_label)] for l in labels}
    markers = {l: list(markers[l]) for l in labels}
    flat = [m for l in labels for m in markers[l]]
    if len(set(flat)) != len(flat) or set(flat) & set(content_tokens):
        raise ValueError("marker sets must be pairwise disjoint and disjoint from content")

    nc = len(content_tokens)
    if successors is None:
        successors = np.stack([rng.permutation(nc) for _ in range(spec.successors)])
    successors = np.asarray(successors)
    if successors.ndim != 2 or successors.shape[1] != nc:
        raise ValueError(f"successor table must have shape (m, {nc})")
    starts = np.arange(nc) if start_states is None else np.asarray(start_states)
    per_label = spec.examples_per_label + spec.valid_per_label + spec.test_per_label
    seen: set = set()
    rows = {l: [] for l in labels}
    budget = 50 * per_label * len(labels)
    k = len(labels)
    while any(len(rows[l]) < per_label for l in labels):
        budget -= 1
        if budget < 0:
            raise ValueError("synthetic spec too small to draw enough distinct examples")
        li = int(rng.integers(k)) if k else 0
        label = labels[li]
        if len(rows[label]) >= per_label:
            continue
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        n_markers = int(rng.integers(1, 4))
        state = int(starts[rng.integers(len(starts))])
        content = [state]
        for _ in range(length - n_markers - 1):
            state = int(successors[rng.integers(len(successors)), state])
            content.append(state)
        tokens = [content_tokens[c] for c in content]
        for _ in range(n_markers):
            src = li
            if k > 1 and rng.random() >= spec.marker_purity:
                src = int(rng.integers(k - 1))
                src += src >= li
            mk = markers[labels[src]]
            tokens.insert(int(rng.integers(len(tokens) + 1)), mk[int(rng.integers(len(mk)))])
        key = tuple(tokens)
        if key in seen:
            continue
        seen.add(key)
        rows[label].append(Example(key, label))

    def split(lo, hi):
        ex = [e for l in labels for e in rows[l][lo:hi]]
        order = rng.permutation(len(ex))
        return Corpus([ex[i] for i in order], labels)

    n_tr, n_va = spec.examples_per_label, spec.valid_per_label
    return SyntheticCorpus(split(0, n_tr), split(n_tr, n_tr + n_va), split(n_tr + n_va, per_label),
                           markers, content_tokens, successors)


def generate_newspace_corpus(base: SyntheticCorpus, rng: np.random.Generator, num_labels: int = 6,
                             content_share: float = 0.6, aliased: int = 3, examples_per_label: int = 240,
                             valid_per_label: int = 50, test_per_label: int = 100,
                             avoid: Sequence[str] = (), spec: SynthSpec | None = None) -> SyntheticCorpus:
    """A smaller related corpus over a new label space.

    The first ``aliased`` labels reuse base labels (name and markers, skipping
    ``avoid``); the rest are new names with fresh markers.  Content follows the
    base Markov chain, with walks starting from a ``content_share`` subset of
    the content words, so the language is shared and only the topic shifts.
    """
    spec = spec or SynthSpec()
    if not 0 <= aliased <= num_labels:
        raise ValueError("aliased must lie in [0, num_labels]")
    pool = [l for l in base.labels if l not in set(avoid)]
    if aliased > len(pool):
        raise ValueError(f"only {len(pool)} base labels available for aliasing")
    old = pool[:aliased]
    fresh = [l for l in LABEL_NAMES if l not in base.labels][:num_labels - aliased]
    if len(fresh) < num_labels - aliased:
        raise ValueError("not enough unused label names for the new space")
    labels = old + fresh
    markers = {l: base.markers[l] for l in old}
    markers.update({l: [f"{l}{j}" for j in range(spec.markers_per_label)] for l in fresh})
    if base.successors is None:
        raise ValueError("the base corpus carries no successor table")
    nc = len(base.content_tokens)
    starts = np.sort(rng.choice(nc, max(1, round(content_share * nc)), replace=False))
    new_spec = SynthSpec(num_labels=num_labels, content_vocab_size=nc, markers_per_label=spec.markers_per_label,
                         marker_purity=spec.marker_purity, min_len=spec.min_len, max_len=spec.max_len,
                         examples_per_label=examples_per_label, valid_per_label=valid_per_label,
                         test_per_label=test_per_label, successors=spec.successors, label_names=tuple(labels))
    return generate_synthetic_corpus(new_spec, rng, markers, base.content_tokens, base.successors, starts)
