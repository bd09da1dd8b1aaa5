"""Attribute-conditioned sequence-to-sequence rewriting model.

A 2-layer bidirectional LSTM encodes the (possibly corrupted) input; a
2-layer LSTM decoder with additive attention regenerates text.  The target
attribute enters once, as the first decoder input: ``y = W y_d`` where
``y_d`` is a unit-norm embedding from a bottleneck classifier.

Training mixes a denoising reconstruction loss and a back-translation loss
whose intermediate generation is computed without gradient tracking.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_token_lists, check_unit_norm
from .corpus import EOS, PAD, UNK, Corpus, NoiseConfig, Vocabulary, balanced_batches, build_vocab, corrupt

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 64
    d_a: int = 8
    init_scale: float = 0.3

    def __post_init__(self):
        if self.d_h < 2 or self.d_h % 2:
            raise ValueError(f"d_h must be an even integer >= 2, got {self.d_h}")
        if self.d_a < 1:
            raise ValueError(f"d_a must be positive, got {self.d_a}")


PAPER_MODEL = ModelConfig(d_h=512, d_a=8, init_scale=0.1)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5
    steps: int = 3000
    batch_size: int = 32
    learning_rate: float = 5.0
    gradient_clip_norm: float | None = 5.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    decode_factor: int = 2
    decode_extra: int = 5
    # "class": source label's class embedding; "example": embed_text of the input itself
    source_embedding: str = "example"
    inclusive_sampling: bool = False
    stage_fractions: tuple = (0.25, 0.5, 0.75, 1.0)
    log_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if self.source_embedding not in ("class", "example"):
            raise ValueError(f"source_embedding must be 'class' or 'example', got {self.source_embedding!r}")
        if any(not 0 < f <= 1 for f in self.stage_fractions):
            raise ValueError("stage fractions must lie in (0, 1]")
        ad.SgdConfig(self.learning_rate, self.gradient_clip_norm)

    @property
    def sgd(self) -> ad.SgdConfig:
        return ad.SgdConfig(self.learning_rate, self.gradient_clip_norm)

    def max_decode_len(self, n: int) -> int:
        return self.decode_factor * n + self.decode_extra


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the model has been rolled back to ``step``."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), width))
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


@dataclass
class Decoded:
    tokens: list  # token-id lists, EOS stripped
    truncated: np.ndarray  # True where max length was hit without EOS
    logits: list | None = None  # per-step (B, V) arrays when requested
    attention: list | None = None  # per-step (B, T) arrays when requested


class TransferModel:
    """Parameters and forward computations of the rewriting model."""

    PARAM_NAMES = (
        "enc_emb",
        "enc0_fw_wx", "enc0_fw_wh", "enc0_fw_b", "enc0_bw_wx", "enc0_bw_wh", "enc0_bw_b",
        "enc1_fw_wx", "enc1_fw_wh", "enc1_fw_b", "enc1_bw_wx", "enc1_bw_wh", "enc1_bw_b",
        "attr_proj", "att_wk", "att_wq", "att_v",
        "dec_emb", "dec0_wx", "dec0_wh", "dec0_b", "dec1_wx", "dec1_wh", "dec1_b",
        "out_w", "out_b",
    )

    def __init__(self, vocab: Vocabulary, config: ModelConfig = ModelConfig(), rng=None):
        self.vocab = vocab
        self.config = config
        rng = np.random.default_rng(0) if rng is None else rng
        h, half, v, a = config.d_h, config.d_h // 2, len(vocab), config.d_h
        s = config.init_scale

        def u(*shape):
            return rng.uniform(-s, s, shape)

        def lstm_bias(n):
            b = np.zeros(4 * n)
            b[n:2 * n] = 1.0  # forget gate
            return b

        shapes = {
            "enc_emb": u(v, h),
            "enc0_fw_wx": u(h, 4 * half), "enc0_fw_wh": u(half, 4 * half), "enc0_fw_b": lstm_bias(half),
            "enc0_bw_wx": u(h, 4 * half), "enc0_bw_wh": u(half, 4 * half), "enc0_bw_b": lstm_bias(half),
            "enc1_fw_wx": u(h, 4 * half), "enc1_fw_wh": u(half, 4 * half), "enc1_fw_b": lstm_bias(half),
            "enc1_bw_wx": u(h, 4 * half), "enc1_bw_wh": u(half, 4 * half), "enc1_bw_b": lstm_bias(half),
            "attr_proj": u(h, config.d_a),
            "att_wk": u(h, a), "att_wq": u(h, a), "att_v": u(a),
            "dec_emb": u(v, h),
            "dec0_wx": u(2 * h, 4 * h), "dec0_wh": u(h, 4 * h), "dec0_b": lstm_bias(h),
            "dec1_wx": u(h, 4 * h), "dec1_wh": u(h, 4 * h), "dec1_b": lstm_bias(h),
            "out_w": u(2 * h, v), "out_b": np.zeros(v),
        }
        self.params = {n: ad.parameter(shapes[n], n) for n in self.PARAM_NAMES}

    # ---------------------------------------------------------- bookkeeping

    @property
    def d_h(self) -> int:
        return self.config.d_h

    @property
    def d_a(self) -> int:
        return self.config.d_a

    def parameters(self) -> list:
        return [self.params[n] for n in self.PARAM_NAMES]

    def state_dict(self) -> dict:
        return {n: self.params[n].value.copy() for n in self.PARAM_NAMES}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.PARAM_NAMES) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)}")
        for n in self.PARAM_NAMES:
            value = np.asarray(state[n], dtype=ad.DTYPE)
            if value.shape != self.params[n].shape:
                raise ad.ShapeError(f"tensor {n}: expected shape {self.params[n].shape}, got {value.shape}")
            self.params[n].value = value.copy()

    def copy(self) -> "TransferModel":
        twin = TransferModel.__new__(TransferModel)
        twin.vocab, twin.config = self.vocab, self.config
        twin.params = {n: ad.parameter(p.value.copy(), n) for n, p in self.params.items()}
        return twin

    def extend_vocab(self, tokens, rng, scale: float = 0.01) -> int:
        """Append unseen tokens; new embedding/output rows start small-random.  Returns the count added."""
        new_vocab = self.vocab.extend(tokens)
        extra = len(new_vocab) - len(self.vocab)
        if extra:
            p = self.params
            for name in ("enc_emb", "dec_emb"):
                p[name].value = np.vstack([p[name].value, rng.uniform(-scale, scale, (extra, self.d_h))])
            p["out_w"].value = np.hstack([p["out_w"].value, rng.uniform(-scale, scale, (2 * self.d_h, extra))])
            p["out_b"].value = np.concatenate([p["out_b"].value, np.zeros(extra)])
            self.vocab = new_vocab
        return extra

    # --------------------------------------------------------------- encoder

    def _encode(self, ids: np.ndarray, mask: np.ndarray) -> ad.Tensor:
        p = self.params
        x = ad.embedding(p["enc_emb"], ids)
        for layer in ("enc0", "enc1"):
            fw = ad.lstm_sequence(x, p[f"{layer}_fw_wx"], p[f"{layer}_fw_wh"], p[f"{layer}_fw_b"], mask)
            bw = ad.lstm_sequence(x, p[f"{layer}_bw_wx"], p[f"{layer}_bw_wh"], p[f"{layer}_bw_b"], mask,
                                  reverse=True)
            x = ad.concat([fw, bw], axis=-1)
        return x

    def encode(self, x: Sequence[int]) -> np.ndarray:
        """Encoder states (len(x), d_h) for one token-id sequence."""
        if len(x) == 0:
            raise ValueError("encode: empty input")
        ids, mask = pad_batch([list(x)])
        with ad.no_grad():
            return self._encode(ids, mask).value[0].copy()

    # ------------------------------------------------------------- condition

    def _project(self, y_d) -> ad.Tensor:
        y_d = ad.as_tensor(y_d)
        if y_d.ndim != 2 or y_d.shape[1] != self.d_a:
            raise ad.ShapeError(f"attribute embeddings must have shape (B, {self.d_a}), got {y_d.shape}")
        return ad.matmul(y_d, ad.transpose(self.params["attr_proj"]))

    def project_attribute(self, y_d) -> np.ndarray:
        """``W y_d`` for unit-norm ``y_d`` (a single vector or a batch of rows)."""
        y_d = check_unit_norm(y_d)
        single = y_d.ndim == 1
        with ad.no_grad():
            y = self._project(np.atleast_2d(y_d)).value
        return y[0] if single else y

    # --------------------------------------------------------------- decoder

    def _decoder_context(self, z: ad.Tensor, src_mask: np.ndarray):
        return z, ad.matmul(z, self.params["att_wk"]), src_mask

    def _decoder_step(self, inp: ad.Tensor, state, enc, step_mask=None):
        p = self.params
        z, keys, src_mask = enc
        h1, c1, h2, c2 = state
        ctx, alpha = ad.additive_attention(h2, keys, z, p["att_wq"], p["att_v"], src_mask)
        h1, c1 = ad.lstm_cell(ad.concat([inp, ctx], axis=1), h1, c1, p["dec0_wx"], p["dec0_wh"], p["dec0_b"],
                              step_mask)
        h2, c2 = ad.lstm_cell(h1, h2, c2, p["dec1_wx"], p["dec1_wh"], p["dec1_b"], step_mask)
        return ad.concat([h2, ctx], axis=1), (h1, c1, h2, c2), alpha

    def _zero_state(self, batch: int):
        return tuple(ad.Tensor(np.zeros((batch, self.d_h))) for _ in range(4))

    def sequence_loss(self, src: Sequence[Sequence[int]], tgt: Sequence[Sequence[int]], y_d) -> ad.Tensor:
        """Teacher-forced mean token NLL of ``tgt`` + EOS given ``src`` and attributes ``y_d``.

        ``y_d`` rows must be unit norm.  The mean runs over every predicted
        token in the batch, EOS included.
        """
        y_d = check_unit_norm(np.atleast_2d(y_d))
        src_ids, src_mask = pad_batch(src)
        z = self._encode(src_ids, src_mask)
        enc = self._decoder_context(z, src_mask)
        tgt_ids, tgt_mask = pad_batch([list(t) + [EOS] for t in tgt])
        batch, steps = tgt_ids.shape
        y = self._project(y_d)
        emb = ad.embedding(self.params["dec_emb"], tgt_ids[:, :-1]) if steps > 1 else None
        state = self._zero_state(batch)
        outs = []
        for t in range(steps):
            inp = y if t == 0 else ad.take(emb, t - 1, axis=1)
            out, state, _ = self._decoder_step(inp, state, enc, tgt_mask[:, t])
            outs.append(out)
        hidden = ad.stack(outs, axis=1)
        logits = ad.add(ad.matmul(hidden, self.params["out_w"]), self.params["out_b"])
        return ad.softmax_cross_entropy(logits, tgt_ids, tgt_mask)

    def greedy_decode(self, src: Sequence[Sequence[int]], y_d, max_len=None, record: bool = False) -> Decoded:
        """Argmax decoding, batched; never records gradients.

        ``max_len`` is an int or one int per input (default ``2 n + 5``).
        """
        y_d = check_unit_norm(np.atleast_2d(y_d))
        batch = len(src)
        if max_len is None:
            limits = np.array([2 * len(s) + 5 for s in src])
        else:
            limits = np.broadcast_to(np.asarray(max_len, dtype=np.int64), (batch,)).copy()
        out_tokens = [[] for _ in range(batch)]
        done = limits <= 0
        truncated = np.zeros(batch, dtype=bool)
        truncated[done] = True
        logits_log, att_log = ([], []) if record else (None, None)
        with ad.no_grad():
            src_ids, src_mask = pad_batch(src)
            enc = self._decoder_context(self._encode(src_ids, src_mask), src_mask)
            inp = self._project(y_d)
            state = self._zero_state(batch)
            p = self.params
            step = 0
            while not done.all():
                out, state, alpha = self._decoder_step(inp, state, enc)
                logits = out.value @ p["out_w"].value + p["out_b"].value
                nxt = np.argmax(logits, axis=1)
                if record:
                    logits_log.append(logits)
                    att_log.append(alpha)
                step += 1
                for i in np.flatnonzero(~done):
                    if nxt[i] == EOS:
                        done[i] = True
                    else:
                        out_tokens[i].append(int(nxt[i]))
                        if step >= limits[i]:
                            done[i] = truncated[i] = True
                inp = ad.Tensor(p["dec_emb"].value[nxt])
        return Decoded(out_tokens, truncated, logits_log, att_log)


# ------------------------------------------------------------------ losses

def loss_ae(model: TransferModel, batch: Sequence[Sequence[int]], y_src, noise: NoiseConfig,
            rng: np.random.Generator) -> ad.Tensor:
    """Denoising loss: reconstruct each clean ``x`` from ``corrupt(x)`` under its source attribute."""
    noisy = [corrupt(x, noise, rng) for x in batch]
    return model.sequence_loss(noisy, batch, y_src)


def back_translate(model: TransferModel, batch, y_tgt, cfg: TrainConfig | None = None) -> list:
    """Detached greedy rewrites used as back-translation sources; empty ones become ``[UNK]``."""
    cfg = cfg or TrainConfig()
    decoded = model.greedy_decode(batch, y_tgt, [cfg.max_decode_len(len(x)) for x in batch])
    gen = []
    for toks in decoded.tokens:
        if not toks:
            log.debug("back-translation produced an empty sequence; using <unk>")
            toks = [UNK]
        gen.append(toks)
    return gen


def loss_bt(model: TransferModel, batch, y_src, y_tgt, cfg: TrainConfig | None = None,
            generator: TransferModel | None = None) -> ad.Tensor:
    """Back-translation loss: rewrite ``x`` toward ``y_tgt`` without tracking
    gradients, then reconstruct ``x`` from the rewrite under ``y_src``.

    ``generator`` (default: ``model``) produces the rewrite.
    """
    with ad.no_grad():
        gen = back_translate(generator or model, batch, y_tgt, cfg)
    return model.sequence_loss(gen, batch, y_src)


def combine_losses(lam: float, l_ae: ad.Tensor | None, l_bt: ad.Tensor | None) -> ad.Tensor:
    if l_ae is None:
        return ad.mul(l_bt, 1.0 - lam)
    if l_bt is None:
        return ad.mul(l_ae, lam)
    return ad.add(ad.mul(l_ae, lam), ad.mul(l_bt, 1.0 - lam))


# ---------------------------------------------------------------- training

class AttributeSource:
    """Source and back-translation target embeddings drawn from a trained classifier."""

    def __init__(self, clf, corpus: Corpus, source_embedding: str = "example", inclusive: bool = False,
                 example_embeddings: np.ndarray | None = None):
        self.labels = list(corpus.labels)
        self.source_embedding = source_embedding
        self.inclusive = inclusive
        self.class_table = np.stack([clf.class_embedding(l) for l in self.labels])
        self.example_embeddings = (clf.transform(corpus) if example_embeddings is None
                                   else np.asarray(example_embeddings))
        self.label_index = np.array([self.labels.index(e.label) for e in corpus])
        self.groups = [np.flatnonzero(self.label_index == k) for k in range(len(self.labels))]

    def source(self, idx: Sequence[int]) -> np.ndarray:
        if self.source_embedding == "example":
            return self.example_embeddings[idx]
        return self.class_table[self.label_index[idx]]

    def sample_targets(self, idx: Sequence[int], rng: np.random.Generator) -> np.ndarray:
        """One training example's embedding per row, from a label other than the source's."""
        n = len(self.labels)
        rows = []
        for i in idx:
            src = self.label_index[i]
            if self.inclusive or n == 1:
                k = int(rng.integers(n))
            else:
                k = int(rng.integers(n - 1))
                k += k >= src
            rows.append(self.groups[k][rng.integers(len(self.groups[k]))])
        return self.example_embeddings[np.array(rows)]


@dataclass
class Stage:
    step: int
    state: dict


@dataclass
class TrainResult:
    stages: list
    log_lines: list


def stage_steps(cfg: TrainConfig) -> list[int]:
    return sorted({max(1, math.ceil(f * cfg.steps)) for f in cfg.stage_fractions}) if cfg.steps else []


def train(model: TransferModel, corpus: Corpus, clf, cfg: TrainConfig,
          on_stage: Callable[[int, int, TransferModel], None] | None = None,
          log_sink: Callable[[str], None] | None = None,
          attributes: AttributeSource | None = None) -> TrainResult:
    """Minimize ``lam * L_AE + (1 - lam) * L_BT`` by SGD on label-balanced batches.

    A snapshot is kept at each stage fraction of ``cfg.steps``; ``on_stage``
    is called with (stage index, step, model).  On a non-finite loss the
    model is restored to the latest snapshot and :class:`TrainingDiverged`
    is raised.
    """
    if clf.embedding_dim != model.d_a:
        raise ValueError(f"classifier embedding dim {clf.embedding_dim} != model d_a {model.d_a}")
    rng = np.random.default_rng(cfg.seed)
    attrs = attributes or AttributeSource(clf, corpus, cfg.source_embedding, cfg.inclusive_sampling)
    encoded = [model.vocab.encode(e.tokens) for e in corpus]
    stream = balanced_batches(corpus, cfg.batch_size, rng)
    params = model.parameters()
    sgd = cfg.sgd
    stops = stage_steps(cfg)
    stages: list[Stage] = []
    lines: list[str] = []
    good = Stage(0, model.state_dict())
    for step in range(1, cfg.steps + 1):
        idx = next(stream)
        batch = [encoded[i] for i in idx]
        y_src = attrs.source(idx)
        with ad.Tape() as tape:
            l_ae = loss_ae(model, batch, y_src, cfg.noise, rng) if cfg.lam > 0 else None
            l_bt = (loss_bt(model, batch, y_src, attrs.sample_targets(idx, rng), cfg)
                    if cfg.lam < 1 else None)
            total = combine_losses(cfg.lam, l_ae, l_bt)
        if not np.isfinite(total.item()):
            model.load_state_dict(good.state)
            raise TrainingDiverged(f"non-finite loss at step {step}; restored step {good.step}", good.step)
        ad.backward(total, tape)
        ad.sgd_step(params, sgd)
        if step % cfg.log_every == 0 or step == cfg.steps:
            line = (f"step={step} loss_ae={'nan' if l_ae is None else f'{l_ae.item():.6f}'} "
                    f"loss_bt={'nan' if l_bt is None else f'{l_bt.item():.6f}'} lambda={cfg.lam:g}")
            lines.append(line)
            if log_sink:
                log_sink(line)
        if step in stops:
            good = Stage(step, model.state_dict())
            stages.append(good)
            if on_stage:
                on_stage(len(stages) - 1, step, model)
    return TrainResult(stages, lines)


def fine_tune(model: TransferModel, new_corpus: Corpus, new_clf, cfg: TrainConfig, **kwargs) -> TrainResult:
    """Continue training on a new corpus and attribute space; extends the vocabulary first."""
    if new_clf.embedding_dim != model.d_a:
        raise ValueError(f"new classifier embedding dim {new_clf.embedding_dim} != model d_a {model.d_a}")
    rng = np.random.default_rng(cfg.seed + 1)
    model.extend_vocab([t for e in new_corpus for t in e.tokens], rng)
    return train(model, new_corpus, new_clf, cfg, **kwargs)


def transfer(model: TransferModel, x: Sequence[int], target, cfg: TrainConfig | None = None) -> list[int]:
    cfg = cfg or TrainConfig()
    return model.greedy_decode([list(x)], np.atleast_2d(target), cfg.max_decode_len(len(x))).tokens[0]


# --------------------------------------------------------------- estimator

class StyleTransfer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` on a labeled :class:`Corpus` with a trained
    ``embedder`` (bottleneck classifier); ``transform`` rewrites texts toward
    ``target`` (a label known to the embedder or a unit-norm embedding)."""

    def __init__(self, embedder=None, d_h=64, init_scale=0.3, lam=0.5, steps=3000, batch_size=32,
                 learning_rate=5.0, gradient_clip_norm=5.0, word_drop=0.1, shuffle_window=3,
                 source_embedding="example", inclusive_sampling=False, max_vocab=None, random_state=0):
        self.embedder = embedder
        self.d_h = d_h
        self.init_scale = init_scale
        self.lam = lam
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gradient_clip_norm = gradient_clip_norm
        self.word_drop = word_drop
        self.shuffle_window = shuffle_window
        self.source_embedding = source_embedding
        self.inclusive_sampling = inclusive_sampling
        self.max_vocab = max_vocab
        self.random_state = random_state

    def train_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(lam=self.lam, steps=self.steps, batch_size=self.batch_size,
                          learning_rate=self.learning_rate, gradient_clip_norm=self.gradient_clip_norm,
                          noise=NoiseConfig(self.word_drop, self.shuffle_window),
                          source_embedding=self.source_embedding, inclusive_sampling=self.inclusive_sampling,
                          seed=self.random_state)
        return replace(cfg, **overrides)

    def fit(self, X: Corpus, y=None, on_stage=None, log_sink=None):
        if not isinstance(X, Corpus):
            raise TypeError("StyleTransfer.fit expects a labeled Corpus")
        if self.embedder is None:
            raise ValueError("StyleTransfer needs a fitted embedder")
        vocab = build_vocab(X, max_size=self.max_vocab)
        rng = np.random.default_rng(self.random_state)
        self.model_ = TransferModel(vocab, ModelConfig(self.d_h, self.embedder.embedding_dim, self.init_scale), rng)
        self.result_ = train(self.model_, X, self.embedder, self.train_config(), on_stage, log_sink)
        return self

    def fine_tune(self, X: Corpus, embedder, steps: int | None = None, on_stage=None, log_sink=None):
        check_is_fitted(self, "model_")
        cfg = self.train_config(steps=self.steps if steps is None else steps)
        self.result_ = fine_tune(self.model_, X, embedder, cfg, on_stage=on_stage, log_sink=log_sink)
        self.embedder = embedder
        return self

    def target_embedding(self, target) -> np.ndarray:
        if isinstance(target, str):
            return self.embedder.class_embedding(target)
        return check_unit_norm(target)

    def transform(self, X, target=None) -> list[str]:
        check_is_fitted(self, "model_")
        if target is None:
            raise ValueError("transform needs a target label or embedding")
        toks = check_token_lists(X)
        y = self.target_embedding(target)
        return self.rewrite(toks, np.repeat(np.atleast_2d(y), len(toks), axis=0))

    def rewrite(self, token_lists, targets: np.ndarray, batch_size: int = 256) -> list[str]:
        """Rewrite each token list toward the matching row of ``targets``."""
        model = self.model_
        out = []
        for lo in range(0, len(token_lists), batch_size):
            chunk = [model.vocab.encode(t) for t in token_lists[lo:lo + batch_size]]
            dec = model.greedy_decode(chunk, targets[lo:lo + batch_size])
            out.extend(" ".join(model.vocab.decode(t)) for t in dec.tokens)
        return out
