"""Saving and restoring trained estimators through the checkpoint container."""
from __future__ import annotations

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, expect_shape, load_checkpoint, save_checkpoint
from .corpus import SPECIAL_TOKENS, Vocabulary
from .embeddings import BottleneckClassifier, ClassTable, EvalClassifier, LabelMap, NgramClassifier
from .evaluation import LanguageModel
from .transfer import ModelConfig, StyleTransfer, TransferModel
from . import autodiff as ad

_CLASSIFIERS = {c.__name__: c for c in (NgramClassifier, BottleneckClassifier, EvalClassifier)}
_SCALARS = (int, float, str, bool, tuple)


def _scalar_params(est) -> dict:
    return {k: repr(v) for k, v in est.get_params(deep=False).items() if isinstance(v, _SCALARS)}


def _literal(text: str):
    import ast
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise CheckpointError(f"unparseable config value {text!r}") from None


def _vocab_tokens(vocab: Vocabulary) -> list:
    return list(SPECIAL_TOKENS) + vocab.tokens


def _vocab_from(tokens: list) -> Vocabulary:
    if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
        raise CheckpointError("stored vocabulary lacks the reserved tokens")
    return Vocabulary(tokens[len(SPECIAL_TOKENS):])


def _params_from(config: dict, skip=("class", "vocab", "embedder")) -> dict:
    return {k: _literal(v) for k, v in config.items() if k not in skip}


# ------------------------------------------------------------- classifiers

def classifier_checkpoint(clf: NgramClassifier) -> Checkpoint:
    cfg = {"class": type(clf).__name__, **_scalar_params(clf)}
    tensors = {n: getattr(clf, n).value for n in ("ngram_embeddings_", "hidden_weights_", "class_embeddings_")}
    return Checkpoint("classifier", tensors, [], [str(c) for c in clf.classes_], cfg)


def classifier_from(ckpt: Checkpoint) -> NgramClassifier:
    cls = _CLASSIFIERS.get(ckpt.config.get("class"))
    if cls is None:
        raise CheckpointError(f"unknown classifier class {ckpt.config.get('class')!r}")
    clf = cls(**_params_from(ckpt.config))
    clf.classes_ = np.array(ckpt.labels)
    shapes = {"ngram_embeddings_": (clf.n_buckets, clf.embed_dim),
              "hidden_weights_": (clf.embed_dim, clf.hidden_dim),
              "class_embeddings_": (len(ckpt.labels), clf.hidden_dim)}
    for name, shape in shapes.items():
        if name not in ckpt.tensors:
            raise CheckpointError(f"classifier checkpoint lacks tensor {name!r}")
        setattr(clf, name, ad.parameter(expect_shape(name, ckpt.tensors[name], shape), name.rstrip("_")))
    return clf


# ---------------------------------------------------------- transfer model

def transfer_checkpoint(st: StyleTransfer) -> Checkpoint:
    model = st.model_
    cfg = {"d_h": repr(model.d_h), "d_a": repr(model.d_a), "init_scale": repr(model.config.init_scale),
           **{k: v for k, v in _scalar_params(st).items() if k not in ("d_h", "init_scale")}}
    tensors = dict(model.state_dict())
    tensors["attr_targets"] = st.embedder.class_embedding_table()
    return Checkpoint("transfer", tensors, _vocab_tokens(model.vocab), [str(c) for c in st.embedder.classes_], cfg)


def transfer_from(ckpt: Checkpoint) -> StyleTransfer:
    params = _params_from(ckpt.config)
    d_a = params.pop("d_a")
    vocab = _vocab_from(ckpt.vocab)
    model = TransferModel(vocab, ModelConfig(params["d_h"], d_a, params["init_scale"]))
    state = {}
    for name in TransferModel.PARAM_NAMES:
        if name not in ckpt.tensors:
            raise CheckpointError(f"transfer checkpoint lacks tensor {name!r}")
        state[name] = expect_shape(name, ckpt.tensors[name], model.params[name].shape)
    model.load_state_dict(state)
    targets = expect_shape("attr_targets", ckpt.tensors.get("attr_targets", np.zeros((0, 0))),
                           (len(ckpt.labels), d_a))
    st = StyleTransfer(ClassTable(ckpt.labels, targets), **params)
    st.model_ = model
    return st


# ------------------------------------------------------- language model

def lm_checkpoint(lm: LanguageModel) -> Checkpoint:
    tensors = {k: p.value for k, p in lm.params_.items()}
    return Checkpoint("lm", tensors, _vocab_tokens(lm.vocab_), [], _scalar_params(lm))


def lm_from(ckpt: Checkpoint) -> LanguageModel:
    lm = LanguageModel(**_params_from(ckpt.config))
    vocab = _vocab_from(ckpt.vocab)
    lm._init(vocab, np.random.default_rng(0))
    for name, p in lm.params_.items():
        if name not in ckpt.tensors:
            raise CheckpointError(f"language-model checkpoint lacks tensor {name!r}")
        p.value = expect_shape(name, ckpt.tensors[name], p.shape).copy()
    return lm


# ------------------------------------------------------------ label map

def label_map_checkpoint(lmap: LabelMap) -> Checkpoint:
    tensors = {"weights": lmap.weights_.value, "bias": lmap.bias_.value}
    return Checkpoint("label_map", tensors, [], [str(c) for c in lmap.classes_], _scalar_params(lmap))


def label_map_from(ckpt: Checkpoint, embedder=None) -> LabelMap:
    lmap = LabelMap(embedder=embedder, **_params_from(ckpt.config))
    lmap.classes_ = np.array(ckpt.labels)
    w = ckpt.tensors.get("weights")
    if w is None or "bias" not in ckpt.tensors:
        raise CheckpointError("label-map checkpoint lacks its tensors")
    lmap.weights_ = ad.parameter(expect_shape("weights", w, (len(ckpt.labels), w.shape[1])), "label_map")
    lmap.bias_ = ad.parameter(expect_shape("bias", ckpt.tensors["bias"], (len(ckpt.labels),)), "label_map_bias")
    return lmap


# ------------------------------------------------------------- dispatch

_SAVE = [(NgramClassifier, classifier_checkpoint), (StyleTransfer, transfer_checkpoint),
         (LanguageModel, lm_checkpoint), (LabelMap, label_map_checkpoint)]
_LOAD = {"classifier": classifier_from, "transfer": transfer_from, "lm": lm_from, "label_map": label_map_from}


def save_model(path, est, extra_config: dict | None = None) -> None:
    for cls, fn in _SAVE:
        if isinstance(est, cls):
            ckpt = fn(est)
            ckpt.config.update({f"run.{k}": str(v) for k, v in (extra_config or {}).items()})
            save_checkpoint(path, ckpt)
            return
    raise TypeError(f"cannot checkpoint a {type(est).__name__}")


def load_model(path, kind: str):
    """Load an estimator of ``kind`` (classifier, transfer, lm, label_map)."""
    if kind not in _LOAD:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    ckpt = load_checkpoint(path, kind)
    ckpt.config = {k: v for k, v in ckpt.config.items() if not k.startswith("run.")}
    return _LOAD[kind](ckpt)
