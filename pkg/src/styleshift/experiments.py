"""End-to-end experiment drivers: fine-grained transfer over all labels,
zero-shot transfer to held-out labels, and transfer to a new label space.

Each driver writes corpora, checkpoints and a tab-separated report under its
output directory and returns the in-memory reports.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ConfigError, ExperimentConfig
from .corpus import (Corpus, SyntheticCorpus, build_vocab, generate_newspace_corpus, generate_synthetic_corpus,
                     load_corpus, save_corpus)
from .embeddings import BottleneckClassifier, EvalClassifier, LabelMap
from .evaluation import (EvalReport, LanguageModel, embedding_generator, evaluate_directions, identity_baseline,
                         summary_table, target_sample_baseline)
from .store import save_model
from .transfer import StyleTransfer

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


# ------------------------------------------------------------------ plumbing

def seeds(seed: int, n: int = 8) -> list[int]:
    """Independent sub-seeds for the stages of one run."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def out_dirs(out) -> dict:
    out = Path(out)
    dirs = {name: out / name for name in ("corpus", "ckpt", "reports")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


@dataclass
class Data:
    train: Corpus
    valid: Corpus
    test: Corpus
    synthetic: SyntheticCorpus | None = None

    @property
    def labels(self) -> list[str]:
        return list(self.train.labels)


def load_data(cfg: ExperimentConfig) -> Data:
    if cfg.corpus_dir:
        parts = [load_corpus(Path(cfg.corpus_dir) / f"{s}.tsv") for s in SPLITS]
        labels = parts[0].labels
        return Data(*[Corpus(p.examples, labels) for p in parts])
    sc = generate_synthetic_corpus(cfg.synth_spec, np.random.default_rng(seeds(cfg.seed)[0]))
    return Data(sc.train, sc.valid, sc.test, sc)


def write_corpus(data: Data, directory: Path, prefix: str = "") -> None:
    for name in SPLITS:
        save_corpus(getattr(data, name), directory / f"{prefix}{name}.tsv")


def fit_classifiers(cfg: ExperimentConfig, data: Data, seed: int):
    common = dict(n_buckets=cfg.n_buckets, max_steps=cfg.clf_steps, batch_size=cfg.clf_batch_size,
                  learning_rate=cfg.clf_learning_rate)
    clf = BottleneckClassifier(hidden_dim=cfg.d_a, random_state=seed, **common)
    clf.fit(data.train, validation_data=(data.valid, None))
    eval_clf = EvalClassifier(hidden_dim=cfg.eval_hidden_dim, random_state=seed + 1, **common)
    eval_clf.fit(data.train, validation_data=(data.valid, None))
    return clf, eval_clf


def fit_lm(cfg: ExperimentConfig, data: Data, seed: int) -> LanguageModel:
    return LanguageModel(vocab=build_vocab(data.train), hidden_dim=cfg.lm_hidden_dim, steps=cfg.lm_steps,
                         learning_rate=cfg.lm_learning_rate, random_state=seed).fit(data.train)


def make_transfer(cfg: ExperimentConfig, clf, seed: int, **overrides) -> StyleTransfer:
    mc = cfg.model_config()
    params = dict(d_h=mc.d_h, init_scale=mc.init_scale, lam=cfg.lam, steps=cfg.steps, batch_size=cfg.batch_size,
                  learning_rate=cfg.learning_rate, gradient_clip_norm=cfg.gradient_clip_norm,
                  word_drop=cfg.word_drop, shuffle_window=cfg.shuffle_window,
                  source_embedding=cfg.source_embedding, inclusive_sampling=cfg.inclusive_sampling,
                  random_state=seed)
    params.update(overrides)
    return StyleTransfer(clf, **params)


def transfer_generator(st: StyleTransfer, target_embedding: Callable[[str], np.ndarray]):
    return embedding_generator(st.rewrite, target_embedding)


def _meta(lines: dict) -> str:
    return "".join(f"# {k}\t{v}\n" for k, v in lines.items())


def _sections(reports) -> str:
    return "".join(f"\n## {r.name}\n{r.to_tsv()}" for r in reports)


class Logger:
    """Collects training log lines; forwards them to ``sink`` if given."""

    def __init__(self, path: Path | None = None, sink: Callable[[str], None] | None = None):
        self.path, self.sink = path, sink
        if path:
            path.write_text("")

    def __call__(self, line: str) -> None:
        if self.path:
            with self.path.open("a") as fh:
                fh.write(line + "\n")
        if self.sink:
            self.sink(line)


# --------------------------------------------------------- fine-grained

@dataclass
class FinegrainedResult:
    identity: EvalReport
    target_sample: EvalReport
    stages: list
    stage_steps: list
    clf_accuracy: float
    eval_accuracy: float
    text: str
    models: dict = field(default_factory=dict)


def exp_finegrained(cfg: ExperimentConfig, out, sink=None) -> FinegrainedResult:
    """Train on every label and evaluate all directions at each training stage."""
    dirs = out_dirs(out)
    s = seeds(cfg.seed)
    data = load_data(cfg)
    write_corpus(data, dirs["corpus"])
    clf, eval_clf = fit_classifiers(cfg, data, s[1])
    lm = fit_lm(cfg, data, s[2])
    for name, est in (("classifier", clf), ("eval_classifier", eval_clf), ("lm", lm)):
        save_model(dirs["ckpt"] / f"{name}.ckpt", est)
    identity = identity_baseline(eval_clf, lm, data.test, cfg.cap)
    sample = target_sample_baseline(eval_clf, lm, data.test, data.train, np.random.default_rng(s[3]), cfg.cap)
    st = make_transfer(cfg, clf, s[4])
    gen = transfer_generator(st, clf.class_embedding)
    stages, steps = [], []

    def on_stage(i, step, model):
        save_model(dirs["ckpt"] / f"transfer_stage{i + 1}.ckpt", st, {"step": step})
        stages.append(evaluate_directions(gen, eval_clf, lm, data.test, cfg.cap, name=f"Model {i + 1}"))
        steps.append(step)

    st.fit(data.train, on_stage=on_stage, log_sink=Logger(dirs["reports"] / "finegrained_train.log", sink))
    save_model(dirs["ckpt"] / "transfer.ckpt", st)
    clf_acc, eval_acc = clf.score(data.test), eval_clf.score(data.test)
    meta = {"experiment": "finegrained", "labels": ",".join(data.labels), "chance_pct": f"{100 / len(data.labels):.1f}",
            "classifier_test_acc": f"{clf_acc:.4f}", "eval_classifier_test_acc": f"{eval_acc:.4f}",
            "stage_steps": ",".join(map(str, steps)), "lambda": f"{cfg.lam:g}"}
    text = _meta(meta) + summary_table([identity, sample] + stages) + _sections(stages)
    (dirs["reports"] / "finegrained.tsv").write_text(text)
    return FinegrainedResult(identity, sample, stages, steps, clf_acc, eval_acc, text,
                             {"classifier": clf, "eval_classifier": eval_clf, "lm": lm, "transfer": st,
                              "data": data})


def exp_lambda_sweep(cfg: ExperimentConfig, out, sink=None) -> str:
    """Final-checkpoint metrics for each value of ``cfg.lambdas`` on shared data and classifiers."""
    dirs = out_dirs(out)
    s = seeds(cfg.seed)
    data = load_data(cfg)
    clf, eval_clf = fit_classifiers(cfg, data, s[1])
    lm = fit_lm(cfg, data, s[2])
    rows = []
    for lam in cfg.lambdas:
        st = make_transfer(cfg, clf, s[4], lam=lam)
        st.fit(data.train, log_sink=Logger(dirs["reports"] / f"lambda_{lam:g}_train.log", sink))
        save_model(dirs["ckpt"] / f"transfer_lambda_{lam:g}.ckpt", st)
        rows.append(evaluate_directions(transfer_generator(st, clf.class_embedding), eval_clf, lm, data.test,
                                        cfg.cap, name=f"lambda={lam:g}"))
    text = _meta({"experiment": "lambda_sweep", "steps": cfg.steps}) + summary_table(rows)
    (dirs["reports"] / "lambda_sweep.tsv").write_text(text)
    return text


# ------------------------------------------------------------- held-out

@dataclass
class HeldoutResult:
    holdout: list
    seen_labels: list
    baselines: dict  # block -> (identity, target_sample)
    stages: list  # [(seen_report, heldout_report)]
    text: str
    models: dict = field(default_factory=dict)

    @property
    def final(self) -> tuple:
        return self.stages[-1]


def check_holdout(holdout, labels) -> list:
    holdout = list(holdout)
    unknown = [h for h in holdout if h not in labels]
    if unknown:
        raise ConfigError(f"holdout labels not in the label set: {unknown}")
    if not holdout:
        raise ConfigError("holdout list is empty")
    if len(set(holdout)) >= len(labels) - 1:
        raise ConfigError("holdout must leave at least two seen labels")
    return holdout


def exp_heldout(cfg: ExperimentConfig, out, sink=None) -> HeldoutResult:
    """Classifiers see every label; the transfer model never sees the held-out ones."""
    dirs = out_dirs(out)
    s = seeds(cfg.seed)
    data = load_data(cfg)
    holdout = check_holdout(cfg.holdout_labels, data.labels)
    seen = [l for l in data.labels if l not in holdout]
    write_corpus(data, dirs["corpus"])
    clf, eval_clf = fit_classifiers(cfg, data, s[1])
    lm = fit_lm(cfg, data, s[2])
    for name, est in (("classifier", clf), ("eval_classifier", eval_clf), ("lm", lm)):
        save_model(dirs["ckpt"] / f"{name}.ckpt", est)
    transfer_train = data.train.without(holdout)
    assert not any(e.label in holdout for e in transfer_train), "held-out label leaked into transfer data"
    rng = np.random.default_rng(s[3])
    blocks = {"seen": seen, "held-out": holdout}
    baselines = {b: (identity_baseline(eval_clf, lm, data.test, cfg.cap, seen, t),
                     target_sample_baseline(eval_clf, lm, data.test, data.train, rng, cfg.cap, seen, t))
                 for b, t in blocks.items()}
    st = make_transfer(cfg, clf, s[4])
    gen = transfer_generator(st, clf.class_embedding)
    stages = []

    def on_stage(i, step, model):
        save_model(dirs["ckpt"] / f"transfer_stage{i + 1}.ckpt", st, {"step": step})
        stages.append(tuple(evaluate_directions(gen, eval_clf, lm, data.test, cfg.cap, seen, t,
                                                name=f"Model {i + 1} [{b}]") for b, t in blocks.items()))

    st.fit(transfer_train, on_stage=on_stage, log_sink=Logger(dirs["reports"] / "heldout_train.log", sink))
    save_model(dirs["ckpt"] / "transfer.ckpt", st)
    meta = {"experiment": "heldout", "labels": ",".join(data.labels), "holdout": ",".join(holdout),
            "chance_pct": f"{100 / len(data.labels):.1f}", "eval_classifier_test_acc": f"{eval_clf.score(data.test):.4f}"}
    text = _meta(meta)
    for k, (b, _) in enumerate(blocks.items()):
        ident, sample = baselines[b]
        ident.name, sample.name = f"Identity [{b}]", f"Target-attr-sample [{b}]"
        text += f"\n## {b} targets\n" + summary_table([ident, sample] + [st_[k] for st_ in stages])
    text += _sections([r for pair in stages for r in pair])
    (dirs["reports"] / "heldout.tsv").write_text(text)
    return HeldoutResult(holdout, seen, baselines, stages, text,
                         {"classifier": clf, "eval_classifier": eval_clf, "lm": lm, "transfer": st, "data": data})


# ------------------------------------------------------------ new space

@dataclass
class NewspaceResult:
    identity: EvalReport
    target_sample: EvalReport
    scratch: EvalReport
    zero_shot: EvalReport
    fine_tuned: EvalReport
    label_map_accuracy: float
    new_classifier_accuracy: float
    text: str


def newspace_data(cfg: ExperimentConfig, base: Data) -> Data:
    if base.synthetic is None:
        raise ConfigError("the new-space experiment needs the synthetic base corpus")
    sc = generate_newspace_corpus(base.synthetic, np.random.default_rng(seeds(cfg.seed)[5]), cfg.new_num_labels,
                                  cfg.new_content_share, cfg.new_aliased, cfg.new_examples_per_label,
                                  max(1, cfg.new_test_per_label // 2), cfg.new_test_per_label,
                                  avoid=cfg.holdout_labels, spec=cfg.synth_spec)
    return Data(sc.train, sc.valid, sc.test, sc)


def exp_newspace(cfg: ExperimentConfig, out, sink=None, pretrained: HeldoutResult | None = None) -> NewspaceResult:
    """Scratch training, zero-shot through a label map, and fine-tuning on a small new-space corpus.

    The pre-trained model is the held-out experiment's transfer model
    (trained here unless ``pretrained`` is given).
    """
    dirs = out_dirs(out)
    s = seeds(cfg.seed)
    if pretrained is None:
        pretrained = exp_heldout(cfg, Path(out) / "pretrain", sink)
    base_clf = pretrained.models["classifier"]
    base_st = pretrained.models["transfer"]
    new = newspace_data(cfg, pretrained.models["data"])
    write_corpus(new, dirs["corpus"], "new_")
    new_cfg = cfg.with_overrides(d_a=base_st.model_.d_a)
    new_clf, new_eval = fit_classifiers(new_cfg, new, s[6])
    lm = fit_lm(cfg, new, s[7])
    lmap = LabelMap(embedder=base_clf, max_iter=cfg.map_iters, random_state=s[6]).fit(new.train)
    for name, est in (("new_classifier", new_clf), ("new_eval_classifier", new_eval), ("new_lm", lm),
                      ("label_map", lmap)):
        save_model(dirs["ckpt"] / f"{name}.ckpt", est)
    rng = np.random.default_rng(s[3])
    identity = identity_baseline(new_eval, lm, new.test, cfg.cap)
    sample = target_sample_baseline(new_eval, lm, new.test, new.train, rng, cfg.cap)
    train_log = Logger(dirs["reports"] / "newspace_train.log", sink)

    scratch = make_transfer(cfg, new_clf, s[4], steps=cfg.new_steps).fit(new.train, log_sink=train_log)
    save_model(dirs["ckpt"] / "scratch.ckpt", scratch)
    r_scratch = evaluate_directions(transfer_generator(scratch, new_clf.class_embedding), new_eval, lm, new.test,
                                    cfg.cap, name="Scratch")

    r_zero = evaluate_directions(transfer_generator(base_st, lmap.target_embedding), new_eval, lm, new.test,
                                 cfg.cap, name="Zero-shot")

    tuned = copy.deepcopy(base_st)
    tuned.fine_tune(new.train, new_clf, steps=cfg.new_steps, log_sink=train_log)
    save_model(dirs["ckpt"] / "fine_tuned.ckpt", tuned)
    r_tuned = evaluate_directions(transfer_generator(tuned, new_clf.class_embedding), new_eval, lm, new.test,
                                  cfg.cap, name="Fine-tuned")

    map_acc, new_acc = lmap.score(new.test), new_eval.score(new.test)
    meta = {"experiment": "newspace", "labels": ",".join(new.labels),
            "chance_pct": f"{100 / len(new.labels):.1f}", "train_examples": len(new.train),
            "label_map_test_acc": f"{map_acc:.4f}", "eval_classifier_test_acc": f"{new_acc:.4f}"}
    reports = [identity, sample, r_scratch, r_zero, r_tuned]
    text = _meta(meta) + summary_table(reports) + _sections([r_scratch, r_zero, r_tuned])
    (dirs["reports"] / "newspace.tsv").write_text(text)
    return NewspaceResult(identity, sample, r_scratch, r_zero, r_tuned, map_acc, new_acc, text)
