"""Command-line entry point (``styleshift <subcommand> ...``).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig, load_config, parse_list
from .corpus import Corpus, CorpusFormatError, generate_synthetic_corpus, load_corpus, split_text
from .embeddings import BottleneckClassifier, EvalClassifier, LabelMap
from .evaluation import (LanguageModel, evaluate_directions, identity_baseline, summary_table,
                         target_sample_baseline)
from .store import load_model, save_model

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("styleshift")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser, *flags: str) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")
    if "ckpt" in flags or "ckpt!" in flags:
        p.add_argument("--ckpt", type=Path, required="ckpt!" in flags, help="checkpoint path")
    if "input" in flags:
        p.add_argument("--input", type=Path, required=True, help="input file")
    if "target" in flags:
        p.add_argument("--target", required=True, help="target label")
    if "holdout" in flags:
        p.add_argument("--holdout", help="comma-separated held-out labels")
    if "cap" in flags:
        p.add_argument("--cap", type=int, help="max source sequences per label (default 900)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="styleshift", description="Fine-grained text style transfer with attribute embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    specs = {
        "gen-corpus": ("write train/valid/test splits of the synthetic corpus", ()),
        "train-classifier": ("train the bottleneck (or --eval) classifier", ("input",)),
        "train-lm": ("train the evaluation language model", ("input",)),
        "train-transfer": ("train a transfer model", ("input", "ckpt!")),
        "transfer": ("rewrite each line of --input toward --target", ("ckpt!", "input", "target")),
        "evaluate": ("evaluate a transfer model (or --identity) on a test split", ("ckpt", "input", "cap")),
        "exp-finegrained": ("fine-grained transfer experiment", ("cap",)),
        "exp-heldout": ("zero-shot transfer to held-out labels", ("holdout", "cap")),
        "exp-newspace": ("scratch / zero-shot / fine-tuned transfer to a new label space", ("holdout", "cap")),
        "map-labels": ("fit a logistic map from a classifier's space to new labels", ("ckpt!", "input")),
    }
    for name, (help_text, flags) in specs.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p, *flags)
        if name == "gen-corpus":
            p.add_argument("--spec", default="default", choices=["default"], help="synthetic corpus preset")
        if name == "train-classifier":
            p.add_argument("--eval", action="store_true", help="train the wide evaluation classifier")
        if name == "train-lm":
            p.add_argument("--vocab-from", type=Path, help="transfer checkpoint whose vocabulary to share")
        if name == "exp-finegrained":
            p.add_argument("--sweep", action="store_true", help="train once per lambda_sweep value instead")
        if name == "evaluate":
            p.add_argument("--classifier", type=Path, help="evaluation classifier checkpoint")
            p.add_argument("--lm", type=Path, help="language-model checkpoint")
            p.add_argument("--train", type=Path, help="training split for the target-sample baseline")
            p.add_argument("--identity", action="store_true", help="score the Identity stub instead of a model")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "holdout", None):
        overrides["holdout"] = ",".join(parse_list(args.holdout))
    if getattr(args, "cap", None) is not None:
        overrides["cap"] = args.cap
    return cfg.with_overrides(**overrides) if overrides else cfg


def _echo(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# --------------------------------------------------------------- commands

def cmd_gen_corpus(args, cfg):
    sc = generate_synthetic_corpus(cfg.synth_spec, np.random.default_rng(ex.seeds(cfg.seed)[0]))
    dirs = ex.out_dirs(args.out)
    ex.write_corpus(ex.Data(sc.train, sc.valid, sc.test, sc), dirs["corpus"])
    _echo(f"wrote {len(sc.train)}/{len(sc.valid)}/{len(sc.test)} examples to {dirs['corpus']}\n")


def _valid_split(path: Path) -> Path:
    return path.with_name(path.name.replace("train", "valid"))


def cmd_train_classifier(args, cfg):
    train = load_corpus(args.input)
    valid = _valid_split(args.input)
    valid = load_corpus(valid, train.labels) if valid != args.input and valid.exists() else train
    cls, hidden = (EvalClassifier, cfg.eval_hidden_dim) if args.eval else (BottleneckClassifier, cfg.d_a)
    model = cls(hidden_dim=hidden, n_buckets=cfg.n_buckets, max_steps=cfg.clf_steps, batch_size=cfg.clf_batch_size,
                learning_rate=cfg.clf_learning_rate, random_state=ex.seeds(cfg.seed)[1] + int(args.eval))
    model.fit(train, validation_data=(valid, None))
    path = ex.out_dirs(args.out)["ckpt"] / ("eval_classifier.ckpt" if args.eval else "classifier.ckpt")
    save_model(path, model)
    _echo(f"validation_accuracy\t{model.validation_accuracy_:.4f}\ncheckpoint\t{path}\n")


def cmd_train_lm(args, cfg):
    train = load_corpus(args.input)
    vocab = load_model(args.vocab_from, "transfer").model_.vocab if args.vocab_from else None
    lm = LanguageModel(vocab=vocab, hidden_dim=cfg.lm_hidden_dim, steps=cfg.lm_steps,
                       learning_rate=cfg.lm_learning_rate, random_state=ex.seeds(cfg.seed)[2]).fit(train)
    path = ex.out_dirs(args.out)["ckpt"] / "lm.ckpt"
    save_model(path, lm)
    _echo(f"train_perplexity\t{lm.perplexity(train):.2f}\ncheckpoint\t{path}\n")


def cmd_train_transfer(args, cfg):
    train = load_corpus(args.input)
    clf = load_model(args.ckpt, "classifier")
    dirs = ex.out_dirs(args.out)
    st = ex.make_transfer(cfg, clf, ex.seeds(cfg.seed)[4])

    def on_stage(i, step, model):
        save_model(dirs["ckpt"] / f"transfer_stage{i + 1}.ckpt", st, {"step": step})

    st.fit(train, on_stage=on_stage, log_sink=ex.Logger(dirs["reports"] / "transfer_train.log"))
    save_model(dirs["ckpt"] / "transfer.ckpt", st)
    _echo(f"checkpoint\t{dirs['ckpt'] / 'transfer.ckpt'}\n")


def cmd_transfer(args, cfg):
    st = load_model(args.ckpt, "transfer")
    try:
        lines = args.input.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RuntimeError(f"cannot read {args.input}: {exc.strerror}") from None
    y = st.target_embedding(args.target)
    toks = [split_text(l) or ["<unk>"] for l in lines]
    outs = st.rewrite(toks, np.repeat(np.atleast_2d(y), len(toks), axis=0)) if toks else []
    _echo("".join(o + "\n" for o in outs))


def cmd_evaluate(args, cfg):
    test = load_corpus(args.input)
    if not args.classifier or not args.lm:
        raise UsageError("evaluate needs --classifier and --lm checkpoints")
    eval_clf = load_model(args.classifier, "classifier")
    lm = load_model(args.lm, "lm")
    test = Corpus(test.examples, [l for l in eval_clf.classes_ if l in set(test.labels)] or test.labels)
    reports = [identity_baseline(eval_clf, lm, test, cfg.cap)]
    if args.train:
        train = load_corpus(args.train)
        reports.append(target_sample_baseline(eval_clf, lm, test, train,
                                              np.random.default_rng(ex.seeds(cfg.seed)[3]), cfg.cap))
    if not args.identity:
        if not args.ckpt:
            raise UsageError("evaluate needs --ckpt (or --identity)")
        st = load_model(args.ckpt, "transfer")
        reports.append(evaluate_directions(ex.transfer_generator(st, st.target_embedding), eval_clf, lm, test,
                                           cfg.cap, name="model"))
    text = summary_table(reports) + "".join(f"\n## {r.name}\n{r.to_tsv()}" for r in reports)
    (ex.out_dirs(args.out)["reports"] / "evaluate.tsv").write_text(text)
    _echo(text)


def cmd_exp_finegrained(args, cfg):
    if args.sweep:
        _echo(ex.exp_lambda_sweep(cfg, args.out, log.info))
    else:
        _echo(ex.exp_finegrained(cfg, args.out, log.info).text)


def cmd_exp_heldout(args, cfg):
    _echo(ex.exp_heldout(cfg, args.out, log.info).text)


def cmd_exp_newspace(args, cfg):
    _echo(ex.exp_newspace(cfg, args.out, log.info).text)


def cmd_map_labels(args, cfg):
    clf = load_model(args.ckpt, "classifier")
    corpus = load_corpus(args.input)
    lmap = LabelMap(embedder=clf, max_iter=cfg.map_iters, random_state=ex.seeds(cfg.seed)[6]).fit(corpus)
    path = ex.out_dirs(args.out)["ckpt"] / "label_map.ckpt"
    save_model(path, lmap)
    _echo(f"train_accuracy\t{lmap.score(corpus):.4f}\ncheckpoint\t{path}\n")


COMMANDS = {
    "gen-corpus": cmd_gen_corpus, "train-classifier": cmd_train_classifier, "train-lm": cmd_train_lm,
    "train-transfer": cmd_train_transfer, "transfer": cmd_transfer, "evaluate": cmd_evaluate,
    "exp-finegrained": cmd_exp_finegrained, "exp-heldout": cmd_exp_heldout, "exp-newspace": cmd_exp_newspace,
    "map-labels": cmd_map_labels,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (RuntimeError, ValueError, KeyError, OSError, CheckpointError, CorpusFormatError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        sys.stderr.write(f"error: {msg}\n")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
