"""
Graded lexical entailment with a supervised directional similarity network.

    python ./src/lexical_entailment.py build_space --corpus corpus.txt --kind window --out window.npz
    python ./src/lexical_entailment.py train --config config.json [--flag value ...]
    python ./src/lexical_entailment.py eval --checkpoint model/seed_1/sdsn_model.npz --data test.tsv
    python ./src/lexical_entailment.py score --checkpoint model/seed_1/sdsn_model.npz < pairs.tsv
"""
import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from config import (ConfigError, RunConfig, SPACE_KINDS, TASKS, SPLITS, THRESHOLD_POLICIES, RANK_DECAYS,
                    flatten_config, unknown_config_keys, parse_seeds, parse_ratios)
from data_processing.io_utils import load_json, save_json
from data_utils import load_pairs
from evaluation import evaluate, select_threshold
from models import load_bundle
from sparse import build_window_space, build_dependency_space, save_space
from task import TaskRunner
from utils import EntailmentLogger


EVAL_REPORT_FILE = "eval_report.json"


def _add_log_arguments(parser):
    parser.add_argument("--log_file", default=None,
                        help="where to save the log information; default: stderr")
    parser.add_argument("--log_lvl", default=None, type=str, choices=sorted(EntailmentLogger.LOG_LVLs),
                        help="d:debug; i:info; w:warning; e:error")


def _add_model_input_arguments(parser):
    parser.add_argument("--checkpoint", type=str, required=True, help="a trained model archive (.npz)")
    parser.add_argument("--embeddings", type=str, default=None,
                        help="embedding file; default: the one recorded in the checkpoint")
    parser.add_argument("--window_space", type=str, default=None,
                        help="window space archive of an SDF model; default: the recorded one")
    parser.add_argument("--dependency_space", type=str, default=None,
                        help="dependency space archive of an SDF model; default: the recorded one")
    parser.add_argument("--strict", action="store_true",
                        help="fail instead of warning when an input file differs from the one used in training")
    parser.add_argument("--float32", action="store_true", help="score in single precision")


def build_parser():
    parser = argparse.ArgumentParser(prog="lexical_entailment",
                                     description="graded lexical entailment with a directional similarity network")
    subparsers = parser.add_subparsers(dest="command", required=True)

    space_parser = subparsers.add_parser("build_space", help="build a sparse PPMI space from a corpus")
    space_parser.add_argument("--corpus", type=str, required=True,
                              help="plain text (one sentence per line) or a CoNLL dependency parse")
    space_parser.add_argument("--kind", type=str, required=True, choices=SPACE_KINDS)
    space_parser.add_argument("--window", type=int, default=3, help="context window on each side")
    space_parser.add_argument("--min_count", type=int, default=1,
                              help="drop word-context pairs seen fewer times than this")
    space_parser.add_argument("--use_lemma", action="store_true",
                              help="dependency spaces: use the LEMMA column instead of FORM")
    space_parser.add_argument("--lowercase", action="store_true",
                              help="lowercase corpus words; use with embeddings loaded with --lowercase")
    space_parser.add_argument("--num_core", type=int, default=1, help="worker processes for counting")
    space_parser.add_argument("--out", type=str, required=True, help="space archive to write (.npz)")
    space_parser.add_argument("--progress_bar", action="store_true")
    _add_log_arguments(space_parser)
    space_parser.set_defaults(func=cmd_build_space)

    train_parser = subparsers.add_parser("train", help="(pre-)train and evaluate the network for every seed")
    train_parser.add_argument("--config", type=str, default=None,
                              help="json configuration file; flags given on the command line win")
    train_parser.add_argument("--embeddings", type=str, help="pre-trained embeddings (text format)")
    train_parser.add_argument("--embedding_dim", type=int, help="expected embedding dimension")
    train_parser.add_argument("--lowercase", action=argparse.BooleanOptionalAction,
                              help="lowercase embedding and dataset words")
    train_parser.add_argument("--dataset", type=str, help="a single dataset file to split")
    train_parser.add_argument("--data_dir", "--splits_dir", dest="data_dir", type=str,
                              help="directory with train.tsv, dev.tsv and test.tsv; overrides --dataset")
    train_parser.add_argument("--task", type=str, choices=TASKS)
    train_parser.add_argument("--split", type=str, choices=SPLITS)
    train_parser.add_argument("--split_ratios", type=parse_ratios, help="train,dev,test ratios e.g. 0.7,0.05,0.25")
    train_parser.add_argument("--split_seed", type=int)
    train_parser.add_argument("--sdf", action=argparse.BooleanOptionalAction,
                              help="add the 10 sparse distributional features to the hidden layer")
    train_parser.add_argument("--window_space", type=str, help="window space archive")
    train_parser.add_argument("--dependency_space", type=str, help="dependency space archive")
    train_parser.add_argument("--rank_decay", type=str, choices=RANK_DECAYS)
    train_parser.add_argument("--as", "--additional_supervision", dest="additional_supervision",
                              action=argparse.BooleanOptionalAction,
                              help="one hinge-loss pre-training pass over the lexicon")
    train_parser.add_argument("--lexicon", type=str, help="word1 TAB word2 TAB pos|neg")
    train_parser.add_argument("--lexicon_cap", type=int, help="maximum lexicon pairs per word")
    train_parser.add_argument("--new_model_dir", type=str, help="directory for models, logs and reports")
    train_parser.add_argument("--overwrite_model_dir", action=argparse.BooleanOptionalAction)
    train_parser.add_argument("--threshold_policy", type=str, choices=THRESHOLD_POLICIES,
                              help="binary task: dev-tuned F1 threshold or max_score/2")
    train_parser.add_argument("--m_size", type=int, help="size of the mapped representations")
    train_parser.add_argument("--h_size", type=int, help="size of the hidden layer")
    train_parser.add_argument("--learning_rate", type=float)
    train_parser.add_argument("--adadelta_rho", type=float)
    train_parser.add_argument("--adadelta_eps", type=float)
    train_parser.add_argument("--dropout_keep", type=float, help="keep probability of input dropout")
    train_parser.add_argument("--margin", type=float, help="hinge loss margin R")
    train_parser.add_argument("--max_epochs", type=int)
    train_parser.add_argument("--patience", type=int, help="epochs without dev improvement before stopping")
    train_parser.add_argument("--batch_size", type=int)
    train_parser.add_argument("--seeds", type=parse_seeds, help="e.g. 1..10 or 1,2,3")
    train_parser.add_argument("--max_score", type=float, help="S, the top of the score scale")
    train_parser.add_argument("--progress_bar", action=argparse.BooleanOptionalAction)
    train_parser.add_argument("--log_timestamps", action=argparse.BooleanOptionalAction,
                              help="add a timestamp to every training log record (off by default)")
    _add_log_arguments(train_parser)
    # flags that are not given (None) fall back to the config file, then to RunConfig
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser("eval", help="evaluate a trained model on a dataset")
    _add_model_input_arguments(eval_parser)
    eval_parser.add_argument("--data", type=str, required=True, help="graded or binary dataset file")
    eval_parser.add_argument("--task", type=str, choices=TASKS, default=None,
                             help="default: the task the model was trained on")
    eval_parser.add_argument("--threshold_policy", type=str, choices=THRESHOLD_POLICIES, default=None,
                             help="binary task: default is the threshold stored in the checkpoint")
    eval_parser.add_argument("--dev_data", type=str, default=None,
                             help="binary task: tune the threshold on this file instead")
    eval_parser.add_argument("--report", type=str, default=None,
                             help=f"where to save the report; default: {EVAL_REPORT_FILE} next to the checkpoint")
    _add_log_arguments(eval_parser)
    eval_parser.set_defaults(func=cmd_eval)

    score_parser = subparsers.add_parser("score", help="score word pairs read from a file or stdin")
    _add_model_input_arguments(score_parser)
    score_parser.add_argument("--pairs", type=str, default=None, help="word1 TAB word2 per line; default: stdin")
    _add_log_arguments(score_parser)
    score_parser.set_defaults(func=cmd_score)

    return parser


def load_config_file(config_file):
    """flat config from a json file and the problems found in it"""
    data = load_json(config_file)
    if not isinstance(data, dict):
        return {}, [f"{config_file}: the configuration must be a json object"]
    flat = flatten_config(data)
    problems = [f"{config_file}: unknown configuration key '{k}'" for k in unknown_config_keys(flat)]
    return {k: v for k, v in flat.items() if k not in unknown_config_keys(flat)}, problems


def resolve_run_config(args, config_values=None):
    """RunConfig from defaults, then config file values, then explicitly given flags"""
    values = dict(config_values or {})
    for k, v in vars(args).items():
        if k in ("func", "command", "config"):
            continue
        if v is not None:
            values[k] = v
    return RunConfig(**values)


def cmd_build_space(args):
    if args.kind == "window":
        space = build_window_space(args.corpus, window=args.window, min_count=args.min_count,
                                   num_core=args.num_core, lowercase=args.lowercase, progress_bar=args.progress_bar)
    else:
        space = build_dependency_space(args.corpus, min_count=args.min_count, num_core=args.num_core,
                                       use_lemma=args.use_lemma, lowercase=args.lowercase,
                                       progress_bar=args.progress_bar)
    save_space(space, args.out)
    args.logger.info(f"space saved to {args.out}")
    print(f"words\t{len(space.words)}\ncontexts\t{len(space.contexts)}")
    return 0


def cmd_train(args):
    config_values, problems = ({}, [])
    if args.config:
        config_values, problems = load_config_file(args.config)
    run_config = resolve_run_config(args, config_values)
    problems.extend(run_config.validate())
    if problems:
        raise ConfigError(problems)

    args.logger = EntailmentLogger(logger_file=run_config.log_file, logger_level=run_config.log_lvl).get_logger()
    run_config.logger = args.logger
    task_runner = TaskRunner(run_config)
    task_runner.task_runner_default_init()
    summary = task_runner.train()
    print(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
    return 0


def _load_bundle(args):
    return load_bundle(args.checkpoint, embeddings=args.embeddings, window_space=args.window_space,
                       dependency_space=args.dependency_space, strict=args.strict, float32=args.float32)


def cmd_eval(args):
    bundle, meta = _load_bundle(args)
    task = args.task or meta.get("task", "graded")
    max_score = bundle.params.max_score
    pairs = load_pairs(args.data, task, max_score)

    threshold = None
    if task == "binary":
        if args.dev_data:
            dev_pairs = load_pairs(args.dev_data, "binary")
            dev_scores, _ = bundle.score_pairs(dev_pairs)
            scored = ~np.isnan(dev_scores)
            threshold = select_threshold(dev_scores[scored], [p.gold for p, ok in zip(dev_pairs, scored) if ok])
        elif args.threshold_policy == "half":
            threshold = max_score / 2.0
        elif bundle.threshold is not None:
            threshold = bundle.threshold
        else:
            args.logger.warning("the checkpoint stores no threshold; using max_score/2")
            threshold = max_score / 2.0

    report = evaluate(bundle, pairs, task, threshold=threshold, seed=meta.get("seed"))
    report.variant = meta.get("variant")
    report_file = Path(args.report) if args.report else Path(args.checkpoint).parent / EVAL_REPORT_FILE
    report_file.parent.mkdir(parents=True, exist_ok=True)
    save_json(report.to_dict(), report_file)
    args.logger.info(f"{args.data}: {report.summary()}")
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _read_pair_lines(args):
    if args.pairs:
        with open(args.pairs, "r", encoding="utf-8") as f:
            return f.read().splitlines()
    return sys.stdin.read().splitlines()


def cmd_score(args):
    bundle, _ = _load_bundle(args)
    rows = []
    for line in _read_pair_lines(args):
        if not line.strip():
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) < 2 or not cols[0] or not cols[1]:
            rows.append((line.strip(), "", "malformed line"))
        else:
            rows.append((cols[0], cols[1], None))

    valid = [i for i, row in enumerate(rows) if row[2] is None]
    scores, skipped = bundle.score_pairs([rows[i][:2] for i in valid])
    score_of = dict(zip(valid, scores))
    reasons = {valid[pos]: reason for pos, reason in skipped}
    output = []
    for i, (word1, word2, reason) in enumerate(rows):
        reason = reason or reasons.get(i)
        if reason:
            output.append(f"{word1}\t{word2}\tNA\t{reason}")
        else:
            output.append(f"{word1}\t{word2}\t{score_of[i]:.6f}")
    if output:
        sys.stdout.write("\n".join(output) + "\n")
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    log_lvl = args.log_lvl or "i"
    args.logger = EntailmentLogger(logger_file=args.log_file, logger_level=log_lvl).get_logger()

    try:
        return args.func(args)
    except Exception as ex:
        args.logger.error(f"{args.command} failed:\n{traceback.format_exc()}")
        print(f"error: {ex}", file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
