"""
This script is used for training and test
"""
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np
from tqdm import trange, tqdm

from config import (MODEL_FILE, TRAINING_LOG_FILE, REPORT_FILE, AGGREGATE_REPORT_FILE, ARGUMENTS_FILE,
                    SPACE_KINDS, VERSION, CONFIG_VERSION_NAME)
from data_processing.io_utils import save_json
from data_utils import load_pairs, load_split_dir, make_split, load_lexicon
from embeddings import load_embeddings
from evaluation import (UndefinedCorrelationError, spearman, select_threshold, binary_metrics,
                        resolve_threshold, evaluate_scores, aggregate)
from model_utils import mse_loss, hinge_loss
from models import EncodedPairs, PairEncoder, forward, backward, init_params, predict, save_model
from optimizer import AdaDelta
from sparse import load_space
from utils import EntailmentLogger


# independent random streams derived from one run seed
INIT_STREAM, TRAIN_STREAM, PRETRAIN_STREAM = 0, 1, 2


def seed_sequence(seed, stream):
    return np.random.SeedSequence(seed, spawn_key=(stream,))


def _stream_rngs(seed, stream):
    """(shuffle rng, dropout rng) of one stream"""
    shuffle_ss, dropout_ss = seed_sequence(seed, stream).spawn(2)
    return np.random.default_rng(shuffle_ss), np.random.default_rng(dropout_ss)


@dataclass
class TrainingData:
    encoded: EncodedPairs
    # regression targets: the graded score, or 0 / S for binary labels
    gold: np.ndarray
    # the original gold values (scores or booleans), aligned with encoded rows
    raw_gold: list

    def __len__(self):
        return len(self.encoded)

    @property
    def labels(self):
        return np.asarray(self.raw_gold, dtype=bool)

    @classmethod
    def from_pairs(cls, pairs, encoder, max_score):
        """pairs: ScoredPair or LexiconPair list; boolean golds map to S (positive) and 0"""
        pairs = list(pairs)
        encoded = encoder.encode(pairs)
        raw = [p.label if hasattr(p, "label") else p.gold for p in (pairs[i] for i in encoded.index)]
        gold = np.array([(max_score if g else 0.0) if isinstance(g, (bool, np.bool_)) else g for g in raw],
                        dtype=np.float64)
        return cls(encoded, gold, raw)

    def batch(self, rows):
        enc = self.encoded
        return enc.w1[rows], enc.w2[rows], None if enc.x is None else enc.x[rows], self.gold[rows]


@dataclass
class TrainResult:
    params: object
    log: List[dict]
    best_epoch: int
    best_dev_metric: Optional[float]
    epochs_run: int


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pretrain(params, lexicon, config, optimizer=None, seed=0, logger=None):
    """
    One shuffled pass of hinge-loss updates over the lexicon pairs (targets 0 and S),
    with train-mode dropout. Pairs that could not be encoded were already skipped.
    """
    logger = logger or EntailmentLogger().get_logger()
    if lexicon.encoded.skipped:
        logger.warning(f"additional supervision: {len(lexicon.encoded.skipped)} lexicon pairs skipped "
                       f"(out of vocabulary)")
    if len(lexicon) == 0:
        logger.warning("additional supervision: no usable lexicon pair, pre-training skipped")
        return params

    optimizer = optimizer or AdaDelta(params, config)
    shuffle_rng, dropout_rng = _stream_rngs(seed, PRETRAIN_STREAM)
    total_loss, n_active = 0.0, 0
    batches = _batches(len(lexicon), config.batch_size, shuffle_rng)
    for batch_num, rows in enumerate(tqdm(batches, desc="Pretrain", disable=not config.progress_bar), start=1):
        w1, w2, x, gold = lexicon.batch(rows)
        trace = forward(params, w1, w2, x, mode="train", rng=dropout_rng, keep_prob=config.dropout_keep)
        loss, dl_dy = hinge_loss(trace.y, gold, config.max_score, config.margin)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite pre-training loss {loss} in batch {batch_num}")
        total_loss += loss
        n_active += int(np.count_nonzero(dl_dy))
        params = optimizer.step(params, backward(params, trace, dl_dy))

    logger.info(f"additional supervision: one pass over {len(lexicon)} pairs, hinge loss {total_loss:.4f}, "
                f"{n_active} pairs outside the margin")
    return params


def dev_metric(params, data, task):
    """Spearman's rho (graded) or F1 at the dev-tuned threshold (binary); None when undefined"""
    scores = predict(params, data.encoded)
    if task == "graded":
        try:
            return spearman(scores, data.gold)
        except UndefinedCorrelationError:
            return None
    threshold = select_threshold(scores, data.labels)
    return binary_metrics(scores, data.labels, threshold)[2]


def train(params, train_data, dev_data, config, task="graded", optimizer=None, seed=0, log_file=None,
          logger=None):
    """
    Mini-batch MSE training with early stopping on the dev metric.

    After every epoch the dev metric is computed; training stops after config.patience
    epochs without a strict improvement or at config.max_epochs and the parameters of
    the best dev epoch are returned. Without dev data all max_epochs run and the final
    parameters are returned. The log gets one json line per epoch.
    """
    logger = logger or EntailmentLogger().get_logger()
    if len(train_data) == 0:
        raise ValueError("the training set has no usable pair")
    if dev_data is not None and len(dev_data) == 0:
        raise ValueError("the dev set has no usable pair")
    optimizer = optimizer or AdaDelta(params, config)
    shuffle_rng, dropout_rng = _stream_rngs(seed, TRAIN_STREAM)

    log = []
    best_params, best_metric, best_epoch = None, None, 0
    epochs_without_improvement = 0
    log_writer = open(log_file, "w", encoding="utf-8") if log_file else None
    epoch = 0

    try:
        epoch_iter = trange(1, config.max_epochs + 1, desc="Epoch", disable=not config.progress_bar)
        for epoch in epoch_iter:
            epoch_loss = 0.0
            batches = _batches(len(train_data), config.batch_size, shuffle_rng)
            for batch_num, rows in enumerate(batches, start=1):
                w1, w2, x, gold = train_data.batch(rows)
                trace = forward(params, w1, w2, x, mode="train", rng=dropout_rng, keep_prob=config.dropout_keep)
                loss, dl_dy = mse_loss(trace.y, gold)
                if not np.isfinite(loss):
                    raise FloatingPointError(f"non-finite training loss {loss} at epoch {epoch}, batch {batch_num} "
                                             f"(training rows {rows.tolist()})")
                epoch_loss += loss
                params = optimizer.step(params, backward(params, trace, dl_dy))

            train_mse = float(np.mean((predict(params, train_data.encoded) - train_data.gold) ** 2))
            record = {"epoch": epoch, "train_loss": epoch_loss, "train_mse": train_mse}

            if dev_data is not None:
                metric = dev_metric(params, dev_data, task)
                improved = metric is not None and (best_metric is None or metric > best_metric)
                if improved:
                    best_params, best_metric, best_epoch = params.copy(), metric, epoch
                    epochs_without_improvement = 0
                else:
                    epochs_without_improvement += 1
                record.update(dev_metric=metric, best=improved)
            if config.log_timestamps:
                record["timestamp"] = datetime.now().isoformat(timespec="seconds")

            log.append(record)
            if log_writer:
                log_writer.write(json.dumps(record, sort_keys=True) + "\n")
                log_writer.flush()
            logger.debug(f"epoch {epoch}: train loss {epoch_loss:.6f}; train mse {train_mse:.6f}; "
                         f"dev metric {record.get('dev_metric')}")

            if dev_data is not None and epochs_without_improvement >= config.patience:
                logger.info(f"early stop at epoch {epoch}: no dev improvement for {config.patience} epochs")
                break
        epoch_iter.close()
    finally:
        if log_writer:
            log_writer.close()

    if dev_data is None or best_params is None:
        if dev_data is not None:
            logger.warning("the dev metric was undefined at every epoch; keeping the final parameters")
        best_params, best_epoch = params, epoch
    logger.info(f"training finished after {epoch} epochs; best epoch {best_epoch}, dev metric {best_metric}")
    return TrainResult(params=best_params, log=log, best_epoch=best_epoch, best_dev_metric=best_metric,
                       epochs_run=epoch)


def multi_seed(run_seed, seeds):
    """run_seed(seed) -> EvalReport for every seed; returns the per-seed reports and their aggregate"""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    reports = [run_seed(seed) for seed in seeds]
    return reports, aggregate(reports)


def variant_name(sdf, additional_supervision):
    return "SDSN" + ("+SDF" if sdf else "") + ("+AS" if additional_supervision else "")


class TaskRunner(object):

    def __init__(self, args):
        super().__init__()

        self.args = args
        self.logger = getattr(args, "logger", None) or EntailmentLogger(
            logger_file=args.log_file, logger_level=args.log_lvl).get_logger()
        self.config = args.train_config()
        self.new_model_dir_path = Path(self.args.new_model_dir)
        self.embeddings = None
        self.spaces = None
        self.encoder = None
        self.split = None
        self.train_data = None
        self.dev_data = None
        self.test_data = None
        self.lexicon_data = None

    def task_runner_default_init(self):
        args = self.args
        self.embeddings = load_embeddings(args.embeddings, expected_dim=args.embedding_dim, lowercase=args.lowercase)

        if args.sdf:
            self.spaces = [load_space(args.window_space), load_space(args.dependency_space)]
            kinds = tuple(space.kind for space in self.spaces)
            if kinds != SPACE_KINDS:
                raise ValueError(f"expect a window and a dependency space but got {kinds}")
        self.encoder = PairEncoder(self.embeddings, self.spaces, args.rank_decay)

        if args.data_dir:
            self.split = load_split_dir(args.data_dir, args.task, args.max_score)
        else:
            pairs = load_pairs(args.dataset, args.task, args.max_score)
            self.split = make_split(pairs, args.split, args.split_ratios, args.split_seed)

        self.train_data, self.dev_data, self.test_data = (
            TrainingData.from_pairs(getattr(self.split, name), self.encoder, args.max_score)
            for name in ("train", "dev", "test"))
        for name, data in (("train", self.train_data), ("dev", self.dev_data), ("test", self.test_data)):
            if data.encoded.skipped:
                self.logger.warning(f"{name}: {len(data.encoded.skipped)} pairs skipped (out of vocabulary)")
        if len(self.dev_data) == 0:
            self.logger.warning("no usable dev pair: training runs for max_epochs without early stopping")
            self.dev_data = None

        if args.additional_supervision:
            lexicon = load_lexicon(args.lexicon, cap=args.lexicon_cap, seed=args.split_seed)
            self.lexicon_data = TrainingData.from_pairs(lexicon, self.encoder, args.max_score)

        self.new_model_dir_path.mkdir(parents=True, exist_ok=True)
        self.logger.info(f"embeddings: {self.embeddings}; split: {self.split.split_kind} {self.split.sizes}; "
                         f"variant: {variant_name(args.sdf, args.additional_supervision)}")
        self.logger.info("All parameters:\n{}".format(self.args))

    def run_seed(self, seed):
        args = self.args
        seed_dir = self.new_model_dir_path / f"seed_{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        self.logger.info(f"start training with seed {seed}...")

        params = init_params(self.embeddings.dim, args.m_size, args.h_size, args.sdf, args.max_score,
                             seed_sequence(seed, INIT_STREAM))
        optimizer = AdaDelta(params, self.config)
        if args.additional_supervision:
            params = pretrain(params, self.lexicon_data, self.config, optimizer, seed=seed, logger=self.logger)
        result = train(params, self.train_data, self.dev_data, self.config, task=args.task,
                       optimizer=optimizer, seed=seed, log_file=seed_dir / TRAINING_LOG_FILE, logger=self.logger)

        threshold = None
        if args.task == "binary":
            threshold = self._threshold(result.params)
        save_model(seed_dir / MODEL_FILE, result.params, meta=self._model_meta(seed, result, threshold))
        test_scores = predict(result.params, self.test_data.encoded)
        report = evaluate_scores(test_scores, self.test_data.raw_gold, args.task, threshold,
                                 n_skipped=len(self.test_data.encoded.skipped), seed=seed)
        report.dev_metric = result.best_dev_metric
        report.variant = variant_name(args.sdf, args.additional_supervision)

        save_json(report.to_dict(), seed_dir / REPORT_FILE)
        self.logger.info(f"seed {seed} test: {report.summary()}")
        return report

    def train(self):
        reports, summary = multi_seed(self.run_seed, self.config.seeds)
        save_json(summary.to_dict(), self.new_model_dir_path / AGGREGATE_REPORT_FILE)
        self.save_arguments()
        self.logger.info(f"{len(reports)} seed(s) finished: {summary.summary()}")
        return summary

    def save_arguments(self):
        arguments = {k: v for k, v in self.args.to_dict().items() if k != "logger"}
        save_json(arguments, self.new_model_dir_path / ARGUMENTS_FILE)

    def _threshold(self, params):
        policy = self.args.threshold_policy
        if policy == "dev_f1" and self.dev_data is None:
            self.logger.warning("no dev pairs to tune the threshold on; using max_score/2")
            policy = "half"
        dev_scores = predict(params, self.dev_data.encoded) if policy == "dev_f1" else None
        dev_labels = self.dev_data.labels if policy == "dev_f1" else None
        return resolve_threshold(policy, self.args.max_score, dev_scores, dev_labels)

    def _model_meta(self, seed, result, threshold):
        args = self.args
        paths = {"embeddings": str(args.embeddings)}
        fingerprints = {"embeddings": self.embeddings.fingerprint}
        if args.sdf:
            for kind, path, space in zip(("window_space", "dependency_space"),
                                         (args.window_space, args.dependency_space), self.spaces):
                paths[kind] = str(path)
                fingerprints[kind] = space.fingerprint
        return {
            CONFIG_VERSION_NAME: VERSION,
            "task": args.task,
            "seed": seed,
            "variant": variant_name(args.sdf, args.additional_supervision),
            "additional_supervision": bool(args.additional_supervision),
            "rank_decay": args.rank_decay,
            "lowercase": bool(args.lowercase),
            "threshold": threshold,
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
            "best_dev_metric": result.best_dev_metric,
            "paths": paths,
            "fingerprints": fingerprints,
        }
