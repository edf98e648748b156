import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np
from sklearn.model_selection import train_test_split

from config import SPLIT_FILES
from utils import EntailmentLogger


logger = EntailmentLogger(logger_level='i').get_logger()

BINARY_LABELS = {"True": True, "False": False}
LEXICON_LABELS = {"pos": True, "neg": False}


@dataclass(frozen=True)
class ScoredPair:
    word1: str
    word2: str
    # graded score in [0, S] or a binary label
    gold: Union[float, bool]


@dataclass(frozen=True)
class LexiconPair:
    word1: str
    word2: str
    # True for a positive (entailing) pair
    label: bool


@dataclass
class DatasetSplit:
    train: List[ScoredPair]
    dev: List[ScoredPair]
    test: List[ScoredPair]
    split_kind: str
    # cross-set pairs dropped by a lexical split
    n_discarded: int = 0
    sizes: dict = field(init=False)

    def __post_init__(self):
        self.sizes = {"train": len(self.train), "dev": len(self.dev), "test": len(self.test)}

    def words(self, subset):
        return {w for p in getattr(self, subset) for w in (p.word1, p.word2)}


def _is_float(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


class DataProcessor(object):
    """
        Reads tab separated word pair files:
            graded:  word1 TAB word2 TAB score        (optional header, extra columns ignored)
            binary:  word1 TAB word2 TAB True|False
            lexicon: word1 TAB word2 TAB pos|neg
    """

    def __init__(self, data_dir=None, task="graded", max_score=10.0, header=None):
        if data_dir:
            self.data_dir = Path(data_dir)
        else:
            self.data_dir = data_dir
        self.task = task
        self.max_score = max_score
        # None: detect a header on the first row of graded files
        self.header = header

    def __str__(self):
        rep = [f"key: {k}; val: {v}" for k, v in self.__dict__.items()]
        return "\n".join(rep)

    def get_train_examples(self, filename=None):
        return self.get_examples(self.data_dir / (filename or SPLIT_FILES["train"]))

    def get_dev_examples(self, filename=None):
        return self.get_examples(self.data_dir / (filename or SPLIT_FILES["dev"]))

    def get_test_examples(self, filename=None):
        return self.get_examples(self.data_dir / (filename or SPLIT_FILES["test"]))

    def get_examples(self, input_file):
        if self.task == "graded":
            return self._create_graded_examples(input_file)
        elif self.task == "binary":
            return self._create_binary_examples(input_file)
        raise ValueError(f"task must be graded or binary but got {self.task}")

    def get_lexicon_examples(self, input_file):
        pairs = []
        for line_num, line in self._read_tsv(input_file, header=bool(self.header)):
            word1, word2, label = self._pair_columns(input_file, line_num, line)
            if label not in LEXICON_LABELS:
                raise ValueError(f"{input_file}:{line_num}: lexicon label must be pos or neg but got '{label}'")
            pairs.append(LexiconPair(word1, word2, LEXICON_LABELS[label]))
        return pairs

    def _create_graded_examples(self, input_file):
        rows = self._read_tsv(input_file, header=False)
        header = self.header
        if header is None:
            header = bool(rows) and len(rows[0][1]) >= 3 and not _is_float(rows[0][1][2])
        if header:
            rows = rows[1:]

        pairs = []
        for line_num, line in rows:
            word1, word2, score = self._pair_columns(input_file, line_num, line)
            try:
                gold = float(score)
            except ValueError:
                raise ValueError(f"{input_file}:{line_num}: non-numeric score '{score}'")
            if not math.isfinite(gold) or not 0 <= gold <= self.max_score:
                raise ValueError(f"{input_file}:{line_num}: score {score} is outside [0, {self.max_score}]")
            pairs.append(ScoredPair(word1, word2, gold))
        return pairs

    def _create_binary_examples(self, input_file):
        pairs = []
        for line_num, line in self._read_tsv(input_file, header=bool(self.header)):
            word1, word2, label = self._pair_columns(input_file, line_num, line)
            if label not in BINARY_LABELS:
                raise ValueError(f"{input_file}:{line_num}: binary label must be True or False but got '{label}'")
            pairs.append(ScoredPair(word1, word2, BINARY_LABELS[label]))
        return pairs

    @staticmethod
    def _pair_columns(input_file, line_num, line):
        if len(line) < 3:
            raise ValueError(f"{input_file}:{line_num}: expect word1, word2 and a label/score "
                             f"separated by tabs but got {len(line)} column(s)")
        word1, word2, value = (c.strip() for c in line[:3])
        if not word1 or not word2:
            raise ValueError(f"{input_file}:{line_num}: empty word")
        return word1, word2, value

    @staticmethod
    def _read_tsv(input_file, header=False):
        """(1-based line number, columns) of every non-blank row"""
        lines = []

        with open(input_file, "r", encoding="utf-8", newline="") as f:
            reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
            for line in reader:
                if not any(c.strip() for c in line):
                    continue
                lines.append((reader.line_num, line))
        if header:
            lines = lines[1:]

        return lines


def load_graded(path, max_score=10.0, header=None):
    return DataProcessor(task="graded", max_score=max_score, header=header).get_examples(path)


def load_binary(path, header=False):
    return DataProcessor(task="binary", header=header).get_examples(path)


def load_pairs(path, task, max_score=10.0):
    if task == "graded":
        return load_graded(path, max_score)
    return load_binary(path)


def load_lexicon(path, cap=10, seed=1234):
    """
    Shuffle the lexicon with seed, then keep a pair only while both of its words
    appear in fewer than cap kept pairs.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1 but got {cap}")
    pairs = DataProcessor(task="lexicon").get_lexicon_examples(path)
    order = np.random.default_rng(seed).permutation(len(pairs))

    kept = []
    counts = Counter()
    for idx in order:
        pair = pairs[idx]
        if counts[pair.word1] < cap and counts[pair.word2] < cap:
            kept.append(pair)
            counts.update({pair.word1, pair.word2})

    n_pos = sum(p.label for p in kept)
    logger.info(f"lexicon {path}: kept {len(kept)} of {len(pairs)} pairs "
                f"({n_pos} positive, {len(kept) - n_pos} negative) with at most {cap} per word")
    return kept


def _check_ratios(ratios):
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positive numbers summing to 1 but got {ratios}")


def _check_nonempty(split, hint):
    empty = [name for name, size in split.sizes.items() if size == 0]
    if empty:
        raise ValueError(f"{split.split_kind} split left {', '.join(empty)} empty "
                         f"(sizes {split.sizes}); {hint}")


def make_lexical_split(pairs, ratios=(0.7, 0.05, 0.25), seed=1234):
    """
    Partition the vocabulary (seeded) into train/dev/test word sets by ratio; a pair
    joins a subset only if both words belong to it, all cross-set pairs are discarded.
    """
    _check_ratios(ratios)
    words = sorted({w for p in pairs for w in (p.word1, p.word2)})
    order = np.random.default_rng(seed).permutation(len(words))
    n_train = int(round(ratios[0] * len(words)))
    n_dev = int(round(ratios[1] * len(words)))
    subset_of = {}
    for rank, idx in enumerate(order):
        subset_of[words[idx]] = 0 if rank < n_train else 1 if rank < n_train + n_dev else 2

    subsets = ([], [], [])
    n_discarded = 0
    for pair in pairs:
        s1, s2 = subset_of[pair.word1], subset_of[pair.word2]
        if s1 == s2:
            subsets[s1].append(pair)
        else:
            n_discarded += 1

    split = DatasetSplit(*subsets, split_kind="lexical", n_discarded=n_discarded)
    _check_nonempty(split, "try different split ratios or split seed")
    logger.info(f"lexical split sizes {split.sizes}, discarded {n_discarded} cross-set pairs")
    return split


def make_random_split(pairs, ratios=(0.7, 0.05, 0.25), seed=1234):
    _check_ratios(ratios)
    pairs = list(pairs)
    try:
        rest, test = train_test_split(pairs, test_size=ratios[2], random_state=seed, shuffle=True)
        train, dev = train_test_split(rest, test_size=ratios[1] / (ratios[0] + ratios[1]),
                                      random_state=seed, shuffle=True)
    except ValueError as ex:
        raise ValueError(f"random split of {len(pairs)} pairs with ratios {ratios} failed: {ex}")
    split = DatasetSplit(train, dev, test, split_kind="random")
    _check_nonempty(split, "the dataset is too small for these ratios")
    logger.info(f"random split sizes {split.sizes}")
    return split


def make_split(pairs, kind, ratios, seed):
    if kind == "lexical":
        return make_lexical_split(pairs, ratios, seed)
    elif kind == "random":
        return make_random_split(pairs, ratios, seed)
    raise ValueError(f"split must be random or lexical but got {kind}")


def load_split_dir(data_dir, task="graded", max_score=10.0):
    """published train/dev/test files take precedence over generated splits"""
    processor = DataProcessor(data_dir=data_dir, task=task, max_score=max_score)
    split = DatasetSplit(processor.get_train_examples(), processor.get_dev_examples(),
                         processor.get_test_examples(), split_kind="predefined")
    _check_nonempty(split, f"check the files in {data_dir}")
    return split
