from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List


# change the format versions if the archive layout changes; the major part must match on load
SPACE_FORMAT_VERSION = "1.0"
CHECKPOINT_FORMAT_VERSION = "1.0"
CONFIG_VERSION_NAME = "SDSNModelVersion"
VERSION = "0.1"

# keep the order: trained W_x columns depend on it
SPACE_KINDS = ("window", "dependency")
SPACE_FEATURE_NAMES = ("cosine", "weighted_cosine_12", "weighted_cosine_21",
                       "shared_context_proportion_12", "shared_context_proportion_21")
PAIR_FEATURE_NAMES = tuple(f"{kind}_{name}" for kind in SPACE_KINDS for name in SPACE_FEATURE_NAMES)
N_PAIR_FEATURES = len(PAIR_FEATURE_NAMES)

INVERSE_MARK = "⁻¹"
RANK_DECAYS = ("linear", "reciprocal")

TASKS = ("graded", "binary")
SPLITS = ("random", "lexical")
THRESHOLD_POLICIES = ("dev_f1", "half")
SPLIT_FILES = {"train": "train.tsv", "dev": "dev.tsv", "test": "test.tsv"}

MODEL_FILE = "sdsn_model.npz"
TRAINING_LOG_FILE = "training_log.jsonl"
REPORT_FILE = "report.json"
AGGREGATE_REPORT_FILE = "aggregate_report.json"
ARGUMENTS_FILE = "training_arguments.json"


class ConfigError(ValueError):
    """Raised with every validation problem found, not just the first one."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    dropout_keep: float = 0.5
    # R in the hinge loss
    margin: float = 1.0
    max_epochs: int = 300
    patience: int = 10
    batch_size: int = 32
    seeds: List[int] = field(default_factory=lambda: list(range(1, 11)))
    # S: maximum score of the dataset, scales the output sigmoid
    max_score: float = 10.0
    progress_bar: bool = False
    log_timestamps: bool = False

    def validate(self):
        problems = []
        if not 0 < self.dropout_keep <= 1:
            problems.append(f"dropout_keep must be in (0, 1] but got {self.dropout_keep}")
        if self.max_score <= 0:
            problems.append(f"max_score must be positive but got {self.max_score}")
        if not self.margin < self.max_score / 2:
            problems.append(f"margin must be below max_score/2={self.max_score / 2} but got {self.margin}")
        if self.patience < 1:
            problems.append(f"patience must be >= 1 but got {self.patience}")
        if self.max_epochs < 1:
            problems.append(f"max_epochs must be >= 1 but got {self.max_epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1 but got {self.batch_size}")
        if not 0 <= self.adadelta_rho < 1:
            problems.append(f"adadelta_rho must be in [0, 1) but got {self.adadelta_rho}")
        if self.adadelta_eps <= 0:
            problems.append(f"adadelta_eps must be positive but got {self.adadelta_eps}")
        if self.learning_rate < 0:
            problems.append(f"learning_rate must be >= 0 but got {self.learning_rate}")
        if not self.seeds:
            problems.append("at least one seed is required")
        return problems

    def check(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self


def parse_seeds(text):
    """'1..10' -> [1, ..., 10]; '3,5,7' -> [3, 5, 7]; ints and lists pass through"""
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(s) for s in text]
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            start, end = part.split("..", 1)
            seeds.extend(range(int(start), int(end) + 1))
        else:
            seeds.append(int(part))
    return seeds


def parse_ratios(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(r) for r in text)
    return tuple(float(r) for r in str(text).split(",") if r.strip())


class RunConfig:
    """
        used to hold all parameters of a run
        values come from the defaults below, then the json config file, then command line flags
    """
    def __init__(self, **kwargs):
        # input files
        self.embeddings = None
        self.embedding_dim = None
        self.lowercase = False
        self.window_space = None
        self.dependency_space = None
        self.dataset = None
        self.data_dir = None
        self.lexicon = None
        self.lexicon_cap = 10
        # output
        self.new_model_dir = "./sdsn_model"
        self.overwrite_model_dir = False
        # task
        self.task = "graded"
        self.split = "random"
        self.split_ratios = (0.7, 0.05, 0.25)
        self.split_seed = 1234
        self.sdf = False
        self.additional_supervision = False
        self.threshold_policy = "dev_f1"
        self.rank_decay = "linear"
        # network sizes
        self.m_size = 300
        self.h_size = 100
        # training
        self.learning_rate = 1.0
        self.adadelta_rho = 0.95
        self.adadelta_eps = 1e-6
        self.dropout_keep = 0.5
        self.margin = 1.0
        self.max_epochs = 300
        self.patience = 10
        self.batch_size = 32
        self.seeds = list(range(1, 11))
        self.max_score = 10.0
        # runtime
        self.log_file = None
        self.log_lvl = "i"
        self.progress_bar = False
        self.log_timestamps = False

        self.__update_args(**kwargs)

    def __update_args(self, **kwargs):
        for k, v in kwargs.items():
            setattr(self, k, v)
        self.seeds = parse_seeds(self.seeds)
        self.split_ratios = parse_ratios(self.split_ratios)

    def __repr__(self):
        return repr({k: v for k, v in self.__dict__.items() if k != "logger"})

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items() if k != "logger"}

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.__dict__.items() if k in names})

    def validate(self):
        """collect every problem of a train run configuration"""
        problems = []

        def _check_file(name, required=True):
            value = getattr(self, name, None)
            if value is None:
                if required:
                    problems.append(f"{name} is required")
            elif not Path(value).exists():
                problems.append(f"{name} does not exist: {value}")

        _check_file("embeddings")
        if self.task not in TASKS:
            problems.append(f"task must be one of {TASKS} but got {self.task}")
        if self.split not in SPLITS:
            problems.append(f"split must be one of {SPLITS} but got {self.split}")
        if self.threshold_policy not in THRESHOLD_POLICIES:
            problems.append(f"threshold_policy must be one of {THRESHOLD_POLICIES} but got {self.threshold_policy}")
        if self.rank_decay not in RANK_DECAYS:
            problems.append(f"rank_decay must be one of {RANK_DECAYS} but got {self.rank_decay}")

        if self.data_dir is None and self.dataset is None:
            problems.append("one of data_dir (train/dev/test.tsv) or dataset (a single file to split) is required")
        if self.data_dir is not None:
            for split_file in SPLIT_FILES.values():
                if not (Path(self.data_dir) / split_file).exists():
                    problems.append(f"data_dir is missing {split_file}: {self.data_dir}")
        _check_file("dataset", required=False)

        if len(self.split_ratios) != 3 or any(r <= 0 for r in self.split_ratios):
            problems.append(f"split_ratios must be three positive numbers but got {self.split_ratios}")
        elif abs(sum(self.split_ratios) - 1.0) > 1e-9:
            problems.append(f"split_ratios must sum to 1 but got {self.split_ratios}")

        if self.sdf:
            if self.window_space is None or self.dependency_space is None:
                problems.append("sdf requires both window_space and dependency_space")
            _check_file("window_space", required=False)
            _check_file("dependency_space", required=False)
        if self.additional_supervision:
            if self.lexicon is None:
                problems.append("additional_supervision requires a lexicon")
            _check_file("lexicon", required=False)
        if self.lexicon_cap < 1:
            problems.append(f"lexicon_cap must be >= 1 but got {self.lexicon_cap}")

        if self.m_size < 1 or self.h_size < 1:
            problems.append(f"m_size and h_size must be positive but got {self.m_size}, {self.h_size}")
        if self.embedding_dim is not None and self.embedding_dim < 1:
            problems.append(f"embedding_dim must be positive but got {self.embedding_dim}")

        if Path(self.new_model_dir).exists() and any(Path(self.new_model_dir).iterdir()) \
                and not self.overwrite_model_dir:
            problems.append(f"{self.new_model_dir} exists and overwrite_model_dir is not set")

        problems.extend(self.train_config().validate())
        return problems

    def check(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self


def flatten_config(data, prefix=""):
    """
        nested objects and dotted keys both collapse to the last key segment:
        {"train": {"learning_rate": 1}} and {"train.learning_rate": 1} -> {"learning_rate": 1}
    """
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(flatten_config(value, prefix=f"{prefix}{key}."))
        else:
            flat[key.split(".")[-1]] = value
    return flat


def unknown_config_keys(flat):
    known = set(RunConfig().__dict__)
    return sorted(k for k in flat if k not in known)
