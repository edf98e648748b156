"""
Supervised directional similarity network over frozen word embeddings.

    g1 = sigmoid(W_g1 w1 + b_g1)          g2 = sigmoid(W_g2 w2 + b_g2)
    w1~ = w1 * g2                         w2~ = w2 * g1
    m1 = tanh(W_m1 w1~ + b_m1)            m2 = tanh(W_m2 w2~ + b_m2)
    d = m1 * m2
    h = tanh(W_h d [+ W_x x] + b_h)
    y = S * sigmoid(a (W_y h + b_y))

Every function accepts a single pair (1-d inputs) or a batch (2-d inputs, one row per pair).
"""
import json
import zipfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from config import CHECKPOINT_FORMAT_VERSION, N_PAIR_FEATURES
from data_processing.io_utils import save_npz, load_npz, check_format_version
from embeddings import load_embeddings
from model_utils import stable_sigmoid, inverted_dropout
from sparse import pair_features, load_space
from utils import EntailmentLogger


logger = EntailmentLogger(logger_level='i').get_logger()

# update order and archive member order
TRAINABLE = ("w_g1", "b_g1", "w_g2", "b_g2", "w_m1", "b_m1", "w_m2", "b_m2",
             "w_h", "w_x", "b_h", "w_y", "b_y", "a")


@dataclass(eq=False)
class ModelParams:
    w_g1: np.ndarray
    b_g1: np.ndarray
    w_g2: np.ndarray
    b_g2: np.ndarray
    w_m1: np.ndarray
    b_m1: np.ndarray
    w_m2: np.ndarray
    b_m2: np.ndarray
    w_h: np.ndarray
    b_h: np.ndarray
    w_y: np.ndarray
    b_y: np.ndarray
    a: np.ndarray
    # S, fixed for the life of the model
    max_score: float
    w_x: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.max_score <= 0:
            raise ValueError(f"max_score must be positive but got {self.max_score}")
        dim, m, h = self.dim, self.m_size, self.h_size
        expected = {"w_g1": (dim, dim), "b_g1": (dim,), "w_g2": (dim, dim), "b_g2": (dim,),
                    "w_m1": (m, dim), "b_m1": (m,), "w_m2": (m, dim), "b_m2": (m,),
                    "w_h": (h, m), "b_h": (h,), "w_y": (h,), "b_y": (), "a": ()}
        if self.w_x is not None:
            expected["w_x"] = (h, N_PAIR_FEATURES)
        for name, shape in expected.items():
            value = getattr(self, name)
            if value.shape != shape:
                raise ValueError(f"parameter {name} must have shape {shape} but got {value.shape}")
            if not np.isfinite(value).all():
                raise ValueError(f"parameter {name} has non-finite entries")

    @property
    def dim(self):
        return self.w_g1.shape[1]

    @property
    def m_size(self):
        return self.w_m1.shape[0]

    @property
    def h_size(self):
        return self.w_h.shape[0]

    @property
    def sdf_enabled(self):
        return self.w_x is not None

    @property
    def dtype(self):
        return self.w_g1.dtype

    def trainable(self):
        """name -> array for every trainable parameter (S excluded), in update order"""
        return {name: getattr(self, name) for name in TRAINABLE if getattr(self, name) is not None}

    def copy(self):
        return self.astype(self.dtype)

    def astype(self, dtype):
        arrays = {f.name: np.array(getattr(self, f.name), dtype=dtype)
                  for f in fields(self) if f.name != "max_score" and getattr(self, f.name) is not None}
        return ModelParams(max_score=self.max_score, **arrays)

    def equals(self, other):
        if self.max_score != other.max_score or self.sdf_enabled != other.sdf_enabled:
            return False
        mine, theirs = self.trainable(), other.trainable()
        return all(np.array_equal(mine[k], theirs[k]) and mine[k].dtype == theirs[k].dtype for k in mine)


@dataclass
class ForwardTrace:
    w1: np.ndarray
    w2: np.ndarray
    mask1: Optional[np.ndarray]
    mask2: Optional[np.ndarray]
    x: Optional[np.ndarray]
    g1: np.ndarray
    g2: np.ndarray
    wt1: np.ndarray
    wt2: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    d: np.ndarray
    h: np.ndarray
    # W_y h + b_y, before the slope a
    s: np.ndarray
    z: np.ndarray
    sig: np.ndarray
    y: np.ndarray


def _glorot(rng, fan_out, fan_in, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(dim, m, h, sdf_enabled, max_score, seed):
    """uniform fan-based weights, zero biases, slope a = 1; deterministic given seed"""
    if min(dim, m, h) < 1:
        raise ValueError(f"layer sizes must be positive but got dim={dim}, m={m}, h={h}")
    rng = np.random.default_rng(seed)
    params = dict(
        w_g1=_glorot(rng, dim, dim, (dim, dim)),
        w_g2=_glorot(rng, dim, dim, (dim, dim)),
        w_m1=_glorot(rng, m, dim, (m, dim)),
        w_m2=_glorot(rng, m, dim, (m, dim)),
        w_h=_glorot(rng, h, m, (h, m)),
        w_y=_glorot(rng, 1, h, (h,)),
    )
    # drawn last so the other weights do not depend on the SDF flag
    if sdf_enabled:
        params["w_x"] = _glorot(rng, h, N_PAIR_FEATURES, (h, N_PAIR_FEATURES))

    return ModelParams(b_g1=np.zeros(dim), b_g2=np.zeros(dim), b_m1=np.zeros(m), b_m2=np.zeros(m),
                       b_h=np.zeros(h), b_y=np.array(0.0), a=np.array(1.0),
                       max_score=float(max_score), **params)


def forward(params, w1, w2, x=None, mode="eval", rng=None, keep_prob=0.5):
    """
    Run the network on one pair or a batch of pairs.

    In train mode inverted dropout (keep_prob) is applied to both embeddings, with
    independent masks, before anything else; the gates see the dropped embeddings.
    Eval mode is deterministic and never touches rng.
    """
    dtype = params.dtype
    w1 = np.asarray(w1, dtype=dtype)
    w2 = np.asarray(w2, dtype=dtype)
    if w1.shape != w2.shape or w1.shape[-1] != params.dim or w1.ndim > 2:
        raise ValueError(f"expect embeddings of width {params.dim} with equal shapes "
                         f"but got {w1.shape} and {w2.shape}")
    if params.sdf_enabled:
        if x is None:
            raise ValueError("the model uses sparse features but no feature vector x was given")
        x = np.asarray(x, dtype=dtype)
        if x.shape != w1.shape[:-1] + (N_PAIR_FEATURES,):
            raise ValueError(f"expect features of shape {w1.shape[:-1] + (N_PAIR_FEATURES,)} but got {x.shape}")
    elif x is not None:
        raise ValueError("the model has no sparse feature weights but x was given")

    mask1 = mask2 = None
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs a random generator for dropout")
        w1, mask1 = inverted_dropout(w1, keep_prob, rng)
        w2, mask2 = inverted_dropout(w2, keep_prob, rng)
    elif mode != "eval":
        raise ValueError(f"mode must be train or eval but got {mode}")

    g1 = stable_sigmoid(w1 @ params.w_g1.T + params.b_g1)
    g2 = stable_sigmoid(w2 @ params.w_g2.T + params.b_g2)
    # each word is gated by the other word's gate
    wt1 = w1 * g2
    wt2 = w2 * g1
    m1 = np.tanh(wt1 @ params.w_m1.T + params.b_m1)
    m2 = np.tanh(wt2 @ params.w_m2.T + params.b_m2)
    d = m1 * m2
    pre_h = d @ params.w_h.T + params.b_h
    if params.sdf_enabled:
        pre_h = pre_h + x @ params.w_x.T
    h = np.tanh(pre_h)
    s = h @ params.w_y + params.b_y
    z = params.a * s
    sig = stable_sigmoid(z)
    # keep y strictly inside (0, S) when the sigmoid saturates
    upper = np.nextafter(dtype.type(params.max_score), dtype.type(0))
    y = np.clip(params.max_score * sig, np.nextafter(dtype.type(0), dtype.type(1)), upper)

    return ForwardTrace(w1=w1, w2=w2, mask1=mask1, mask2=mask2, x=x, g1=g1, g2=g2, wt1=wt1, wt2=wt2,
                        m1=m1, m2=m2, d=d, h=h, s=s, z=z, sig=sig, y=y)


def _outer_sum(a, b):
    """sum over the batch of outer(a_i, b_i); a single outer product for 1-d inputs"""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _bias_sum(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def backward(params, trace, dl_dy):
    """
    Exact gradients of the loss w.r.t. every trainable parameter given dL/dy
    (a scalar for a single pair, one value per pair for a batch). Batch gradients
    are summed. Embeddings get no gradient.
    """
    dl_dy = np.asarray(dl_dy, dtype=params.dtype)
    if dl_dy.shape != trace.y.shape:
        raise ValueError(f"dL/dy must have shape {trace.y.shape} but got {dl_dy.shape}")

    dz = dl_dy * params.max_score * trace.sig * (1.0 - trace.sig)
    grads = {"a": np.array(np.sum(dz * trace.s))}
    ds = dz * params.a
    grads["b_y"] = np.array(np.sum(ds))
    grads["w_y"] = _bias_sum(ds[..., None] * trace.h)

    dpre_h = (ds[..., None] * params.w_y) * (1.0 - trace.h ** 2)
    grads["w_h"] = _outer_sum(dpre_h, trace.d)
    grads["b_h"] = _bias_sum(dpre_h)
    if params.sdf_enabled:
        grads["w_x"] = _outer_sum(dpre_h, trace.x)

    dd = dpre_h @ params.w_h
    dpre_m1 = dd * trace.m2 * (1.0 - trace.m1 ** 2)
    dpre_m2 = dd * trace.m1 * (1.0 - trace.m2 ** 2)
    grads["w_m1"] = _outer_sum(dpre_m1, trace.wt1)
    grads["b_m1"] = _bias_sum(dpre_m1)
    grads["w_m2"] = _outer_sum(dpre_m2, trace.wt2)
    grads["b_m2"] = _bias_sum(dpre_m2)

    # w1~ = w1 * g2 and w2~ = w2 * g1
    dg2 = (dpre_m1 @ params.w_m1) * trace.w1
    dg1 = (dpre_m2 @ params.w_m2) * trace.w2
    dpre_g1 = dg1 * trace.g1 * (1.0 - trace.g1)
    dpre_g2 = dg2 * trace.g2 * (1.0 - trace.g2)
    grads["w_g1"] = _outer_sum(dpre_g1, trace.w1)
    grads["b_g1"] = _bias_sum(dpre_g1)
    grads["w_g2"] = _outer_sum(dpre_g2, trace.w2)
    grads["b_g2"] = _bias_sum(dpre_g2)

    return {name: grads[name] for name in TRAINABLE if name in grads}


class EncodedPairs:
    """embeddings (and sparse features) of the in-vocabulary pairs of a list"""

    def __init__(self, w1, w2, x, index, skipped):
        self.w1 = w1
        self.w2 = w2
        self.x = x
        # positions in the original list
        self.index = index
        # (position, reason) of every pair that could not be encoded
        self.skipped = skipped

    def __len__(self):
        return len(self.index)


class PairEncoder:
    """looks up the embeddings and, when spaces are given, the 10 sparse features of word pairs"""

    def __init__(self, embeddings, spaces=None, rank_decay="linear"):
        self.embeddings = embeddings
        self.spaces = spaces
        self.rank_decay = rank_decay
        self._feature_cache = {}

    @property
    def with_features(self):
        return self.spaces is not None

    def features(self, word1, word2):
        # spaces are queried with the same case folding as the embedding table
        if self.embeddings.lowercase:
            word1, word2 = word1.lower(), word2.lower()
        key = (word1, word2)
        if key not in self._feature_cache:
            self._feature_cache[key] = pair_features(self.spaces, word1, word2, self.rank_decay)
        return self._feature_cache[key]

    def oov_reason(self, word1, word2):
        missing = [f"word{i}:{w}" for i, w in ((1, word1), (2, word2)) if w not in self.embeddings]
        return "oov " + ",".join(missing) if missing else None

    def encode(self, pairs, dtype=np.float64):
        """pairs: iterable of (word1, word2, ...) tuples or objects with word1/word2"""
        v1, v2, xs, index, skipped = [], [], [], [], []
        for pos, pair in enumerate(pairs):
            word1, word2 = (pair.word1, pair.word2) if hasattr(pair, "word1") else (pair[0], pair[1])
            reason = self.oov_reason(word1, word2)
            if reason:
                skipped.append((pos, reason))
                continue
            v1.append(self.embeddings.lookup(word1))
            v2.append(self.embeddings.lookup(word2))
            if self.with_features:
                xs.append(self.features(word1, word2))
            index.append(pos)

        dim = self.embeddings.dim
        w1 = np.array(v1, dtype=dtype).reshape(-1, dim)
        w2 = np.array(v2, dtype=dtype).reshape(-1, dim)
        x = np.array(xs, dtype=dtype).reshape(-1, N_PAIR_FEATURES) if self.with_features else None
        return EncodedPairs(w1, w2, x, index, skipped)


def predict(params, encoded):
    """eval-mode scores of encoded pairs"""
    if len(encoded) == 0:
        return np.zeros(0, dtype=params.dtype)
    return forward(params, encoded.w1, encoded.w2, encoded.x, mode="eval").y


class ModelBundle:
    """trained parameters with the embeddings (and spaces) needed to score word pairs"""

    def __init__(self, params, embeddings, spaces=None, rank_decay="linear", threshold=None):
        if embeddings.dim != params.dim:
            raise ValueError(f"embedding dim {embeddings.dim} does not match model dim {params.dim}")
        if params.sdf_enabled and not spaces:
            raise ValueError("the model uses sparse features but no sparse spaces were given")
        self.params = params
        self.embeddings = embeddings
        self.threshold = threshold
        self.encoder = PairEncoder(embeddings, spaces if params.sdf_enabled else None, rank_decay)

    def encode_pairs(self, pairs):
        return self.encoder.encode(pairs, dtype=self.params.dtype)

    def score_pairs(self, pairs):
        """scores aligned with pairs (NaN where a word is out of vocabulary) and the skipped list"""
        pairs = list(pairs)
        encoded = self.encode_pairs(pairs)
        scores = np.full(len(pairs), np.nan)
        scores[encoded.index] = predict(self.params, encoded)
        return scores, encoded.skipped

    def score_pair(self, word1, word2):
        """entailment score of word1 -> word2 in (0, S), or None if a word is out of vocabulary"""
        if self.encoder.oov_reason(word1, word2):
            return None
        v1, v2 = self.embeddings.lookup(word1), self.embeddings.lookup(word2)
        x = self.encoder.features(word1, word2) if self.params.sdf_enabled else None
        return float(forward(self.params, v1, v2, x, mode="eval").y)


def score_pair(bundle, word1, word2):
    return bundle.score_pair(word1, word2)


def save_model(path, params, meta=None):
    """
        versioned .npz: every parameter plus a json meta record
        (sizes, SDF flag, S, input fingerprints, threshold, ...)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta or {})
    meta.update(dim=params.dim, m_size=params.m_size, h_size=params.h_size,
                sdf=params.sdf_enabled, max_score=params.max_score)
    arrays = {f"param_{name}": value for name, value in params.trainable().items()}
    arrays["format_version"] = np.array(CHECKPOINT_FORMAT_VERSION)
    arrays["meta_json"] = np.array(json.dumps(meta, sort_keys=True))
    save_npz(path, arrays)


def load_model(path):
    """(ModelParams, meta dict) from a checkpoint written by save_model"""
    try:
        arrays = load_npz(path)
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as ex:
        raise ValueError(f"{path}: truncated or unreadable model checkpoint ({ex})")
    if "format_version" not in arrays:
        raise ValueError(f"{path}: not a model checkpoint (no format version)")
    check_format_version(path, str(arrays["format_version"]), CHECKPOINT_FORMAT_VERSION)

    try:
        meta = json.loads(str(arrays["meta_json"]))
        values = {name: arrays[f"param_{name}"] for name in TRAINABLE if f"param_{name}" in arrays}
        params = ModelParams(max_score=float(meta["max_score"]), **values)
    except (KeyError, TypeError, json.JSONDecodeError) as ex:
        raise ValueError(f"{path}: incomplete model checkpoint ({ex})")
    if params.sdf_enabled != bool(meta.get("sdf")):
        raise ValueError(f"{path}: checkpoint SDF flag does not match its parameters")
    return params, meta


def _check_fingerprint(kind, expected, found, strict):
    if expected is None or expected == found:
        return
    message = f"{kind} fingerprint {found} differs from the one used at train time ({expected})"
    if strict:
        raise ValueError(message)
    logger.warning(message)


def load_bundle(checkpoint, embeddings=None, window_space=None, dependency_space=None,
                strict=False, lowercase=None, float32=False):
    """
        Rebuild a ModelBundle from a checkpoint. Input files default to the paths
        recorded at train time; fingerprint mismatches warn, or raise under strict.
    """

    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    params, meta = load_model(checkpoint)
    paths = meta.get("paths", {})
    fingerprints = meta.get("fingerprints", {})

    embeddings = embeddings or paths.get("embeddings")
    if embeddings is None:
        raise ValueError(f"{checkpoint}: no embedding file recorded, pass one explicitly")
    lowercase = meta.get("lowercase", False) if lowercase is None else lowercase
    table = load_embeddings(embeddings, expected_dim=params.dim, lowercase=lowercase)
    _check_fingerprint("embedding", fingerprints.get("embeddings"), table.fingerprint, strict)

    spaces = None
    if params.sdf_enabled:
        spaces = []
        for kind, given in (("window_space", window_space), ("dependency_space", dependency_space)):
            space_path = given or paths.get(kind)
            if space_path is None:
                raise ValueError(f"{checkpoint}: SDF model needs a {kind}, pass one explicitly")
            space = load_space(space_path)
            _check_fingerprint(kind, fingerprints.get(kind), space.fingerprint, strict)
            spaces.append(space)

    if float32:
        params = params.astype(np.float32)
    threshold = meta.get("threshold")
    return ModelBundle(params, table, spaces, rank_decay=meta.get("rank_decay", "linear"),
                       threshold=threshold), meta
