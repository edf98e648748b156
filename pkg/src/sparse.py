"""
Sparse PPMI distributional spaces and the directional pair features fed to the network.

Two context definitions are supported:
    window      every token within `window` positions on either side, same line only
    dependency  for an arc w --r--> h: context "r:h" for w and "r⁻¹:w" for h
"""
import math
import zipfile
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np
from scipy import sparse
from tqdm import tqdm

from config import (SPACE_FORMAT_VERSION, SPACE_KINDS, INVERSE_MARK, RANK_DECAYS,
                    SPACE_FEATURE_NAMES)
from data_processing.io_utils import save_npz, load_npz, file_fingerprint, check_format_version
from utils import EntailmentLogger


logger = EntailmentLogger(logger_level='i').get_logger()


def _canonical_csr(matrix):
    matrix = sparse.csr_matrix(matrix, dtype=np.float64)
    matrix.sum_duplicates()
    matrix.sort_indices()
    matrix.eliminate_zeros()
    return matrix


class SparseSpace:
    """
        rows are words, columns are interned contexts (ids follow sorted context strings)

        counts  raw co-occurrence counts, only nonzero entries stored
        weights PPMI weights, only strictly positive entries stored
    """

    def __init__(self, kind, words, contexts, counts, weights=None, window=None, fingerprint=None):
        if kind not in SPACE_KINDS:
            raise ValueError(f"space kind must be one of {SPACE_KINDS} but got {kind}")
        self.kind = kind
        self.window = window
        self.fingerprint = fingerprint
        self.words = list(words)
        self.contexts = list(contexts)
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.context_index = {c: i for i, c in enumerate(self.contexts)}
        if len(self.word_index) != len(self.words) or len(self.context_index) != len(self.contexts):
            raise ValueError("space words and contexts must be unique")

        self.counts = _canonical_csr(counts)
        if self.counts.shape != (len(self.words), len(self.contexts)):
            raise ValueError(f"count matrix shape {self.counts.shape} does not match "
                             f"{len(self.words)} words x {len(self.contexts)} contexts")
        if self.counts.nnz and self.counts.data.min() < 0:
            raise ValueError("co-occurrence counts must be nonnegative")
        self.weights = ppmi_weight(self.counts) if weights is None else _canonical_csr(weights)
        if self.weights.shape != self.counts.shape:
            raise ValueError("weight and count matrices must have the same shape")

    def __repr__(self):
        return (f"SparseSpace(kind={self.kind}, words={len(self.words)}, contexts={len(self.contexts)}, "
                f"nonzero_counts={self.counts.nnz}, nonzero_weights={self.weights.nnz})")

    def __eq__(self, other):
        if not isinstance(other, SparseSpace):
            return NotImplemented
        return (self.kind == other.kind and self.window == other.window
                and self.words == other.words and self.contexts == other.contexts
                and _csr_equal(self.counts, other.counts) and _csr_equal(self.weights, other.weights))

    def __contains__(self, word):
        return word in self.word_index

    @property
    def total(self):
        return float(self.counts.sum())

    @property
    def word_marginals(self):
        return np.asarray(self.counts.sum(axis=1)).ravel()

    @property
    def context_marginals(self):
        return np.asarray(self.counts.sum(axis=0)).ravel()

    def vector(self, word):
        """(context ids, PPMI weights) sorted by context id, or None for an unseen word"""
        idx = self.word_index.get(word)
        if idx is None:
            return None
        start, end = self.weights.indptr[idx], self.weights.indptr[idx + 1]
        return self.weights.indices[start:end], self.weights.data[start:end]

    def context_set(self, word):
        """sorted ids of every context with a nonzero raw count, or None for an unseen word"""
        idx = self.word_index.get(word)
        if idx is None:
            return None
        start, end = self.counts.indptr[idx], self.counts.indptr[idx + 1]
        return self.counts.indices[start:end]

    def count(self, word, context):
        w, c = self.word_index.get(word), self.context_index.get(context)
        if w is None or c is None:
            return 0.0
        return float(self.counts[w, c])


def _csr_equal(a, b):
    return (a.shape == b.shape and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices) and np.array_equal(a.data, b.data))


def ppmi_weight(counts):
    """
        weight(w, c) = max(0, log(N * n(w,c) / (n(w) * n(c)))), zero weights dropped
    """
    counts = _canonical_csr(counts)
    total = counts.sum()
    coo = counts.tocoo()
    if total == 0 or coo.nnz == 0:
        return sparse.csr_matrix(counts.shape, dtype=np.float64)

    row_totals = np.asarray(counts.sum(axis=1)).ravel()
    col_totals = np.asarray(counts.sum(axis=0)).ravel()
    pmi = np.log((total * coo.data) / (row_totals[coo.row] * col_totals[coo.col]))
    ppmi = np.maximum(pmi, 0.0)

    weights = sparse.csr_matrix((ppmi, (coo.row, coo.col)), shape=counts.shape, dtype=np.float64)
    return _canonical_csr(weights)


def space_from_counts(kind, counter, min_count=1, window=None):
    """build a space from a Counter over (word, context) pairs"""
    if min_count > 1:
        context_totals = Counter()
        for (_, c), n in counter.items():
            context_totals[c] += n
        counter = Counter({(w, c): n for (w, c), n in counter.items() if context_totals[c] >= min_count})

    words = sorted({w for w, _ in counter})
    contexts = sorted({c for _, c in counter})
    word_index = {w: i for i, w in enumerate(words)}
    context_index = {c: i for i, c in enumerate(contexts)}

    rows = np.fromiter((word_index[w] for w, _ in counter), dtype=np.int64, count=len(counter))
    cols = np.fromiter((context_index[c] for _, c in counter), dtype=np.int64, count=len(counter))
    data = np.fromiter(counter.values(), dtype=np.float64, count=len(counter))
    counts = sparse.csr_matrix((data, (rows, cols)), shape=(len(words), len(contexts)))

    return SparseSpace(kind, words, contexts, counts, window=window)


def _count_window_lines(lines, window):
    counter = Counter()
    for line in lines:
        tokens = line.split()
        for i, word in enumerate(tokens):
            for j in range(max(0, i - window), min(len(tokens), i + window + 1)):
                if j != i:
                    counter[(word, tokens[j])] += 1
    return counter


def _count_dependency_sentences(sentences):
    counter = Counter()
    for sentence in sentences:
        for dependent, head, relation in sentence:
            counter[(dependent, f"{relation}:{head}")] += 1
            counter[(head, f"{relation}{INVERSE_MARK}:{dependent}")] += 1
    return counter


def _count_sharded(count_func, items, num_core, progress_bar=False):
    """count shards in worker processes and merge the counters by addition"""
    if num_core < 2 or len(items) < 2:
        return count_func(tqdm(items, desc="Count", disable=not progress_bar))

    counter = Counter()
    shards = [items[s[0]:s[-1] + 1] for s in np.array_split(np.arange(len(items)), num_core) if len(s)]
    with ProcessPoolExecutor(max_workers=num_core) as exe:
        for each in exe.map(count_func, shards):
            counter.update(each)
    return counter


def build_window_space(corpus, window=3, min_count=1, num_core=1, lowercase=False, progress_bar=False):
    if window < 1:
        raise ValueError(f"window must be a positive integer but got {window}")
    with open(corpus, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\r\n") for line in f]
    if lowercase:
        lines = [line.lower() for line in lines]
    if not any(line.split() for line in lines):
        raise ValueError(f"{corpus}: empty corpus")

    counter = _count_sharded(partial(_count_window_lines, window=window), lines, num_core, progress_bar)
    space = space_from_counts("window", counter, min_count=min_count, window=window)
    logger.info(f"built window space from {corpus}: {space}")
    return space


def read_conll(corpus, use_lemma=False, lowercase=False):
    """
        Read a CoNLL-style file into sentences of (dependent, head, relation) arcs.
        Rows are tab separated (whitespace if no tab): 10-column CoNLL-U/CoNLL-X
        (ID FORM LEMMA ... HEAD DEPREL ...) or compact 4-column (ID FORM HEAD DEPREL).
        Comment lines start with '#'; multiword ranges (1-2) and empty nodes (1.1) are skipped.
    """
    sentences = []
    n_tokens = 0
    rows = []

    def _flush():
        if not rows:
            return
        forms = {tid: word for (_, tid, word, _, _) in rows}
        arcs = []
        for line_num, tid, word, head, relation in rows:
            if head == 0:
                continue
            if head not in forms:
                raise ValueError(f"{corpus}:{line_num}: HEAD {head} does not refer to a token of the sentence")
            arcs.append((word, forms[head], relation))
        sentences.append(arcs)
        rows.clear()

    with open(corpus, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                _flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t") if "\t" in line else line.split()
            if len(cols) >= 8:
                tid, form, lemma, head, relation = cols[0], cols[1], cols[2], cols[6], cols[7]
            elif len(cols) == 4:
                tid, form, head, relation = cols
                lemma = form
            else:
                raise ValueError(f"{corpus}:{line_num}: expect 4 or at least 8 columns but got {len(cols)}")
            if "-" in tid or "." in tid:
                continue
            try:
                tid = int(tid)
            except ValueError:
                raise ValueError(f"{corpus}:{line_num}: non-integer ID '{tid}'")
            try:
                head = int(head)
            except ValueError:
                raise ValueError(f"{corpus}:{line_num}: non-integer HEAD '{head}'")
            word = lemma if use_lemma and lemma != "_" else form
            if lowercase:
                word = word.lower()
            rows.append((line_num, tid, word, head, relation))
            n_tokens += 1
    _flush()

    if n_tokens == 0:
        raise ValueError(f"{corpus}: empty corpus")
    return sentences


def build_dependency_space(corpus, min_count=1, num_core=1, use_lemma=False, lowercase=False, progress_bar=False):
    sentences = read_conll(corpus, use_lemma=use_lemma, lowercase=lowercase)
    counter = _count_sharded(_count_dependency_sentences, sentences, num_core, progress_bar)
    if not counter:
        logger.warning(f"{corpus}: no dependency arcs found, the space has no contexts")
    space = space_from_counts("dependency", counter, min_count=min_count)
    logger.info(f"built dependency space from {corpus}: {space}")
    return space


def _align(indices_a, values_a, indices_b, values_b):
    """values of a and b on the contexts shared by both"""
    _, ia, ib = np.intersect1d(indices_a, indices_b, assume_unique=True, return_indices=True)
    return values_a[ia], values_b[ib], ib


def cosine(vec_a, vec_b):
    (ia, va), (ib, vb) = vec_a, vec_b
    norm = math.sqrt(float(va @ va)) * math.sqrt(float(vb @ vb))
    if norm == 0:
        return 0.0
    shared_a, shared_b, _ = _align(ia, va, ib, vb)
    return float(np.clip(float(shared_a @ shared_b) / norm, 0.0, 1.0))


def rank_weights(values, indices, rank_decay="linear"):
    """
        z(f) for the contexts of the broader word: ranks by descending weight,
        ties by context id; linear: 1 - (rank-1)/|F|, reciprocal: 1/rank
    """
    n = len(values)
    order = np.lexsort((indices, -values))
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(1, n + 1)
    if rank_decay == "linear":
        return 1.0 - (ranks - 1.0) / n
    if rank_decay == "reciprocal":
        return 1.0 / ranks
    raise ValueError(f"rank_decay must be one of {RANK_DECAYS} but got {rank_decay}")


def weighted_cosine(vec_a, vec_broader, rank_decay="linear"):
    """
        directional cosine where only the broader word's contexts count,
        each weighted by its rank weight z(f)
    """
    (ia, va), (ib, vb) = vec_a, vec_broader
    if len(va) == 0 or len(vb) == 0:
        return 0.0
    z = rank_weights(vb, ib, rank_decay)
    shared_a, shared_b, pos_b = _align(ia, va, ib, vb)
    z_shared = z[pos_b]
    norm = math.sqrt(float(z_shared @ (shared_a ** 2))) * math.sqrt(float(z @ (vb ** 2)))
    if norm == 0:
        return 0.0
    return float(np.clip(float(z_shared @ (shared_a * shared_b)) / norm, 0.0, 1.0))


def shared_context_proportions(set_a, set_b):
    """(|A n B| / |A|, |A n B| / |B|), 0 for an empty denominator"""
    shared = len(np.intersect1d(set_a, set_b, assume_unique=True))
    prop_a = shared / len(set_a) if len(set_a) else 0.0
    prop_b = shared / len(set_b) if len(set_b) else 0.0
    return prop_a, prop_b


def space_features(space, w1, w2, rank_decay="linear"):
    """the five features of one space, in SPACE_FEATURE_NAMES order"""
    feats = np.zeros(len(SPACE_FEATURE_NAMES), dtype=np.float64)
    vec1, vec2 = space.vector(w1), space.vector(w2)
    if vec1 is None or vec2 is None:
        return feats

    feats[0] = cosine(vec1, vec2)
    # w2 is the candidate hypernym, so it is the broader side for w1 -> w2
    feats[1] = weighted_cosine(vec1, vec2, rank_decay)
    feats[2] = weighted_cosine(vec2, vec1, rank_decay)
    feats[3], feats[4] = shared_context_proportions(space.context_set(w1), space.context_set(w2))
    return feats


def pair_features(spaces, w1, w2, rank_decay="linear"):
    """x of length 10: window space features 1-5, dependency space features 6-10"""
    if len(spaces) != len(SPACE_KINDS):
        raise ValueError(f"expect {len(SPACE_KINDS)} spaces ({', '.join(SPACE_KINDS)}) but got {len(spaces)}")
    for space, kind in zip(spaces, SPACE_KINDS):
        if space.kind != kind:
            raise ValueError(f"spaces must be ordered {SPACE_KINDS} but got {[s.kind for s in spaces]}")
    return np.concatenate([space_features(space, w1, w2, rank_decay) for space in spaces])


def save_space(space, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(SPACE_FORMAT_VERSION),
        "kind": np.array(space.kind),
        "window": np.array(-1 if space.window is None else space.window, dtype=np.int64),
        "words": np.array(space.words, dtype=str),
        "contexts": np.array(space.contexts, dtype=str),
    }
    for name in ("counts", "weights"):
        matrix = getattr(space, name)
        arrays[f"{name}_data"] = matrix.data
        arrays[f"{name}_indices"] = matrix.indices.astype(np.int64)
        arrays[f"{name}_indptr"] = matrix.indptr.astype(np.int64)
        arrays[f"{name}_shape"] = np.array(matrix.shape, dtype=np.int64)
    save_npz(path, arrays)


def load_space(path):
    try:
        arrays = load_npz(path)
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as ex:
        raise ValueError(f"{path}: truncated or unreadable space archive ({ex})")

    if "format_version" not in arrays:
        raise ValueError(f"{path}: not a space archive (no format version)")
    check_format_version(path, str(arrays["format_version"]), SPACE_FORMAT_VERSION)

    try:
        matrices = {}
        for name in ("counts", "weights"):
            matrices[name] = sparse.csr_matrix(
                (arrays[f"{name}_data"], arrays[f"{name}_indices"], arrays[f"{name}_indptr"]),
                shape=tuple(int(s) for s in arrays[f"{name}_shape"]))
        window = int(arrays["window"])
        space = SparseSpace(str(arrays["kind"]),
                            [str(w) for w in arrays["words"]],
                            [str(c) for c in arrays["contexts"]],
                            matrices["counts"], weights=matrices["weights"],
                            window=None if window < 0 else window,
                            fingerprint=file_fingerprint(path))
    except KeyError as ex:
        raise ValueError(f"{path}: space archive is missing {ex}")
    except ValueError as ex:
        raise ValueError(f"{path}: inconsistent space archive ({ex})")
    return space
