"""
Pre-trained word embeddings: loaded once, never updated.

Text format, UTF-8:
    [count SP dim]            optional header, detected by exactly 2 integer tokens
    word SP v1 SP ... SP vd   one line per word
"""
from pathlib import Path

import numpy as np

from data_processing.io_utils import file_fingerprint
from utils import EntailmentLogger


logger = EntailmentLogger(logger_level='i').get_logger()


def _is_int(token):
    try:
        int(token)
    except ValueError:
        return False
    return True


class EmbeddingTable:
    """Read-only mapping word -> dense float64 vector of width dim."""

    def __init__(self, words, vectors, lowercase=False, fingerprint=None):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ValueError(f"expect {len(words)} vectors as a 2-d array but got shape {vectors.shape}")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be positive")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding vectors must be finite")

        self.lowercase = lowercase
        self.fingerprint = fingerprint
        self.word2idx = {}
        keep = []
        for idx, word in enumerate(words):
            key = word.lower() if lowercase else word
            # first occurrence wins
            if key in self.word2idx:
                continue
            self.word2idx[key] = len(keep)
            keep.append(idx)
        self.vocab = list(self.word2idx)
        self._vectors = vectors[keep]
        self._vectors.setflags(write=False)

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, word):
        return self._key(word) in self.word2idx

    def __repr__(self):
        return f"EmbeddingTable(size={len(self)}, dim={self.dim}, lowercase={self.lowercase})"

    @property
    def dim(self):
        return self._vectors.shape[1]

    @property
    def vectors(self):
        return self._vectors

    def _key(self, word):
        return word.lower() if self.lowercase else word

    def lookup(self, word):
        """the stored vector, or None when the word is out of vocabulary"""
        idx = self.word2idx.get(self._key(word))
        if idx is None:
            return None
        return self._vectors[idx]


def lookup(table, word):
    return table.lookup(word)


def load_embeddings(path, expected_dim=None, lowercase=False):
    path = Path(path)
    words, vectors = [], []
    seen = set()
    dim = expected_dim
    header_dim = None

    with open(path, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, start=1):
            tokens = line.rstrip("\r\n").split()
            if not tokens:
                continue
            if not words and header_dim is None and len(tokens) == 2 and all(_is_int(t) for t in tokens):
                header_dim = int(tokens[1])
                if dim is not None and header_dim != dim:
                    raise ValueError(f"{path}:{line_num}: header declares dim {header_dim} "
                                     f"but {dim} is expected")
                dim = header_dim
                continue

            word, values = tokens[0], tokens[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise ValueError(f"{path}:{line_num}: word '{word}' has no vector components")
            if len(values) != dim:
                raise ValueError(f"{path}:{line_num}: expect {dim} components but got {len(values)}")
            try:
                vector = np.array(values, dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{line_num}: non-numeric vector component for word '{word}'")
            if not np.isfinite(vector).all():
                raise ValueError(f"{path}:{line_num}: non-finite vector component for word '{word}'")

            key = word.lower() if lowercase else word
            if key in seen:
                logger.warning(f"{path}:{line_num}: duplicate word '{word}' ignored (first occurrence kept)")
                continue
            seen.add(key)
            words.append(word)
            vectors.append(vector)

    if not words:
        raise ValueError(f"{path}: no embedding vectors found (empty file)")

    table = EmbeddingTable(words, np.vstack(vectors), lowercase=lowercase, fingerprint=file_fingerprint(path))
    logger.info(f"loaded {len(table)} embeddings of dim {table.dim} from {path}")
    return table
