import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))


def write_embeddings(path, words, vectors, header=False):
    lines = [f"{len(words)} {len(vectors[0])}"] if header else []
    for word, vector in zip(words, vectors):
        lines.append(word + " " + " ".join(repr(float(v)) for v in vector))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_tsv(path, rows):
    Path(path).write_text("".join("\t".join(str(c) for c in row) + "\n" for row in rows), encoding="utf-8")
    return path


@pytest.fixture
def planted_pairs():
    """
    30 ordered pairs over 12 random 6-d words whose gold score is a fixed
    function of a planted direction of the two embeddings
    """
    rng = np.random.default_rng(7)
    words = [f"w{i}" for i in range(12)]
    vectors = rng.normal(size=(12, 6))
    direction = rng.normal(size=6)
    direction /= np.linalg.norm(direction)
    projection = vectors @ direction
    candidates = [(i, j) for i in range(12) for j in range(12) if i != j]
    chosen = [candidates[k] for k in rng.choice(len(candidates), size=30, replace=False)]
    gold = {}
    for i, j in chosen:
        gold[(words[i], words[j])] = float(np.clip(5.0 + 2.0 * (projection[i] - projection[j]), 0.5, 9.5))
    return words, vectors, gold


@pytest.fixture
def asymmetric_pairs():
    """20 word pairs (a, b) with gold(a, b) = 9 and gold(b, a) = 1"""
    rng = np.random.default_rng(11)
    words = [f"n{i}" for i in range(40)]
    vectors = rng.normal(size=(40, 5))
    pairs = [(words[2 * k], words[2 * k + 1]) for k in range(20)]
    return words, vectors, pairs


@pytest.fixture
def tiny_embeddings(tmp_path):
    rng = np.random.default_rng(3)
    words = ["dog", "animal", "cat", "pet", "car", "vehicle", "girl", "person", "guest", "captain", "officer",
             "rose", "flower", "oak", "tree", "apple", "fruit", "truck", "mammal", "bird"]
    vectors = rng.normal(size=(len(words), 4))
    return write_embeddings(tmp_path / "emb.txt", words, vectors), words
