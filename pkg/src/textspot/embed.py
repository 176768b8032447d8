"""Fixed word-embedding table: flat-file loading and text encoding.

The table is immutable once loaded; multi-word text is encoded as the
arithmetic mean of the per-word vectors.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataIOError, InputError, ParseError


class OOVError(InputError):
    """No word of the text is in the table vocabulary."""


class EmbeddingTable:
    """word -> d-vector map with a fixed dimension; read-only after load."""

    def __init__(self, dim: int, vocab: dict[str, np.ndarray]):
        self.dim = dim
        self._vocab = {}
        for word, vec in vocab.items():
            v = np.asarray(vec, dtype=np.float64)
            v.setflags(write=False)
            self._vocab[word] = v
        self._frozen = True

    def __len__(self):
        return len(self._vocab)

    def __contains__(self, word: str) -> bool:
        return word in self._vocab

    def lookup(self, word: str) -> np.ndarray:
        return self._vocab[word]

    def words(self):
        return self._vocab.keys()


def load_table(path) -> EmbeddingTable:
    """Parse the flat table format: header ``dim <d>`` then one word + d floats per line."""
    p = Path(path)
    if not p.is_file():
        raise DataIOError(f"embedding table not found: {p}")
    lines = p.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(f"{p}: empty table file")
    header = lines[0].split()
    if len(header) != 2 or header[0] != "dim":
        raise ParseError(f"{p} line 1: expected header 'dim <d>', got {lines[0]!r}")
    try:
        dim = int(header[1])
    except ValueError as e:
        raise ParseError(f"{p} line 1: bad dimension {header[1]!r}") from e
    if dim < 1:
        raise ParseError(f"{p} line 1: dimension must be positive")
    vocab: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        word = parts[0]
        if word != word.lower():
            raise ParseError(f"{p} line {line_no}: word {word!r} is not lowercase")
        if word in vocab:
            raise ParseError(f"{p} line {line_no}: duplicate word {word!r}")
        if len(parts) - 1 != dim:
            raise ParseError(f"{p} line {line_no}: expected {dim} values, got {len(parts) - 1}")
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError as e:
            raise ParseError(f"{p} line {line_no}: {e}") from e
        if not np.all(np.isfinite(vec)):
            raise ParseError(f"{p} line {line_no}: non-finite value")
        vocab[word] = vec
    return EmbeddingTable(dim=dim, vocab=vocab)


def embed_text(table: EmbeddingTable, text: str) -> np.ndarray:
    """Semantic vector for a text: mean of the in-vocabulary word vectors."""
    words = text.lower().split()
    found = [table.lookup(w) for w in words if w in table]
    if not found:
        raise OOVError(f"no word of {text!r} is in the embedding vocabulary")
    if len(found) == 1:
        return found[0].copy()
    return np.mean(np.stack(found), axis=0)


def zero_vector(dim: int) -> np.ndarray:
    """All-zeros semantic vector (the false-positive target)."""
    if dim < 1:
        raise InputError("dim must be at least 1")
    return np.zeros(dim, dtype=np.float64)


def save_table(path, dim: int, rows: list[tuple[str, np.ndarray]]) -> None:
    """Write the flat table format (used by tests and fixtures)."""
    lines = [f"dim {dim}"]
    for word, vec in rows:
        lines.append(word + " " + " ".join(f"{v:.9g}" for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
