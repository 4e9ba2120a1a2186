"""Synthetic inputs: Zipf-distributed text and Gaussian-mixture points."""

from __future__ import annotations

import numpy as np

_ALPHABET = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def vocabulary(size: int, rng: np.random.Generator, min_len: int = 2, max_len: int = 10) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        n = int(rng.integers(min_len, max_len + 1))
        words.add("".join(rng.choice(_ALPHABET, n)))
    return sorted(words)


def zipf_tokens(n_tokens: int, vocab_size: int = 1000, s: float = 1.0,
                seed: int = 0) -> list[str]:
    """Tokens drawn from a finite Zipf(s) law over a random vocabulary.

    Rank r (1-based) has probability proportional to r**-s.
    """
    rng = np.random.default_rng(seed)
    vocab = vocabulary(vocab_size, rng)
    rng.shuffle(vocab)
    p = np.arange(1, vocab_size + 1, dtype=np.float64) ** -s
    p /= p.sum()
    idx = rng.choice(vocab_size, size=n_tokens, p=p)
    return [vocab[i] for i in idx]


def gaussian_mixture(n_points: int, k: int = 5, dim: int = 2, spread: float = 1.0,
                     box: float = 100.0, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Points around k random centres; returns (points, centres)."""
    rng = np.random.default_rng(seed)
    centres = rng.uniform(-box, box, size=(k, dim))
    labels = rng.integers(0, k, size=n_points)
    pts = centres[labels] + rng.normal(0.0, spread, size=(n_points, dim))
    return pts, centres
