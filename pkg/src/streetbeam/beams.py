"""DFT codebook, achievable rate, exhaustive beam search, Top-G metrics."""

import logging
from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Codebook:
    vectors: np.ndarray  # (M_bm, N_t) complex, unit-norm rows

    @property
    def M_bm(self):
        return self.vectors.shape[0]

    @property
    def N_t(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class BeamEvaluation:
    rates: np.ndarray      # (M_bm,) bits/s/Hz
    optimal_index: int     # smallest index among maximal rates

    def topg_indices(self, G: int):
        """First G beam indices by rate descending, ties to smallest index."""
        order = np.argsort(-self.rates, kind="stable")
        return tuple(int(i) for i in order[:G])


def dft_codebook(N_t: int, M_bm: int) -> Codebook:
    """Codeword m entry n = (1/sqrt(N_t)) * exp(-j 2 pi m n / M_bm)."""
    if N_t < 1 or M_bm < 1:
        raise ValueError("N_t and M_bm must be >= 1")
    m = np.arange(M_bm)[:, None]
    n = np.arange(N_t)[None, :]
    return Codebook(vectors=np.exp(-2j * np.pi * m * n / M_bm) / np.sqrt(N_t))


def rate(channel, w, P_k: float, sigma2: float) -> float:
    """(1/K) * sum_k log2(1 + (P_k/sigma2) |h[k]^T w|^2)."""
    h = channel.entries if isinstance(channel, ChannelMatrix) else np.asarray(channel)
    w = np.asarray(w)
    if h.shape[1] != w.shape[0]:
        raise ValueError("channel and beam dimensions differ")
    gains = np.abs(h @ w) ** 2
    return float(np.mean(np.log2(1 + (P_k / sigma2) * gains)))


def optimal_beam(channel, codebook: Codebook, P_k: float, sigma2: float) -> BeamEvaluation:
    """Exhaustive rate evaluation over the codebook."""
    if codebook.M_bm < 1:
        raise ValueError("codebook is empty")
    rates = np.array([rate(channel, wv, P_k, sigma2) for wv in codebook.vectors])
    return BeamEvaluation(rates=rates, optimal_index=int(np.argmax(rates)))


def topg_accuracy(labels, topg_sets, G: int) -> float:
    """Fraction of samples whose label beam falls in its Top-G set."""
    if len(labels) != len(topg_sets):
        raise ValueError("labels and Top-G sets have different lengths")
    for s in topg_sets:
        if len(s) != G:
            raise ValueError(f"every Top-G set must have exactly {G} indices")
    hits = sum(1 for lab, s in zip(labels, topg_sets) if int(lab) in s)
    return hits / len(labels)


def trr(channels, codebook: Codebook, topg_sets, G: int, P_k: float, sigma2: float) -> float:
    """Mean over samples of (best rate within Top-G) / (optimal rate).

    Samples with zero optimal rate are excluded with a logged warning count.
    """
    if len(channels) != len(topg_sets):
        raise ValueError("channels and Top-G sets have different lengths")
    ratios = []
    skipped = 0
    for ch, s in zip(channels, topg_sets):
        if len(s) != G:
            raise ValueError(f"every Top-G set must have exactly {G} indices")
        ev = optimal_beam(ch, codebook, P_k, sigma2)
        opt = ev.rates[ev.optimal_index]
        if opt <= 0:
            skipped += 1
            continue
        best = max(ev.rates[i] for i in s)
        ratios.append(best / opt)
    if skipped:
        log.warning("trr: excluded %d sample(s) with zero optimal rate", skipped)
    if not ratios:
        raise ValueError("no valid samples for TRR")
    return float(np.mean(ratios))
