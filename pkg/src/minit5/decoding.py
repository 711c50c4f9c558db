"""Greedy and length-normalized beam decoding.

The beam core works over any step function mapping a generated prefix to
next-token log-probabilities, so the same search drives the transformer and
small table-based models in tests.
"""

from __future__ import annotations

import numpy as np

from .model import ModelParams, forward, log_softmax
from .unigram import EOS_ID


def _normalized(cum: float, length: int) -> float:
    return cum / length


def _hyp_sort_key(item):
    ids, cum = item
    # higher normalized score, then shorter, then lexicographically smaller ids
    return (-_normalized(cum, len(ids)), len(ids), ids)


def beam_search(step_logprobs, width: int, max_out: int,
                eos_id: int = EOS_ID) -> list[int]:
    """Beam search over step_logprobs(prefix_tuple) -> array of log-probs.

    Candidates are ranked by cumulative log-probability during the search;
    hypotheses that emit eos retire to the finished pool. The returned
    hypothesis maximizes length-normalized log-probability (cumulative divided
    by length) over finished hypotheses plus any max-length survivors, with
    ties broken toward shorter then lexicographically smaller sequences.
    Width 1 reduces exactly to greedy decoding.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    if max_out < 1:
        raise ValueError("max_out must be >= 1")
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float]] = []
    for _ in range(max_out):
        candidates: list[tuple[tuple[int, ...], float]] = []
        for ids, cum in live:
            lp = np.asarray(step_logprobs(ids), dtype=np.float64)
            for tok in range(lp.size):
                if lp[tok] == -np.inf:
                    continue
                candidates.append((ids + (tok,), cum + float(lp[tok])))
        if not candidates:
            break
        candidates.sort(key=lambda item: (-item[1], item[0]))
        live = []
        for ids, cum in candidates[:width]:
            if ids[-1] == eos_id:
                finished.append((ids, cum))
            else:
                live.append((ids, cum))
        if not live:
            break
    finished.extend(live)  # max-length survivors count as complete
    best = min(finished, key=_hyp_sort_key)
    return list(best[0])


def _model_step_fn(params: ModelParams, enc_ids):
    start = (EOS_ID,)

    def step(prefix: tuple[int, ...]) -> np.ndarray:
        dec_in = np.asarray(start + prefix, dtype=np.int64)
        logits = forward(params, enc_ids, dec_in)
        return log_softmax(logits[-1])

    return step


def greedy_decode(params: ModelParams, enc_ids, max_out: int) -> list[int]:
    """Iterative argmax from an eos start until eos is emitted or max_out is
    reached; ties break toward the lowest id."""
    if max_out < 1:
        raise ValueError("max_out must be >= 1")
    step = _model_step_fn(params, enc_ids)
    out: list[int] = []
    for _ in range(max_out):
        lp = step(tuple(out))
        tok = int(np.argmax(lp))
        out.append(tok)
        if tok == EOS_ID:
            break
    return out


def beam_decode(params: ModelParams, enc_ids, width: int = 5,
                max_out: int = 32) -> list[int]:
    """Length-normalized beam search over the model's decoder."""
    return beam_search(_model_step_fn(params, enc_ids), width, max_out)
