"""Lexical similarity metrics implemented natively over one shared tokenizer.

All metrics operate on the same normalization: lowercase, punctuation split
off as separate tokens, whitespace collapsed, and ``___`` de-identification
placeholders kept as tokens.  Every score lands in [0, 1].
"""

from __future__ import annotations

import math
import re
from collections import Counter

TokenSeq = list[str]

_TOKEN_RE = re.compile(r"[^\W_]+|_+|[^\w\s]")

BLEU_EPSILON = 1e-9
METEOR_SEARCH_LIMIT = 64  # max sequence length for exact chunk minimization
_METEOR_NODE_CAP = 200_000


def tokenize(text: str) -> TokenSeq:
    """Normalize text to the shared token stream.

    Re-tokenizing the space-joined output is a fixed point, which keeps every
    metric insensitive to the original whitespace layout.
    """
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: TokenSeq, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _prf(matches: float, cand_total: int, ref_total: int) -> tuple[float, float, float]:
    if cand_total == 0 or ref_total == 0:
        return 0.0, 0.0, 0.0
    p = matches / cand_total
    r = matches / ref_total
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def rouge_n(cand: TokenSeq, ref: TokenSeq, n: int) -> tuple[float, float, float]:
    """ROUGE-N precision/recall/F1 with clipped n-gram counts."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand_counts = _ngrams(cand, n)
    ref_counts = _ngrams(ref, n)
    matches = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    return _prf(matches, sum(cand_counts.values()), sum(ref_counts.values()))


def lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    """Length of the longest common subsequence of two token sequences."""
    # Shared prefix/suffix contributes to the LCS unconditionally.
    lo = 0
    hi_a, hi_b = len(a), len(b)
    while lo < hi_a and lo < hi_b and a[lo] == b[lo]:
        lo += 1
    while hi_a > lo and hi_b > lo and a[hi_a - 1] == b[hi_b - 1]:
        hi_a -= 1
        hi_b -= 1
    fixed = lo + (len(a) - hi_a)
    a, b = a[lo:hi_a], b[lo:hi_b]
    if not a or not b:
        return fixed
    if len(b) < len(a):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        append = curr.append
        best = 0
        for j, y in enumerate(b, start=1):
            best = prev[j - 1] + 1 if x == y else max(prev[j], best)
            append(best)
        prev = curr
    return fixed + prev[-1]


def rouge_l(cand: TokenSeq, ref: TokenSeq) -> tuple[float, float, float]:
    """ROUGE-L precision/recall/F1 from the LCS length."""
    if not cand or not ref:
        return 0.0, 0.0, 0.0
    return _prf(lcs_length(cand, ref), len(cand), len(ref))


def modified_ngram_counts(cand: TokenSeq, refs: list[TokenSeq], n: int) -> tuple[int, int]:
    """(clipped match count, candidate n-gram total) against the best of refs."""
    cand_counts = _ngrams(cand, n)
    max_ref: Counter = Counter()
    for ref in refs:
        for g, c in _ngrams(ref, n).items():
            if c > max_ref[g]:
                max_ref[g] = c
    matches = sum(min(c, max_ref[g]) for g, c in cand_counts.items())
    return matches, sum(cand_counts.values())


def _closest_ref_length(cand_len: int, refs: list[TokenSeq]) -> int:
    lengths = [len(r) for r in refs] or [0]
    return min(lengths, key=lambda rl: (abs(rl - cand_len), rl))


def _bleu_from_counts(counts: list[tuple[int, int]], cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    # Orders with no candidate n-grams at all are undefined and excluded
    # (effective order); zero match counts smooth to epsilon.
    active = [(m, t) for m, t in counts if t > 0]
    if not active:
        return 0.0
    log_sum = sum(math.log(m / t if m > 0 else BLEU_EPSILON) for m, t in active)
    geo_mean = math.exp(log_sum / len(active))
    brevity = math.exp(1 - ref_len / cand_len) if cand_len <= ref_len else 1.0
    return geo_mean * brevity


def bleu4(cand: TokenSeq, refs: list[TokenSeq]) -> float:
    """Sentence BLEU-4: modified precisions for n=1..4, epsilon-smoothed,
    times the brevity penalty against the closest reference length."""
    counts = [modified_ngram_counts(cand, refs, n) for n in range(1, 5)]
    return _bleu_from_counts(counts, len(cand), _closest_ref_length(len(cand), refs))


def bleu4_corpus(pairs: list[tuple[TokenSeq, list[TokenSeq]]]) -> float:
    """Corpus BLEU-4: n-gram and length counts summed over samples before the
    precision and brevity computations, so a single pair equals sentence BLEU."""
    totals = [[0, 0] for _ in range(4)]
    cand_len = ref_len = 0
    for cand, refs in pairs:
        for i, n in enumerate(range(1, 5)):
            m, t = modified_ngram_counts(cand, refs, n)
            totals[i][0] += m
            totals[i][1] += t
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), refs)
    return _bleu_from_counts([(m, t) for m, t in totals], cand_len, ref_len)


def _greedy_alignment(cand: TokenSeq, ref: TokenSeq, needed: Counter) -> int:
    """Chunk count of a left-to-right alignment preferring run continuations."""
    ref_positions: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        ref_positions.setdefault(w, []).append(j)
    used = set()
    remaining = dict(needed)
    chunks = 0
    prev_i = prev_j = -2
    for i, w in enumerate(cand):
        if remaining.get(w, 0) <= 0:
            continue
        positions = ref_positions.get(w, [])
        cont = prev_j + 1
        if i == prev_i + 1 and cont < len(ref) and ref[cont] == w and cont not in used:
            j = cont
        else:
            j = next((p for p in positions if p not in used), None)
            if j is None:
                continue
        used.add(j)
        remaining[w] -= 1
        if not (i == prev_i + 1 and j == prev_j + 1):
            chunks += 1
        prev_i, prev_j = i, j
    return chunks


def _exact_min_chunks(cand: TokenSeq, ref: TokenSeq, needed: Counter, upper: int) -> int:
    """Branch-and-bound over alignments of maximal size, minimizing chunks.

    Bounded by _METEOR_NODE_CAP nodes; the greedy solution is the starting
    incumbent, so the result never exceeds it.
    """
    ref_positions: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        ref_positions.setdefault(w, []).append(j)
    suffix: list[Counter] = [Counter() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        suffix[i] = suffix[i + 1].copy()
        suffix[i][cand[i]] += 1

    best = upper
    used: set[int] = set()
    remaining = Counter(needed)
    nodes = 0

    def visit(i: int, prev_i: int, prev_j: int, chunks: int) -> None:
        nonlocal best, nodes
        nodes += 1
        if chunks >= best or nodes > _METEOR_NODE_CAP:
            return
        if i == len(cand):
            best = min(best, chunks)
            return
        w = cand[i]
        if remaining[w] > 0:
            options = ref_positions[w]
            cont = prev_j + 1 if i == prev_i + 1 else -1
            ordered = sorted(options, key=lambda j: (j != cont, j))
            for j in ordered:
                if j in used:
                    continue
                used.add(j)
                remaining[w] -= 1
                visit(i + 1, i, j, chunks + (0 if j == cont else 1))
                remaining[w] += 1
                used.discard(j)
        if suffix[i + 1][w] >= remaining[w]:
            visit(i + 1, prev_i, prev_j, chunks)

    visit(0, -2, -2, 0)
    return best


def meteor_alignment(cand: TokenSeq, ref: TokenSeq) -> tuple[int, int]:
    """(matches, chunks) of an exact-match unigram alignment.

    The match count is always maximal.  Chunks are minimized exactly for
    sequences up to METEOR_SEARCH_LIMIT tokens (chunk minimization over all
    maximal alignments is a hard combinatorial problem); longer inputs use a
    continuation-preferring greedy alignment.
    """
    needed = Counter(cand) & Counter(ref)
    m = sum(needed.values())
    if m == 0:
        return 0, 0
    chunks = _greedy_alignment(cand, ref, needed)
    if len(cand) <= METEOR_SEARCH_LIMIT and len(ref) <= METEOR_SEARCH_LIMIT and chunks > 1:
        chunks = _exact_min_chunks(cand, ref, needed, chunks)
    return m, chunks


def meteor(cand: TokenSeq, ref: TokenSeq) -> float:
    """METEOR restricted to exact unigram matches (no stemming or synonyms).

    Fmean weights recall 9:1 over precision; the fragmentation penalty is
    0.5 * (chunks / matches)^3.
    """
    if not cand or not ref:
        return 0.0
    m, chunks = meteor_alignment(cand, ref)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)
