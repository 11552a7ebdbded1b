"""Edit distance and corpus word error rate."""

from __future__ import annotations


def levenshtein(ref, hyp) -> tuple[int, int, int, int]:
    """Minimal edit distance from ref to hyp with unit costs.

    Returns (distance, substitutions, insertions, deletions), recovered
    by backtrace with a fixed preference (match/substitute, then delete,
    then insert), so the split is deterministic even when several
    alignments are co-optimal. Callers strip EOS beforehand; this is a
    plain symbol-sequence metric. Plain lists on purpose: scoring runs
    this on millions of short pairs, where array overhead dominates.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    d = [list(range(m + 1))]
    for i in range(1, n + 1):
        prev = d[-1]
        row = [i] + [0] * m
        ri = ref[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ri != hyp[j - 1])
            dele = prev[j] + 1
            if dele < sub:
                sub = dele
            ins = row[j - 1] + 1
            row[j] = ins if ins < sub else sub
        d.append(row)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return d[n][m], int(subs), int(ins), int(dels)


def corpus_wer(pairs) -> float:
    """100 * total edit distance / total reference length, pooled."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("corpus_wer: no pairs")
    total_dist = 0
    total_ref = 0
    for ref, hyp in pairs:
        dist, _, _, _ = levenshtein(ref, hyp)
        total_dist += dist
        total_ref += len(list(ref))
    if total_ref == 0:
        raise ValueError("corpus_wer: zero total reference length")
    return 100.0 * total_dist / total_ref
