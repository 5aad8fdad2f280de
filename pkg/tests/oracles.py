"""Independent reference implementations used as test oracles.

Everything here is written for clarity (explicit loops, enumeration,
``math`` instead of numpy reductions) and shares no code with the package.
"""

import itertools
import math
from collections import Counter


def all_paths(n, C):
    return itertools.product(range(C), repeat=n)


def path_score(path, emis, trans, start, end):
    s = start[path[0]] + emis[0][path[0]] + end[path[-1]]
    for i in range(1, len(path)):
        s += trans[path[i - 1]][path[i]] + emis[i][path[i]]
    return float(s)


def logsumexp(values):
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def brute_force_crf(emis, trans, start, end):
    """Best path, log partition and token marginals by enumerating C**n paths."""
    n, C = len(emis), len(emis[0])
    paths = list(all_paths(n, C))
    scores = [path_score(p, emis, trans, start, end) for p in paths]
    best = max(range(len(paths)), key=lambda k: scores[k])
    log_z = logsumexp(scores)
    marg = [[0.0] * C for _ in range(n)]
    for p, s in zip(paths, scores):
        w = math.exp(s - log_z)
        for i, c in enumerate(p):
            marg[i][c] += w
    return list(paths[best]), scores[best], log_z, marg


def entropy(dist):
    return -math.fsum(p * math.log(p) for p in dist if p > 0)


def bald_direct(preds):
    """Entropy of the pass-averaged distribution minus the average entropy,
    per token, then averaged over tokens."""
    M, n, C = len(preds), len(preds[0]), len(preds[0][0])
    total = 0.0
    for i in range(n):
        mean = [math.fsum(preds[m][i][c] for m in range(M)) / M for c in range(C)]
        total += entropy(mean) - math.fsum(entropy(preds[m][i]) for m in range(M)) / M
    return total / n


def vr_direct(preds):
    """1 - (count of the modal argmax label) / M, averaged over tokens."""
    M, n = len(preds), len(preds[0])
    total = 0.0
    for i in range(n):
        votes = []
        for m in range(M):
            row = list(preds[m][i])
            votes.append(row.index(max(row)))
        mode_count = Counter(votes).most_common(1)[0][1]
        total += 1.0 - mode_count / M
    return total / n


def spans_direct(tags):
    """(type, start, end-exclusive) chunks of an IOB2 sequence, conlleval style."""
    out, cur = [], None
    for i, t in enumerate(list(tags) + ["O"]):
        starts = t.startswith("B-") or (t.startswith("I-") and (cur is None or cur[0] != t[2:]))
        if cur is not None and (t == "O" or starts):
            out.append((cur[0], cur[1], i))
            cur = None
        if starts:
            cur = (t[2:], i)
    return out


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at numpy vector ``x``."""
    g = x.copy()
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def relative_error(a, b):
    import numpy as np
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)
