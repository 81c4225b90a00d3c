"""Plain-Python recomputation of the stability-score components.

Only ``math`` is used; windows, histograms and ACFs are rebuilt from lists.
"""

import math

BINS = 16
SPEED = 16


def windows(seq, w, s):
    """Rows of each window, front-padded with the first row when the sequence is short."""
    rows = [list(r) for r in seq]
    if len(rows) < w:
        rows = [rows[0]] * (w - len(rows)) + rows
        return [rows]
    return [rows[o:o + w] for o in range(0, len(rows) - w + 1, s)]


def flat(win):
    return [v for row in win for v in row]


def bins_of(vals):
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [0] * len(vals)
    return [min(int(math.floor((v - lo) / (hi - lo) * BINS)), BINS - 1) for v in vals]


def entropy(counts):
    n = sum(counts)
    return -sum(c / n * math.log(c / n) for c in counts if c)


def nmi(a, b):
    ia, ib = bins_of(a), bins_of(b)
    joint = {}
    ca, cb = [0] * BINS, [0] * BINS
    for x, y in zip(ia, ib):
        joint[(x, y)] = joint.get((x, y), 0) + 1
        ca[x] += 1
        cb[y] += 1
    ha, hb = entropy(ca), entropy(cb)
    if ha + hb == 0:
        return 0.0
    mi = ha + hb - entropy(list(joint.values()))
    return min(max(2 * mi / (ha + hb), 0.0), 1.0)


def d_s(data, w):
    counts = [max(1, len(s) - w + 1) for s in data]
    m = sum(counts) / len(counts)
    sd = math.sqrt(sum((c - m) ** 2 for c in counts) / len(counts))
    return 1 / (1 + sd / m)


def acf(x, max_lag):
    n = len(x)
    m = sum(x) / n
    d = [v - m for v in x]
    c0 = sum(v * v for v in d) / n
    if c0 == 0:
        return None
    return [sum(d[i] * d[i + k] for i in range(n - k)) / n / c0 if k < n else 0.0 for k in range(max_lag + 1)]


def a_score(data, w):
    curves = [acf([row[SPEED] for row in s], w) for s in data if len(s) > 1]
    curves = [c for c in curves if c is not None]
    if not curves:
        return 0.0
    avg = [sum(c[k] for c in curves) / len(curves) for k in range(w + 1)]
    lag = next((k for k in range(1, w + 1) if avg[k] < 0.2), w)
    return min(lag, w) / w


def r_score(data, w, s):
    vals = []
    for seq in data:
        if len(seq) <= w:
            continue
        ws = windows(seq, w, s)
        vals += [nmi(flat(a), flat(b)) for a, b in zip(ws, ws[1:])]
    return sum(vals) / len(vals) if vals else 0.0


def e_score(data, w):
    vals = []
    for seq in data:
        for win in windows(seq, w, 1):
            v = flat(win)
            m = sum(v) / len(v)
            sd = math.sqrt(sum((x - m) ** 2 for x in v) / len(v))
            if sd == 0:
                vals.append(0.0)
                continue
            counts = [0] * BINS
            for b in bins_of([(x - m) / sd for x in v]):
                counts[b] += 1
            vals.append(entropy(counts) / math.log(BINS))
    return sum(vals) / len(vals) if vals else 0.0


def cell(data, w, s):
    return d_s(data, w), a_score(data, w), r_score(data, w, s), e_score(data, w)
