"""Hot numeric loops, each in a numba flavour and a pure-numpy flavour.

The public names at the bottom are bound to one flavour according to
``streamdec._jit.USE_NUMBA``. Both flavours stay importable (``NUMBA`` and
``NUMPY`` namespaces) so tests and the benchmark can compare them.

Conventions: frame indices are 0-based, probabilities are linear, CTC rows are
``gn`` (alignments ending in a non-blank) and ``gb`` (ending in blank).
"""

from types import SimpleNamespace

import numpy as np

from ._jit import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numba flavour
# ---------------------------------------------------------------------------


@njit
def _nb_ctc_root_rows(gb, probs, blank, j0, j1):
    for j in range(j0, j1):
        gb[j] = gb[j - 1] * probs[j, blank]


@njit
def _nb_ctc_extend_rows(gn, gb, pgn, pgb, probs, y, blank, same, j0, j1):
    for j in range(j0, j1):
        phi = pgb[j - 1]
        if not same:
            phi += pgn[j - 1]
        gn[j] = (gn[j - 1] + phi) * probs[j, y]
        gb[j] = (gb[j - 1] + gn[j - 1]) * probs[j, blank]


@njit
def _nb_ctc_psi_scan(pgn, pgb, probs, y, same, psi, lo, hi, prev_end, theta):
    for j in range(lo, hi):
        phi = pgb[j - 1]
        if not same:
            phi += pgn[j - 1]
        term = phi * probs[j, y]
        psi += term
        if j > prev_end and term < theta:
            return psi, j, True
    return psi, hi, False


@njit
def _nb_ctc_full_forward(probs, labels, blank):
    # row 0 is the <sos> prefix; row i is labels[:i]
    T = probs.shape[0]
    L = labels.shape[0]
    gn = np.zeros((L + 1, T))
    gb = np.zeros((L + 1, T))
    gb[0, 0] = probs[0, blank]
    if L > 0:
        gn[1, 0] = probs[0, labels[0]]
    for j in range(1, T):
        gb[0, j] = gb[0, j - 1] * probs[j, blank]
        for i in range(1, L + 1):
            y = labels[i - 1]
            phi = gb[i - 1, j - 1]
            if i == 1 or labels[i - 2] != y:
                phi += gn[i - 1, j - 1]
            gn[i, j] = (gn[i, j - 1] + phi) * probs[j, y]
            gb[i, j] = (gb[i, j - 1] + gn[i, j - 1]) * probs[j, blank]
    return gn, gb


@njit
def _nb_energy_rows(wqb, keys, vhat, g, r, lo, hi, out):
    D = wqb.shape[0]
    for j in range(lo, hi):
        s = 0.0
        for d in range(D):
            s += vhat[d] * np.tanh(wqb[d] + keys[j, d])
        out[j] = g * s + r


@njit
def _nb_weighted_rows(weights, H, lo, hi):
    # sum_j weights[j - lo] * H[j] over j in [lo, hi), summed in frame order
    D = H.shape[1]
    out = np.zeros(D)
    for j in range(lo, hi):
        w = weights[j - lo]
        for d in range(D):
            out[d] += w * H[j, d]
    return out


@njit
def _nb_hma_row_direct(p, prev):
    T = p.shape[0]
    out = np.zeros(T)
    for j in range(T):
        acc = 0.0
        prod = 1.0
        for k in range(j, -1, -1):
            acc += prev[k] * prod
            prod *= 1.0 - p[k - 1] if k > 0 else 1.0
        out[j] = p[j] * acc
    return out


@njit
def _nb_hma_row_recursive(p, prev):
    T = p.shape[0]
    out = np.zeros(T)
    if T == 0:
        return out
    out[0] = p[0] * prev[0]
    for j in range(1, T):
        out[j] = p[j] / p[j - 1] * (1.0 - p[j - 1]) * out[j - 1] + p[j] * prev[j]
    return out


@njit
def _nb_smocha_row_product(p):
    T = p.shape[0]
    out = np.zeros(T)
    keep = 1.0
    for j in range(T):
        out[j] = p[j] * keep
        keep *= 1.0 - p[j]
    return out


@njit
def _nb_smocha_row_recursive(p):
    T = p.shape[0]
    out = np.zeros(T)
    if T == 0:
        return out
    out[0] = p[0]
    for j in range(1, T):
        out[j] = p[j] / p[j - 1] * (1.0 - p[j - 1]) * out[j - 1]
    return out


@njit
def _nb_edit_distance(ref, hyp):
    n = ref.shape[0]
    m = hyp.shape[0]
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        d[i, 0] = i
    for k in range(m + 1):
        d[0, k] = k
    for i in range(1, n + 1):
        for k in range(1, m + 1):
            c = d[i - 1, k - 1] + (0 if ref[i - 1] == hyp[k - 1] else 1)
            if d[i - 1, k] + 1 < c:
                c = d[i - 1, k] + 1
            if d[i, k - 1] + 1 < c:
                c = d[i, k - 1] + 1
            d[i, k] = c
    sub = 0
    ins = 0
    dele = 0
    i = n
    k = m
    while i > 0 or k > 0:
        if i > 0 and k > 0 and d[i, k] == d[i - 1, k - 1] + (0 if ref[i - 1] == hyp[k - 1] else 1):
            if ref[i - 1] != hyp[k - 1]:
                sub += 1
            i -= 1
            k -= 1
        elif i > 0 and d[i, k] == d[i - 1, k] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            k -= 1
    return d[n, m], sub, ins, dele


# ---------------------------------------------------------------------------
# numpy flavour
# ---------------------------------------------------------------------------


def _np_ctc_root_rows(gb, probs, blank, j0, j1):
    prev = gb[j0 - 1]
    for j, pb in enumerate(probs[j0:j1, blank].tolist(), start=j0):
        prev = prev * pb
        gb[j] = prev


def _np_ctc_extend_rows(gn, gb, pgn, pgb, probs, y, blank, same, j0, j1):
    if j1 <= j0:
        return
    phi = pgb[j0 - 1:j1 - 1].copy()
    if not same:
        phi += pgn[j0 - 1:j1 - 1]
    py = probs[j0:j1, y].tolist()
    pb = probs[j0:j1, blank].tolist()
    n_prev = float(gn[j0 - 1])
    b_prev = float(gb[j0 - 1])
    for k, ph in enumerate(phi.tolist()):
        n_cur = (n_prev + ph) * py[k]
        b_cur = (b_prev + n_prev) * pb[k]
        gn[j0 + k] = n_cur
        gb[j0 + k] = b_cur
        n_prev, b_prev = n_cur, b_cur


def _np_ctc_psi_scan(pgn, pgb, probs, y, same, psi, lo, hi, prev_end, theta):
    if hi <= lo:
        return psi, hi, False
    phi = pgb[lo - 1:hi - 1].copy()
    if not same:
        phi += pgn[lo - 1:hi - 1]
    terms = phi * probs[lo:hi, y]
    cum = np.cumsum(np.concatenate(([psi], terms)))[1:]
    idx = np.arange(lo, hi)
    hits = np.flatnonzero((idx > prev_end) & (terms < theta))
    if hits.size:
        k = int(hits[0])
        return float(cum[k]), lo + k, True
    return float(cum[-1]), hi, False


def _np_ctc_full_forward(probs, labels, blank):
    T = probs.shape[0]
    L = labels.shape[0]
    gn = np.zeros((L + 1, T))
    gb = np.zeros((L + 1, T))
    gb[0, 0] = probs[0, blank]
    _np_ctc_root_rows(gb[0], probs, blank, 1, T)
    for i in range(1, L + 1):
        y = int(labels[i - 1])
        same = i > 1 and int(labels[i - 2]) == y
        gn[i, 0] = probs[0, y] if i == 1 else 0.0
        _np_ctc_extend_rows(gn[i], gb[i], gn[i - 1], gb[i - 1], probs, y, blank, same, 1, T)
    return gn, gb


def _np_energy_rows(wqb, keys, vhat, g, r, lo, hi, out):
    # one row at a time so a frame's value never depends on the batch it came in
    for j in range(lo, hi):
        out[j] = g * float(np.dot(vhat, np.tanh(wqb + keys[j]))) + r


def _np_weighted_rows(weights, H, lo, hi):
    out = np.zeros(H.shape[1])
    for k, j in enumerate(range(lo, hi)):
        out += weights[k] * H[j]
    return out


def _np_hma_row_direct(p, prev):
    T = p.shape[0]
    out = np.zeros(T)
    one_minus = 1.0 - p
    for j in range(T):
        # survival from k to j: prod_{l=k}^{j-1} (1 - p_l), built right to left
        surv = np.ones(j + 1)
        if j > 0:
            surv[:j] = np.cumprod(one_minus[:j][::-1])[::-1]
        out[j] = p[j] * float(np.dot(prev[:j + 1], surv))
    return out


def _np_hma_row_recursive(p, prev):
    T = p.shape[0]
    out = np.zeros(T)
    if T == 0:
        return out
    out[0] = p[0] * prev[0]
    for j in range(1, T):
        out[j] = p[j] / p[j - 1] * (1.0 - p[j - 1]) * out[j - 1] + p[j] * prev[j]
    return out


def _np_smocha_row_product(p):
    keep = np.concatenate(([1.0], np.cumprod(1.0 - p)[:-1])) if p.size else p.copy()
    return p * keep


def _np_smocha_row_recursive(p):
    return _np_hma_row_recursive(p, np.concatenate(([1.0], np.zeros(p.shape[0] - 1))) if p.size else p)


def _np_edit_distance(ref, hyp):
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        sub_row = d[i - 1, :-1] + (hyp != ref[i - 1])
        row = np.minimum(sub_row, d[i - 1, 1:] + 1)
        # insertions chain along the row
        cur = d[i, 0]
        for k in range(m):
            cur = min(int(row[k]), cur + 1)
            d[i, k + 1] = cur
    sub = ins = dele = 0
    i, k = n, m
    while i > 0 or k > 0:
        if i > 0 and k > 0 and d[i, k] == d[i - 1, k - 1] + (ref[i - 1] != hyp[k - 1]):
            sub += int(ref[i - 1] != hyp[k - 1])
            i -= 1
            k -= 1
        elif i > 0 and d[i, k] == d[i - 1, k] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            k -= 1
    return int(d[n, m]), sub, ins, dele


_NAMES = (
    "ctc_root_rows",
    "ctc_extend_rows",
    "ctc_psi_scan",
    "ctc_full_forward",
    "energy_rows",
    "weighted_rows",
    "hma_row_direct",
    "hma_row_recursive",
    "smocha_row_product",
    "smocha_row_recursive",
    "edit_distance",
)

NUMBA = SimpleNamespace(**{n: globals()["_nb_" + n] for n in _NAMES})
NUMPY = SimpleNamespace(**{n: globals()["_np_" + n] for n in _NAMES})
ACTIVE = NUMBA if USE_NUMBA else NUMPY

ctc_root_rows = ACTIVE.ctc_root_rows
ctc_extend_rows = ACTIVE.ctc_extend_rows
ctc_psi_scan = ACTIVE.ctc_psi_scan
ctc_full_forward = ACTIVE.ctc_full_forward
energy_rows = ACTIVE.energy_rows
weighted_rows = ACTIVE.weighted_rows
hma_row_direct = ACTIVE.hma_row_direct
hma_row_recursive = ACTIVE.hma_row_recursive
smocha_row_product = ACTIVE.smocha_row_product
smocha_row_recursive = ACTIVE.smocha_row_recursive
edit_distance = ACTIVE.edit_distance
