"""Pure-numpy version of the kernel sums in ``_kdecore.pyx``.

Used when the compiled extension is missing or ``LPTSCAN_BACKEND=python``.
Queries are processed in sorted blocks so the truncation window stays a
contiguous slice of the sample.
"""
import numpy as np

_BLOCK_ELEMENTS = 2_000_000
_BLOCK_QUERIES = 128


def sums_at_points(r, x, h, cutoff):
    r = np.ascontiguousarray(r, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, m = r.shape[0], x.shape[0]
    out0 = np.empty(m)
    out1 = np.empty(m)
    if m == 0:
        return out0, out1
    exact = cutoff <= 0.0
    reach = cutoff * h
    order = np.argsort(x, kind="stable")
    xs = x[order]
    if exact:
        lo = np.zeros(m, dtype=np.intp)
        hi = np.full(m, n, dtype=np.intp)
    else:
        lo = np.searchsorted(r, xs - reach, side="left")
        hi = np.searchsorted(r, xs + reach, side="right")

    s0 = np.empty(m)
    s1 = np.empty(m)
    start = 0
    while start < m:
        width = max(int(hi[start] - lo[start]), 1)
        stop = min(m, start + max(1, min(_BLOCK_QUERIES, _BLOCK_ELEMENTS // width)))
        a, b = int(lo[start]), int(hi[stop - 1])
        u = (r[None, a:b] - xs[start:stop, None]) / h
        e = np.exp(-0.5 * u * u)
        if not exact:
            xb = xs[start:stop, None]
            rb = r[None, a:b]
            e[(rb < xb - reach) | (rb > xb + reach)] = 0.0
        s0[start:stop] = e.sum(axis=1)
        s1[start:stop] = (e * u).sum(axis=1)
        start = stop
    out0[order] = s0
    out1[order] = s1
    return out0, out1


def sums_at_sample(r, h, cutoff):
    return sums_at_points(r, r, h, cutoff)
