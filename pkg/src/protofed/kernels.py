"""Hot numeric kernels, each with a numba JIT and a pure-numpy implementation.

Three inner loops dominate simulator runtime: the pairwise cosine matrix and
first-neighbor component labelling behind the clustering module (run per
class, per client, per round), and the batched prototype-loss gradient behind
every SGD step. Both implementations of each kernel compute the same
quantities; agreement is asserted in tests and measured in
``benchmarks/bench_backends.py``.

Backend selection happens once at import time from the ``PROTOFED_BACKEND``
environment variable:

* ``numba`` (default when numba imports cleanly): loop kernels compiled with
  ``@njit(cache=True)``.
* ``numpy``: the vectorized pure-numpy fallback.

``BACKEND`` records the active choice.
"""

from __future__ import annotations

import os

import numpy as np

from .numerics import EPS_ZERO, normalize_rows

_ENV_VAR = "PROTOFED_BACKEND"


def _select_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


BACKEND = _select_backend()


# ---------------------------------------------------------------------------
# Pure-numpy implementations
# ---------------------------------------------------------------------------

def _pairwise_cosine_np(x):
    xn = normalize_rows(x)
    return xn @ xn.T


def _first_neighbor_labels_np(sim):
    n = sim.shape[0]
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    masked = sim.copy()
    np.fill_diagonal(masked, -np.inf)
    nn = np.argmax(masked, axis=1)  # first maximum = lowest-index tie break

    # Components of the first-neighbor relation: union over directed nn edges
    # transitively covers the nn(i)=j / nn(j)=i / nn(i)=nn(j) adjacency rule.
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        ri, rj = find(i), find(int(nn[i]))
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj

    labels = np.empty(n, dtype=np.int64)
    order: dict[int, int] = {}
    for i in range(n):
        r = find(i)
        if r not in order:
            order[r] = len(order)
        labels[i] = order[r]
    return labels


def _proto_loss_batch_np(z, zy, protos, pclass, alpha, tau, contrast_on, correction_on):
    b = z.shape[0]
    pn = normalize_rows(protos)
    znorm = np.linalg.norm(z, axis=1)
    zsafe = np.where(znorm < EPS_ZERO, 1.0, znorm)
    zn = z / zsafe[:, None]
    zn[znorm < EPS_ZERO] = 0.0

    craw = zn @ pn.T
    c = np.clip(craw, 0.0, 1.0)
    s = c ** alpha
    with np.errstate(divide="ignore"):
        dsdc = np.where(c > 0.0, alpha * c ** (alpha - 1.0), 0.0)

    pos = pclass[None, :] == zy[:, None]
    npos = pos.sum(axis=1)
    has_pos = npos > 0

    loss = np.zeros(b)
    dlds = np.zeros_like(s)
    if contrast_on:
        a = s / tau
        amax = a.max(axis=1)
        ea = np.exp(a - amax[:, None])
        den = ea.sum(axis=1)
        num = np.where(pos, ea, 0.0).sum(axis=1)
        num_safe = np.where(has_pos, num, 1.0)
        loss += np.where(has_pos, np.log(den) - np.log(num_safe), 0.0)
        grad = ea / den[:, None] - np.where(pos, ea, 0.0) / num_safe[:, None]
        dlds += np.where(has_pos[:, None], grad / tau, 0.0)
    if correction_on:
        r = np.where(pos, s, 0.0).sum(axis=1) - npos
        loss += np.where(has_pos, np.abs(r), 0.0)
        dlds += np.where(pos & has_pos[:, None], np.sign(r)[:, None], 0.0)

    w = dlds * dsdc
    proj = (w * craw).sum(axis=1)
    dz = (w @ pn - proj[:, None] * zn) / zsafe[:, None]
    dz[znorm < EPS_ZERO] = 0.0
    loss = np.where(has_pos, loss, 0.0)
    return loss, dz


# ---------------------------------------------------------------------------
# Loop implementations (compiled with numba when that backend is active)
# ---------------------------------------------------------------------------

def _pairwise_cosine_loops(x):
    n, d = x.shape
    xn = np.empty((n, d))
    for i in range(n):
        nrm = 0.0
        for t in range(d):
            nrm += x[i, t] * x[i, t]
        nrm = np.sqrt(nrm)
        if nrm < EPS_ZERO:
            for t in range(d):
                xn[i, t] = 0.0
        else:
            for t in range(d):
                xn[i, t] = x[i, t] / nrm
    sim = np.empty((n, n))
    for i in range(n):
        sim[i, i] = 0.0
        for j in range(i + 1):
            acc = 0.0
            for t in range(d):
                acc += xn[i, t] * xn[j, t]
            sim[i, j] = acc
            sim[j, i] = acc
    return sim


def _first_neighbor_labels_loops(sim):
    n = sim.shape[0]
    out = np.zeros(n, dtype=np.int64)
    if n == 1:
        return out
    nn = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = -np.inf
        bj = -1
        for j in range(n):
            if j != i and sim[i, j] > best:
                best = sim[i, j]
                bj = j
        nn[i] = bj
    parent = np.arange(n)
    for i in range(n):
        ri = i
        while parent[ri] != ri:
            parent[ri] = parent[parent[ri]]
            ri = parent[ri]
        rj = nn[i]
        while parent[rj] != rj:
            parent[rj] = parent[parent[rj]]
            rj = parent[rj]
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj
    lab = np.full(n, -1, dtype=np.int64)
    nxt = 0
    for i in range(n):
        r = i
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        if lab[r] < 0:
            lab[r] = nxt
            nxt += 1
        out[i] = lab[r]
    return out


def _proto_loss_batch_loops(z, zy, protos, pclass, alpha, tau, contrast_on, correction_on):
    b, d = z.shape
    p = protos.shape[0]
    pn = np.empty((p, d))
    for j in range(p):
        nrm = 0.0
        for t in range(d):
            nrm += protos[j, t] * protos[j, t]
        nrm = np.sqrt(nrm)
        if nrm < EPS_ZERO:
            for t in range(d):
                pn[j, t] = 0.0
        else:
            for t in range(d):
                pn[j, t] = protos[j, t] / nrm

    loss = np.zeros(b)
    dz = np.zeros((b, d))
    zn = np.empty(d)
    craw = np.empty(p)
    s = np.empty(p)
    dsdc = np.empty(p)
    dlds = np.empty(p)
    for i in range(b):
        znrm = 0.0
        for t in range(d):
            znrm += z[i, t] * z[i, t]
        znrm = np.sqrt(znrm)
        zero_z = znrm < EPS_ZERO
        for t in range(d):
            zn[t] = 0.0 if zero_z else z[i, t] / znrm

        npos = 0
        for j in range(p):
            acc = 0.0
            for t in range(d):
                acc += zn[t] * pn[j, t]
            craw[j] = acc
            cc = min(max(acc, 0.0), 1.0)
            s[j] = cc ** alpha
            dsdc[j] = alpha * cc ** (alpha - 1.0) if cc > 0.0 else 0.0
            dlds[j] = 0.0
            if pclass[j] == zy[i]:
                npos += 1
        if npos == 0:
            continue

        li = 0.0
        if contrast_on:
            amax = -np.inf
            for j in range(p):
                if s[j] / tau > amax:
                    amax = s[j] / tau
            den = 0.0
            num = 0.0
            for j in range(p):
                e = np.exp(s[j] / tau - amax)
                den += e
                if pclass[j] == zy[i]:
                    num += e
            li += np.log(den) - np.log(num)
            for j in range(p):
                e = np.exp(s[j] / tau - amax)
                g = e / den
                if pclass[j] == zy[i]:
                    g -= e / num
                dlds[j] += g / tau
        if correction_on:
            r = 0.0
            for j in range(p):
                if pclass[j] == zy[i]:
                    r += s[j]
            r -= npos
            li += abs(r)
            sg = 1.0 if r > 0.0 else (-1.0 if r < 0.0 else 0.0)
            for j in range(p):
                if pclass[j] == zy[i]:
                    dlds[j] += sg
        loss[i] = li

        if not zero_z:
            proj = 0.0
            for j in range(p):
                w = dlds[j] * dsdc[j]
                proj += w * craw[j]
                for t in range(d):
                    dz[i, t] += w * pn[j, t]
            for t in range(d):
                dz[i, t] = (dz[i, t] - proj * zn[t]) / znrm
    return loss, dz


_LOOP_IMPLS = {
    "pairwise_cosine": _pairwise_cosine_loops,
    "first_neighbor_labels": _first_neighbor_labels_loops,
    "proto_loss_batch": _proto_loss_batch_loops,
}
_NUMPY_IMPLS = {
    "pairwise_cosine": _pairwise_cosine_np,
    "first_neighbor_labels": _first_neighbor_labels_np,
    "proto_loss_batch": _proto_loss_batch_np,
}

_numba_compiled: dict | None = None


def numba_impls() -> dict:
    """Compile (once) and return the numba kernel set; raises if unavailable."""
    global _numba_compiled
    if _numba_compiled is None:
        from numba import njit

        _numba_compiled = {
            name: njit(cache=True)(fn) for name, fn in _LOOP_IMPLS.items()
        }
    return _numba_compiled


def numpy_impls() -> dict:
    return dict(_NUMPY_IMPLS)


_active = numba_impls() if BACKEND == "numba" else numpy_impls()


def pairwise_cosine(x: np.ndarray) -> np.ndarray:
    """(n, n) cosine similarity matrix; near-zero-norm rows similar to nothing."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _active["pairwise_cosine"](x)


def first_neighbor_labels(sim: np.ndarray) -> np.ndarray:
    """Dense component labels of the first-neighbor relation on a similarity
    matrix (neighbor = off-diagonal argmax, ties to the lowest index), labelled
    in order of first appearance."""
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    return _active["first_neighbor_labels"](sim)


def proto_loss_batch(
    z: np.ndarray,
    zy: np.ndarray,
    protos: np.ndarray,
    pclass: np.ndarray,
    alpha: float,
    tau: float,
    contrast_on: bool,
    correction_on: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample prototype loss and its gradient with respect to the features.

    Returns ``(loss, dz)`` with shapes (B,) and (B, D). Prototypes are treated
    as constants. Samples whose class has no prototype in ``pclass`` contribute
    zero loss and zero gradient; callers own the decision of whether that is a
    bootstrap case or an error.
    """
    z = np.ascontiguousarray(z, dtype=np.float64)
    zy = np.ascontiguousarray(zy, dtype=np.int64)
    protos = np.ascontiguousarray(protos, dtype=np.float64)
    pclass = np.ascontiguousarray(pclass, dtype=np.int64)
    return _active["proto_loss_batch"](
        z, zy, protos, pclass, float(alpha), float(tau), bool(contrast_on), bool(correction_on)
    )
