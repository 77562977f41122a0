"""Compiled kernels for single-trace trellises of single-state encoders.

The layer sweeps in `trellis` are numpy-call bound when the blocks are tiny
(a handful of message symbols by a drift window). For encoders with one
state (identity, marker-repeat), the whole trellis packs into flat arrays:
per layer a kind tag, cycle, pointer-window start and width, and for the
channel-event layers a substitute/correct weight table. The forward and
backward recursions, and both halves of the belief-exchange sweep, then run
as numba loops.

Everything here is an execution detail: results match the reference layer
engine (the tests pin them to each other and to exhaustive enumeration).
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAVE_NUMBA = False

    def njit(*a, **k):
        def deco(f):
            return f
        return deco

from .errors import InfeasibleTrellisError

K_BOUNDARY, K_INPUT, K_IDS, K_POST = 0, 1, 2, 3


class PackedTrellis:
    """Flat-array form of one trace's trellis (single-state encoder)."""

    __slots__ = ("kind", "cyc", "lo", "wd", "widx", "wsub", "prior", "p_del",
                 "c_ins", "mz", "wmax", "R", "T", "post_read", "input_read")


def pack_single_trace(encoder, trace, params, prior, delta, offset=None):
    """Build the packed layer schedule directly from the encoder tables."""
    if encoder.n_states != 1:
        raise ValueError("packed form needs a single-state encoder")
    y = np.asarray(trace, dtype=np.int8)
    R = len(y)
    N = encoder.N
    L = encoder.L
    A = encoder.alphabet.size
    mz = encoder.msg_size

    # emissions per (cycle, symbol, message), with the scramble offset folded in
    emit = []
    pos = 0
    for l in range(L):
        u = encoder.emission_counts[l]
        per_m = np.empty((mz, u), dtype=np.int32)
        for m in range(mz):
            _, em = encoder.transition(0, m, l)
            per_m[m] = em
        if offset is not None:
            per_m = (per_m + np.asarray(offset[pos:pos + u])[None, :]) % A
        emit.append(per_m)
        pos += u

    kinds, cycs, npos_list, widx = [], [], [], []
    post_read = np.full(L, -1, dtype=np.int32)
    input_read = np.full(L, -1, dtype=np.int32)
    ids_xeff = []  # per ids layer: (mz,) transmitted symbol by message

    kinds.append(K_BOUNDARY); cycs.append(-1); npos_list.append(0); widx.append(-1)
    npos = 0
    for l in range(L):
        input_read[l] = len(kinds)
        kinds.append(K_INPUT); cycs.append(l); npos_list.append(npos); widx.append(-1)
        u = encoder.emission_counts[l]
        for c in range(u):
            widx.append(len(ids_xeff))
            ids_xeff.append(emit[l][:, c])
            kinds.append(K_IDS); cycs.append(l); npos_list.append(npos + c + 1)
            if c == u - 1:
                post_read[l] = len(kinds)
            kinds.append(K_POST); cycs.append(l); npos_list.append(npos + c + 1)
            widx.append(-1)
        npos += u
        kinds.append(K_BOUNDARY); cycs.append(-1); npos_list.append(npos); widx.append(-1)

    T = len(kinds)
    kind_arr = np.asarray(kinds, dtype=np.int8)
    npos_arr = np.asarray(npos_list, dtype=np.float64)
    if delta is None:
        lo = np.zeros(T, dtype=np.int64)
        hi = np.full(T, R, dtype=np.int64)
    else:
        centers = np.floor(npos_arr * R / N + 0.5).astype(np.int64)
        lo = np.maximum(0, centers - delta)
        hi = np.minimum(R, centers + delta)
    wd = hi - lo + 1
    wmax = int(wd.max())

    ids_layers = np.flatnonzero(kind_arr == K_IDS)
    n_ids = len(ids_layers)
    p = params
    smiss = p.p_sub / (A - 1) if A > 1 else 0.0
    if n_ids:
        jmat = lo[ids_layers, None] + np.arange(wmax)[None, :]
        valid = (jmat <= np.minimum(hi[ids_layers], R - 1)[:, None]) & (jmat <= R - 1)
        ysel = y.astype(np.int32)[np.clip(jmat, 0, max(R - 1, 0))] if R else jmat * 0 - 1
        xeff = np.stack(ids_xeff)  # (n_ids, mz)
        match = ysel[:, None, :] == xeff[:, :, None]
        wsub = np.where(valid[:, None, :],
                        np.where(match, p.p_cor, smiss), 0.0)
    else:
        wsub = np.zeros((0, mz, wmax))

    pk = PackedTrellis()
    pk.kind = kind_arr
    pk.cyc = np.asarray(cycs, dtype=np.int32)
    pk.lo = lo.astype(np.int32)
    pk.wd = wd.astype(np.int32)
    pk.widx = np.asarray(widx, dtype=np.int32)
    pk.wsub = wsub
    pk.prior = np.asarray(prior, dtype=np.float64)
    pk.p_del = float(p.p_del)
    pk.c_ins = float(p.p_ins / A)
    pk.mz = mz
    pk.wmax = wmax
    pk.R = R
    pk.T = T
    pk.post_read = post_read
    pk.input_read = input_read
    return pk


@njit(cache=True)
def _advance_fwd(kind_t, kind_prev, cyc_t, off, wd_t, wd_prev, cur, nxt,
                 wsub_prev, prior, p_del, c_ins, mz):
    """One forward layer step; `cur` and `nxt` are (mz, wmax) blocks
    (boundary blocks live in row 0). Returns the block maximum."""
    for m in range(mz):
        for j in range(nxt.shape[1]):
            nxt[m, j] = 0.0
    if kind_t == K_INPUT:  # boundary -> input
        for m in range(mz):
            pm = prior[cyc_t, m]
            for j in range(wd_t):
                js = j + off
                if 0 <= js < wd_prev:
                    nxt[m, j] = pm * cur[0, js]
    elif kind_t == K_BOUNDARY:  # post -> boundary (clear)
        for j in range(wd_t):
            js = j + off
            if 0 <= js < wd_prev:
                acc = 0.0
                for m in range(mz):
                    acc += cur[m, js]
                nxt[0, j] = acc
    elif kind_prev == K_IDS:  # ids -> (post | next ids? never: ids feeds post)
        for m in range(mz):
            for j in range(wd_t):
                js = j + off
                acc = 0.0
                if 0 <= js < wd_prev:
                    acc += p_del * cur[m, js]
                js1 = j + off - 1
                if 0 <= js1 < wd_prev:
                    acc += wsub_prev[m, js1] * cur[m, js1]
                nxt[m, j] = acc
    else:  # input -> ids, post -> ids: weight-1 identity
        for m in range(mz):
            for j in range(wd_t):
                js = j + off
                if 0 <= js < wd_prev:
                    nxt[m, j] = cur[m, js]
    if kind_t == K_IDS and c_ins > 0.0:
        for m in range(mz):
            for j in range(1, wd_t):
                nxt[m, j] += c_ins * nxt[m, j - 1]
    s = 0.0
    for m in range(mz):
        for j in range(wd_t):
            if nxt[m, j] > s:
                s = nxt[m, j]
    return s


@njit(cache=True)
def _advance_bwd(kind_t, kind_next, cyc_next, off, wd_t, wd_next, nxt, cur,
                 wsub_t, prior, p_del, c_ins, mz):
    """One backward layer step: fill `cur` (layer t) from `nxt` (layer t+1)
    using layer t's outgoing edges. `off` = lo[t] - lo[t+1]."""
    for m in range(mz):
        for j in range(cur.shape[1]):
            cur[m, j] = 0.0
    if kind_t == K_BOUNDARY:  # input edges out
        for j in range(wd_t):
            js = j + off
            if 0 <= js < wd_next:
                acc = 0.0
                for m in range(mz):
                    acc += prior[cyc_next, m] * nxt[m, js]
                cur[0, j] = acc
    elif kind_t == K_IDS:  # deletion / substitute-correct out, then insertions
        for m in range(mz):
            for j in range(wd_t):
                acc = 0.0
                js = j + off
                if 0 <= js < wd_next:
                    acc += p_del * nxt[m, js]
                js1 = j + 1 + off
                if 0 <= js1 < wd_next:
                    acc += wsub_t[m, j] * nxt[m, js1]
                cur[m, j] = acc
        if c_ins > 0.0:
            for m in range(mz):
                for j in range(wd_t - 2, -1, -1):
                    cur[m, j] += c_ins * cur[m, j + 1]
    elif kind_next == K_BOUNDARY:  # last post of the cycle: clear edges out
        for m in range(mz):
            for j in range(wd_t):
                js = j + off
                if 0 <= js < wd_next:
                    cur[m, j] = nxt[0, js]
    else:  # input/post identity out
        for m in range(mz):
            for j in range(wd_t):
                js = j + off
                if 0 <= js < wd_next:
                    cur[m, j] = nxt[m, js]
    s = 0.0
    for m in range(mz):
        for j in range(wd_t):
            if cur[m, j] > s:
                s = cur[m, j]
    return s


@njit(cache=True)
def _fwd_pass(kind, cyc, lo, wd, widx, wsub, prior, p_del, c_ins, mz, R, store):
    """Full forward pass storing every rescaled block; returns (status,
    total log scale, log of the absorbing mass)."""
    T = kind.shape[0]
    wmax = store.shape[2]
    store[0, :, :] = 0.0
    store[0, 0, 0] = 1.0
    logtot = 0.0
    dummy = np.zeros((1, 1))
    for t in range(1, T):
        wp = wsub[widx[t - 1]] if widx[t - 1] >= 0 else dummy
        s = _advance_fwd(kind[t], kind[t - 1], cyc[t], lo[t] - lo[t - 1],
                         wd[t], wd[t - 1], store[t - 1], store[t], wp,
                         prior, p_del, c_ins, mz)
        if s <= 0.0:
            return t, 0.0, 0.0
        for m in range(mz):
            for j in range(wmax):
                store[t, m, j] /= s
        logtot += math.log(s)
    jf = R - lo[T - 1]
    tot = store[T - 1, 0, jf]
    if tot <= 0.0:
        return T, 0.0, 0.0
    return -1, logtot, math.log(tot)


@njit(cache=True)
def _bwd_pass(kind, cyc, lo, wd, widx, wsub, prior, p_del, c_ins, mz, R, store):
    T = kind.shape[0]
    wmax = store.shape[2]
    store[T - 1, :, :] = 0.0
    store[T - 1, 0, R - lo[T - 1]] = 1.0
    logtot = 0.0
    dummy = np.zeros((1, 1))
    for t in range(T - 2, -1, -1):
        wp = wsub[widx[t]] if widx[t] >= 0 else dummy
        s = _advance_bwd(kind[t], kind[t + 1], cyc[t + 1], lo[t] - lo[t + 1],
                         wd[t], wd[t + 1], store[t + 1], store[t], wp,
                         prior, p_del, c_ins, mz)
        if s <= 0.0:
            return t, 0.0, 0.0
        for m in range(mz):
            for j in range(wmax):
                store[t, m, j] /= s
        logtot += math.log(s)
    tot = store[0, 0, 0]
    if tot <= 0.0:
        return T, 0.0, 0.0
    return -1, logtot, math.log(tot)


@njit(cache=True)
def _pow0(x, b):
    if b == 0.0:
        return 1.0
    if x <= 0.0:
        return 0.0
    return x ** b


@njit(cache=True)
def _read_and_update(fronts, stale, wds, mz, K, beta_b, beta_e, beta_i, beta_o,
                     urow, do_update):
    """Combine beliefs at a read layer, write the normalised estimate into
    `urow`, and rescale the fronts by their new priors. Returns 0, or 1 when
    a belief row lost all mass."""
    V = np.zeros((K, mz))
    for k in range(K):
        tot = 0.0
        for m in range(mz):
            acc = 0.0
            for j in range(wds[k]):
                acc += fronts[k, m, j] * _pow0(stale[k, m, j], beta_b)
            V[k, m] = acc
            tot += acc
        if tot <= 0.0:
            return 1
        for m in range(mz):
            V[k, m] /= tot
    tot = 0.0
    for m in range(mz):
        c = 1.0
        for k in range(K):
            c *= V[k, m]
        urow[m] = _pow0(c, beta_o)
        tot += urow[m]
    if tot <= 0.0:
        return 1
    for m in range(mz):
        urow[m] /= tot
    if do_update:
        for k in range(K):
            gmax = 0.0
            g = np.empty(mz)
            for m in range(mz):
                val = _pow0(V[k, m], beta_i)
                for kk in range(K):
                    if kk != k:
                        val *= _pow0(V[kk, m], beta_e)
                g[m] = val
                if val > gmax:
                    gmax = val
            if gmax <= 0.0:
                return 1
            for m in range(mz):
                gm = g[m] / gmax
                for j in range(wds[k]):
                    fronts[k, m, j] *= gm
    return 0


@njit(cache=True)
def _tbma_fwd_sweep(kind, cyc, los, wds, widx, wsubs, priors, p_del, c_ins,
                    mz, binit, post_read, half, beta_b, beta_e, beta_i, beta_o,
                    rows_out):
    """Lockstep forward sweep over K packed trellises, estimating cycles
    0..half-1. los/wds are (K, T); wsubs (K, n_ids, mz, wmax); binit the
    stored backward blocks (K, T, mz, wmax)."""
    K = los.shape[0]
    wmax = binit.shape[3]
    fronts = np.zeros((K, mz, wmax))
    nxt = np.zeros((K, mz, wmax))
    for k in range(K):
        fronts[k, 0, 0] = 1.0
    if half == 0:
        return 0
    stop = post_read[half - 1]
    do_update = (beta_e != 0.0) or (beta_i != 0.0)
    read_idx = np.full(stop + 1, -1, dtype=np.int64)
    for l in range(half):
        read_idx[post_read[l]] = l
    dummy = np.zeros((1, 1))
    for t in range(1, stop + 1):
        for k in range(K):
            wp = wsubs[k, widx[t - 1]] if widx[t - 1] >= 0 else dummy
            s = _advance_fwd(kind[t], kind[t - 1], cyc[t],
                             los[k, t] - los[k, t - 1], wds[k, t],
                             wds[k, t - 1], fronts[k], nxt[k], wp,
                             priors, p_del, c_ins, mz)
            if s <= 0.0:
                return 1
            for m in range(mz):
                for j in range(wmax):
                    fronts[k, m, j] = nxt[k, m, j] / s
        l = read_idx[t]
        if l >= 0:
            bad = _read_and_update(fronts, binit[:, t], wds[:, t], mz, K,
                                   beta_b, beta_e, beta_i, beta_o,
                                   rows_out[l], do_update)
            if bad:
                return 1
    return 0


@njit(cache=True)
def _tbma_bwd_sweep(kind, cyc, los, wds, widx, wsubs, priors, p_del, c_ins,
                    mz, finit, input_read, half, L, R, beta_b, beta_e, beta_i,
                    beta_o, rows_out):
    """Mirrored sweep updating the backward values, estimating cycles
    half..L-1 from the trellis end."""
    K = los.shape[0]
    T = kind.shape[0]
    wmax = finit.shape[3]
    fronts = np.zeros((K, mz, wmax))
    nxt = np.zeros((K, mz, wmax))
    for k in range(K):
        fronts[k, 0, R[k] - los[k, T - 1]] = 1.0
    if half >= L:
        return 0
    stop = input_read[half]
    do_update = (beta_e != 0.0) or (beta_i != 0.0)
    read_idx = np.full(T, -1, dtype=np.int64)
    for l in range(half, L):
        read_idx[input_read[l]] = l
    dummy = np.zeros((1, 1))
    for t in range(T - 2, stop - 1, -1):
        for k in range(K):
            wp = wsubs[k, widx[t]] if widx[t] >= 0 else dummy
            s = _advance_bwd(kind[t], kind[t + 1], cyc[t + 1],
                             los[k, t] - los[k, t + 1], wds[k, t],
                             wds[k, t + 1], fronts[k], nxt[k], wp,
                             priors, p_del, c_ins, mz)
            if s <= 0.0:
                return 1
            for m in range(mz):
                for j in range(wmax):
                    fronts[k, m, j] = nxt[k, m, j] / s
        l = read_idx[t]
        if l >= 0:
            bad = _read_and_update(fronts, finit[:, t], wds[:, t], mz, K,
                                   beta_b, beta_e, beta_i, beta_o,
                                   rows_out[l], do_update)
            if bad:
                return 1
    return 0


class SingleTraceRun:
    """Packed trellis plus its stored forward and backward blocks."""

    __slots__ = ("pk", "f", "b", "loglik")

    def __init__(self, pk):
        self.pk = pk
        self.f = np.zeros((pk.T, pk.mz, pk.wmax))
        self.b = np.zeros((pk.T, pk.mz, pk.wmax))
        st, logtot, logabs = _fwd_pass(pk.kind, pk.cyc, pk.lo, pk.wd, pk.widx,
                                       pk.wsub, pk.prior, pk.p_del, pk.c_ins,
                                       pk.mz, pk.R, self.f)
        if st >= 0:
            raise InfeasibleTrellisError(f"forward mass vanished at layer {st}")
        self.loglik = logtot + logabs
        st, _, _ = _bwd_pass(pk.kind, pk.cyc, pk.lo, pk.wd, pk.widx, pk.wsub,
                             pk.prior, pk.p_del, pk.c_ins, pk.mz, pk.R, self.b)
        if st >= 0:
            raise InfeasibleTrellisError(f"backward mass vanished at layer {st}")

    def posterior_rows(self):
        pk = self.pk
        rows = np.empty((len(pk.post_read), pk.mz))
        for l, t in enumerate(pk.post_read):
            rows[l] = (self.f[t] * self.b[t]).sum(axis=1)
        return rows


def supports(encoder, engine="auto"):
    return HAVE_NUMBA and engine in ("auto", "fast") and encoder.n_states == 1


def tbma_rows(encoder, traces, params, prior, delta, betas, offset=None):
    """Full belief-exchange run on packed trellises.

    Returns (rows, kept trace indices); infeasible traces are dropped.
    Raises InfeasibleTrellisError when nothing survives.
    """
    runs, kept = [], []
    for k, y in enumerate(traces):
        pk = pack_single_trace(encoder, y, params, prior, delta, offset)
        try:
            runs.append(SingleTraceRun(pk))
            kept.append(k)
        except InfeasibleTrellisError:
            continue
    if not runs:
        raise InfeasibleTrellisError("every trace was infeasible under the drift bound")
    K = len(runs)
    L = encoder.L
    mz = encoder.msg_size
    T = runs[0].pk.T
    wmax = max(r.pk.wmax for r in runs)
    los = np.stack([r.pk.lo for r in runs])
    wds = np.stack([r.pk.wd for r in runs])
    n_ids = runs[0].pk.wsub.shape[0]
    wsubs = np.zeros((K, n_ids, mz, wmax))
    binit = np.zeros((K, T, mz, wmax))
    finit = np.zeros((K, T, mz, wmax))
    for i, r in enumerate(runs):
        wsubs[i, :, :, :r.pk.wmax] = r.pk.wsub
        binit[i, :, :, :r.pk.wmax] = r.b
        finit[i, :, :, :r.pk.wmax] = r.f
    pk0 = runs[0].pk
    half = L // 2
    rows = np.empty((L, mz))
    R = np.array([r.pk.R for r in runs], dtype=np.int64)
    bad = _tbma_fwd_sweep(pk0.kind, pk0.cyc, los, wds, pk0.widx, wsubs,
                          pk0.prior, pk0.p_del, pk0.c_ins, mz, binit,
                          pk0.post_read, half, betas.beta_b, betas.beta_e,
                          betas.beta_i, betas.beta_o, rows)
    if not bad:
        bad = _tbma_bwd_sweep(pk0.kind, pk0.cyc, los, wds, pk0.widx, wsubs,
                              pk0.prior, pk0.p_del, pk0.c_ins, mz, finit,
                              pk0.input_read, half, L, R, betas.beta_b,
                              betas.beta_e, betas.beta_i, betas.beta_o, rows)
    if bad:
        raise InfeasibleTrellisError("belief mass vanished during the sweep")
    return rows, kept
