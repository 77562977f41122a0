"""Forward-backward inference on the trellis DAG.

Two interchangeable engines:

* the layered engine (`forward_pass`/`backward_pass`) sweeps the trellis
  layer arrays in linear domain with per-layer rescaling, which is both
  fast and safe against underflow;
* a reference edge sweep (`forward_pass_edges`/`backward_pass_edges`) walks
  the materialised edge list once in log domain with log-sum-exp.

Both yield per-vertex log values; the tests hold them to each other and to
exhaustive enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTrellisError

NEG_INF = -np.inf

ROW_TOL = 1e-9


@dataclass
class FBValues:
    """Per-vertex log values of one sweep direction over the full cell grid.

    log_value[origin] = 0 for a forward sweep; log_value[s] = 0 on absorbing
    vertices for a backward sweep. Unreachable cells carry -inf.
    """
    log_value: np.ndarray
    loglik: float
    direction: str
    n_edge_visits: int | None = None


@dataclass
class PosteriorTable:
    """Per message position l, a distribution over message symbols, plus the
    argmax hard estimate (ties resolved to the lowest symbol index)."""
    probs: np.ndarray           # (L, |M|), rows sum to 1
    hard: np.ndarray            # (L,), int
    log_likelihood: float | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.hard = np.asarray(self.hard, dtype=np.int16)
        bad = np.abs(self.probs.sum(axis=1) - 1.0).max() if self.probs.size else 0.0
        if bad > ROW_TOL:
            raise ValueError(f"posterior rows must sum to 1 (off by {bad:.3g})")

    @classmethod
    def from_rows(cls, rows, log_likelihood=None):
        rows = np.asarray(rows, dtype=float)
        sums = rows.sum(axis=1, keepdims=True)
        if (sums <= 0).any():
            raise InfeasibleTrellisError("posterior row with no probability mass")
        probs = rows / sums
        return cls(probs, np.argmax(probs, axis=1), log_likelihood)


def _flatten_sweep(trellis, sweep):
    off = trellis.vertex_table()["offsets"]
    out = np.full(int(off[-1]), NEG_INF)
    for t, arr in enumerate(sweep.layers):
        flat = arr.ravel()
        seg = out[off[t]:off[t + 1]]
        pos = flat > 0
        seg[pos] = np.log(flat[pos]) + sweep.scales[t]
    return out


def forward_pass(trellis):
    """F(s): summed weight of all origin-to-s paths, as per-vertex logs."""
    sweep = trellis.forward(store=True)
    return FBValues(_flatten_sweep(trellis, sweep), sweep.loglik, "forward")


def backward_pass(trellis):
    """B(s): summed weight of all s-to-absorbing paths, as per-vertex logs."""
    sweep = trellis.backward(store=True)
    return FBValues(_flatten_sweep(trellis, sweep), sweep.loglik, "backward")


def forward_pass_edges(trellis):
    """Reference forward sweep over the materialised edges in log domain.

    Edges are processed in topological order of their head vertex, each
    exactly once.
    """
    heads, tails, ws, _, _, _ = trellis.edge_table()
    logw = np.log(ws)
    logf = np.full(trellis.num_cells, NEG_INF)
    logf[trellis.origin] = 0.0
    visits = 0
    for i in range(len(heads)):  # heads are sorted at construction
        h = heads[i]
        if logf[h] != NEG_INF:
            t = tails[i]
            logf[t] = np.logaddexp(logf[t], logf[h] + logw[i])
        visits += 1
    absorbing = trellis.absorbing_vertices()
    vals = logf[absorbing]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise InfeasibleTrellisError("no forward mass reaches an absorbing vertex")
    loglik = float(_logsumexp(vals))
    return FBValues(logf, loglik, "forward", n_edge_visits=visits)


def backward_pass_edges(trellis):
    """Reference backward sweep, mirroring `forward_pass_edges`."""
    heads, tails, ws, _, _, _ = trellis.edge_table()
    logw = np.log(ws)
    logb = np.full(trellis.num_cells, NEG_INF)
    logb[trellis.absorbing_vertices()] = 0.0
    visits = 0
    for i in range(len(heads) - 1, -1, -1):
        t = tails[i]
        if logb[t] != NEG_INF:
            h = heads[i]
            logb[h] = np.logaddexp(logb[h], logb[t] + logw[i])
        visits += 1
    if logb[trellis.origin] == NEG_INF:
        raise InfeasibleTrellisError("no backward mass reaches the origin")
    return FBValues(logb, float(logb[trellis.origin]), "backward", n_edge_visits=visits)


def _logsumexp(v):
    m = v.max()
    return m + math.log(np.exp(v - m).sum())


def vertex_posterior(trellis, f, b, vertex):
    """log Pr(vertex on the true path, all traces) = F(s) + B(s) in logs."""
    return float(f.log_value[vertex] + b.log_value[vertex])


def sequence_log_likelihood(trellis, f):
    """log Pr(all traces): log-sum of forward values over absorbing vertices."""
    vals = f.log_value[trellis.absorbing_vertices()]
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return NEG_INF
    return float(_logsumexp(vals))


def message_posteriors(trellis, f, b):
    """Exact symbol posteriors read at each cycle's last post layer (the
    final intra-edge-free stage carrying that message symbol)."""
    off = trellis.vertex_table()["offsets"]
    mz = trellis.encoder.msg_size
    rows = np.empty((trellis.L, mz))
    for l, t in enumerate(trellis.post_read_layer):
        lay = trellis.layers[t]
        seg = f.log_value[off[t]:off[t + 1]] + b.log_value[off[t]:off[t + 1]]
        seg = seg.reshape(lay.shape)
        joint = seg.reshape(lay.n_combo, -1)
        row = np.full(mz, NEG_INF)
        for m in range(mz):
            vals = joint[lay.cm == m].ravel()
            vals = vals[np.isfinite(vals)]
            if vals.size:
                row[m] = _logsumexp(vals)
        if np.all(np.isinf(row)):
            raise InfeasibleTrellisError(f"no posterior mass at message position {l}")
        row -= row.max()
        rows[l] = np.exp(row)
    loglik = sequence_log_likelihood(trellis, f) if f.direction == "forward" else None
    return PosteriorTable.from_rows(rows, loglik)


def compute_posteriors(trellis):
    """One-call exact inference with the layered engine: posteriors plus the
    sequence log-likelihood, without materialising per-vertex values."""
    fs = trellis.forward(store=True)
    bs = trellis.backward(store=True)
    mz = trellis.encoder.msg_size
    rows = np.empty((trellis.L, mz))
    for l, t in enumerate(trellis.post_read_layer):
        lay = trellis.layers[t]
        joint = (fs.layers[t] * bs.layers[t]).reshape(lay.n_combo, -1).sum(axis=1)
        row = np.bincount(lay.cm, weights=joint, minlength=mz)
        rows[l] = row
    return PosteriorTable.from_rows(rows, fs.loglik)


def cut_totals(trellis, fs=None, bs=None):
    """log sum of F(s)B(s) over each intra-edge-free layer; conservation of
    path mass makes these equal across layers."""
    if fs is None:
        fs = trellis.forward(store=True)
    if bs is None:
        bs = trellis.backward(store=True)
    totals = []
    for t, lay in enumerate(trellis.layers):
        if lay.kind == "ids":
            continue
        tot = float((fs.layers[t] * bs.layers[t]).sum())
        if tot <= 0:
            totals.append((t, NEG_INF))
        else:
            totals.append((t, math.log(tot) + fs.scales[t] + bs.scales[t]))
    return totals
