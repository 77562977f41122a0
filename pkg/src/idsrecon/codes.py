"""Deterministic finite-state inner encoders and random scrambling.

Every encoder exposes its FSM explicitly (state count, per-step emission
counts, and a transition map) because the trellis is built directly from
that interface. Message and codeword symbols share the channel alphabet.
"""

from __future__ import annotations

import numpy as np

from .alphabet import DNA, Alphabet, as_indices
from .errors import ConfigError

# GF(4) as GF(2)[x]/(x^2+x+1): addition is xor, multiplication below.
_GF4_MUL = np.array(
    [[0, 0, 0, 0],
     [0, 1, 2, 3],
     [0, 2, 3, 1],
     [0, 3, 1, 2]], dtype=np.int8)

# Arbitrary but fixed default generator pair for memory-3 rate-1/2 encoding;
# both taps include the current input so the codeword determines the message.
DEFAULT_GF4_GENERATORS = ((1, 2, 3, 1), (1, 1, 2, 3))


def default_generators(memory):
    """Fixed full-length generator pair for any memory: the memory-3 pair,
    extended by cycling the nonzero field elements."""
    cyc = (1, 2, 3)
    g1 = tuple(cyc[i % 3] for i in range(memory + 1))
    g2 = (1,) + tuple(cyc[i % 3] for i in range(memory))
    return g1, g2


class FSMEncoder:
    """Base class: deterministic (state, message symbol, step) -> (state, emissions).

    Subclasses set `n_states`, `L`, `N`, `emission_counts` (one entry per
    message step, summing to N) and implement `transition`. The initial
    state is always 0.
    """

    alphabet: Alphabet
    n_states: int
    L: int
    N: int
    emission_counts: tuple

    q_init = 0

    @property
    def msg_size(self):
        return self.alphabet.size

    @property
    def rate(self):
        return (self.L * np.log2(self.msg_size)) / (self.N * np.log2(self.alphabet.size))

    def transition(self, q, m, step):
        raise NotImplementedError

    def encode(self, message):
        message = as_indices(message, self.alphabet)
        if len(message) != self.L:
            raise ConfigError(f"message length {len(message)} != L={self.L}")
        out = np.empty(self.N, dtype=np.int8)
        q = self.q_init
        pos = 0
        for step, m in enumerate(message):
            q, emitted = self.transition(q, int(m), step)
            for s in emitted:
                out[pos] = s
                pos += 1
        return out

    def decode(self, codeword):
        """Invert the deterministic FSM by trying each input symbol per step."""
        codeword = as_indices(codeword, self.alphabet)
        if len(codeword) != self.N:
            raise ConfigError(f"codeword length {len(codeword)} != N={self.N}")
        msg = np.empty(self.L, dtype=np.int8)
        q = self.q_init
        pos = 0
        for step in range(self.L):
            u = self.emission_counts[step]
            segment = tuple(int(v) for v in codeword[pos:pos + u])
            hits = []
            for m in range(self.msg_size):
                q2, emitted = self.transition(q, m, step)
                if tuple(emitted) == segment:
                    hits.append((m, q2))
            if len(hits) != 1:
                raise ConfigError(f"codeword segment at step {step} is not uniquely decodable")
            m, q = hits[0]
            msg[step] = m
            pos += u
        return msg

    def encode_text(self, message):
        return self.alphabet.decode(self.encode(message))

    def __repr__(self):
        return f"<{type(self).__name__} {self.spec}>"


class IdentityEncoder(FSMEncoder):
    """Stateless rate-1 encoder: output equals input."""

    def __init__(self, n, alphabet=DNA):
        if n < 1:
            raise ConfigError("identity encoder needs N >= 1")
        self.alphabet = alphabet
        self.n_states = 1
        self.L = n
        self.N = n
        self.emission_counts = (1,) * n
        self.spec = f"identity:{n}"

    def transition(self, q, m, step):
        return 0, (m,)


class MarkerRepeatEncoder(FSMEncoder):
    """Copies the message and duplicates the symbol at r spaced marker
    positions, giving the decoder synchronisation anchors.

    Positions are 1-based; position n is a marker when n = floor(i*N/(r+1))
    for some i in 1..r, and then the codeword satisfies x[n+1] = x[n].
    Coinciding markers collapse, shrinking the repeat count accordingly.
    """

    def __init__(self, n, r, alphabet=DNA):
        if not 0 <= r < n:
            raise ConfigError(f"repeat count r={r} out of range for N={n}")
        self.alphabet = alphabet
        self.n_states = 1
        self.N = n
        markers = sorted({(i * n) // (r + 1) for i in range(1, r + 1)})
        self.marker_positions = tuple(markers)
        # position p (1-based) repeats its predecessor when p-1 is a marker
        is_copy = np.zeros(n + 1, dtype=bool)
        for mpos in markers:
            is_copy[mpos + 1] = True
        counts = []
        p = 1
        while p <= n:
            u = 1
            while p + u <= n and is_copy[p + u]:
                u += 1
            counts.append(u)
            p += u
        self.emission_counts = tuple(counts)
        self.L = len(counts)
        self.spec = f"mr:{n}:{r}"

    def transition(self, q, m, step):
        return 0, (m,) * self.emission_counts[step]


class ConvolutionalEncoderGF4(FSMEncoder):
    """Rate-1/2 quaternary convolutional encoder with optional puncturing.

    The state is the last `memory` inputs (4^memory states). Each step
    produces two base outputs o_j = g_j[0]*m + sum_i g_j[i]*state_i over
    GF(4); a periodic puncture mask then drops base outputs to raise the
    rate. Every step must keep at least one output.
    """

    def __init__(self, memory, msg_len, alphabet=DNA, generators=None,
                 puncture=None, codeword_len=None):
        if alphabet.size != 4:
            raise ConfigError("convolutional encoder is defined over a quaternary alphabet")
        if not 1 <= memory <= 8:
            raise ConfigError(f"unsupported memory {memory}")
        if msg_len < 1:
            raise ConfigError("msg_len must be >= 1")
        gens = generators if generators is not None else default_generators(memory)
        gens = tuple(tuple(int(c) for c in g) for g in gens)
        if len(gens) != 2 or any(len(g) != memory + 1 for g in gens):
            raise ConfigError("need two generators of length memory+1")
        if any(c < 0 or c > 3 for g in gens for c in g):
            raise ConfigError("generator coefficients must be GF(4) elements")
        if gens[0][0] == 0 and gens[1][0] == 0:
            raise ConfigError("at least one generator must tap the current input")
        self.alphabet = alphabet
        self.memory = memory
        self.generators = gens
        self.n_states = 4 ** memory
        self.L = msg_len

        base = 2 * msg_len
        if puncture is not None and codeword_len is not None:
            raise ConfigError("give either a puncture pattern or a codeword length, not both")
        if puncture is not None:
            pattern = tuple(bool(b) for b in puncture)
            if not pattern:
                raise ConfigError("puncture pattern must be nonempty")
            keep = np.array([pattern[i % len(pattern)] for i in range(base)], dtype=bool)
        elif codeword_len is not None:
            if not msg_len <= codeword_len <= base:
                raise ConfigError(f"codeword length {codeword_len} must lie in [{msg_len}, {base}]")
            extra = codeword_len - msg_len
            keep = np.zeros(base, dtype=bool)
            keep[0::2] = True  # first output of each step always kept
            second = np.array([(i + 1) * extra // msg_len > i * extra // msg_len
                               for i in range(msg_len)])
            keep[1::2] = second
        else:
            keep = np.ones(base, dtype=bool)
        counts = keep.reshape(msg_len, 2).sum(axis=1)
        if (counts == 0).any():
            raise ConfigError("puncturing removed every output of some step")
        self._keep = keep.reshape(msg_len, 2)
        self.emission_counts = tuple(int(c) for c in counts)
        self.N = int(counts.sum())
        self.spec = f"cc:{memory}:{self.L}/{self.N}"

    def _state_regs(self, q):
        regs = []
        for _ in range(self.memory):
            regs.append(q & 3)
            q >>= 2
        return regs  # regs[0] is the most recent input

    def transition(self, q, m, step):
        regs = self._state_regs(q)
        taps = [m] + regs
        outs = []
        for j, g in enumerate(self.generators):
            acc = 0
            for c, v in zip(g, taps):
                acc ^= _GF4_MUL[c, v]
            outs.append(int(acc))
        q_next = (m + ((q % (4 ** (self.memory - 1))) << 2)) if self.memory > 1 else m
        emitted = tuple(o for o, k in zip(outs, self._keep[step]) if k)
        return q_next, emitted


def identity_encoder(n, alphabet=DNA):
    return IdentityEncoder(n, alphabet)


def mr_encoder(n, r, alphabet=DNA):
    return MarkerRepeatEncoder(n, r, alphabet)


def cc_encoder(memory, msg_len, alphabet=DNA, generators=None, puncture=None,
               codeword_len=None):
    return ConvolutionalEncoderGF4(memory, msg_len, alphabet, generators,
                                   puncture, codeword_len)


def scramble(x, z, size):
    """Coordinate-wise addition mod `size`."""
    x = np.asarray(x)
    z = np.asarray(z)
    if x.shape != z.shape:
        raise ConfigError(f"scramble length mismatch: {x.shape} vs {z.shape}")
    return ((x.astype(np.int16) + z) % size).astype(np.int8)


def unscramble(x, z, size):
    """Coordinate-wise subtraction mod `size`; inverse of scramble."""
    x = np.asarray(x)
    z = np.asarray(z)
    if x.shape != z.shape:
        raise ConfigError(f"unscramble length mismatch: {x.shape} vs {z.shape}")
    return ((x.astype(np.int16) - z) % size).astype(np.int8)


def parse_encoder_spec(spec, alphabet=DNA, default_n=110):
    """Build an encoder from a config string.

    Forms: `identity:N`, `mr:N:r`, `cc:memory:rate[:N]`.
    """
    parts = str(spec).strip().split(":")
    kind = parts[0].lower()
    try:
        if kind == "identity" and len(parts) == 2:
            return identity_encoder(int(parts[1]), alphabet)
        if kind == "mr" and len(parts) == 3:
            return mr_encoder(int(parts[1]), int(parts[2]), alphabet)
        if kind == "cc" and len(parts) in (3, 4):
            memory = int(parts[1])
            rate = float(parts[2])
            n = int(parts[3]) if len(parts) == 4 else default_n
            if not 0.5 <= rate <= 1.0:
                raise ConfigError(f"cc rate {rate} outside [0.5, 1]")
            msg_len = round(n * rate)
            return cc_encoder(memory, msg_len, alphabet, codeword_len=n)
    except ValueError as e:
        raise ConfigError(f"bad encoder spec {spec!r}: {e}") from None
    raise ConfigError(f"unrecognised encoder spec {spec!r}")
