"""Joint non-linear trellis encoder merging a binary convolutional code,
the natural PAM mapper, and an M-ary FIR ISI channel.

The merged trellis keeps only binary delay elements: its state is the
window of the last ``nu + L`` input bits (newest bit at the LSB), giving
``2^nu * 2^L`` states instead of the ``2^nu * M^L`` of the joint
code-and-channel super trellis, with identical branch hypotheses.  Each
output bit plane runs through its own binary convolution with the channel
taps; the mod-2 adders are expressed through the floor decomposition
``x mod 2 = x - 2*floor(x/2)`` so the whole chain collapses into one
table of per-branch real hypotheses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conv_code import ConvCode, conv_encode
from .trellis import TrellisSpec


def gauss_mod(x: int, n: int) -> int:
    """x - n*floor(x/n), floor toward -infinity; result in [0, n)."""
    if n <= 0:
        raise ValueError("modulus must be positive")
    return x - n * math.floor(x / n)


def natural_map_bipolar(code_bits, M: int) -> int:
    """Map an n-bit vector (MSB first) to {-(M-1), ..., -1, +1, ..., M-1}."""
    if M < 2 or (M & (M - 1)) != 0:
        raise ValueError("alphabet size M must be a power of two")
    n = M.bit_length() - 1
    bits = np.asarray(code_bits, dtype=np.int64)
    if bits.size != n:
        raise ValueError(f"expected {n} bits for M={M}, got {bits.size}")
    x = 0
    for b in bits:
        x = (x << 1) | int(b)
    return 2 * x - (M - 1)


@dataclass(frozen=True)
class IsiResponse:
    """FIR channel response h[0..L]; L is the channel memory."""

    taps: np.ndarray
    minimum_phase: bool | None = None

    def __init__(self, taps, minimum_phase: bool | None = None):
        t = np.array(taps, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("need at least one channel tap")
        if t[0] == 0.0:
            raise ValueError("leading tap h[0] must be nonzero")
        t.setflags(write=False)
        object.__setattr__(self, "taps", t)
        object.__setattr__(self, "minimum_phase", minimum_phase)

    @property
    def L(self) -> int:
        return self.taps.size - 1

    def check_minimum_phase(self, tol: float = 1e-9) -> "IsiResponse":
        """Return a copy with the minimum-phase flag set from the zeros of h(z)."""
        if self.taps.size == 1:
            return IsiResponse(self.taps, minimum_phase=True)
        roots = np.roots(self.taps)
        ok = bool(np.all(np.abs(roots) <= 1.0 + tol))
        return IsiResponse(self.taps, minimum_phase=ok)

    def trimmed(self, threshold: float) -> "IsiResponse":
        """Drop trailing taps below threshold*max|taps|.

        Controls the trellis memory when whitening stretches the overall
        response with negligible tail taps; the discarded energy acts as
        a small model mismatch at the receivers.
        """
        if threshold <= 0:
            return self
        mags = np.abs(self.taps)
        keep = np.nonzero(mags >= threshold * mags.max())[0]
        n = int(keep[-1]) + 1 if keep.size else 1
        if n == self.taps.size:
            return self
        return IsiResponse(self.taps[:n]).check_minimum_phase()


def offset_constant(h: IsiResponse, M: int) -> float:
    """Constant folding the bipolar shift of the mapper behind the channel sum."""
    return -float(np.sum(h.taps)) * (M - 1)


def state_counts(nu: int, n: int, L: int) -> tuple[int, int, int]:
    """(super-trellis states, merged-trellis states, reduction factor)."""
    if nu < 0 or L < 0 or n < 1:
        raise ValueError("need nu, L >= 0 and n >= 1")
    z_std = 2**nu * 2 ** (n * L)
    z_md = 2**nu * 2**L
    gain = 2 ** (L * (n - 1))
    return z_std, z_md, gain


def edge_offsets(taps, M: int) -> np.ndarray:
    """Start-of-block hypothesis corrections for zero-padded channels.

    A window trellis started in the all-zero state implicitly assumes the
    pre-block symbol history was the all-zero-bits symbol -(M-1); a real
    channel is silent there.  ``offsets[k] = (M-1) * sum(h[k+1:])`` is the
    path-independent difference for the first L steps: encoders add it to
    table lookups, decoders subtract it from the first L observations.
    """
    taps = np.asarray(taps, dtype=np.float64)
    L = taps.size - 1
    # offsets[k] = (M-1) * sum_{l>k} h[l], k = 0..L-1
    return (M - 1) * np.cumsum(taps[:0:-1])[::-1] if L > 0 else np.zeros(0)


def serial_reference(code: ConvCode, h: IsiResponse, M: int, bits) -> np.ndarray:
    """Noiseless encoder -> mapper -> channel chain; one output per input bit.

    This is the plain serial concatenation and serves as the oracle the
    merged trellis is checked against.
    """
    n = M.bit_length() - 1
    if (1 << n) != M or code.n != n:
        raise ValueError("need n = log2(M) output bits per step")
    bits = np.asarray(bits, dtype=np.int64)
    coded = conv_encode(code, bits).reshape(-1, n)
    weights = 1 << np.arange(n - 1, -1, -1)
    symbols = 2 * (coded @ weights) - (M - 1)
    return np.convolve(symbols.astype(np.float64), h.taps)[: bits.size]


def _parity(x: np.ndarray) -> np.ndarray:
    """Bitwise parity of each element of an integer array."""
    x = x.copy()
    shift = 32
    while shift:
        x ^= x >> shift
        shift >>= 1
    return x & 1


@dataclass(frozen=True)
class MatchedTrellis:
    """Precomputed joint trellis: 2^(nu+L) bit-window states with real hypotheses."""

    trellis: TrellisSpec
    code: ConvCode
    isi: IsiResponse
    M: int
    offset: float

    @property
    def nu(self) -> int:
        return self.code.nu

    @property
    def L(self) -> int:
        return self.isi.L

    @property
    def num_states(self) -> int:
        return self.trellis.num_states

    def edge_offsets(self) -> np.ndarray:
        return edge_offsets(self.isi.taps, self.M)


def build_matched_trellis(code: ConvCode, h: IsiResponse, M: int) -> MatchedTrellis:
    """Merge code, mapper, and channel into one binary trellis.

    The branch hypothesis for bit window w is
    ``2 * sum_i 2^(n-1-i) * sum_l h[l] * v_i[k-l] + C`` where ``v_i`` are
    the mod-2 outputs of generator i over the window and C folds the
    bipolar offset of all taps.  Every branch equals the serial chain
    output for a bit history realizing that window.
    """
    n = M.bit_length() - 1
    if (1 << n) != M or code.n != n:
        raise ValueError("need n = log2(M) output bits per step")
    nu, L = code.nu, h.L
    mem = nu + L
    S = 1 << mem
    C = offset_constant(h, M)

    # Flat enumeration over windows w = (state << 1) | input; bit m = c[k-m].
    w = np.arange(S << 1, dtype=np.int64)
    hyp = np.zeros(w.size, dtype=np.float64)
    for i in range(n):
        g_lsb = code.taps_lsb_first(i)
        u_i = np.zeros(w.size, dtype=np.float64)
        for l in range(L + 1):
            u_i += h.taps[l] * _parity(w & (g_lsb << l))
        hyp += float(1 << (n - 1 - i)) * u_i
    hyp = 2.0 * hyp + C

    state = w >> 1
    inp = w & 1
    next_state = np.empty((S, 2), dtype=np.int64)
    next_state[state, inp] = ((state << 1) | inp) & (S - 1)
    outputs = np.empty((S, 2), dtype=np.float64)
    outputs[state, inp] = hyp

    spec = TrellisSpec(num_states=S, num_inputs=2,
                       next_state=next_state, outputs=outputs)
    return MatchedTrellis(trellis=spec, code=code, isi=h, M=M, offset=C)


def matched_encode(mt: MatchedTrellis, bits) -> np.ndarray:
    """Walk the joint trellis from the zero state; equals serial_reference."""
    bits = np.asarray(bits, dtype=np.int64)
    mem = mt.nu + mt.L
    # Window integers w[k] = sum_m c[k-m] 2^m are a sliding dot product.
    pow2 = (1 << np.arange(mem + 1)).astype(np.float64)
    w = np.convolve(bits.astype(np.float64), pow2)[: bits.size].astype(np.int64)
    out = mt.trellis.outputs.reshape(-1)[w].copy()
    # First L steps: the table assumes a -(M-1) symbol prehistory, the
    # physical channel is silent; add the path-independent difference.
    offs = mt.edge_offsets()
    k = min(mt.L, out.size)
    out[:k] += offs[:k]
    return out
