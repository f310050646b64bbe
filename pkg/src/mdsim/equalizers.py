"""Trellis receivers: full Viterbi MLSE, reduced-state sequence estimation
with per-survivor decision feedback, symbol-level DFSE, log-domain BCJR,
and soft-input Viterbi channel decoding.

All decoders use the squared Euclidean metric on real observations and a
shared prehistory convention: trellis tables assume the pre-block symbol
history is the all-zero-index symbol, and callers compensate the first L
observations of a zero-padded channel with
:func:`mdsim.matched_encoder.edge_offsets`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .conv_code import ConvCode, build_conv_trellis
from .matched_encoder import IsiResponse, MatchedTrellis, edge_offsets
from .trellis import TrellisSpec


class DecodeResult(NamedTuple):
    bits: np.ndarray
    metric: float


@dataclass(frozen=True)
class PartitionSpec:
    """Hyperstate partition keeping the r newest state bits."""

    kept_bits: int

    def __post_init__(self):
        if self.kept_bits < 0:
            raise ValueError("kept_bits must be >= 0")

    @property
    def num_hyperstates(self) -> int:
        return 1 << self.kept_bits


def compensate_edges(obs, taps, M: int) -> np.ndarray:
    """Subtract the silent-prehistory offsets from the first L observations."""
    obs = np.array(obs, dtype=np.float64)
    offs = edge_offsets(taps, M)
    k = min(offs.size, obs.size)
    obs[:k] -= offs[:k]
    return obs


def _padded_predecessors(trellis: TrellisSpec):
    """Predecessor lists padded to uniform width.

    Returns ``(pred_state, pred_input, valid)``; invalid slots must be
    masked to +inf (min-sum) or -inf (sum-product) by the caller.  Real
    predecessors are sorted ascending so argmin ties resolve to the lowest
    predecessor state index.
    """
    S, U = trellis.num_states, trellis.num_inputs
    buckets: list[list[tuple[int, int]]] = [[] for _ in range(S)]
    for s in range(S):
        for u in range(U):
            buckets[int(trellis.next_state[s, u])].append((s, u))
    fan = max(len(b) for b in buckets)
    ps = np.zeros((S, fan), dtype=np.int64)
    pu = np.zeros((S, fan), dtype=np.int64)
    valid = np.zeros((S, fan), dtype=bool)
    for ns, b in enumerate(buckets):
        b.sort()
        for j, (s, u) in enumerate(b):
            ps[ns, j], pu[ns, j], valid[ns, j] = s, u, True
    return ps, pu, valid


def viterbi_mlse(trellis: TrellisSpec, obs, *, start_state: int = 0,
                 end_state: int | None = 0) -> DecodeResult:
    """Minimum squared-distance sequence over a scalar-output trellis.

    Block decoding: known start state, full traceback at the end.  With
    ``end_state=None`` traceback starts from the best final metric.  Ties
    in add-compare-select go to the lower predecessor state index.
    """
    obs = np.asarray(obs, dtype=np.float64)
    T = obs.size
    S = trellis.num_states
    hyp = trellis.outputs
    ps, pu, valid = _padded_predecessors(trellis)
    pad = np.where(valid, 0.0, np.inf)

    pm = np.full(S, np.inf)
    pm[start_state] = 0.0
    back = np.empty((T, S), dtype=np.int16)
    rows = np.arange(S)
    for t in range(T):
        bm = (obs[t] - hyp) ** 2
        cand = pm[ps] + bm[ps, pu] + pad
        j = np.argmin(cand, axis=1)
        pm = cand[rows, j]
        back[t] = j

    if end_state is None:
        s = int(np.argmin(pm))
    else:
        s = int(end_state)
    metric = float(pm[s])
    bits = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        j = back[t, s]
        bits[t] = pu[s, j]
        s = int(ps[s, j])
    return DecodeResult(bits=bits, metric=metric)


def symbol_value(index, M: int):
    """Natural bipolar value of a symbol index: 2*index - (M-1)."""
    return 2 * np.asarray(index, dtype=np.float64) - (M - 1)


def build_isi_trellis(h: IsiResponse, M: int, memory: int | None = None,
                      state_cap: int = 1 << 20) -> TrellisSpec:
    """Symbol-level ISI trellis (no code knowledge) over M-ary inputs.

    ``memory`` defaults to the full channel memory L; a smaller value
    truncates the hypotheses to the first memory+1 taps (used by the
    fixed-size BCJR equalizer of the serial receiver).
    """
    L = h.L
    mem = L if memory is None else memory
    if mem < 0 or mem > L:
        raise ValueError("memory must be in [0, L]")
    S = M**mem
    if S > state_cap:
        raise ValueError(
            f"ISI trellis would need {S} states (cap {state_cap}); "
            "reduce memory or raise the cap")
    states = np.arange(S, dtype=np.int64)
    next_state = np.empty((S, M), dtype=np.int64)
    outputs = np.empty((S, M), dtype=np.float64)
    past = np.zeros(S)
    digits = states.copy()
    for l in range(1, mem + 1):
        past += h.taps[l] * symbol_value(digits % M, M)
        digits //= M
    carry = M * (states % (M ** max(mem - 1, 0))) if mem >= 1 else states * 0
    for x in range(M):
        outputs[:, x] = h.taps[0] * symbol_value(x, M) + past
        next_state[:, x] = x + carry if mem >= 1 else 0
    return TrellisSpec(num_states=S, num_inputs=M,
                       next_state=next_state, outputs=outputs)


def build_std_trellis(code: ConvCode, h: IsiResponse, M: int,
                      state_cap: int = 1 << 20) -> TrellisSpec:
    """Joint super trellis: encoder states times M-ary channel windows.

    State id = enc * M^L + window (newest symbol index in the least
    significant M-ary digit).  Serves as the equivalence baseline for the
    merged binary trellis; both describe identical branch hypotheses.
    """
    n = M.bit_length() - 1
    if (1 << n) != M or code.n != n:
        raise ValueError("need n = log2(M) output bits per step")
    L = h.L
    z_enc = code.num_states
    z_cha = M**L
    S = z_enc * z_cha
    if S > state_cap:
        raise ValueError(
            f"super trellis would need {S} states (cap {state_cap}); "
            "use the merged trellis instead")
    code_tr = build_conv_trellis(code)
    weights = 1 << np.arange(n - 1, -1, -1)
    # x_sym[enc, c]: symbol index produced by the code branch
    x_sym = (code_tr.outputs @ weights).astype(np.int64)

    enc = np.repeat(np.arange(z_enc), z_cha)
    win = np.tile(np.arange(z_cha), z_enc)
    past = np.zeros(S)
    digits = win.copy()
    for l in range(1, L + 1):
        past += h.taps[l] * symbol_value(digits % M, M)
        digits //= M
    carry = M * (win % (M ** max(L - 1, 0))) if L >= 1 else win * 0

    next_state = np.empty((S, 2), dtype=np.int64)
    outputs = np.empty((S, 2), dtype=np.float64)
    for c in (0, 1):
        enc_next = code_tr.next_state[enc, c]
        x = x_sym[enc, c]
        outputs[:, c] = h.taps[0] * symbol_value(x, M) + past
        win_next = x + carry if L >= 1 else win * 0
        next_state[:, c] = enc_next * z_cha + win_next
    return TrellisSpec(num_states=S, num_inputs=2,
                       next_state=next_state, outputs=outputs)


def rsse_decode(mt: MatchedTrellis, part: PartitionSpec, obs) -> DecodeResult:
    """Reduced-state Viterbi over the merged trellis with survivor feedback.

    Hyperstates keep the r newest state bits; the older nu+L-r bits of each
    branch hypothesis come from the hyperstate's own survivor history.
    r = nu+L reproduces full MLSE, r = 0 is a pure decision-feedback
    detector.
    """
    mem = mt.nu + mt.L
    r = part.kept_bits
    if r > mem:
        raise ValueError(f"kept_bits {r} exceeds trellis memory {mem}")
    if mt.isi.minimum_phase is not True and r < mem:
        warnings.warn("ISI response not verified minimum phase; "
                      "state truncation loses its distance rationale",
                      stacklevel=2)
    obs = np.asarray(obs, dtype=np.float64)
    T = obs.size
    H = 1 << r
    flat = mt.trellis.outputs.reshape(-1)

    pm = np.full(H, np.inf)
    pm[0] = 0.0
    hist = np.zeros((H, T), dtype=np.int8)
    hs = np.arange(H, dtype=np.int64)

    for t in range(T):
        # Reconstruct each survivor's full window state: kept bits are the
        # hyperstate id, older bits come from its decision history.
        older = np.zeros(H, dtype=np.int64)
        for j in range(r + 1, mem + 1):
            idx = t - j
            if idx >= 0:
                older |= hist[:, idx].astype(np.int64) << (j - 1)
        full = hs | older
        d0 = obs[t] - flat[full << 1]
        d1 = obs[t] - flat[(full << 1) | 1]
        bm0 = pm + d0 * d0
        bm1 = pm + d1 * d1
        if r == 0:
            take1 = bm1[0] < bm0[0]
            pm = np.array([bm1[0] if take1 else bm0[0]])
            hist[0, t] = 1 if take1 else 0
        else:
            ns = hs
            p0 = ns >> 1
            p1 = p0 | (H >> 1)
            u = (ns & 1).astype(np.int8)
            c0 = np.where(u == 1, bm1[p0], bm0[p0])
            c1 = np.where(u == 1, bm1[p1], bm0[p1])
            take1 = c1 < c0  # tie goes to the lower predecessor p0
            pm = np.where(take1, c1, c0)
            pred = np.where(take1, p1, p0)
            hist = hist[pred]
            hist[:, t] = u

    # Flushed blocks terminate in hyperstate 0.
    return DecodeResult(bits=hist[0].astype(np.int64), metric=float(pm[0]))


def dfse_equalize(h: IsiResponse, M: int, kept_symbols: int, obs,
                  *, end_state: int | None = None) -> np.ndarray:
    """Reduced-state symbol equalizer: M^J trellis states, survivor feedback
    for the channel taps beyond the kept window.  Returns hard symbol
    indices (natural map order).
    """
    L = h.L
    J = kept_symbols
    if J < 0 or J > L:
        raise ValueError(f"kept_symbols must be in [0, {L}]")
    obs = np.asarray(obs, dtype=np.float64)
    T = obs.size
    base = build_isi_trellis(h, M, memory=J)
    S = base.num_states
    hyp = base.outputs  # (S, M) from the first J+1 taps

    pm = np.full(S, np.inf)
    pm[0] = 0.0
    hist = np.zeros((S, T), dtype=np.int8)
    carry = M * (np.arange(S) % (M ** max(J - 1, 0))) if J >= 1 else None

    for t in range(T):
        fb = np.zeros(S)
        for l in range(J + 1, L + 1):
            idx = t - l
            sym_idx = hist[:, idx].astype(np.int64) if idx >= 0 else np.zeros(S, dtype=np.int64)
            fb += h.taps[l] * symbol_value(sym_idx, M)
        cand = pm[:, None] + (obs[t] - (hyp + fb[:, None])) ** 2  # (S, M)
        if J == 0:
            x = int(np.argmin(cand[0]))
            pm = np.array([cand[0, x]])
            hist[0, t] = x
        else:
            ns = np.arange(S)
            x_new = ns % M
            base_pred = ns // M
            best = np.full(S, np.inf)
            pred = np.zeros(S, dtype=np.int64)
            for q in range(M):
                p = base_pred + q * (M ** (J - 1))
                c = cand[p, x_new]
                better = c < best  # tie keeps the lower q / predecessor
                best = np.where(better, c, best)
                pred = np.where(better, p, pred)
            pm = best
            hist = hist[pred]
            hist[:, t] = x_new.astype(np.int8)

    s = int(np.argmin(pm)) if end_state is None else int(end_state)
    return hist[s].astype(np.int64)


@dataclass(frozen=True)
class BcjrResult:
    symbol_posteriors: np.ndarray  # (T, M) probabilities
    bit_llrs: np.ndarray           # (T * n,) log P(bit=0) - log P(bit=1)


def bcjr_equalize(isi_trellis: TrellisSpec, obs, noise_variance: float,
                  *, start_state: int = 0,
                  end_state: int | None = None) -> BcjrResult:
    """Symbol-by-symbol MAP over an ISI trellis, log domain, exact log-sum-exp.

    Symbol posteriors are marginalized to bit LLRs through the natural map
    (MSB first), one LLR per coded bit.
    """
    obs = np.asarray(obs, dtype=np.float64)
    T = obs.size
    S, M = isi_trellis.num_states, isi_trellis.num_inputs
    n = M.bit_length() - 1
    hyp = isi_trellis.outputs
    nxt = isi_trellis.next_state
    ps, pu, valid = _padded_predecessors(isi_trellis)
    pad = np.where(valid, 0.0, -np.inf)
    inv2v = -0.5 / float(noise_variance)

    gammas = inv2v * (obs[:, None, None] - hyp[None, :, :]) ** 2  # (T, S, M)

    alpha = np.full((T + 1, S), -np.inf)
    alpha[0, start_state] = 0.0
    for t in range(T):
        a = alpha[t][ps] + gammas[t][ps, pu] + pad
        alpha[t + 1] = logsumexp(a, axis=1)
        alpha[t + 1] -= alpha[t + 1].max()

    beta = np.full((T + 1, S), -np.inf)
    if end_state is None:
        beta[T] = 0.0
    else:
        beta[T, end_state] = 0.0
    for t in range(T - 1, -1, -1):
        beta[t] = logsumexp(gammas[t] + beta[t + 1][nxt], axis=1)
        beta[t] -= beta[t].max()

    post = np.empty((T, M))
    for t in range(T):
        joint = alpha[t][:, None] + gammas[t] + beta[t + 1][nxt]  # (S, M)
        log_pu = logsumexp(joint, axis=0)
        log_pu -= logsumexp(log_pu)
        post[t] = np.exp(log_pu)

    llrs = np.empty((T, n))
    log_post = np.log(np.maximum(post, 1e-300))
    u = np.arange(M)
    for i in range(n):
        bit = (u >> (n - 1 - i)) & 1
        llrs[:, i] = (logsumexp(log_post[:, bit == 0], axis=1)
                      - logsumexp(log_post[:, bit == 1], axis=1))
    return BcjrResult(symbol_posteriors=post, bit_llrs=llrs.reshape(-1))


def soft_viterbi_decode(code: ConvCode, llrs, *,
                        end_state: int | None = 0) -> np.ndarray:
    """Max-correlation Viterbi over the code trellis from per-bit LLRs.

    LLR convention: positive favors bit 0.  One LLR per coded bit,
    n per trellis step.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.size % code.n:
        raise ValueError("need one LLR per coded bit")
    llrs = llrs.reshape(-1, code.n)
    T = llrs.shape[0]
    tr = build_conv_trellis(code)
    S = tr.num_states
    signs = 2.0 * tr.outputs - 1.0  # (S, 2, n); minimize sum((2v-1)*llr)
    ps, pu, valid = _padded_predecessors(tr)
    pad = np.where(valid, 0.0, np.inf)

    pm = np.full(S, np.inf)
    pm[0] = 0.0
    back = np.empty((T, S), dtype=np.int16)
    rows = np.arange(S)
    for t in range(T):
        bm = signs @ llrs[t]  # (S, 2)
        cand = pm[ps] + bm[ps, pu] + pad
        j = np.argmin(cand, axis=1)
        pm = cand[rows, j]
        back[t] = j

    s = int(np.argmin(pm)) if end_state is None else int(end_state)
    bits = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        j = back[t, s]
        bits[t] = pu[s, j]
        s = int(ps[s, j])
    return bits
