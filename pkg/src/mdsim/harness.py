"""Monte-Carlo BER sweeps, receiver complexity accounting, and CSV output.

All schemes at a given Eb/N0 point decode the same seeded observation
blocks (common random numbers), so receivers that make identical
decisions produce identical error counts.  Every random quantity derives
from the base seed; a sweep is a pure function of its configuration.
"""

from __future__ import annotations

import math
import re
import time
from dataclasses import dataclass

import numpy as np

from .channel import NoiseModel, fir_awgn_channel, make_rng
from .conv_code import ConvCode, conv_encode, parse_octal_generators
from .cpm import CpmParams, b999_bandwidth, transmit_receive
from .equalizers import (
    PartitionSpec,
    bcjr_equalize,
    build_isi_trellis,
    build_std_trellis,
    compensate_edges,
    dfse_equalize,
    rsse_decode,
    soft_viterbi_decode,
    viterbi_mlse,
)
from .matched_encoder import IsiResponse, build_matched_trellis
from .whitening import (
    apply_whitening,
    apply_wmf,
    design_whitening,
    load_whitening_design,
    wmf_taps,
)

CSV_HEADER = "scheme,states,ebn0_db,bits,errors,ber,ci_lo,ci_hi,seed,seconds"


class ConfigError(ValueError):
    """Raised for malformed simulation configs; message names the key."""


@dataclass(frozen=True)
class SchemeSpec:
    """One receiver scheme: kind plus its state parameter."""

    kind: str  # std | md | rsse | dfse_va | bcjr_va
    param: int | None = None

    def __post_init__(self):
        if self.kind not in ("std", "md", "rsse", "dfse_va", "bcjr_va"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind in ("rsse", "dfse_va") and self.param is None:
            raise ValueError(f"scheme {self.kind} needs a parameter")

    def label(self) -> str:
        if self.kind == "std":
            return "STD"
        if self.kind == "md":
            return "MD"
        if self.kind == "rsse":
            return f"MD-RSSE({1 << self.param})"
        if self.kind == "dfse_va":
            return f"DFSE({self.param})+VA"
        return "BCJR+VA"


_SCHEME_RE = re.compile(r"^([A-Za-z-]+)(?:\((\d+)\))?(\+VA)?$")


def parse_scheme(text: str) -> SchemeSpec:
    m = _SCHEME_RE.match(text.strip())
    if not m:
        raise ValueError(f"cannot parse scheme {text!r}")
    name = m.group(1).upper().rstrip("-")
    arg = int(m.group(2)) if m.group(2) else None
    if name == "STD":
        return SchemeSpec("std")
    if name == "MD":
        return SchemeSpec("md")
    if name in ("RSSE", "MD-RSSE"):
        if arg is None:
            raise ValueError("RSSE needs kept-bit count, e.g. RSSE(4)")
        return SchemeSpec("rsse", arg)
    if name == "DFSE":
        if arg is None:
            raise ValueError("DFSE needs kept-symbol count, e.g. DFSE(2)+VA")
        return SchemeSpec("dfse_va", arg)
    if name == "BCJR":
        return SchemeSpec("bcjr_va", arg)
    raise ValueError(f"unknown scheme {text!r}")


def complexity(scheme: SchemeSpec, *, nu: int, L: int, M: int,
               bcjr_memory: int = 2) -> int:
    """Receiver complexity in states: products for joint trellises, sums
    for serial equalizer-plus-decoder structures, 2^r for hyperstates."""
    if scheme.kind == "std":
        return 2**nu * M**L
    if scheme.kind == "md":
        return 2 ** (nu + L)
    if scheme.kind == "rsse":
        return 2**scheme.param
    if scheme.kind == "dfse_va":
        return M**scheme.param + 2**nu
    mem = scheme.param if scheme.param is not None else bcjr_memory
    return M**mem + 2**nu


@dataclass(frozen=True)
class SimConfig:
    chain: str = "pam_isi"
    generators: tuple[int, ...] = (0o5, 0o7)
    M: int = 4
    taps: tuple[float, ...] = (1.0, 0.5)
    pulse: str = "LRC"
    h_num: int = 1
    h_den: int = 4
    L_cpm: int = 3
    N_os: int = 8
    L_nw: int = 0
    schemes: tuple[SchemeSpec, ...] = (SchemeSpec("md"), SchemeSpec("std"))
    ebn0_db: tuple[float, ...] = (6.0, 8.0, 10.0)
    min_errors: int = 200
    max_bits: int = 10_000_000
    block_bits: int = 1000
    seed: int = 1
    output: str = "ber.csv"
    whitening_file: str | None = None
    calibration_ebn0_db: float | None = None
    calibration_symbols: int = 200_000
    bcjr_memory: int = 2
    state_cap: int = 1 << 20
    cutoff: float | None = None
    wmf_len: int = 20
    isi_trim: float = 1e-3

    def __post_init__(self):
        if self.chain not in ("pam_isi", "cpm"):
            raise ConfigError(f"config key 'chain': unknown chain {self.chain!r}")
        if any(b <= a for a, b in zip(self.ebn0_db, self.ebn0_db[1:])):
            raise ConfigError("config key 'ebn0_db': grid must be strictly increasing")
        if self.min_errors <= 0 or self.max_bits <= 0 or self.block_bits <= 0:
            raise ConfigError("config key 'min_errors'/'max_bits'/'block_bits': "
                              "stop rule must be positive")

    def cpm_params(self) -> CpmParams:
        return CpmParams(M=self.M, h_num=self.h_num, h_den=self.h_den,
                         L_cpm=self.L_cpm, pulse=self.pulse, N_os=self.N_os)


_CONFIG_KEYS = {
    "chain": str, "code": str, "M": int, "taps": str, "pulse": str,
    "h_index": str, "L_cpm": int, "N_os": int, "L_nw": int, "schemes": str,
    "ebn0_db": str, "min_errors": int, "max_bits": int, "block_bits": int,
    "seed": int, "output": str, "whitening_file": str,
    "calibration_ebn0_db": float, "calibration_symbols": int,
    "bcjr_memory": int, "state_cap": int, "cutoff": float, "wmf_len": int,
    "isi_trim": float,
}


def parse_config(text: str) -> SimConfig:
    """Flat key = value config text (comments with '#')."""
    kv: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {line!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config key {key!r}: unknown key")
        kv[key] = val.strip()

    def conv(key, fn, default):
        if key not in kv:
            return default
        try:
            return fn(kv[key])
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from exc

    def floats(txt):
        return tuple(float(v) for v in txt.split(","))

    def h_index(txt):
        num, _, den = txt.partition("/")
        return int(num), int(den or "1")

    def schemes(txt):
        return tuple(parse_scheme(tok) for tok in txt.split(","))

    defaults = SimConfig()
    hn, hd = conv("h_index", h_index, (defaults.h_num, defaults.h_den))
    return SimConfig(
        chain=conv("chain", str, defaults.chain),
        generators=tuple(conv("code", parse_octal_generators,
                              list(defaults.generators))),
        M=conv("M", int, defaults.M),
        taps=conv("taps", floats, defaults.taps),
        pulse=conv("pulse", str, defaults.pulse),
        h_num=hn, h_den=hd,
        L_cpm=conv("L_cpm", int, defaults.L_cpm),
        N_os=conv("N_os", int, defaults.N_os),
        L_nw=conv("L_nw", int, defaults.L_nw),
        schemes=conv("schemes", schemes, defaults.schemes),
        ebn0_db=conv("ebn0_db", floats, defaults.ebn0_db),
        min_errors=conv("min_errors", int, defaults.min_errors),
        max_bits=conv("max_bits", int, defaults.max_bits),
        block_bits=conv("block_bits", int, defaults.block_bits),
        seed=conv("seed", int, defaults.seed),
        output=conv("output", str, defaults.output),
        whitening_file=conv("whitening_file", str, None),
        calibration_ebn0_db=conv("calibration_ebn0_db", float, None),
        calibration_symbols=conv("calibration_symbols", int,
                                 defaults.calibration_symbols),
        bcjr_memory=conv("bcjr_memory", int, defaults.bcjr_memory),
        state_cap=conv("state_cap", int, defaults.state_cap),
        cutoff=conv("cutoff", float, None),
        wmf_len=conv("wmf_len", int, defaults.wmf_len),
        isi_trim=conv("isi_trim", float, defaults.isi_trim),
    )


def wilson_interval(errors: int, n: int, z: float = 1.959964) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if n <= 0:
        return 0.0, 1.0
    p = errors / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class BerRecord:
    scheme: str
    states: int
    ebn0_db: float
    bits: int
    errors: int
    ber: float
    ci_lo: float
    ci_hi: float
    seed: int
    seconds: float

    def csv_row(self, with_timing: bool = False) -> str:
        secs = self.seconds if with_timing else 0.0
        return (f"{self.scheme},{self.states},{self.ebn0_db:g},{self.bits},"
                f"{self.errors},{self.ber:.6e},{self.ci_lo:.6e},"
                f"{self.ci_hi:.6e},{self.seed},{secs:.3f}")


def write_csv(path, records: list[BerRecord], with_timing: bool = False) -> None:
    rows = [CSV_HEADER]
    rows += [r.csv_row(with_timing) for r in records]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class _ChainContext:
    """Everything fixed across blocks: code, effective ISI, decoders."""

    code: ConvCode
    isi: IsiResponse
    params: CpmParams | None = None
    fact: object = None
    whitening: object = None
    cutoff: float | None = None
    noise_var_cal: float = float("nan")
    n0_cal: float = float("nan")


def _resolve_chain(cfg: SimConfig, log) -> _ChainContext:
    code = ConvCode(cfg.generators)
    if cfg.chain == "pam_isi":
        isi = IsiResponse(np.array(cfg.taps)).check_minimum_phase()
        return _ChainContext(code=code, isi=isi)

    params = cfg.cpm_params()
    cutoff = cfg.cutoff
    if cutoff is None:
        cutoff = b999_bandwidth(params)
        log(f"receive lowpass cutoff (99.9% power): {cutoff:.6g}")
    if cfg.whitening_file:
        design, fact = load_whitening_design(cfg.whitening_file)
        log(f"loaded whitening design from {cfg.whitening_file}")
        n0_cal = float("nan")  # unknown measurement point; use var as-is
    else:
        cal_db = cfg.calibration_ebn0_db
        if cal_db is None:
            cal_db = 0.5 * (cfg.ebn0_db[0] + cfg.ebn0_db[-1])
        design, fact = design_whitening(
            params, cal_db, cfg.L_nw, cutoff=cutoff,
            n_symbols=cfg.calibration_symbols, wmf_len=cfg.wmf_len)
        log(f"whitening calibrated at Eb/N0 = {cal_db:g} dB; "
            f"f = {np.array2string(design.f, precision=4)}")
        n0_cal = 10.0 ** (-cal_db / 10.0)
    _, trunc = wmf_taps(fact, cfg.wmf_len)
    log(f"wmf anti-causal recursion truncated to {cfg.wmf_len} taps "
        f"(neglected tail magnitude {trunc:.2e})")
    isi = design.overall.trimmed(cfg.isi_trim)
    if isi.L < design.overall.L:
        log(f"overall ISI trimmed from {design.overall.taps.size} to "
            f"{isi.taps.size} taps (threshold {cfg.isi_trim:g})")
    return _ChainContext(code=code, isi=isi, params=params,
                         fact=fact, whitening=design, cutoff=cutoff,
                         noise_var_cal=design.noise_variance, n0_cal=n0_cal)


def _block_words(seed: int, point_idx: int, block_idx: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=[seed, point_idx, block_idx])
    return ss.generate_state(4, np.uint64)


def _map_symbols(code: ConvCode, bits: np.ndarray, M: int) -> np.ndarray:
    n = M.bit_length() - 1
    coded = conv_encode(code, bits).reshape(-1, n)
    weights = 1 << np.arange(n - 1, -1, -1)
    return (2 * (coded @ weights) - (M - 1)).astype(np.float64)


def _make_block(ctx: _ChainContext, cfg: SimConfig, n0: float,
                point_idx: int, block_idx: int):
    """One seeded transmission: returns (info_bits, observations)."""
    w = _block_words(cfg.seed, point_idx, block_idx)
    rng = make_rng(int(w[0]))
    info = (rng.random(cfg.block_bits) < 0.5).astype(np.int64)
    flush = np.zeros(ctx.code.nu + ctx.isi.L, dtype=np.int64)
    bits = np.concatenate([info, flush])
    symbols = _map_symbols(ctx.code, bits, cfg.M)

    if cfg.chain == "pam_isi":
        sigma = math.sqrt(n0 / 2.0)
        noise = NoiseModel(kind="awgn" if sigma > 0 else "none",
                           sigma=sigma, seed=int(w[1]))
        obs = fir_awgn_channel(symbols, ctx.isi, noise)
    else:
        theta0 = float(w[2]) / 2.0**64 * 2.0 * math.pi
        d = transmit_receive(ctx.params, symbols, n0=n0,
                             noise_seed=int(w[1]), theta0=theta0,
                             cutoff=ctx.cutoff)
        d = apply_wmf(d, ctx.fact, cfg.wmf_len)
        d = apply_whitening(d, ctx.whitening.f)
        obs = d[: bits.size]
        if obs.size < bits.size:
            obs = np.pad(obs, (0, bits.size - obs.size))
    return info, compensate_edges(obs, ctx.isi.taps, cfg.M)


def _point_n0(ctx: _ChainContext, cfg: SimConfig, ebn0_db: float) -> float:
    """Map Eb/N0 to the channel noise level.

    CPM chain: Eb = Es = 1 (one information bit per modulation interval).
    PAM chain: Eb = mean symbol energy times the ISI energy, real noise
    with per-sample variance N0/2.
    """
    if cfg.chain == "cpm":
        return 10.0 ** (-ebn0_db / 10.0)
    e_sym = (cfg.M**2 - 1) / 3.0
    eb = e_sym * float(np.sum(ctx.isi.taps**2))
    return eb * 10.0 ** (-ebn0_db / 10.0)


class _SchemeRunner:
    """Per-scheme decoder state and error accumulation."""

    def __init__(self, scheme: SchemeSpec, ctx: _ChainContext, cfg: SimConfig):
        self.scheme = scheme
        self.ctx = ctx
        self.cfg = cfg
        self.errors = 0
        self.bits = 0
        self.seconds = 0.0
        code, isi, M = ctx.code, ctx.isi, cfg.M
        if scheme.kind in ("md", "rsse"):
            self.mt = build_matched_trellis(code, isi, M)
        if scheme.kind == "rsse":
            self.part = PartitionSpec(scheme.param)
            if scheme.param > code.nu + isi.L:
                raise ValueError(
                    f"RSSE kept bits {scheme.param} exceed memory {code.nu + isi.L}")
        if scheme.kind == "std":
            self.std = build_std_trellis(code, isi, M, state_cap=cfg.state_cap)
        if scheme.kind == "dfse_va":
            if scheme.param > isi.L:
                raise ValueError(
                    f"DFSE kept symbols {scheme.param} exceed channel memory {isi.L}")
            build_isi_trellis(isi, M, memory=scheme.param,
                              state_cap=cfg.state_cap)  # fail fast on caps
        if scheme.kind == "bcjr_va":
            mem = scheme.param if scheme.param is not None else cfg.bcjr_memory
            mem = min(mem, isi.L)
            self.bcjr_mem = mem
            self.bcjr_tr = build_isi_trellis(isi, M, memory=mem,
                                             state_cap=cfg.state_cap)

    def done(self) -> bool:
        return self.errors >= self.cfg.min_errors or self.bits >= self.cfg.max_bits

    def _noise_variance(self, n0: float) -> float:
        ctx, cfg = self.ctx, self.cfg
        if cfg.chain == "pam_isi":
            return max(n0 / 2.0, 1e-12)
        # variance after the whitening filter, scaled from the calibration point
        phi = ctx.whitening.noise_acf
        f = ctx.whitening.f
        gain = 0.0
        for j in range(f.size):
            for k in range(f.size):
                lag = abs(j - k)
                if lag < phi.size:
                    gain += f[j] * f[k] * phi[lag]
        base = ctx.noise_var_cal * gain
        scale = n0 / ctx.n0_cal if np.isfinite(ctx.n0_cal) else 1.0
        return max(base * scale, 1e-12)

    def decode(self, info: np.ndarray, obs: np.ndarray, n0: float) -> None:
        t0 = time.perf_counter()
        ctx, cfg = self.ctx, self.cfg
        kind = self.scheme.kind
        if kind == "md":
            decoded = viterbi_mlse(self.mt.trellis, obs, end_state=0).bits
        elif kind == "std":
            decoded = viterbi_mlse(self.std, obs, end_state=0).bits
        elif kind == "rsse":
            decoded = rsse_decode(self.mt, self.part, obs).bits
        elif kind == "dfse_va":
            sym = dfse_equalize(ctx.isi, cfg.M, self.scheme.param, obs)
            llrs = self._symbols_to_llrs(sym)
            decoded = soft_viterbi_decode(ctx.code, llrs, end_state=0)
        else:
            res = bcjr_equalize(self.bcjr_tr, obs, self._noise_variance(n0))
            decoded = soft_viterbi_decode(ctx.code, res.bit_llrs, end_state=0)
        n_info = info.size
        self.errors += int(np.count_nonzero(decoded[:n_info] != info))
        self.bits += n_info
        self.seconds += time.perf_counter() - t0

    def _symbols_to_llrs(self, sym_idx: np.ndarray) -> np.ndarray:
        n = self.cfg.M.bit_length() - 1
        bits = ((sym_idx[:, None] >> np.arange(n - 1, -1, -1)) & 1)
        return (1.0 - 2.0 * bits).reshape(-1)

    def record(self, ebn0_db: float) -> BerRecord:
        ber = self.errors / self.bits if self.bits else 0.0
        lo, hi = wilson_interval(self.errors, self.bits)
        states = complexity(self.scheme, nu=self.ctx.code.nu,
                            L=self.ctx.isi.L, M=self.cfg.M,
                            bcjr_memory=self.cfg.bcjr_memory)
        return BerRecord(scheme=self.scheme.label(), states=states,
                         ebn0_db=ebn0_db, bits=self.bits, errors=self.errors,
                         ber=ber, ci_lo=lo, ci_hi=hi, seed=self.cfg.seed,
                         seconds=self.seconds)


def run_ber_sweep(cfg: SimConfig, log=lambda msg: None) -> list[BerRecord]:
    """Simulate every (scheme, Eb/N0) point to its stop rule.

    Decoder construction failures (for example the super-trellis state
    cap) disable that scheme with a message and leave the others running.
    """
    ctx = _resolve_chain(cfg, log)
    runners_proto: list[SchemeSpec] = []
    for scheme in cfg.schemes:
        try:
            _SchemeRunner(scheme, ctx, cfg)
        except (ValueError, MemoryError) as exc:
            log(f"scheme {scheme.label()} disabled: {exc}")
            continue
        runners_proto.append(scheme)

    records: list[BerRecord] = []
    for point_idx, ebn0 in enumerate(cfg.ebn0_db):
        n0 = _point_n0(ctx, cfg, ebn0)
        runners = [_SchemeRunner(s, ctx, cfg) for s in runners_proto]
        block_idx = 0
        while any(not r.done() for r in runners):
            info, obs = _make_block(ctx, cfg, n0, point_idx, block_idx)
            for r in runners:
                if not r.done():
                    r.decode(info, obs, n0)
            block_idx += 1
        for r in runners:
            records.append(r.record(ebn0))
        log(f"Eb/N0 = {ebn0:g} dB: " + ", ".join(
            f"{r.scheme.label()} ber={r.errors / max(r.bits, 1):.3e}"
            for r in runners))
    records.sort(key=lambda r: (r.scheme, r.ebn0_db))
    return records
