"""Command-line interface: BER sweeps, whitening calibration, trellis
state accounting, and a decoder-equivalence self test.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .channel import make_rng, normal_from_uniform
from .conv_code import ConvCode, parse_octal_generators
from .equalizers import build_std_trellis, compensate_edges, viterbi_mlse
from .harness import (
    ConfigError,
    parse_config,
    run_ber_sweep,
    write_csv,
)
from .matched_encoder import (
    IsiResponse,
    build_matched_trellis,
    matched_encode,
    serial_reference,
    state_counts,
)
from .whitening import design_whitening, save_whitening_design, wmf_taps


def _parse_l_range(text: str) -> list[int]:
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(text)]


def _cmd_trellis(args) -> int:
    gens = parse_octal_generators(args.code)
    code = ConvCode(gens)
    if args.n != code.n:
        print(f"error: code has n={code.n} outputs, got --n {args.n}",
              file=sys.stderr)
        return 1
    ls = _parse_l_range(args.L)
    for L in ls:
        z_std, z_md, gain = state_counts(code.nu, code.n, L)
        prefix = f"L={L} " if len(ls) > 1 else ""
        print(f"{prefix}Z_STD={z_std} Z_MD={z_md} G={gain}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        records = run_ber_sweep(cfg, log=lambda m: print(m, file=sys.stderr))
        out = args.output or cfg.output
        write_csv(out, records, with_timing=args.timing)
        print(f"wrote {len(records)} records to {out}", file=sys.stderr)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_calibrate(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if cfg.chain != "cpm":
        print("error: config key 'chain': calibration needs chain = cpm",
              file=sys.stderr)
        return 1
    try:
        from .cpm import b999_bandwidth

        params = cfg.cpm_params()
        cutoff = cfg.cutoff if cfg.cutoff is not None else b999_bandwidth(params)
        cal_db = cfg.calibration_ebn0_db
        if cal_db is None:
            cal_db = 0.5 * (cfg.ebn0_db[0] + cfg.ebn0_db[-1])
        design, fact = design_whitening(
            params, cal_db, cfg.L_nw, cutoff=cutoff,
            n_symbols=cfg.calibration_symbols, wmf_len=cfg.wmf_len)
        save_whitening_design(args.output, design, fact)
        _, trunc = wmf_taps(fact, cfg.wmf_len)
        print(f"cutoff = {cutoff:.6g}", file=sys.stderr)
        print(f"wmf truncation tail magnitude = {trunc:.2e}", file=sys.stderr)
        print("f =", np.array2string(design.f, precision=4), file=sys.stderr)
        print(f"wrote whitening design to {args.output}", file=sys.stderr)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_selftest(args) -> int:
    """Decoder-equivalence suite: merged-trellis encoder vs the serial
    chain, and identical decisions of the merged and super trellises."""
    rng = make_rng(123)
    code = ConvCode(parse_octal_generators("5,7"))
    failures = 0
    for trial in range(args.seeds):
        taps = np.array([1.0]) if trial % 5 == 0 else None
        if taps is None:
            L = 1 + trial % 2
            taps = np.concatenate([[1.0], 0.6 * (rng.random(L) - 0.3)])
        isi = IsiResponse(taps)
        mt = build_matched_trellis(code, isi, 4)
        std = build_std_trellis(code, isi, 4)
        bits = (rng.random(200) < 0.5).astype(np.int64)
        flush = np.zeros(code.nu + isi.L, dtype=np.int64)
        tx = np.concatenate([bits, flush])
        ref = serial_reference(code, isi, 4, tx)
        enc = matched_encode(mt, tx)
        if np.max(np.abs(ref - enc)) > 1e-12:
            print(f"FAIL trial {trial}: encoder mismatch", file=sys.stderr)
            failures += 1
            continue
        sigma = 0.8
        obs = ref + sigma * normal_from_uniform(make_rng(1000 + trial), ref.size)
        obs = compensate_edges(obs, isi.taps, 4)
        r_md = viterbi_mlse(mt.trellis, obs, end_state=0)
        r_std = viterbi_mlse(std, obs, end_state=0)
        if not np.array_equal(r_md.bits, r_std.bits):
            print(f"FAIL trial {trial}: MD/STD decisions differ", file=sys.stderr)
            failures += 1
        elif abs(r_md.metric - r_std.metric) > 1e-9:
            print(f"FAIL trial {trial}: metric mismatch", file=sys.stderr)
            failures += 1
    if failures:
        print(f"selftest: {failures}/{args.seeds} trials failed", file=sys.stderr)
        return 2
    print(f"selftest: {args.seeds} trials passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mdsim",
        description="Matched decoding over ISI channels: trellis state "
                    "accounting, whitening calibration, and BER sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trellis", help="print super/merged trellis state counts")
    p.add_argument("--code", required=True, help="octal generators, e.g. 5,7")
    p.add_argument("--n", type=int, default=2, help="output bits per step")
    p.add_argument("--L", required=True, help="channel memory (int or a..b)")
    p.set_defaults(func=_cmd_trellis)

    p = sub.add_parser("sweep", help="run a Monte-Carlo BER sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None, help="override config output path")
    p.add_argument("--timing", action="store_true",
                   help="include wall-clock seconds in the CSV "
                        "(breaks byte-for-byte reproducibility)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("calibrate", help="measure noise and design whitening")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True, help="design file to write")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("selftest", help="run the decoder-equivalence suite")
    p.add_argument("--seeds", type=int, default=25)
    p.set_defaults(func=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
