"""Command line: batch decoding, CTC score comparison and attention dumps.

Exit codes: 0 success, 1 bad input, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from ._jit import backend_name
from .attention import (
    Attention,
    StepScan,
    hma_expectation,
    mocha_expectation,
    mta_train_weights,
    sigmoid,
    smocha_expectation,
    write_attention_csv,
)
from .core import (
    MECHANISMS,
    AttentionConfig,
    DecodeConfig,
    InputFormatError,
    PosteriorLattice,
    RepresentationStream,
    StreamDecError,
    Vocab,
    read_lattice_file,
    read_stream_file,
    validate_lattice,
)
from .ctc import CtcForwardTable, collapse, ctc_prefix_score, tctc_prefix_score
from .dwjd import dwjd_decode, write_hypotheses
from .lm import BigramLM, UniformLM
from .metrics import error_rate, timed_decode, write_report_csv
from .stream_sim import StreamingConfig, ToyModel, chunked_encode

log = logging.getLogger("streamdec")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2
DEFAULT_SYMBOLS = list("abcde")
GAP_TOL = 1e-6


class UsageError(StreamDecError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_INPUT)


@dataclass
class Utterance:
    utt_id: str
    raw: Optional[np.ndarray] = None
    stream: Optional[np.ndarray] = None
    lattice: Optional[np.ndarray] = None
    ref: Optional[List[int]] = None


@dataclass
class RunManifest:
    utterances: List[Utterance]
    vocab: Vocab
    out_dir: Path
    seed: int


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _order(text: str) -> float:
    if text.lower() in ("inf", "infinity", "all"):
        return math.inf
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("chunk order must be >= 1 or 'inf'")
    return val


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("inputs")
    g.add_argument("--manifest", help="JSON manifest: vocab, seed, out, utterances[{id, raw | stream+lattice, ref}]")
    g.add_argument("--vocab", help="vocabulary file (one label per line)")
    g.add_argument("--raw", nargs="+", default=[], help="raw frame files, one utterance each")
    g.add_argument("--stream", help="precomputed representation stream file")
    g.add_argument("--lattice", help="precomputed posterior lattice file (with --stream)")
    g.add_argument("--toy", type=int, default=0, metavar="N", help="synthesise N toy utterances")
    g.add_argument("--toy-labels", type=int, default=8, metavar="K", help="labels per toy utterance")
    g.add_argument("--refs", help="reference file: '<utt_id> label label ...' per line")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, default=0, help="model and data seed (STREAMDEC_SEED overrides)")
    m = p.add_argument_group("model and streaming")
    m.add_argument("--temperature", type=float, default=0.25, help="toy CTC head temperature")
    m.add_argument("--nc", type=int, default=16, help="frames per encoder hop")
    m.add_argument("--nr", type=int, default=16, help="future frames per hop")
    m.add_argument("--decimate", action="store_true", help="pool encoder outputs 4:1")
    m.add_argument("--arrival-period-ms", type=float, default=10.0,
                   help="simulated time per raw frame; 0 delivers everything at once")
    d = p.add_argument_group("decoding")
    d.add_argument("--attention", default="mta", choices=MECHANISMS)
    d.add_argument("--chunk-width", type=int, default=4)
    d.add_argument("--chunk-order", type=_order, default=1)
    d.add_argument("--mu", type=float, default=0.5)
    d.add_argument("--beta", type=float, default=0.0)
    d.add_argument("--lm", help="text file to train a bigram label LM on")
    d.add_argument("--beam", type=int, default=20)
    d.add_argument("--theta", type=float, default=1e-8)
    d.add_argument("--end-M", type=int, default=3)
    d.add_argument("--end-D", type=float, default=-10.0)
    d.add_argument("--max-len", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamdec", description="Streaming joint CTC/attention decoding toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    dec = sub.add_parser("decode", help="decode utterances and report RTF")
    _common(dec)
    cmp_ = sub.add_parser("compare-ctc", help="full vs truncated CTC prefix scores")
    _common(cmp_)
    cmp_.add_argument("--prefixes", type=int, default=8, help="sampled label sequences per lattice")
    dump = sub.add_parser("dump-attention", help="write attention weight CSVs")
    _common(dump)
    dump.add_argument("--constant-p", type=float, default=None,
                      help="also dump expectations for a constant selection probability")
    dump.add_argument("--steps", type=int, default=20, help="output steps for --constant-p")
    dump.add_argument("--frames", type=int, default=40, help="frames for --constant-p")
    return p


def effective_seed(args) -> int:
    env = os.environ.get("STREAMDEC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"STREAMDEC_SEED must be an integer, got {env!r}") from None
    return args.seed


def decode_config(args) -> DecodeConfig:
    try:
        att = AttentionConfig(args.attention, args.chunk_width, args.chunk_order)
        return DecodeConfig(mu=args.mu, beta=args.beta, beam_size=args.beam, theta=args.theta,
                            end_M=args.end_M, end_D=args.end_D, attention=att, max_output_len=args.max_len)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def streaming_config(args) -> StreamingConfig:
    try:
        return StreamingConfig(args.nc, args.nr, args.arrival_period_ms, decimate=args.decimate)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _read_refs(path, vocab: Vocab) -> dict:
    refs = {}
    for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        refs[toks[0]] = vocab.encode(toks[1:])
    return refs


def load_manifest(args) -> RunManifest:
    seed = effective_seed(args)
    doc = {}
    if args.manifest:
        try:
            doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputFormatError(f"{args.manifest}: {exc}") from None
        if "STREAMDEC_SEED" not in os.environ and "seed" in doc:
            seed = int(doc["seed"])
    vocab_path = args.vocab or doc.get("vocab")
    vocab = Vocab.from_file(vocab_path) if vocab_path else Vocab.build(DEFAULT_SYMBOLS)
    out = args.out or doc.get("out")
    if not out:
        raise UsageError("an output directory is required (--out)")
    utts: List[Utterance] = []
    for entry in doc.get("utterances", []):
        has_raw = "raw" in entry
        has_pre = "stream" in entry or "lattice" in entry
        if has_raw == has_pre:
            raise InputFormatError(f"utterance {entry.get('id')!r}: give either raw or stream+lattice")
        u = Utterance(str(entry.get("id", f"utt{len(utts) + 1}")))
        if has_raw:
            u.raw = read_stream_file(entry["raw"])
        else:
            if "stream" not in entry or "lattice" not in entry:
                raise InputFormatError(f"utterance {u.utt_id!r}: stream and lattice go together")
            u.stream, u.lattice = read_stream_file(entry["stream"]), read_lattice_file(entry["lattice"])
        if "ref" in entry:
            u.ref = vocab.encode(entry["ref"].split())
        utts.append(u)
    for path in args.raw:
        utts.append(Utterance(Path(path).stem, raw=read_stream_file(path)))
    if args.stream or args.lattice:
        if not (args.stream and args.lattice):
            raise UsageError("--stream and --lattice must be given together")
        utts.append(Utterance(Path(args.stream).stem, stream=read_stream_file(args.stream),
                              lattice=read_lattice_file(args.lattice)))
    if args.toy:
        model = ToyModel(vocab, seed=seed, temperature=args.temperature)
        rng = np.random.default_rng(seed)
        for k in range(args.toy):
            raw, labels = model.synth_utterance(args.toy_labels, rng)
            utts.append(Utterance(f"toy{k + 1:03d}", raw=raw, ref=labels))
    if not utts:
        raise UsageError("no input: use --manifest, --raw, --stream/--lattice or --toy")
    if args.refs:
        refs = _read_refs(args.refs, vocab)
        for u in utts:
            if u.utt_id in refs:
                u.ref = refs[u.utt_id]
    ids = [u.utt_id for u in utts]
    if len(set(ids)) != len(ids):
        raise InputFormatError("utterance ids must be unique")
    return RunManifest(utts, vocab, Path(out), seed)


def config_header(command: str, args, manifest: RunManifest, cfg: DecodeConfig, scfg: StreamingConfig) -> List[str]:
    lines = [f"streamdec {__version__} {command} backend={backend_name()}", f"seed={manifest.seed}"]
    lines += [f"{k}={v}" for k, v in cfg.as_dict().items()]
    lines += [f"nc={scfg.n_c}", f"nr={scfg.n_r}", f"decimate={scfg.decimate}",
              f"arrival_period_ms={scfg.frame_period_ms}", f"temperature={args.temperature}",
              f"lm={args.lm or 'uniform'}", f"vocab_size={manifest.vocab.size}"]
    return lines


def _prepare(u: Utterance, model: ToyModel, scfg: StreamingConfig):
    """Closed stream and lattice for one utterance."""
    if u.raw is not None:
        if u.raw.shape[1] != model.input_dim:
            raise InputFormatError(f"{u.utt_id}: raw frames have {u.raw.shape[1]} values, model expects {model.input_dim}")
        res = chunked_encode(u.raw, scfg, model)
        return res.stream, res.lattice
    if u.stream.shape[1] != model.rep_dim:
        raise InputFormatError(f"{u.utt_id}: stream dim {u.stream.shape[1]}, model expects {model.rep_dim}")
    if u.lattice.shape != (u.stream.shape[0], model.vocab.size):
        raise InputFormatError(f"{u.utt_id}: lattice shape {u.lattice.shape} does not match stream and vocab")
    lat = PosteriorLattice.from_array(u.lattice)
    validate_lattice(lat)
    return RepresentationStream.from_array(u.stream), lat


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    manifest = load_manifest(args)
    cfg, scfg = decode_config(args), streaming_config(args)
    vocab = manifest.vocab
    model = ToyModel(vocab, seed=manifest.seed, temperature=args.temperature)
    lm = BigramLM.from_text(args.lm, vocab) if args.lm else UniformLM(vocab)
    header = config_header("decode", args, manifest, cfg, scfg)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for u in manifest.utterances:
        if u.raw is not None:
            if u.raw.shape[1] != model.input_dim:
                raise InputFormatError(f"{u.utt_id}: raw frames have {u.raw.shape[1]} values, model expects {model.input_dim}")
            td = timed_decode(u.raw, model, scfg, cfg, lm, streaming=True)
        else:
            _prepare(u, model, scfg)  # shape and normalisation checks
            td = timed_decode(u.stream, model, scfg, cfg, lm, streaming=True, lattice=u.lattice)
        hyps = td.hypotheses
        write_hypotheses(manifest.out_dir / f"{u.utt_id}.hyp", hyps, vocab, header + [f"utt_id={u.utt_id}"])
        err = None
        if u.ref is not None and u.ref:
            err = error_rate(u.ref, [y for y in hyps[0].seq if y not in (vocab.sos_id, vocab.eos_id)])
        rows.append((u.utt_id, td.report, err, cfg.beam_size))
        log.info("%s: %s", u.utt_id, " ".join(vocab.decode(hyps[0].seq[1:-1])))
    write_report_csv(manifest.out_dir / "rtf.csv", rows, header)
    return EXIT_OK


def _sample_labelings(probs: np.ndarray, blank: int, n: int, rng) -> List[tuple]:
    """Best-path labelling first, then labellings of alignments drawn frame by frame."""
    out = [collapse(probs.argmax(axis=1).tolist(), blank)]
    cum = np.cumsum(probs, axis=1)
    for _ in range(max(0, n - 1) * 4):
        if len(out) >= n:
            break
        u = rng.random(probs.shape[0])[:, None]
        path = np.minimum((u > cum).sum(axis=1), probs.shape[1] - 1)
        lab = collapse(path.tolist(), blank)
        if lab and lab not in out:
            out.append(lab)
    return [lab for lab in out if lab]


def cmd_compare_ctc(args) -> int:
    manifest = load_manifest(args)
    cfg, scfg = decode_config(args), streaming_config(args)
    vocab = manifest.vocab
    model = ToyModel(vocab, seed=manifest.seed, temperature=args.temperature)
    header = config_header("compare-ctc", args, manifest, cfg, scfg)
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(manifest.seed)
    path = manifest.out_dir / "ctc_compare.csv"
    ratios = []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["utt_id", "prefix", "S_ctc", "S_tctc", "t_n", "T_max", "cost_ratio", "gap"])
        for u in manifest.utterances:
            _, lat = _prepare(u, model, scfg)
            T = lat.t_enc
            for lab in _sample_labelings(lat.probs, vocab.blank_id, args.prefixes, rng):
                node = CtcForwardTable.root(lat, vocab.blank_id)
                end = 0
                for n in range(1, len(lab) + 1):
                    s_t, end, node = tctc_prefix_score(lab[:n], lat, end, cfg.theta, node, blank=vocab.blank_id)
                    s_c = ctc_prefix_score(lab[:n], lat, blank=vocab.blank_id)
                    gap = abs(s_c - s_t) if math.isfinite(s_c) else 0.0
                    ratios.append((end + 1) / T)
                    w.writerow([u.utt_id, " ".join(vocab.decode(lab[:n])), repr(s_c), repr(s_t), end + 1, T,
                                f"{(end + 1) / T:.6f}", int(gap > GAP_TOL)])
    log.info("mean cost ratio %.4f over %d prefixes", float(np.mean(ratios)) if ratios else float("nan"), len(ratios))
    return EXIT_OK


def _train_rows(mech: str, p: np.ndarray, u: np.ndarray, w: int, H: np.ndarray):
    if mech == "hma":
        return hma_expectation(p)
    if mech == "mocha":
        return mocha_expectation(p, u, w)[0]
    if mech == "smocha":
        return smocha_expectation(p)
    return mta_train_weights(p, H)[0]


def cmd_dump_attention(args) -> int:
    manifest = load_manifest(args)
    cfg, scfg = decode_config(args), streaming_config(args)
    vocab = manifest.vocab
    mech = cfg.attention.mechanism
    model = ToyModel(vocab, seed=manifest.seed, temperature=args.temperature)
    header = config_header("dump-attention", args, manifest, cfg, scfg)
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    prm = model.attention_params()
    for u in manifest.utterances:
        stream, lat = _prepare(u, model, scfg)
        top = dwjd_decode(stream, lat, model, cfg=cfg)[0]
        att = Attention(cfg.attention, prm["params"], stream, prm["chunk_params"], prm["loaa_params"])
        H = stream.rows()
        q, t_att, att_state = model.initial_state(), 0, None
        dec_rows, p_rows, u_rows = [], [], []
        for i, y in enumerate(top.seq[1:]):
            scans = att.new_scans(q)
            res, att_state = att.step(t_att, q, att_state, scans)
            dec_rows.append((i, res.start, res.weights))
            if scans is not None:
                p_rows.append(sigmoid(scans[0].upto(len(H))))
                chunk = scans[1] or StepScan(prm["chunk_params"], att.chunk_keys, q)
                u_rows.append(chunk.upto(len(H)).copy())
            q, _ = model.step(res.context, q, top.seq[i])
            if res.endpoint is not None:
                t_att = res.endpoint
        tag = f"{u.utt_id}.{mech}"
        write_attention_csv(out / f"{tag}.decode.csv", dec_rows, header + [f"utt_id={u.utt_id}", "mode=decode"])
        if p_rows:
            rows = _train_rows(mech, np.array(p_rows), np.array(u_rows), cfg.attention.chunk_width, H)
            write_attention_csv(out / f"{tag}.train.csv", [(i, 0, r) for i, r in enumerate(rows)],
                                header + [f"utt_id={u.utt_id}", "mode=train"])
    if args.constant_p is not None:
        if not 0.0 < args.constant_p < 1.0:
            raise UsageError("--constant-p must lie in (0, 1)")
        p = np.full((args.steps, args.frames), args.constant_p)
        for m in ("hma", "mocha", "smocha", "mta"):
            rows = _train_rows(m, p, np.zeros_like(p), cfg.attention.chunk_width, np.zeros((args.frames, 1)))
            write_attention_csv(out / f"constant.{m}.train.csv", [(i, 0, r) for i, r in enumerate(rows)],
                                header + [f"constant_p={args.constant_p}", "mode=train"])
    return EXIT_OK


COMMANDS = {"decode": cmd_decode, "compare-ctc": cmd_compare_ctc, "dump-attention": cmd_dump_attention}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (StreamDecError, OSError, ValueError) as exc:
        print(f"streamdec: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # an invariant broke inside the engine
        print(f"streamdec: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
