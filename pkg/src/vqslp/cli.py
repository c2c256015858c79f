"""``vqslp`` command line: one subcommand per pipeline stage.

Exit codes: 0 ok, 2 usage or config error, 3 data error (including missing
inputs), 4 artifact mismatch, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, apply_overrides, dump_config, load_config
from .errors import ArtifactMismatchError, DataError, NumericalError, StitchConfigError

log = logging.getLogger("vqslp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH, EXIT_NUMERIC = 0, 2, 3, 4, 5
POSE_SUFFIXES = (".pose", ".poseb")


class UsageError(Exception):
    pass


# --- shared helpers ------------------------------------------------------------


def _config(args, required: bool) -> RunConfig:
    if args.config is None:
        if required:
            raise UsageError(f"{args.command} needs --config")
        cfg = RunConfig()
    else:
        cfg = load_config(args.config)
    return apply_overrides(cfg, args.set or []).resolved()


def _out_dir(args, cfg: RunConfig, stage: str) -> Path:
    return Path(args.out) if args.out else Path(cfg.output_dir) / stage


def _prepare_out(out: Path, force: bool):
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _write_run_files(out: Path, cfg: RunConfig, command: str, consumed: dict):
    dump_config(cfg, out / "resolved_config.yaml")
    prov = {"command": command, "vqslp_version": __version__, "consumed": consumed}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")


def _codebook_info(path, art) -> dict:
    return {"path": str(path), "kind": "vqslp-codebook", "version": art.version, "fingerprint": art.fingerprint}


def _translator_info(path, tr) -> dict:
    return {"path": str(path), "kind": "vqslp-translator", "version": tr.version, "fingerprint": tr.fingerprint,
            "codebook_fingerprint": tr.codebook_fingerprint}


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} does not exist")
    return p


def _determinism(cfg: RunConfig):
    from .codebook.train import set_determinism
    set_determinism(cfg.deterministic)


def _load_codebook(path):
    from .codebook.artifact import CodebookArtifact
    return CodebookArtifact.load(_require(path, "codebook artifact"))


def _load_translator(path):
    from .translator import TranslatorArtifact
    return TranslatorArtifact.load(_require(path, "translator artifact"))


def _pose_files(path) -> dict[str, Path]:
    root = _require(path, "pose directory")
    if root.is_file():
        return {root.stem: root}
    if (root / "poses").is_dir():
        root = root / "poses"
    files = sorted(p for p in root.iterdir() if p.suffix in POSE_SUFFIXES)
    if not files:
        raise DataError(f"no pose files in {root}")
    return {p.stem: p for p in files}


# --- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .pose_data import generate_synthetic_corpus, write_corpus
    cfg = _config(args, required=True)
    out = _out_dir(args, cfg, "data")
    _prepare_out(out, args.force)
    corpus = generate_synthetic_corpus(cfg.data.synthetic)
    write_corpus(corpus, out, binary=cfg.data.binary)
    _write_run_files(out, cfg, "gen-data", {})
    log.info("wrote %d sentences to %s", len(corpus.records), out)
    return EXIT_OK


def cmd_train_codebook(args) -> int:
    from .codebook.train import train_codebook
    from .pose_data import read_corpus
    cfg = _config(args, required=True)
    out = _out_dir(args, cfg, "codebook")
    _prepare_out(out, args.force)
    _determinism(cfg)
    corpus = read_corpus(_require(args.corpus, "corpus"))

    def progress(row):
        log.info("epoch %d loss %.5f used %d", row["epoch"], row["loss"], row.get("used_entries", -1))

    art = train_codebook(corpus, cfg.codebook.model, use_labels=cfg.codebook.use_labels,
                         deterministic=cfg.deterministic, callback=progress)
    art.save(out)
    _write_run_files(out, cfg, "train-codebook", {"corpus": {"path": str(args.corpus)}})
    return EXIT_OK


def cmd_tokenize(args) -> int:
    from .metrics import codebook_utilization
    from .pipeline import tokenize_corpus
    from .pose_data import read_corpus
    from .tokenizer import write_token_file
    cfg = _config(args, required=False)
    out = _out_dir(args, cfg, "tokens")
    _prepare_out(out, args.force)
    art = _load_codebook(args.codebook)
    corpus = read_corpus(_require(args.corpus, "corpus"))
    seqs = tokenize_corpus(corpus, art, args.split)
    write_token_file(out / "tokens.txt", seqs)
    (out / "utilization.json").write_text(json.dumps(
        {"n_tokens": art.n_tokens, "utilization": codebook_utilization(seqs, art.n_tokens)}, indent=2) + "\n")
    _write_run_files(out, cfg, "tokenize", {"codebook": _codebook_info(args.codebook, art),
                                            "corpus": {"path": str(args.corpus)}})
    return EXIT_OK


def cmd_train_translator(args) -> int:
    from .pipeline import translation_pairs
    from .pose_data import read_corpus
    from .tokenizer import read_token_file
    from .translator import train_translator
    cfg = _config(args, required=True)
    out = _out_dir(args, cfg, "translator")
    _prepare_out(out, args.force)
    _determinism(cfg)
    art = _load_codebook(args.codebook)
    corpus = read_corpus(_require(args.corpus, "corpus"))
    tokens = {t.source_id: t for t in read_token_file(_require(args.tokens, "token file"), art.window)}
    pairs = translation_pairs(corpus, tokens, "train")
    dev = translation_pairs(corpus, tokens, "dev") or None

    def progress(row):
        log.info("epoch %d loss %.4f dev_acc %s", row["epoch"], row["loss"], row.get("dev_accuracy"))

    tr = train_translator(pairs, art.n_tokens, cfg.translator, dev, art.fingerprint,
                          deterministic=cfg.deterministic, callback=progress)
    tr.save(out)
    _write_run_files(out, cfg, "train-translator", {"codebook": _codebook_info(args.codebook, art),
                                                    "tokens": {"path": str(args.tokens)}})
    return EXIT_OK


def cmd_translate(args) -> int:
    from .pose_data import read_corpus, save_pose_file
    from .tokenizer import TokenSequence, detokenize, write_token_file
    from .translator import check_compatible, stitch_pose, translate_tokens
    from .errors import EmptyTranslationError
    cfg = _config(args, required=False)
    if args.blend_width is not None:
        cfg.stitcher.blend_width = args.blend_width
    if args.spline_order is not None:
        cfg.stitcher.spline_order = args.spline_order
    if args.smoothing is not None:
        cfg.stitcher.smoothing = args.smoothing
    stitch = cfg.stitcher.enabled if args.stitch is None else args.stitch
    out = _out_dir(args, cfg, "translations")
    _prepare_out(out, args.force)
    art = _load_codebook(args.codebook)
    tr = _load_translator(args.translator)
    check_compatible(tr, art)
    stitch_cfg = cfg.stitcher.stitch_config(art.window) if stitch else None
    if args.text is not None:
        sources = [(f"text{k:03d}", line.split()) for k, line in enumerate(args.text)]
    elif args.corpus is not None:
        corpus = read_corpus(_require(args.corpus, "corpus"))
        sources = [(r.record_id, r.words) for r in (corpus.split(args.split) if args.split else corpus.records)]
    else:
        raise UsageError("translate needs --text or --corpus")
    (out / "poses").mkdir(exist_ok=True)
    results = []
    for sid, words in sources:
        tokens = translate_tokens(tr, words, args.beam_size, args.length_penalty, args.max_len)
        if not tokens.tokens:
            raise EmptyTranslationError(f"translation of {sid} ({' '.join(words)!r}) produced no tokens")
        tokens = TokenSequence(tokens.tokens, len(tokens) * art.window, 0, sid)
        pose = detokenize(tokens, art, source_id=sid)
        if stitch:
            pose = stitch_pose(pose, art.window, stitch_cfg)
        save_pose_file(out / "poses" / f"{sid}.pose", pose)
        results.append(tokens)
    write_token_file(out / "tokens.txt", results)
    _write_run_files(out, cfg, "translate", {"codebook": _codebook_info(args.codebook, art),
                                             "translator": _translator_info(args.translator, tr)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pose_data import load_pose_file, normalize, read_pose_file
    from .pipeline import evaluate, write_report
    from .tokenizer import read_token_file
    cfg = _config(args, required=False)
    out = _out_dir(args, cfg, "evaluation")
    _prepare_out(out, args.force)
    consumed = {"hyp": {"path": str(args.hyp)}, "ref": {"path": str(args.ref)}}
    hyp = {k: load_pose_file(p) for k, p in _pose_files(args.hyp).items()}
    ref_files = _pose_files(args.ref)
    norm = None
    if args.codebook:
        art = _load_codebook(args.codebook)
        norm = art.normalization
        consumed["codebook"] = _codebook_info(args.codebook, art)
    ref = {}
    for k, p in ref_files.items():
        if k not in hyp:
            continue
        seq, _ = read_pose_file(p)
        ref[k] = normalize(seq, norm)[0] if norm is not None else seq
    hyp_tok = ref_tok = None
    if args.hyp_tokens and args.ref_tokens:
        hyp_tok = {t.source_id: t for t in read_token_file(_require(args.hyp_tokens, "token file"))}
        ref_tok = {t.source_id: t for t in read_token_file(_require(args.ref_tokens, "token file"))}
        ref_tok = {k: v for k, v in ref_tok.items() if k in hyp}
        missing = sorted(set(hyp) - set(hyp_tok) | set(hyp) - set(ref_tok))
        if missing:
            raise DataError(f"token files lack ids {missing[:5]}")
    elif args.hyp_tokens or args.ref_tokens:
        raise UsageError("token scores need both --hyp-tokens and --ref-tokens")
    report = evaluate(hyp, ref, hyp_tok, ref_tok, cfg.metrics.max_n, cfg.metrics.rouge_beta)
    write_report(report, out)
    _write_run_files(out, cfg, "evaluate", consumed)
    sys.stdout.write((out / "summary.txt").read_text())
    return EXIT_OK


def cmd_render(args) -> int:
    from .pose_data import load_pose_file
    from .render import render_sequence
    files = _pose_files(args.poses)
    out = Path(args.out)
    _prepare_out(out, args.force)
    for stem, path in files.items():
        seq = load_pose_file(path)
        target = out if len(files) == 1 else out / stem
        render_sequence(seq, target, size=args.size)
    return EXIT_OK


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqslp", description="Pose-codebook sign language production pipeline.")
    parser.add_argument("--version", action="version", version=f"vqslp {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory (default: <output_dir>/<stage>)")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        return p

    command("gen-data", cmd_gen_data, "generate the synthetic corpus")

    p = command("train-codebook", cmd_train_codebook, "train the pose codebook")
    p.add_argument("--corpus", required=True)

    p = command("tokenize", cmd_tokenize, "tokenize a corpus with a trained codebook")
    p.add_argument("--corpus", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--split", choices=["train", "dev", "test"])

    p = command("train-translator", cmd_train_translator, "train the text-to-token translator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tokens", required=True, help="token file covering the train and dev splits")
    p.add_argument("--codebook", required=True)

    p = command("translate", cmd_translate, "translate sentences into pose files")
    p.add_argument("--translator", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", choices=["train", "dev", "test"])
    p.add_argument("--text", action="append", help="sentence to translate (repeatable)")
    p.add_argument("--stitch", dest="stitch", action="store_true", default=None)
    p.add_argument("--no-stitch", dest="stitch", action="store_false")
    p.add_argument("--blend-width", type=int)
    p.add_argument("--spline-order", type=int)
    p.add_argument("--smoothing", type=float)
    p.add_argument("--beam-size", type=int)
    p.add_argument("--length-penalty", type=float)
    p.add_argument("--max-len", type=int)

    p = command("evaluate", cmd_evaluate, "score hypothesis poses (and tokens) against references")
    p.add_argument("--hyp", required=True, help="pose file directory")
    p.add_argument("--ref", required=True, help="pose file directory or corpus directory")
    p.add_argument("--codebook", help="normalize references with this codebook's params")
    p.add_argument("--hyp-tokens")
    p.add_argument("--ref-tokens")

    p = command("render", cmd_render, "draw stick-figure PNGs, one per frame")
    p.add_argument("--poses", required=True, help="pose file or directory")
    p.add_argument("--size", type=int, default=256)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "render" and not args.out:
        parser.error("render needs --out")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, StitchConfigError) as exc:
        print(f"vqslp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArtifactMismatchError as exc:
        print(f"vqslp: artifact mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericalError as exc:
        print(f"vqslp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"vqslp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
