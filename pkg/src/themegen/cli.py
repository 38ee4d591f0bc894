"""Command line entry point: ``themegen <subcommand> --out RUN_DIR ...``.

Heavy modules are imported inside the handlers so ``--threads`` can set the
BLAS thread count before numpy loads.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import subprocess
import sys
from pathlib import Path

log = logging.getLogger("themegen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ----------------------------------------------------------------- helpers
def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _need(path, producer: str) -> Path:
    p = Path(path) if path else None
    if p is None or not p.exists():
        raise DataError(f"missing input {path!s}; produce it with `themegen {producer}`")
    return p


def _run_file(run_dir, name: str, producer: str) -> Path:
    """Accept either a file or a run directory containing ``name``."""
    if run_dir is None:
        raise DataError(f"no input given; produce {name} with `themegen {producer}`")
    p = Path(run_dir)
    return _need(p / name if p.is_dir() else p, producer)


def _prepare_out(out: str, force: bool) -> Path:
    d = Path(out)
    if d.exists() and any(d.iterdir()):
        if not force:
            raise ConfigError(f"output directory {d} is not empty; pass --force to overwrite")
        # stale outputs would otherwise end up in the new manifest
        for child in d.iterdir():
            shutil.rmtree(child) if child.is_dir() else child.unlink()
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out: Path, command: str, config: dict, inputs: dict[str, Path]) -> None:
    outputs = {
        str(p.relative_to(out)): _sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "git_describe": _git_describe(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in sorted(inputs.items())},
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _read_manifest(path) -> dict:
    p = Path(path)
    p = p / "manifest.json" if p.is_dir() else p.parent / "manifest.json"
    return json.loads(p.read_text()) if p.exists() else {}


# ---------------------------------------------------------------- handlers
def cmd_corpus_synth(a, out: Path) -> dict:
    from .music import save_midi, save_pieces
    from .synth import synth_corpus, write_ground_truth

    corpus = synth_corpus(
        a.n,
        seed=a.seed,
        occurrences=a.occurrences,
        variation_budget=a.variation_budget,
    )
    save_pieces([p for p, _ in corpus], out / "pieces.jsonl")
    write_ground_truth({p.id: beats for p, beats in corpus}, out / "ground_truth.json")
    if a.midi:
        (out / "midi").mkdir()
        for p, _ in corpus:
            save_midi(p, out / "midi" / f"{p.id}.mid")
    print(f"wrote {len(corpus)} synthetic pieces to {out}")
    return {}


def cmd_ingest(a, out: Path) -> dict:
    from .music import MeterError, PieceValidationError, filter_corpus, load_midi, read_manifest, save_pieces

    inputs = {}
    if a.manifest:
        entries = read_manifest(_need(a.manifest, "ingest"))
        inputs["manifest"] = Path(a.manifest)
    else:
        from .music import ManifestEntry

        entries = [ManifestEntry(path=str(p), id=Path(p).stem) for p in (a.midi or [])]
    if not entries:
        raise ConfigError("nothing to ingest: pass --manifest or --midi")
    pieces, rejected = [], []
    for e in entries:
        try:
            pieces.append(load_midi(e.path, e.tracks, piece_id=e.id, key=e.key))
        except (MeterError, PieceValidationError, OSError, ValueError) as exc:
            rejected.append({"path": str(e.path), "reason": str(exc)})
    kept = filter_corpus(pieces)
    kept_ids = {p.id for p in kept}
    rejected += [{"path": p.id, "reason": "key change"} for p in pieces if p.id not in kept_ids]
    save_pieces(kept, out / "pieces.jsonl")
    (out / "rejected.json").write_text(json.dumps(rejected, indent=2) + "\n")
    print(f"ingested {len(kept)} pieces, rejected {len(rejected)}")
    return inputs


def cmd_tokenize(a, out: Path) -> dict:
    from .codec import encode_piece, write_token_binary, write_token_text
    from .music import load_pieces
    from .vocab import PIANO

    src = _run_file(a.pieces, "pieces.jsonl", "corpus-synth")
    (out / "tokens").mkdir()
    (out / "vocab.tsv").write_text(PIANO.dump())
    for p in load_pieces(src):
        ids = encode_piece(p)
        if a.format == "text":
            write_token_text(ids, out / "tokens" / f"{p.id}.txt")
        else:
            write_token_binary(ids, out / "tokens" / f"{p.id}.tok")
    return {"pieces": src}


def _embed_config(a):
    from .embedding import EmbedConfig

    return EmbedConfig(
        layers=a.layers,
        hidden=a.hidden,
        heads=a.heads,
        ff=a.ff,
        batch=a.batch,
        steps=a.steps,
        lr=a.lr,
        alpha=a.alpha,
        seed=a.seed,
    )


def cmd_embed_train(a, out: Path) -> dict:
    from .embedding import save_embedding, train_embedding, training_fragments
    from .music import load_pieces

    src = _run_file(a.pieces, "pieces.jsonl", "corpus-synth")
    config = _embed_config(a)
    frags = training_fragments(load_pieces(src))
    if not frags:
        raise DataError("no melody fragments in the corpus")
    try:
        store, losses = train_embedding(frags, config, loss_csv=out / "loss.csv")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_embedding(store, config, out / "embedding.ckpt")
    print(f"trained embedding on {len(frags)} fragments; final loss {losses[-1]:.4f}" if losses else "no steps run")
    return {"pieces": src}


def _load_embedding(path):
    from .embedding import load_embedding

    return load_embedding(_run_file(path, "embedding.ckpt", "embed-train"))


def cmd_cluster(a, out: Path) -> dict:
    from .music import load_pieces
    from .retrieval import ClusterConfig, analyse_piece, cluster_report, first_fragment_condition

    src = _run_file(a.pieces, "pieces.jsonl", "corpus-synth")
    emb_path = _run_file(a.embedding, "embedding.ckpt", "embed-train")
    store, econf = _load_embedding(emb_path)
    cconf = ClusterConfig(eps=a.eps, min_points=a.min_points)
    themes, skipped = {}, []
    (out / "reports").mkdir()
    for p in load_pieces(src):
        r = analyse_piece(p, store, econf, cconf)
        (out / "reports" / f"{p.id}.json").write_text(json.dumps(cluster_report(p, r), indent=2) + "\n")
        cond = r.condition
        if cond is None:
            if not a.fallback_first or not r.fragments:
                skipped.append(p.id)
                continue
            cond = first_fragment_condition(p)
        themes[p.id] = {
            "spans": [list(s) for s in cond.spans],
            "condition_span": list(cond.fragment.span),
            "condition_tokens": list(cond.tokens),
        }
    (out / "themes.json").write_text(json.dumps({"themes": themes, "skipped": skipped}, indent=2) + "\n")
    print(f"themes for {len(themes)} pieces; {len(skipped)} without a theme cluster")
    return {"pieces": src, "embedding": emb_path}


def cmd_f1(a, out: Path) -> dict:
    import numpy as np

    from .retrieval import retrieval_f1
    from .synth import read_ground_truth

    tpath = _run_file(a.themes, "themes.json", "cluster")
    gpath = _run_file(a.ground_truth, "ground_truth.json", "corpus-synth")
    themes = json.loads(tpath.read_text())["themes"]
    truth = read_ground_truth(gpath)
    rows = []
    for pid in sorted(truth):
        spans = themes.get(pid, {}).get("spans", [])
        pred = {b for s0, s1 in spans for b in range(4 * s0, 4 * s1)}
        rows.append((pid, *retrieval_f1(pred, truth[pid])))
    with open(out / "f1.csv", "w") as fh:
        fh.write("piece,precision,recall,f1\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]!r}\n")
        fh.write(f"mean,{np.mean([r[1] for r in rows])!r},{np.mean([r[2] for r in rows])!r},{np.mean([r[3] for r in rows])!r}\n")
    print(f"mean F1 {np.mean([r[3] for r in rows]):.3f} over {len(rows)} pieces")
    return {"themes": tpath, "ground_truth": gpath}


def _training_sequences(pieces, themes: dict, variant: str):
    import numpy as np

    from dataclasses import replace

    from .codec import encode_piece
    from .training import TrainingSequence

    seqs = []
    for p in pieces:
        t = themes.get(p.id)
        if t is None:
            continue
        if variant == "prompt":
            ids = encode_piece(p, themes=False)
        else:
            ids = encode_piece(replace(p, theme_spans=tuple(tuple(s) for s in t["spans"])))
        seqs.append(TrainingSequence(np.asarray(ids), tuple(t["condition_tokens"]), p.id))
    return seqs


def cmd_train(a, out: Path) -> dict:
    from .models import ModelConfig
    from .music import load_pieces
    from .training import TrainConfig, make_windows, train

    src = _run_file(a.pieces, "pieces.jsonl", "corpus-synth")
    tpath = _run_file(a.themes, "themes.json", "cluster")
    themes = json.loads(tpath.read_text())["themes"]
    try:
        mconf = ModelConfig(
            variant=a.variant, layers=a.layers, heads=a.heads, hidden=a.hidden, ff=a.ff,
            max_condition=a.max_condition, seed=a.seed,
        )
        tconf = TrainConfig(window=a.window, batch=a.batch, lr=a.lr, steps=a.steps, seed=a.seed, windows=a.windows)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    seqs = _training_sequences(load_pieces(src), themes, a.variant)
    windows = make_windows(seqs, tconf.window, a.variant, tconf.windows, tconf.seed, max_condition=mconf.max_condition)
    if not windows:
        raise DataError(f"no training windows of length {tconf.window}; lower --window or add longer pieces")
    store, losses = train(mconf, windows, tconf, loss_csv=out / "loss.csv", checkpoint_path=out / "model.ckpt")
    print(f"trained {a.variant} on {len(windows)} windows; final loss {losses[-1]:.4f}" if losses else "no steps run")
    return {"pieces": src, "themes": tpath}


def cmd_generate(a, out: Path) -> dict:
    from .codec import decode_tokens, write_token_text
    from .generation import GenConfig, GenerationError, generate
    from .models import load_model
    from .music import save_midi

    mpath = _run_file(a.model, "model.ckpt", "train")
    tpath = _run_file(a.themes, "themes.json", "cluster")
    store, mconf, _ = load_model(mpath, variant=a.variant)
    themes = json.loads(tpath.read_text())["themes"]
    ids = sorted(themes) if not a.piece else a.piece
    missing = [i for i in ids if i not in themes]
    if missing:
        raise DataError(f"no theme for pieces {missing}; run `themegen cluster` on them")
    ids = ids[: a.count] if a.count else ids
    gen = GenConfig(
        temperature=a.temperature, max_bars=a.max_bars, max_tokens=a.max_tokens,
        context=a.context, seed=a.seed, constrained=not a.unconstrained,
    )
    (out / "tokens").mkdir()
    (out / "midi").mkdir()
    index = {}
    for k, pid in enumerate(ids):
        cond = themes[pid]["condition_tokens"]
        g = GenConfig(**{**gen.to_dict(), "seed": gen.seed + k})
        try:
            seq = generate(store, mconf, cond, g)
        except GenerationError as exc:
            log.warning("generation for %s stopped early: %s", pid, exc)
            seq = exc.partial
        write_token_text(seq, out / "tokens" / f"{pid}.txt")
        try:
            save_midi(decode_tokens(seq, piece_id=pid), out / "midi" / f"{pid}.mid")
        except ValueError as exc:
            log.warning("could not render %s to MIDI: %s", pid, exc)
        index[pid] = {"tokens": seq, "condition_tokens": cond}
    (out / "generated.json").write_text(json.dumps({"variant": mconf.variant, "pieces": index}) + "\n")
    print(f"generated {len(index)} sequences with the {mconf.variant} model")
    return {"model": mpath, "themes": tpath}


def cmd_evaluate(a, out: Path) -> dict:
    from .metrics import evaluate_sequence, write_report

    gpath = _run_file(a.generated, "generated.json", "generate")
    emb_path = _run_file(a.embedding, "embedding.ckpt", "embed-train")
    store, econf = _load_embedding(emb_path)
    data = json.loads(gpath.read_text())
    theme_metrics = data["variant"] != "prompt"
    rows, ids = [], []
    for pid, item in sorted(data["pieces"].items()):
        rows.append(evaluate_sequence(item["tokens"], store, econf, item.get("condition_tokens"), theme_metrics))
        ids.append(pid)
    write_report(rows, ids, out / "report.csv", theme_metrics)
    print((out / "report.csv").read_text().splitlines()[-1])
    return {"generated": gpath, "embedding": emb_path}


def cmd_curve(a, out: Path) -> dict:
    from .codec import decode_tokens
    from .metrics import melody_inconsistency_curve, write_curve
    from .music import load_pieces

    emb_path = _run_file(a.embedding, "embedding.ckpt", "embed-train")
    store, econf = _load_embedding(emb_path)
    inputs = {"embedding": emb_path}
    if a.generated:
        gpath = _run_file(a.generated, "generated.json", "generate")
        data = json.loads(gpath.read_text())["pieces"]
        pieces = [decode_tokens(v["tokens"], piece_id=k) for k, v in sorted(data.items())]
        inputs["generated"] = gpath
    else:
        src = _run_file(a.pieces, "pieces.jsonl", "corpus-synth")
        pieces = load_pieces(src)
        inputs["pieces"] = src
    (out / "curves").mkdir()
    for p in pieces:
        write_curve(melody_inconsistency_curve(p, store, econf), out / "curves" / f"{p.id}.csv")
    return inputs


# ------------------------------------------------------------------ parser
def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="themegen", description="Theme-conditioned symbolic music toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--out", required=True, help="run directory for the outputs")
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=_positive_int, default=None, help="BLAS threads (default $THEMEGEN_THREADS or 1)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = add("corpus-synth", cmd_corpus_synth, "generate a synthetic corpus with planted themes")
    p.add_argument("--n", type=_positive_int, default=20)
    p.add_argument("--occurrences", type=int, default=4)
    p.add_argument("--variation-budget", type=int, default=1)
    p.add_argument("--midi", action="store_true", help="also write MIDI files")

    p = add("ingest", cmd_ingest, "load and filter MIDI files")
    p.add_argument("--manifest", help="corpus manifest JSON")
    p.add_argument("--midi", nargs="*", help="MIDI files with MELODY/PIANO tracks")

    p = add("tokenize", cmd_tokenize, "encode pieces as token files")
    p.add_argument("--pieces", help="pieces.jsonl or its run directory")
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = add("embed-train", cmd_embed_train, "train the melody embedding")
    p.add_argument("--pieces")
    p.add_argument("--layers", type=_positive_int, default=2)
    p.add_argument("--hidden", type=_positive_int, default=64)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--ff", type=_positive_int, default=128)
    p.add_argument("--batch", type=_positive_int, default=16)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=2e-3)
    p.add_argument("--alpha", type=float, default=0.5)

    p = add("cluster", cmd_cluster, "retrieve each piece's theme")
    p.add_argument("--pieces")
    p.add_argument("--embedding", help="embedding.ckpt or its run directory")
    p.add_argument("--eps", type=float, default=0.13)
    p.add_argument("--min-points", type=int, default=2)
    p.add_argument("--fallback-first", action="store_true", help="use the first fragment when no cluster exists")

    p = add("f1", cmd_f1, "score retrieved themes against beat labels")
    p.add_argument("--themes")
    p.add_argument("--ground-truth")

    p = add("train", cmd_train, "train a generative model")
    p.add_argument("--pieces")
    p.add_argument("--themes")
    p.add_argument("--variant", choices=("prompt", "seq2seq", "theme"), default="theme")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=_positive_int, default=4)
    p.add_argument("--hidden", type=_positive_int, default=64)
    p.add_argument("--ff", type=_positive_int, default=128)
    p.add_argument("--max-condition", type=_positive_int, default=512)
    p.add_argument("--window", type=int, default=256)
    p.add_argument("--batch", type=_positive_int, default=8)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--windows", type=int, default=None)

    p = add("generate", cmd_generate, "sample pieces from a trained model")
    p.add_argument("--model", help="model.ckpt or its run directory")
    p.add_argument("--themes")
    p.add_argument("--variant", choices=("prompt", "seq2seq", "theme"), default=None)
    p.add_argument("--piece", nargs="*", help="piece ids to condition on (default: all)")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--temperature", type=float, default=1.2)
    p.add_argument("--max-bars", type=_positive_int, default=64)
    p.add_argument("--max-tokens", type=_positive_int, default=4096)
    p.add_argument("--context", type=_positive_int, default=512)
    p.add_argument("--unconstrained", action="store_true", help="sample without the grammar constraint")

    p = add("evaluate", cmd_evaluate, "objective metrics of generated pieces")
    p.add_argument("--generated", help="generated.json or its run directory")
    p.add_argument("--embedding")

    p = add("curve", cmd_curve, "melody inconsistency curves")
    p.add_argument("--pieces")
    p.add_argument("--generated")
    p.add_argument("--embedding")
    return parser


_META = {"out", "config", "force", "threads", "verbose", "handler", "command"}


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        values = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    known = set(vars(args)) - _META
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
    # flags given explicitly on the command line win over the file
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads or int(os.environ.get("THEMEGEN_THREADS", "1") or 1)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    from .autograd import CheckpointError
    from .grammar import GrammarError
    from .music import MeterError, PieceValidationError
    from .retrieval import NoThemeFound

    config = {k: v for k, v in sorted(vars(args).items()) if k not in _META}
    try:
        out = _prepare_out(args.out, args.force)
        inputs = args.handler(args, out)
        _write_manifest(out, args.command, config, inputs or {})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, GrammarError, MeterError, PieceValidationError, NoThemeFound) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
