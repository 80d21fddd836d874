"""Command-line entry point: ``gmatt <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 failure during computation.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (N_CLASSES, PreparedCorpus, ReactionRecord, Vocab, class_table,
                      collate_trees, filter_in_grammar, ingest_line, load_reactions, prepare_tree,
                      split, split_precursors, target_tokens, write_reactions)
from .decoding import predict
from .errors import DataError, LengthMismatch, MalformedLine, MissingClass, RuntimeFailure
from .grammar import default_grammar, parse, reconstruct
from .metrics import evaluate, table_rows
from .model import ModelConfig, extract_cross_attention
from .training import (LrSchedule, TrainConfig, load_checkpoint, new_state, save_checkpoint,
                       train, write_log)
from .tree_encoding import EncodingConfig, encode_tree, edge_paths

log = logging.getLogger("gmatt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flags or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---- run configuration -----------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    """Everything ``gmatt train`` needs; loadable from JSON with flag overrides."""
    train_path: str = ""
    valid_path: str = ""
    out_dir: str = "run"
    resume: str = ""
    with_class: bool = False
    seed: int = 0
    # model
    d_model: int = 256
    heads: int = 8
    encoder_layers: int = 4
    decoder_layers: int = 4
    tcb_depth: int = 2
    d_ff: int = 0
    dropout: float = 0.2
    max_in: int = 350
    max_out: int = 121
    path_length: int = 64
    edge_dim: int = 4
    dtype: str = "float32"
    # optimisation
    epochs: int = 250
    batch_size: int = 32
    eta_min: float = 1e-4
    eta_max: float = 5e-4
    cycle_epochs: float = 10.0
    gamma: float = 0.98
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 0.0
    save_every: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def validate(self) -> None:
        if not self.train_path and not self.resume:
            raise UsageError("train_path is required")
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            kind = {"int": int, "float": (int, float), "bool": bool, "str": str}[f.type]
            if not isinstance(value, kind) or (f.type == "int" and isinstance(value, bool)):
                raise UsageError(f"config key {f.name} must be {f.type}, got {value!r}")
        positive = ("d_model", "heads", "encoder_layers", "decoder_layers", "tcb_depth",
                    "max_in", "max_out", "path_length", "edge_dim", "epochs", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError("dropout must be in [0, 1)")
        if not 0 < self.eta_min <= self.eta_max:
            raise UsageError("need 0 < eta_min <= eta_max")
        try:
            self.model_config(1, 1)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def model_config(self, encoder_vocab: int, decoder_vocab: int) -> ModelConfig:
        return ModelConfig(d_model=self.d_model, heads=self.heads,
                           encoder_layers=self.encoder_layers, decoder_layers=self.decoder_layers,
                           tcb_depth=self.tcb_depth, d_ff=self.d_ff or None, dropout=self.dropout,
                           max_in=self.max_in, max_out=self.max_out, path_length=self.path_length,
                           edge_dim=self.edge_dim, encoder_vocab=encoder_vocab,
                           decoder_vocab=decoder_vocab, dtype=self.dtype)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           schedule=LrSchedule(self.eta_min, self.eta_max, self.cycle_epochs,
                                               self.gamma),
                           beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                           clip_norm=self.clip_norm or None)


_FIELD_HELP = {
    "train_path": "training reactions file", "valid_path": "validation reactions file",
    "out_dir": "directory for checkpoint.gmat and train_log.csv",
    "resume": "checkpoint to resume from", "with_class": "prepend the reaction-class token",
    "seed": "random seed", "d_model": "model width", "heads": "attention heads",
    "encoder_layers": "encoder layers", "decoder_layers": "decoder layers",
    "tcb_depth": "stacked tree-convolution layers per block",
    "d_ff": "decoder feed-forward width (0 = 4*d_model)", "dropout": "dropout rate",
    "max_in": "max product tree nodes", "max_out": "max target tokens",
    "path_length": "edge-path length L", "edge_dim": "encoding width per path element",
    "dtype": "float32 or float64", "epochs": "total epochs", "batch_size": "batch size",
    "eta_min": "base learning rate", "eta_max": "first-cycle peak learning rate",
    "cycle_epochs": "epochs per learning-rate cycle", "gamma": "peak decay per cycle",
    "beta1": "Adam beta1", "beta2": "Adam beta2", "eps": "Adam epsilon",
    "clip_norm": "global gradient-norm clip (0 = off)",
    "save_every": "write the checkpoint every N epochs",
}


def _add_run_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags below override it")
    for f in dataclasses.fields(RunConfig):
        if f.name == "seed":
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action="store_true", default=None,
                           help=_FIELD_HELP[f.name])
        else:
            conv = {"int": int, "float": float, "str": str}[f.type]
            p.add_argument(flag, dest=f.name, type=conv, default=None,
                           help=f"{_FIELD_HELP[f.name]} (default {f.default})")


def build_run_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = RunConfig.from_dict(data)
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None and not (f.name == "seed" and args.seed_default):
            setattr(cfg, f.name, value)
    cfg.validate()
    return cfg


# ---- subcommands -----------------------------------------------------------------

def cmd_grammar(args) -> int:
    g = default_grammar()
    if args.what == "rules":
        for rule in g.rules:
            print(f"{rule.id}\t{rule}")
    elif args.what == "nonterminals":
        print("\n".join(g.nonterminals))
    else:
        print("\n".join(g.surface_terminals))
    return EXIT_OK


def cmd_parse(args) -> int:
    tree = parse(args.smiles)
    if args.check:
        if reconstruct(tree) != args.smiles:
            raise RuntimeFailure("reconstruction differs from input")
        print(f"ok\t{len(tree)} nodes\theight {tree.height()}")
    else:
        print(tree.pretty())
    return EXIT_OK


def cmd_encode(args) -> int:
    tree = parse(args.smiles)
    enc = EncodingConfig(args.path_length, args.edge_dim, args.path_length * args.edge_dim)
    paths = edge_paths(tree, enc.L)
    tpe = encode_tree(tree, enc)
    out = _open_out(args.out)
    w = csv.writer(out, delimiter="," if args.format == "csv" else "\t", lineterminator="\n")
    w.writerow(["node", "parent", "label", "path"] + [f"tpe_{j}" for j in range(tpe.shape[1])])
    for i, node in enumerate(tree.nodes):
        parent = "" if node.parent is None else node.parent
        path = " ".join(str(int(x)) for x in paths[i] if x) or "root"
        w.writerow([i, parent, tree.label(i), path] + [repr(float(x)) for x in tpe[i]])
    _close_out(out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    records = []
    bad = 0
    with open(args.input, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parsed = ingest_line(line)
            if parsed is None:
                if not args.skip_bad:
                    raise MalformedLine(line_no, "expected 'reactants>reagents>product'")
                bad += 1
                continue
            class_id, reactants, product = parsed
            if class_id is not None and not 1 <= class_id <= N_CLASSES:
                if not args.skip_bad:
                    raise MalformedLine(line_no, f"reaction class {class_id} not in 1..10")
                bad += 1
                continue
            precs = tuple(p for p in reactants.split(".") if p)
            if not precs or not product:
                if not args.skip_bad:
                    raise MalformedLine(line_no, "empty product or reactant list")
                bad += 1
                continue
            records.append(ReactionRecord(product, precs, class_id, line_no))
    kept, dropped = filter_in_grammar(records, path_length=args.path_length)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fractions = _fractions(args.fractions)
    parts = split(kept, fractions, args.seed)
    for name, part in zip(("train", "valid", "test"), parts):
        write_reactions(part, out_dir / f"{name}.txt")
    with open(out_dir / "dropped.tsv", "w", encoding="utf-8") as fh:
        fh.write("line\treason\treaction\n")
        for rec, reason in dropped:
            fh.write(f"{rec.line_no}\t{reason}\t{'.'.join(rec.precursors)}>>{rec.product}\n")
    reasons: dict[str, int] = {}
    for _, reason in dropped:
        reasons[reason] = reasons.get(reason, 0) + 1
    print(f"read\t{len(records) + bad}")
    print(f"skipped_malformed\t{bad}")
    print(f"kept\t{len(kept)}")
    for reason in sorted(reasons):
        print(f"dropped_{reason}\t{reasons[reason]}")
    print("split\t" + "\t".join(str(len(p)) for p in parts))
    return EXIT_OK


def cmd_stats(args) -> int:
    parts = [load_reactions(p, with_class=True) if p else [] for p in
             (args.train, args.valid, args.test)]
    rows = class_table(*parts)
    out = _open_out(args.out)
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(["class", "name", "train", "valid", "test", "total"])
    for r in rows:
        w.writerow([r["cls"], r["name"], r["train"], r["valid"], r["test"], r["total"]])
    w.writerow(["", "total"] + [sum(r[c] for r in rows) for c in ("train", "valid", "test", "total")])
    _close_out(out)
    return EXIT_OK


def cmd_train(args) -> int:
    rc = build_run_config(args)
    out_dir = Path(rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = rc.train_config()
    state = None
    if rc.resume:
        ckpt = load_checkpoint(rc.resume)
        vocab, cfg, with_class = ckpt.vocab, ckpt.config, ckpt.with_class
        state = ckpt.training_state()
        if not rc.train_path:
            raise UsageError("train_path is required to resume")
    train_recs = load_reactions(rc.train_path, with_class=rc.with_class)
    train_recs, dropped = filter_in_grammar(train_recs, rc.max_in, rc.max_out, rc.path_length)
    if dropped:
        log.warning("dropped %d training records that fail the grammar or caps", len(dropped))
    if state is None:
        vocab = Vocab.build(train_recs)
        cfg = rc.model_config(len(vocab.encoder_symbols), len(vocab.decoder_symbols))
        with_class = rc.with_class
        state = new_state(cfg, tcfg)
    corpus = PreparedCorpus(train_recs, vocab, cfg, with_class)
    valid = None
    if rc.valid_path:
        valid_recs, _ = filter_in_grammar(load_reactions(rc.valid_path, with_class), rc.max_in,
                                          rc.max_out, rc.path_length)
        valid = PreparedCorpus(valid_recs, vocab, cfg, with_class)
    ckpt_path = out_dir / "checkpoint.gmat"

    def on_epoch(st):
        if st.epoch % rc.save_every == 0 or st.epoch == tcfg.epochs:
            save_checkpoint(ckpt_path, st, vocab, tcfg, with_class)
        write_log(st.history, out_dir / "train_log.csv")

    state = train(corpus, tcfg, valid, state, on_epoch)
    save_checkpoint(ckpt_path, state, vocab, tcfg, with_class)
    write_log(state.history, out_dir / "train_log.csv")
    (out_dir / "run_config.json").write_text(json.dumps(dataclasses.asdict(rc), indent=2,
                                                        sort_keys=True) + "\n")
    last = [h for h in state.history if h["split"] == "train"][-1] if state.history else None
    if last:
        print(f"epoch\t{last['epoch']}\tloss\t{last['loss']:.6f}\tchar_acc\t{last['char_acc']:.6f}")
    return EXIT_OK


def _prediction_inputs(args) -> list[tuple[str, int | None]]:
    if args.smiles:
        return [(args.smiles, args.reaction_class)]
    items = []
    for line_no, line in enumerate(Path(args.input).read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        cls = args.reaction_class
        if "\t" in text:
            head, text = text.split("\t", 1)
            try:
                cls = int(head)
            except ValueError:
                raise MalformedLine(line_no, f"bad class column {head!r}") from None
        if ">>" in text:
            text = text.split(">>", 1)[1].strip()
        items.append((text, cls))
    return items


def cmd_predict(args) -> int:
    if bool(args.smiles) == bool(args.input):
        raise UsageError("give exactly one of --smiles or --input")
    ckpt = load_checkpoint(args.checkpoint)
    model, vocab = ckpt.model(), ckpt.vocab
    inputs = _prediction_inputs(args)
    if ckpt.with_class and any(cls is None for _, cls in inputs):
        raise MissingClass("this model was trained with reaction classes; pass --class")
    out = _open_out(args.out)
    w = csv.writer(out, delimiter="\t", lineterminator="\n")
    w.writerow(["index", "rank", "prediction", "log_likelihood", "valid"])
    for idx, (smiles, cls) in enumerate(inputs):
        try:
            preds = predict(smiles, model, vocab, args.beam, cls, ckpt.with_class, args.max_len)
        except DataError as exc:
            if args.input is None or not args.skip_bad:
                raise
            log.warning("input %d (%s): %s", idx, smiles, exc)
            continue
        for p in preds:
            w.writerow([idx, p.rank, p.smiles, repr(p.log_likelihood), int(p.valid)])
    _close_out(out)
    return EXIT_OK


def read_predictions(path) -> dict[int, list[str]]:
    preds: dict[int, list[tuple[int, str]]] = {}
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        if reader.fieldnames is None or not {"index", "rank", "prediction"} <= set(reader.fieldnames):
            raise MalformedLine(1, "prediction file needs index, rank and prediction columns")
        for line_no, row in enumerate(reader, start=2):
            try:
                preds.setdefault(int(row["index"]), []).append((int(row["rank"]),
                                                                 row["prediction"] or ""))
            except (TypeError, ValueError):
                raise MalformedLine(line_no, "non-integer index or rank") from None
    return {i: [s for _, s in sorted(v)] for i, v in preds.items()}


def cmd_evaluate(args) -> int:
    truths = load_reactions(args.truth)
    preds = read_predictions(args.preds)
    ks = [int(k) for k in args.k.split(",") if k.strip()]
    if not ks or min(ks) < 1:
        raise UsageError("--k needs positive integers")
    if preds and max(preds) >= len(truths):
        raise LengthMismatch(f"predictions reference index {max(preds)} but the truth file has "
                             f"{len(truths)} records")
    # indices absent from the file (skipped products) count as empty ranked lists
    ranked = [preds.get(i, []) for i in range(len(truths))]
    report = evaluate(ranked, truths, ks, args.threshold)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print("measure\t" + "\t".join(f"top-{k}" for k in report["ks"]))
    for title, values in table_rows(report):
        print(title + "\t" + "\t".join("-" if v is None else f"{100 * v:.1f}" for v in values))
    return EXIT_OK


def cmd_attnmap(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model, vocab = ckpt.model(), ckpt.vocab
    cls = args.reaction_class
    if args.target is None:
        preds = predict(args.smiles, model, vocab, args.beam, cls, ckpt.with_class)
        ids = list(preds[0].tokens[1:])
        if ids and ids[-1] == vocab.end_id:
            ids = ids[:-1]
    else:
        ids = vocab.encode_target(target_tokens(split_precursors(args.target)))
    prepared = prepare_tree(args.smiles, vocab, model.cfg, cls, ckpt.with_class)
    batch = collate_trees([prepared], model.cfg.dtype)
    tgt_in = np.array([[vocab.start_id] + ids], dtype=np.int64)
    attn = extract_cross_attention(model, batch, tgt_in)
    out_tokens = [vocab.decoder_symbols[i] for i in ids] + ["<END>"]
    out_path = Path(args.out)
    write_attention_csv(out_path, attn, out_tokens)
    legend = Path(args.legend) if args.legend else out_path.with_suffix(".legend.tsv")
    with open(legend, "w", encoding="utf-8") as fh:
        fh.write("row\tlabel\n")
        for i, label in enumerate(prepared.labels):
            fh.write(f"{i}\t{label}\n")
    print(f"{attn.shape[0]} nodes x {attn.shape[1]} output tokens -> {out_path}, {legend}")
    return EXIT_OK


def write_attention_csv(path, attn: np.ndarray, columns: list[str]) -> None:
    """Rows are encoder nodes, columns output tokens; floats are written round-trip exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row"] + [f"{j}:{tok}" for j, tok in enumerate(columns)])
        for i, row in enumerate(attn):
            w.writerow([i] + [repr(float(x)) for x in row])


def read_attention_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    columns = [c.split(":", 1)[1] for c in rows[0][1:]]
    data = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    return data.reshape(len(rows) - 1, len(columns)), columns


# ---- helpers ---------------------------------------------------------------------

def _fractions(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"bad --fractions {text!r}") from None
    if len(vals) != 3 or abs(sum(vals) - 1.0) > 1e-9 or min(vals) < 0:
        raise UsageError("--fractions needs three non-negative numbers summing to 1")
    return vals


def _open_out(path):
    return open(path, "w", newline="", encoding="utf-8") if path else sys.stdout


def _close_out(fh):
    if fh is not sys.stdout:
        fh.close()


def _class_id(text: str) -> int:
    k = int(text)
    if not 1 <= k <= N_CLASSES:
        raise argparse.ArgumentTypeError(f"class must be in 1..{N_CLASSES}")
    return k


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="gmatt", description="Grammar-tree transformer for single-step retrosynthesis.")
    p.add_argument("--version", action="version", version=f"gmatt {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("grammar", parents=[common], help="print the SMILES grammar")
    s.add_argument("what", nargs="?", default="rules", choices=["rules", "nonterminals", "terminals"],
                   help="what to list (default rules)")
    s.set_defaults(func=cmd_grammar)

    s = sub.add_parser("parse", parents=[common], help="parse a SMILES string into a grammar tree")
    s.add_argument("--smiles", required=True, help="molecule to parse")
    s.add_argument("--check", action="store_true",
                   help="only report node count and height after a round-trip check")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("encode", parents=[common], help="edge paths and tree positional encodings")
    s.add_argument("--smiles", required=True, help="molecule to encode")
    s.add_argument("--path-length", type=int, default=64, help="edge-path length L (default 64)")
    s.add_argument("--edge-dim", type=int, default=4, help="encoding width per element (default 4)")
    s.add_argument("--format", choices=["csv", "tsv"], default="csv", help="output format")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("ingest", parents=[common],
                       help="convert a reaction export, filter to the grammar and split")
    s.add_argument("--input", required=True,
                   help="lines 'reactants>reagents>product', optional class column before a tab or comma")
    s.add_argument("--out-dir", required=True, help="writes train.txt, valid.txt, test.txt, dropped.tsv")
    s.add_argument("--fractions", default="0.8,0.1,0.1", help="train,valid,test fractions")
    s.add_argument("--path-length", type=int, default=64, help="drop products deeper than this")
    s.add_argument("--skip-bad", action="store_true", help="skip malformed lines instead of failing")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("stats", parents=[common], help="per-class counts of split files")
    s.add_argument("--train", help="training reactions (with class column)")
    s.add_argument("--valid", help="validation reactions (with class column)")
    s.add_argument("--test", help="test reactions (with class column)")
    s.add_argument("--out", help="output TSV (default stdout)")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", parents=[common], help="train a model")
    _add_run_config_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="beam-search precursor predictions")
    s.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    s.add_argument("--smiles", help="single product")
    s.add_argument("--input", help="file of products, 'class<TAB>product' lines or reaction lines")
    s.add_argument("--class", dest="reaction_class", type=_class_id, help="reaction class 1..10")
    s.add_argument("--beam", type=int, default=10, help="beam size (default 10)")
    s.add_argument("--max-len", type=int, help="max output tokens (default max_out + 1)")
    s.add_argument("--skip-bad", action="store_true", help="skip products that fail to parse")
    s.add_argument("--out", help="output TSV (default stdout)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="top-k metrics for a prediction file")
    s.add_argument("--preds", required=True, help="TSV written by predict")
    s.add_argument("--truth", required=True, help="reaction file; line i pairs with index i")
    s.add_argument("--k", default="1,2,3,5,10", help="comma-separated k values")
    s.add_argument("--threshold", type=float, default=0.85, help="Tanimoto threshold for BASR")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("attnmap", parents=[common], help="export averaged cross-attention")
    s.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    s.add_argument("--smiles", required=True, help="product")
    s.add_argument("--target", help="precursors to teacher-force (default: top beam prediction)")
    s.add_argument("--class", dest="reaction_class", type=_class_id, help="reaction class 1..10")
    s.add_argument("--beam", type=int, default=5, help="beam size when predicting the target")
    s.add_argument("--out", required=True, help="CSV of nodes x output tokens")
    s.add_argument("--legend", help="row-label file (default <out>.legend.tsv)")
    s.set_defaults(func=cmd_attnmap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"gmatt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:        # --help / --version
        return int(exc.code or 0)
    args.seed_default = args.seed is None
    if args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gmatt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, UnicodeDecodeError) as exc:
        print(f"gmatt: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:        # noqa: BLE001  anything else is a runtime failure
        print(f"gmatt: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
