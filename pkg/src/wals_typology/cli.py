"""Command-line entry points: prepare, stats, train, eval, predict.

Every command writes ``manifest.json`` into its ``--out`` directory. Errors
are reported on standard error as ``error: <kind>: <message>`` with exit
status 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .corpus import (
    MAX_CHARS,
    MIN_CHARS,
    SPLITS,
    CorpusError,
    Example,
    JoinReport,
    corpus_stats,
    filter_by_length,
    format_stats,
    join_corpus,
    make_splits,
    parse_split_manifest,
    read_corpus_file,
)
from .dataset import build_dataset
from .evaluator import GROUPINGS, TAU, aggregate, decode, render_report
from .featurizer import MODE_DEFAULTS
from .losses import build_weights
from .nn.layers import SequenceTooShort
from .nn.model import Model, ModelConfig, make_batch
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    restore,
    space_meta,
    train,
)
from .wals_schema import (
    WalsParseError,
    build_label_space,
    format_catalog,
    format_languages,
    label_space_from_mask,
    parse_catalog,
    parse_languages,
    prune_languages,
    records_by_iso,
)

log = logging.getLogger("wals_typology")

REPORT_GROUPINGS = ("chapter_type", "macro_area", "family", "feature")
# model fields derived from the data, never configurable
DERIVED_FIELDS = {"feature_sizes"}
SEED_FIELDS = {"seed", "init_seed", "dropout_seed"}


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


ERROR_KINDS = (
    (ConfigError, "config"),
    (CheckpointError, "checkpoint"),
    (TrainingDiverged, "diverged"),
    (SequenceTooShort, "input"),
    (WalsParseError, "input"),
    (CorpusError, "input"),
    (InputError, "input"),
    (FileNotFoundError, "input"),
    (IsADirectoryError, "input"),
)


def warn(message: str) -> None:
    sys.stderr.write(f"warning: {message}\n")


# -- manifest ---------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    artifact_version: str = __version__
    argv: list = field(default_factory=list)

    def add_inputs(self, *paths):
        for p in paths:
            self.inputs[str(p)] = sha256_file(p)

    def add_outputs(self, out_dir: Path, *paths):
        for p in paths:
            self.outputs[str(Path(p).relative_to(out_dir))] = sha256_file(p)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


# -- configuration ----------------------------------------------------------

def _field_types(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


MODEL_FIELDS = {k: v for k, v in _field_types(ModelConfig).items() if k not in DERIVED_FIELDS}
TRAIN_FIELDS = _field_types(TrainConfig)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        if isinstance(default, int) or (default is None and key in SEED_FIELDS):
            return None if raw.lower() == "none" else int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _default(key):
    f = MODEL_FIELDS.get(key) or TRAIN_FIELDS[key]
    return f.default


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source} line {lineno}: expected 'key = value'")
        if key not in MODEL_FIELDS and key not in TRAIN_FIELDS:
            raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, _default(key))
    return out


def format_config(model: dict, train_cfg: dict) -> str:
    lines = []
    for d in (model, train_cfg):
        for k, v in d.items():
            if k in DERIVED_FIELDS:
                continue
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def gather_settings(args) -> dict:
    settings = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        settings.update(parse_config_text(path.read_text(), str(path)))
    for key in list(MODEL_FIELDS) + list(TRAIN_FIELDS):
        v = getattr(args, f"set_{key}", None)
        if v is not None:
            settings[key] = _coerce(key, v, _default(key))
    if getattr(args, "seed", None) is not None:
        settings["seed"] = args.seed
    return settings


def build_configs(settings: dict, feature_sizes) -> tuple[ModelConfig, TrainConfig]:
    """Model and training configs from merged settings; mode-specific defaults fill the gaps."""
    model_kw = {k: v for k, v in settings.items() if k in MODEL_FIELDS}
    train_kw = {k: v for k, v in settings.items() if k in TRAIN_FIELDS}
    embedding = model_kw.pop("embedding", ModelConfig.embedding)
    if embedding not in MODE_DEFAULTS:
        raise ConfigError(f"embedding: unknown mode {embedding!r}")
    try:
        tcfg = TrainConfig(**train_kw)
        mcfg = ModelConfig.for_mode(embedding, feature_sizes, **model_kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return mcfg, tcfg


# -- prepared dataset layout ------------------------------------------------

def _split_path(data_dir: Path, split: str) -> Path:
    return data_dir / f"{split}.tsv"


def write_examples(path: Path, examples) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in examples:
            fh.write(f"{e.language}\t{e.text}\n")


def read_examples(data_dir: Path, split: str) -> list[Example]:
    path = _split_path(data_dir, split)
    if not path.exists():
        raise InputError(f"{path}: split file not found (run 'prepare' first)")
    return [Example(t, c, split) for c, t in read_corpus_file(path)]


def read_label_counts(path: Path) -> Counter:
    counts = Counter()
    lines = path.read_text().splitlines()
    for lineno, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        if len(parts) != 3:
            raise InputError(f"{path} line {lineno}: expected 'feature_id<TAB>value_index<TAB>count'")
        counts[(parts[0], int(parts[1]))] = int(parts[2])
    return counts


def load_prepared(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise InputError(f"{data_dir}: prepared dataset directory not found")
    catalog_text = (data_dir / "catalog.tsv").read_text(encoding="utf-8")
    catalog = parse_catalog(catalog_text)
    records = parse_languages((data_dir / "languages.csv").read_bytes(), catalog)
    counts = read_label_counts(data_dir / "label_counts.tsv")
    return catalog, catalog_text, records, counts


# -- commands ---------------------------------------------------------------

def _with_path(path, fn, *a):
    try:
        return fn(*a)
    except (WalsParseError, CorpusError) as e:
        raise type(e)(f"{path}: {e}") from None


def cmd_prepare(args, manifest: RunManifest) -> int:
    out = Path(args.out)
    catalog_path, languages_path = Path(args.catalog), Path(args.languages)
    corpus_paths = [Path(p) for p in args.corpus]
    manifest.add_inputs(catalog_path, languages_path, args.splits, *corpus_paths)
    catalog = _with_path(catalog_path, parse_catalog, catalog_path.read_bytes())
    records = _with_path(languages_path, parse_languages, languages_path.read_bytes(), catalog)
    kept = prune_languages(records)
    dropped_wals = sorted(r.wals_code for r in records if r not in kept)
    split_of = parse_split_manifest(Path(args.splits).read_text().splitlines())
    sources = make_splits({str(p): read_corpus_file(p) for p in corpus_paths}, split_of)

    report = JoinReport()
    examples, too_long_or_short = {}, {}
    for split in SPLITS:
        joined, rep = join_corpus(sources[split], kept, split)
        report = report.merge(rep)
        examples[split] = [e for e in joined if filter_by_length(e.text, args.min_chars, args.max_chars)]
        too_long_or_short[split] = len(joined) - len(examples[split])

    out.mkdir(parents=True, exist_ok=True)
    written = [out / "catalog.tsv", out / "languages.csv", out / "label_counts.tsv", out / "join_report.txt"]
    written[0].write_bytes(format_catalog(catalog))
    written[1].write_bytes(format_languages(kept, catalog))
    index = records_by_iso(kept)
    # per training example by default, so that weights follow what the loss actually sees
    langs = [e.language for e in examples["train"]]
    if args.count_per == "language":
        langs = sorted(set(langs))
    counts = Counter()
    for code in langs:
        counts.update(index[code].assignments.items())
    with open(written[2], "w") as fh:
        fh.write("feature_id\tvalue_index\tcount\n")
        for f in catalog.features:
            for v in range(len(f.values)):
                fh.write(f"{f.id}\t{v}\t{counts[(f.id, v)]}\n")
    lines = [report.format().rstrip("\n")]
    lines += [f"pruned_wals\t{code}" for code in dropped_wals]
    lines += [f"length_filtered\t{s}\t{n}" for s, n in too_long_or_short.items()]
    text = "\n".join(lines) + "\n"
    written[3].write_text(text)
    for split in SPLITS:
        write_examples(_split_path(out, split), examples[split])
        written.append(_split_path(out, split))
    manifest.config = {"min_chars": args.min_chars, "max_chars": args.max_chars, "count_per": args.count_per}
    manifest.add_outputs(out, *written)
    sys.stdout.write(text)
    return 0


def cmd_stats(args, manifest: RunManifest) -> int:
    data = Path(args.data)
    examples = []
    for split in SPLITS:
        path = _split_path(data, split)
        if path.exists():
            manifest.add_inputs(path)
            examples += read_examples(data, split)
        elif split == "train":
            raise InputError(f"{path}: split file not found (run 'prepare' first)")
    text = format_stats(corpus_stats(examples), args.format)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.txt").write_text(text)
    manifest.add_outputs(out, out / "stats.txt")
    sys.stdout.write(text)
    return 0


def cmd_train(args, manifest: RunManifest) -> int:
    settings = gather_settings(args)
    # fail on a bad configuration before reading any data
    build_configs(settings, (1,))
    data = Path(args.data)
    catalog, catalog_text, records, counts = load_prepared(data)
    space = build_label_space(catalog, counts)
    mcfg, tcfg = build_configs(settings, tuple(int(s) for s in space.sizes))
    manifest.add_inputs(*(data / n for n in ("catalog.tsv", "languages.csv", "label_counts.tsv")),
                        _split_path(data, "train"))
    index = records_by_iso(records)
    train_examples = read_examples(data, "train")
    train_set = build_dataset(train_examples, index, space, mcfg)
    dev_set = None
    if _split_path(data, "dev").exists():
        manifest.add_inputs(_split_path(data, "dev"))
        dev_set = build_dataset(read_examples(data, "dev"), index, space, mcfg)
    if len(train_set) == 0:
        raise InputError("no training examples survive featurization")
    weights = build_weights(counts, space, len(train_set))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opt = state = None
    _, init_seed, _ = tcfg.seeds
    if args.resume:
        model, opt, state, meta = restore(args.resume, mcfg)
        saved = {k: v for k, v in meta.get("train_config", {}).items() if k != "max_steps"}
        now = {k: v for k, v in tcfg.to_dict().items() if k != "max_steps"}
        if saved != now:
            diff = sorted(k for k in now if saved.get(k) != now[k])
            raise ConfigError(f"--resume with a different training config ({', '.join(diff)})")
        manifest.add_inputs(args.resume)
    else:
        model = Model(mcfg, seed=init_seed)
    (out / "config.txt").write_text(format_config(mcfg.to_dict(), tcfg.to_dict()))
    manifest.config = {"model": mcfg.to_dict(), "train": tcfg.to_dict()}
    manifest.seeds = dict(zip(("data", "init", "dropout"), tcfg.seeds))
    extra = space_meta(space, catalog_text)
    result = train(model, train_set, dev_set, space, weights, tcfg, out_dir=out, opt=opt, state=state,
                   extra_meta=extra, stop_at=args.stop_at)
    s = result.state
    outputs = [p for p in (out / "loss_log.csv", out / "last.ckpt", out / "best.ckpt", out / "config.txt")
               if p.exists()]
    manifest.add_outputs(out, *outputs)
    sys.stdout.write(f"steps\t{s.step}\nbest_dev_accuracy\t{s.best_accuracy:.6f}\nbest_step\t{s.best_step}\n")
    return 0


def _load_model(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"{path}: checkpoint not found")
    model, _, _, meta = restore(path)
    if "catalog" not in meta or "observed" not in meta:
        raise CheckpointError(f"{path}: checkpoint lacks the label space")
    catalog = parse_catalog(meta["catalog"])
    space = label_space_from_mask(catalog, np.array(meta["observed"], dtype=bool))
    return model, catalog, space


def cmd_eval(args, manifest: RunManifest) -> int:
    from .trainer import evaluate

    groupings = args.grouping or list(REPORT_GROUPINGS)
    for g in groupings:
        if g not in GROUPINGS:
            raise ConfigError(f"unknown grouping {g!r}")
    model, catalog, space = _load_model(args.checkpoint)
    data = Path(args.data)
    records = parse_languages((data / "languages.csv").read_bytes(), catalog)
    index = records_by_iso(records)
    manifest.add_inputs(args.checkpoint, data / "languages.csv", _split_path(data, args.split))
    dataset = build_dataset(read_examples(data, args.split), index, space, model.config)
    _, counts = evaluate(model, dataset, space, args.tau)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if args.format == "delimited" else "txt"
    written = []
    for g in groupings:
        body = render_report(aggregate(counts, g, catalog, index), args.format)
        path = out / f"report-{g}.{ext}"
        path.write_bytes(body)
        written.append(path)
        sys.stdout.write(f"== {g} ==\n")
        sys.stdout.write(body.decode("utf-8"))
    manifest.config = {"split": args.split, "tau": args.tau, "groupings": groupings}
    manifest.add_outputs(out, *written)
    return 0


def cmd_predict(args, manifest: RunManifest) -> int:
    model, catalog, space = _load_model(args.checkpoint)
    manifest.add_inputs(args.checkpoint)
    fz = model.config.featurizer()
    texts = [line.rstrip("\n") for line in sys.stdin if line.strip()]
    short = [i for i, t in enumerate(texts) if len(t) < MIN_CHARS]
    if short and args.refuse_short:
        raise InputError(f"{len(short)} input text(s) shorter than {MIN_CHARS} characters (first: line {short[0] + 1})")
    for i in short:
        warn(f"line {i + 1}: text shorter than {MIN_CHARS} characters; prediction is unreliable")
    rows = ["line\tfeature_id\tvalue_index\tvalue\tconfidence"]
    for i, text in enumerate(texts):
        x = fz(text)
        try:
            model.config.output_length(len(x))
        except SequenceTooShort:
            warn(f"line {i + 1}: text too short for the model; no prediction")
            continue
        z, _ = model.forward(make_batch([x], model.pad_id), train=False)
        (pred,) = decode(z, space, model.config.output, args.tau)
        for fid in space.feature_ids:
            if fid in pred:
                v, conf = pred[fid]
                rows.append(f"{i + 1}\t{fid}\t{v}\t{catalog[fid].values[v]}\t{conf:.6f}")
    text = "\n".join(rows) + "\n"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.tsv").write_text(text)
    manifest.config = {"tau": args.tau, "n_texts": len(texts),
                       "stdin_sha256": hashlib.sha256("\n".join(texts).encode()).hexdigest()}
    manifest.add_outputs(out, out / "predictions.tsv")
    sys.stdout.write(text)
    return 0


# -- argument parsing -------------------------------------------------------

def _add_common(p, command):
    p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=1, help="cap on BLAS worker threads")
    p.add_argument("--out", default=f"runs/{command}", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_config_flags(p):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    for name, f in list(MODEL_FIELDS.items()) + list(TRAIN_FIELDS.items()):
        if name == "seed":
            continue
        default = f.default
        if isinstance(default, tuple):
            default = ",".join(map(str, default))
        p.add_argument(f"--{name.replace('_', '-')}", dest=f"set_{name}", metavar="V",
                       help=f"(default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wals-typology", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse WALS, join and filter the corpus, write splits")
    p.add_argument("--catalog", required=True)
    p.add_argument("--languages", required=True)
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--splits", required=True, help="manifest of 'filename<TAB>split' lines")
    p.add_argument("--min-chars", type=int, default=MIN_CHARS)
    p.add_argument("--max-chars", type=int, default=MAX_CHARS)
    p.add_argument("--count-per", choices=("example", "language"), default="example",
                   help="how class counts for the loss weights are tallied")
    _add_common(p, "prepare")

    p = sub.add_parser("stats", help="per-split corpus statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=("text", "delimited"), default="text")
    _add_common(p, "stats")

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-at", type=int, default=None, help="stop early at this step")
    _add_config_flags(p)
    _add_common(p, "train")

    p = sub.add_parser("eval", help="grouped metric reports for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--grouping", action="append", help=f"one of {', '.join(GROUPINGS)}; repeatable")
    p.add_argument("--format", choices=("text", "delimited"), default="text")
    p.add_argument("--tau", type=float, default=TAU)
    _add_common(p, "eval")

    p = sub.add_parser("predict", help="predict features for texts on standard input, one per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tau", type=float, default=TAU)
    p.add_argument("--refuse-short", action="store_true",
                   help=f"fail instead of warning on texts under {MIN_CHARS} characters")
    _add_common(p, "predict")
    return parser


COMMANDS = {"prepare": cmd_prepare, "stats": cmd_stats, "train": cmd_train,
            "eval": cmd_eval, "predict": cmd_predict}


def _error_kind(exc) -> str | None:
    for cls, kind in ERROR_KINDS:
        if isinstance(exc, cls):
            return kind
    if isinstance(exc, (KeyError, ValueError)):
        return "input"
    return None


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    manifest = RunManifest(args.command, argv=argv,
                           seeds={"seed": 0 if args.seed is None else args.seed})
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        with threadpool_limits(args.threads):
            code = COMMANDS[args.command](args, manifest)
        manifest.write(Path(args.out))
        return code
    except Exception as exc:  # noqa: BLE001 - every failure becomes one stderr line
        kind = _error_kind(exc)
        if kind is None:
            raise
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, OSError) and exc.filename:
            msg = f"{exc.filename}: {exc.strerror}"
        sys.stderr.write(f"error: {kind}: {msg}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
