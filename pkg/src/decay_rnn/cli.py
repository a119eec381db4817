"""Command-line front door: generate | train | eval | gradcheck | alpha-study.

Settings come from a ``key=value`` file (``--config``) overridden by flags
(``--seed``, ``--out``, ``--set key=value``).  The resolved settings are
written to ``resolved_config.txt`` in the output directory.

Exit codes: 0 success, 1 runtime failure, 2 configuration or parse error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import cells, checkpoint, corpus, evaluation, gradcheck, training

log = logging.getLogger("decay_rnn")


class ConfigError(ValueError):
    pass


class RunFailure(RuntimeError):
    pass


COMMON = {"seed": 0, "out": "out"}

DEFAULTS = {
    "generate": {
        "templates": "targeted",  # shipped group name or a path
        "lexicon": "",
        "mode": "sentences",  # sentences | pairs
        "count": 1000,
        "grammatical_ratio": 0.5,
        "exhaustive": False,
        "train_fraction": 1.0,
        "valid_fraction": 0.0,
    },
    "train": {
        "corpus": "",
        "valid": "",
        "lexicon": "",
        "vocabulary": "lexicon",  # lexicon: every lexicon form plus corpus tokens; corpus: corpus tokens
        "task": "number_prediction",
        "cell": "drnn",
        "num_layers": None,
        "embedding_dim": None,
        "hidden_dim": None,
        "activation": None,
        "dropout_rate": None,
        "alpha_mode": "sigmoid",
        "inhibitory_seed": None,  # None: inhibitory units are the last fifth; an int permutes them
        "learning_rate": 1e-3,
        "batch_size": None,
        "epochs": None,
        "gradient_clip_norm": 5.0,
        "alpha_init": cells.DEFAULT_ALPHA,
    },
    "eval": {
        "checkpoint": "",  # comma-separated for multi-model reports
        "names": "",
        "corpus": "",
        "pairs": "",
        "lexicon": "",
        "kind": "auto",  # accuracy | stratified | profile | perplexity | targeted | generalization
        "fixed": "distance:7,attractor_count:1",
        "vary": "non_attractor_count",
        "min_items": 50,
        "allow_unk": False,
    },
    "gradcheck": {
        "cells": ",".join(cells.KINDS),
        "configs": 20,
        "tolerance": 1e-5,
        "step": 1e-5,
    },
    "alpha-study": {
        "corpus": "",
        "lexicon": "",
        "templates": "analysis",
        "count": 2000,
        "cell": "drnn",
        "inits": "0.2,0.5,0.8",
        "epochs": 3,
        "window": 100,
        "learning_rate": 1e-3,
        "hidden_dim": 50,
        "embedding_dim": 50,
    },
}


# --------------------------------------------------------------------------
# configuration


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        values[key.replace("-", "_")] = value
    return values


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            if raw.lower() in ("", "none", "preset"):
                return None
            for cast in (int, float):
                try:
                    return cast(raw)
                except ValueError:
                    pass
            return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def resolve(command, file_values, overrides):
    defaults = {**COMMON, **DEFAULTS[command]}
    merged = dict(file_values)
    merged.update(overrides)
    unknown = sorted(set(merged) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown setting(s) for {command}: {', '.join(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        resolved[key] = _coerce(key, merged[key], default) if key in merged else default
    return resolved


def write_resolved(out, command, cfg):
    lines = [f"command={command}"] + [f"{k}={'' if v is None else v}" for k, v in sorted(cfg.items())]
    (out / "resolved_config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# helpers


def _lexicon(cfg):
    return corpus.load_lexicon(cfg["lexicon"] or None)


def _templates(spec, lexicon):
    if spec in ("targeted", "analysis"):
        return corpus.load_shipped_templates(spec, lexicon)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"templates not found: {spec}")
    return corpus.load_grammar(path, lexicon)


def _read_sentences(path, lexicon):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"corpus not found: {path}")
    if path.suffix == ".txt":
        return [tuple(line.split()) for line in path.read_text("utf-8").splitlines() if line.strip()]
    return corpus.read_corpus(path, lexicon)


def _tokens(items):
    return [tuple(getattr(s, "tokens", s)) for s in items]


def lexicon_forms(lexicon):
    return sorted({form for e in lexicon.entries.values() for form in (e.singular, e.plural)})


def _refuse_overwrite(paths, force):
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise RunFailure(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _parse_fixed(text):
    fixed = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition(":")
        if key not in ("distance", "attractor_count", "non_attractor_count"):
            raise ConfigError(f"cannot stratify on {key!r}")
        fixed[key] = int(value)
    return fixed


# --------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg, out, force):
    lexicon = _lexicon(cfg)
    templates = _templates(cfg["templates"], lexicon)
    seed = cfg["seed"]
    if cfg["mode"] == "pairs":
        target = out / "pairs.tsv"
        _refuse_overwrite([target], force)
        corpus.write_pairs(target, corpus.generate_minimal_pairs(templates, lexicon, seed, cfg["count"]))
        return [target]
    if cfg["mode"] != "sentences":
        raise ConfigError(f"mode must be 'sentences' or 'pairs', not {cfg['mode']!r}")
    sentences = corpus.generate(templates, lexicon, seed, cfg["count"], cfg["grammatical_ratio"],
                                cfg["exhaustive"])
    if cfg["train_fraction"] >= 1.0:
        target = out / "corpus.tsv"
        _refuse_overwrite([target], force)
        corpus.write_corpus(target, sentences)
        return [target]
    parts = corpus.split(sentences, cfg["train_fraction"], cfg["valid_fraction"], seed)
    targets = [out / f"{name}.tsv" for name in ("train", "valid", "test")]
    _refuse_overwrite(targets, force)
    for target, part in zip(targets, parts):
        corpus.write_corpus(target, part)
    return targets


def _model_config(cfg, vocab):
    task = cfg["task"]
    if task == "language_model":
        base = training.ModelConfig.language_model(cfg["cell"])
    else:
        base = training.ModelConfig.classifier(cfg["cell"], task=task)
    opts = {k: cfg[k] for k in ("num_layers", "embedding_dim", "hidden_dim", "activation", "dropout_rate",
                                "inhibitory_seed") if cfg[k] is not None}
    return training.ModelConfig(**{**base.__dict__, **opts, "alpha_mode": cfg["alpha_mode"],
                                   "vocabulary": vocab.tokens})


def _train_config(cfg):
    lm = cfg["task"] == "language_model"
    return training.TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"] or (128 if lm else 1),
        epochs=cfg["epochs"] if cfg["epochs"] is not None else (20 if lm else 10),
        seed=cfg["seed"],
        gradient_clip_norm=cfg["gradient_clip_norm"] or None,
        alpha_init=cfg["alpha_init"],
    )


def cmd_train(cfg, out, force):
    if not cfg["corpus"]:
        raise ConfigError("train needs corpus=PATH")
    if cfg["task"] not in training.TASKS:
        raise ConfigError(f"unknown task {cfg['task']!r}")
    if cfg["cell"] not in cells.KINDS:
        raise ConfigError(f"unknown cell {cfg['cell']!r}")
    lexicon = _lexicon(cfg)
    train_set = _read_sentences(cfg["corpus"], lexicon)
    valid_set = _read_sentences(cfg["valid"], lexicon) if cfg["valid"] else None
    lm = cfg["task"] == "language_model"
    if lm:
        # the language model only sees well-formed text
        train_set = [s for s in train_set if getattr(s, "grammatical", True)]
        valid_set = [s for s in valid_set if getattr(s, "grammatical", True)] if valid_set else None
    seen = _tokens(train_set) + _tokens(valid_set or [])
    if cfg["vocabulary"] == "lexicon":
        seen.append(tuple(lexicon_forms(lexicon)))
    elif cfg["vocabulary"] != "corpus":
        raise ConfigError("vocabulary must be 'lexicon' or 'corpus'")
    vocab = training.Vocabulary.build(seen)
    try:
        model_config = _model_config(cfg, vocab)
        train_config = _train_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    targets = [out / "model.ckpt", out / "history.csv"] + ([out / "model_best.ckpt"] if valid_set else [])
    _refuse_overwrite(targets, force)
    if lm:
        model, history = training.train_lm(model_config, train_config, train_set, valid_set, vocab)
    else:
        model, history = training.train_classifier(model_config, train_config, train_set, valid_set, vocab)
    training.save_model(out / "model.ckpt", model, seed=cfg["seed"])
    history.to_csv(out / "history.csv")
    if valid_set and history.best_model is not None:
        training.save_model(out / "model_best.ckpt", history.best_model, seed=cfg["seed"])
    return targets


def _check_vocab(model, token_lists, allow_unk, source):
    if allow_unk:
        return
    missing = sorted({t for toks in token_lists for t in toks if t not in model.vocab.index})
    if missing:
        shown = ", ".join(missing[:8]) + (" ..." if len(missing) > 8 else "")
        raise ConfigError(f"{source} has {len(missing)} token(s) outside the checkpoint vocabulary: {shown}")


def cmd_eval(cfg, out, force):
    paths = [p for p in cfg["checkpoint"].split(",") if p]
    if not paths:
        raise ConfigError("eval needs checkpoint=PATH[,PATH...]")
    names = [n for n in cfg["names"].split(",") if n] or [Path(p).stem for p in paths]
    if len(names) != len(paths):
        raise ConfigError("names must match the number of checkpoints")
    models = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"checkpoint not found: {p}")
        models.append(training.load_model(p))
    lexicon = _lexicon(cfg)
    sentences = _read_sentences(cfg["corpus"], lexicon) if cfg["corpus"] else None
    pairs = corpus.read_pairs(cfg["pairs"]) if cfg["pairs"] else None
    for m in models:
        if sentences is not None:
            _check_vocab(m, _tokens(sentences), cfg["allow_unk"], cfg["corpus"])
        if pairs is not None:
            _check_vocab(m, [p.grammatical for p in pairs] + [p.contrast for p in pairs], cfg["allow_unk"],
                         cfg["pairs"])

    task = models[0].config.task
    kind = cfg["kind"]
    if kind == "auto":
        if task == "language_model":
            kind = "targeted" if pairs is not None else "perplexity"
        else:
            kind = "generalization" if pairs is not None and sentences is None else "accuracy"
    needs_pairs = kind in ("targeted", "generalization")
    if needs_pairs and pairs is None:
        raise ConfigError(f"kind={kind} needs pairs=PATH")
    if not needs_pairs and sentences is None:
        raise ConfigError(f"kind={kind} needs corpus=PATH")

    targets = [out / "report.txt", out / "report.csv"]
    _refuse_overwrite(targets, force)
    rows, ppl, stratified = {}, {}, []
    for name, m in zip(names, models):
        if kind == "accuracy":
            rows[name] = _accuracy_rows(m, sentences)
        elif kind == "stratified":
            table = evaluation.stratified_accuracy(m, sentences, _parse_fixed(cfg["fixed"]), cfg["vary"],
                                                   cfg["min_items"], task)
            stratified.append(table)
            rows[name] = [evaluation.ReportRow(f"{cfg['vary']}={k}", "", "", a, n, int(round(a * n)))
                          for k, (a, n) in table.cells.items()]
        elif kind == "profile":
            profile = evaluation.confidence_profile(m, sentences)
            profile.to_csv(out / f"profile_{name}.csv")
            rows[name] = [evaluation.ReportRow(f"{p.position}:{p.label}:{p.example}", "", "", p.mean, p.n,
                                               0) for p in profile.points]
        elif kind == "perplexity":
            ppl[name] = evaluation.perplexity(m, sentences)
            rows[name] = []
        elif kind == "targeted":
            rows[name] = evaluation.targeted_eval(m, pairs)
            if sentences is not None:
                ppl[name] = evaluation.perplexity(m, sentences)
        elif kind == "generalization":
            rows[name] = evaluation.grammaticality_generalization(m, pairs)
        else:
            raise ConfigError(f"unknown eval kind {kind!r}")
    report = evaluation.EvaluationReport(names, rows, ppl, stratified)
    report.write(out)
    return targets


def _accuracy_rows(model, sentences):
    by_template = {}
    for s in sentences:
        by_template.setdefault(s.template or "all", []).append(s)
    rows = []
    for name, group in by_template.items():
        _, row = evaluation.accuracy(model, model.config.task, group, label=name)
        rows.append(row)
    return rows


def cmd_gradcheck(cfg, out, force):
    kinds = [k for k in cfg["cells"].split(",") if k]
    bad = [k for k in kinds if k not in cells.KINDS]
    if bad:
        raise ConfigError(f"unknown cell kind(s): {', '.join(bad)}")
    target = out / "gradcheck.txt"
    _refuse_overwrite([target], force)
    results = [gradcheck.gradient_check(k, cfg["configs"], cfg["seed"], cfg["tolerance"], cfg["step"])
               for k in kinds]
    report = gradcheck.format_report(results)
    target.write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    if not all(r.passed for r in results):
        raise RunFailure("gradient check failed")
    return [target]


def moving_average(values, window):
    """Trailing mean over up to ``window`` previous values (shorter at the start)."""
    v = np.asarray(values, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (csum[idx] - csum[lo]) / (idx - lo)


def cmd_alpha_study(cfg, out, force):
    if cfg["cell"] not in cells.DECAY_KINDS:
        raise ConfigError("alpha-study needs a decay-family cell")
    try:
        inits = [float(x) for x in cfg["inits"].split(",") if x]
    except ValueError:
        raise ConfigError(f"bad inits {cfg['inits']!r}") from None
    if not inits or not all(0.0 < a < 1.0 for a in inits):
        raise ConfigError("inits must lie in (0, 1)")
    lexicon = _lexicon(cfg)
    if cfg["corpus"]:
        data = _read_sentences(cfg["corpus"], lexicon)
    else:
        data = corpus.generate(_templates(cfg["templates"], lexicon), lexicon, cfg["seed"], cfg["count"])
    target = out / "alpha_study.csv"
    _refuse_overwrite([target], force)
    vocab = training.Vocabulary.build(_tokens(data))
    mc = training.ModelConfig.classifier(cfg["cell"], task="grammaticality", hidden_dim=cfg["hidden_dim"],
                                         embedding_dim=cfg["embedding_dim"], vocabulary=vocab.tokens)
    columns = []
    for a0 in inits:
        tc = training.TrainConfig(learning_rate=cfg["learning_rate"], epochs=cfg["epochs"], seed=cfg["seed"],
                                  alpha_init=a0)
        _, history = training.train_classifier(mc, tc, data, vocab=vocab)
        raw = [alphas[0] for alphas in history.step_alpha]
        if not all(0.0 < a < 1.0 for a in raw):
            raise RunFailure(f"alpha left (0, 1) for init {a0}")
        columns.append(moving_average(raw, cfg["window"]))
    with open(target, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["step"] + [f"alpha_init_{a}" for a in inits]) + "\n")
        for i in range(len(columns[0])):
            fh.write(",".join([str(i + 1)] + [repr(float(c[i])) for c in columns]) + "\n")
    return [target]


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "alpha-study": cmd_alpha_study,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="decay-rnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        file_values = {}
        if args.config:
            try:
                text = Path(args.config).read_text("utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            file_values = parse_config_text(text, args.config)
        overrides = parse_config_text("\n".join(args.set), "--set")
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        cfg = resolve(args.command, file_values, overrides)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out, args.command, cfg)
        written = COMMANDS[args.command](cfg, out, args.force)
    except (ConfigError, corpus.GrammarError, corpus.LexiconError, checkpoint.CheckpointError,
            training.VocabularyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:  # malformed input files
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the exit code is the contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0
