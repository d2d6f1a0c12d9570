"""Command-line pipeline: gen -> label -> embed -> train -> eval, plus predict.

Every command reads an optional flat ``key=value`` file given with
``--config``; ``--set key=value`` flags override file values, and ``--seed``
overrides any ``seed`` key. Each output is written atomically next to a
``<output>.manifest.json`` run record.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import claims, config as kvconfig, embedding, labeling, nn, synthetic, training

log = logging.getLogger("htnnr")


class CliError(Exception):
    pass


@dataclasses.dataclass(frozen=True)
class LabelSettings:
    target_drug: str = synthetic.GeneratorConfig.target_drug
    target_ades: str = "L29.9"
    window_days: int = 90
    indication_file: str = ""

    def labeling_config(self) -> labeling.LabelingConfig:
        if self.indication_file:
            indications = labeling.IndicationCodeSet.load(self.indication_file)
        else:
            indications = labeling.IndicationCodeSet.default()
        ades = {a.strip() for a in self.target_ades.split(",") if a.strip()}
        return labeling.LabelingConfig(self.target_drug, ades, indications, self.window_days)


@dataclasses.dataclass(frozen=True)
class EmbedSettings:
    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_count: int = 1
    batch_size: int = 256
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class TrainSettings:
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    max_encounters: int = 200
    code_hidden: int = 64
    history_hidden: int = 128
    hidden: int = 64
    max_unknown_rate: float = 0.5
    target_drug: str = synthetic.GeneratorConfig.target_drug

    def train_config(self) -> training.TrainConfig:
        names = {f.name for f in dataclasses.fields(training.TrainConfig)}
        return training.TrainConfig(**{n: getattr(self, n) for n in names})


# ---------------------------------------------------------------------------
# helpers


def _settings(default, args):
    mapping = kvconfig.read_kv(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    # label, eval and predict draw no random numbers; --seed is accepted and unused there
    if args.seed is not None and any(f.name == "seed" for f in dataclasses.fields(default)):
        mapping["seed"] = str(args.seed)
    return kvconfig.apply_kv(default, mapping)


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(args, settings, inputs, outputs, started):
    manifest = {
        "command": args.command,
        "config": kvconfig.to_kv(settings) if settings is not None else {},
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": getattr(settings, "seed", None),
        "threads": args.threads,
        "duration_seconds": round(time.time() - started, 3),
        "checksums": {k: _sha256(v) for k, v in outputs.items()},
    }
    primary = next(iter(outputs.values()))
    _atomic_write(f"{primary}.manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())


def _read_instances(path):
    with open(path, "rb") as fh:
        return labeling.parse_instances(fh)


def _read_embeddings(path):
    with open(path, "rb") as fh:
        return embedding.read_embeddings(fh)


def _predict(model, histories, threads):
    encoded = [model.encode(h) for h in histories]
    if threads <= 1 or len(encoded) <= 256:
        return model.predict_proba(encoded)
    chunks = [encoded[i:i + 256] for i in range(0, len(encoded), 256)]
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(lambda c: model.forward_batch(c).data, chunks))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    started = time.time()
    settings = _settings(synthetic.GeneratorConfig(), args)
    histories = synthetic.generate(settings)
    buf = io.BytesIO()
    claims.write_cohort(histories, buf)
    _atomic_write(args.out, buf.getvalue())
    stats = claims.cohort_stats(histories)
    print(f"patients {stats.patient_count}  encounters/patient {stats.mean_encounters:.2f}  "
          f"codes/encounter {stats.mean_codes_per_encounter:.2f}  unique codes {stats.unique_codes}")
    _write_manifest(args, settings, {"config": args.config or ""}, {"cohort": args.out}, started)


def cmd_label(args):
    started = time.time()
    settings = _settings(LabelSettings(), args)
    try:
        cfg = settings.labeling_config()
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    histories = claims.read_cohort_file(args.cohort)
    instances = labeling.build_cohort(histories, cfg)
    buf = io.BytesIO()
    labeling.write_instances(instances, buf)
    _atomic_write(args.out, buf.getvalue())
    pos = sum(i.label == 1 for i in instances)
    rate = pos / len(instances) if instances else 0.0
    print(f"instances {len(instances)}  positive {pos}  negative {len(instances) - pos}  positive rate {rate:.4f}")
    _write_manifest(args, settings, {"cohort": args.cohort}, {"instances": args.out}, started)


def cmd_embed(args):
    started = time.time()
    s = _settings(EmbedSettings(), args)
    histories = claims.read_cohort_file(args.cohort)
    vocab = embedding.build_vocabulary(histories, s.min_count)
    emb = embedding.train_skipgram(histories, vocab, dim=s.dim, window=s.window, negatives=s.negatives,
                                   epochs=s.epochs, lr=s.lr, seed=s.seed, batch_size=s.batch_size)
    buf = io.BytesIO()
    embedding.write_embeddings(vocab, emb, buf)
    _atomic_write(args.out, buf.getvalue())
    print(f"vocabulary {len(vocab)}  dim {emb.dim}  loss by epoch " + " ".join(f"{x:.4f}" for x in emb.epoch_losses))
    _write_manifest(args, s, {"cohort": args.cohort}, {"embeddings": args.out}, started)


def cmd_train(args):
    started = time.time()
    s = _settings(TrainSettings(), args)
    instances = _read_instances(args.instances)
    vocab, emb = _read_embeddings(args.embeddings)
    unknown = vocab.unknown_rate([i.prefix for i in instances])
    if unknown > s.max_unknown_rate:
        raise CliError(f"instance/embedding vocabulary mismatch: {unknown:.1%} of instance codes are unknown "
                       f"(limit {s.max_unknown_rate:.1%})")
    train_set, test_set, val_set = labeling.split_cohort(instances, s.seed)
    if args.model == "htnnr":
        dims = {"code_hidden": s.code_hidden, "history_hidden": s.history_hidden}
    else:
        dims = {"hidden": s.hidden}
    model = nn.build_model(args.model, vocab, emb, dims, seed=s.seed, max_encounters=s.max_encounters,
                           target_drug=s.target_drug)
    result = training.train(model, train_set, val_set, s.train_config(),
                            on_epoch=lambda e, a, b: print(f"epoch {e:3d}  train {a:.6f}  val {b:.6f}", flush=True))

    out = Path(args.out)
    _atomic_write(out, (json.dumps(nn.checkpoint_dict(model), separators=(",", ":")) + "\n").encode())
    curve_path = out.with_name(out.name + ".loss.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_loss"])
    for row in result.curve:
        writer.writerow([row[0], repr(row[1]), repr(row[2])])
    _atomic_write(curve_path, buf.getvalue().encode())
    test_path = out.with_name(out.name + ".test.jsonl")
    tbuf = io.BytesIO()
    labeling.write_instances(test_set, tbuf)
    _atomic_write(test_path, tbuf.getvalue())
    print(f"best epoch {result.best_epoch}  val loss {result.best_val_loss:.6f}  "
          f"split {len(train_set)}/{len(test_set)}/{len(val_set)}")
    _write_manifest(args, s, {"instances": args.instances, "embeddings": args.embeddings},
                    {"checkpoint": out, "loss_curve": curve_path, "test_instances": test_path}, started)


def cmd_eval(args):
    started = time.time()
    model = nn.load_checkpoint(args.checkpoint)
    if args.embeddings:
        vocab, emb = _read_embeddings(args.embeddings)
        if vocab.tokens != model.vocab.tokens or not np.array_equal(emb.vectors, model.emb.vectors):
            raise CliError("embedding file does not match the embedding stored in the checkpoint")
    instances = _read_instances(args.instances)
    if not instances:
        raise CliError("no instances to evaluate")
    scores = _predict(model, [i.prefix for i in instances], args.threads)
    report = training.metrics_from_scores(scores, [i.label for i in instances], args.threshold)
    print(report.table())
    print(report.to_json())
    out = args.out or f"{args.checkpoint}.metrics.json"
    _atomic_write(out, (report.to_json() + "\n").encode())
    _write_manifest(args, None, {"checkpoint": args.checkpoint, "instances": args.instances}, {"metrics": out}, started)


def cmd_predict(args):
    model = nn.load_checkpoint(args.checkpoint)
    if model.target_drug and args.drug != model.target_drug:
        raise CliError(f"checkpoint was trained for drug {model.target_drug}, not {args.drug}")
    with open(args.patient, "rb") as fh:
        histories = claims.parse_cohort(fh)
    if len(histories) != 1:
        raise CliError(f"expected exactly one patient record, found {len(histories)}")
    history = histories[0]
    if not history.encounters:
        raise CliError(f"patient {history.patient_id} has an empty claim history")
    p = float(model.predict_proba([history])[0])
    print(f"probability {p:.6f}")
    print(f"class {'+1' if p >= 0.5 else '-1'}")


# ---------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=1, help="1 = fully deterministic (default)")
    common.add_argument("--config", default=None, help="key=value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="htnnr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic claims cohort")
    p.add_argument("out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", parents=[common], help="label instances for one target drug")
    p.add_argument("cohort")
    p.add_argument("out")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("embed", parents=[common], help="train skip-gram code embeddings")
    p.add_argument("cohort")
    p.add_argument("out")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", parents=[common], help="train a classifier on labelled instances")
    p.add_argument("instances")
    p.add_argument("embeddings")
    p.add_argument("out", help="checkpoint path")
    p.add_argument("--model", choices=sorted(nn.MODELS), default="htnnr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("instances")
    p.add_argument("embeddings", nargs="?", default=None)
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="ADE probability for one patient")
    p.add_argument("checkpoint")
    p.add_argument("patient", help="claims JSONL with a single patient")
    p.add_argument("drug", help="target drug GPI code")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        print(f"htnnr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
