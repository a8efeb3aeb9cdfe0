"""Command-line surface: ingest, generate, train, eval, report.

Every command is a pure function of (inputs, config, seed) at the byte level;
run manifests record input digests so interrupted runs can only be resumed
against unchanged inputs. Exit codes: 0 success, 2 input error, 3 invariant
breach.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .corpus import (
    Corpus,
    build_corpus,
    load_corpus,
    load_stopwords,
    parse_timestamp,
    read_covariates_csv,
    read_documents_ndjson,
    save_corpus,
)
from .errors import GcldaError, InputError, InvariantError
from .evaluation import (
    perplexity,
    point_estimates,
    write_eval_report,
    write_pi_series_csv,
    write_rho_csv,
    write_topics_csv,
)
from .generator import GeneratorSpec, generate
from .model import ModelConfig, load_samples, save_samples
from .sampler import Chain

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3

MANIFEST_FORMAT_VERSION = 1

# Keys accepted in key=value config files; everything else is rejected.
CONFIG_CASTERS = {}
for _f in dataclasses.fields(ModelConfig):
    if _f.name == "pi0":
        continue
    if _f.type in ("int", int):
        CONFIG_CASTERS[_f.name] = int
    elif _f.type in ("float", float):
        CONFIG_CASTERS[_f.name] = float
    elif _f.type in ("bool", bool):
        CONFIG_CASTERS[_f.name] = None  # handled specially
    else:
        CONFIG_CASTERS[_f.name] = str


def _cast_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise InputError(f"config key {key}: expected a boolean, got {raw!r}")


def parse_config_file(path: str) -> dict:
    """Flat key=value file with # comments; unknown keys are rejected."""
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise InputError(f"{path}:{lineno}: expected key=value")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in CONFIG_CASTERS:
                raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
            caster = CONFIG_CASTERS[key]
            if caster is None:
                overrides[key] = _cast_bool(raw, key)
            else:
                try:
                    overrides[key] = caster(raw)
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return overrides


def load_config(path: str | None, seed: int | None = None) -> ModelConfig:
    overrides = parse_config_file(path) if path else {}
    if seed is not None:
        overrides["seed"] = int(seed)
    config = ModelConfig(**overrides)
    config.validate()
    return config


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _dump_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)
        fh.write("\n")


def _nan_to_none(x: float):
    return None if (x is None or (isinstance(x, float) and math.isnan(x))) else x


def write_manifest(outdir: str, command: str, inputs: dict, outputs: list,
                   seed: int | None, config: ModelConfig | None,
                   started: float, extra: dict | None = None) -> str:
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": "manifest",
        "tool_version": __version__,
        "command": command,
        "inputs": {name: {"path": p, "sha256": sha256_file(p)} for name, p in inputs.items()},
        "outputs": sorted(outputs),
        "seed": seed,
        "config": config.to_dict() if config is not None else None,
        "started": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "finished": datetime.now(tz=timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    _dump_json(manifest, path)
    return path


def cmd_ingest(args) -> int:
    started = time.time()
    os.makedirs(args.output_dir, exist_ok=True)
    docs, malformed = read_documents_ndjson(args.docs)
    if not docs:
        raise InputError(f"no valid documents in {args.docs}")
    boundaries = None
    scheme = args.period
    if args.boundaries:
        with open(args.boundaries, encoding="utf-8") as fh:
            boundaries = [parse_timestamp(line.strip()) for line in fh if line.strip()]
        scheme = "explicit"
    cov_labels, cov_values, _ = read_covariates_csv(args.covariates)
    stopwords = load_stopwords(args.stopwords)
    corpus, report = build_corpus(
        docs, cov_labels, cov_values,
        vocab_size=args.vocab_size,
        scheme=scheme,
        boundaries=boundaries,
        stopwords=stopwords,
        stem=args.stem,
        standardize=not args.raw_covariates,
        malformed_lines=len(malformed),
    )
    corpus_path = os.path.join(args.output_dir, "corpus.json")
    report_path = os.path.join(args.output_dir, "ingest_report.json")
    save_corpus(corpus, corpus_path)
    _dump_json(report.to_dict(), report_path)
    inputs = {"docs": args.docs, "covariates": args.covariates}
    if args.boundaries:
        inputs["boundaries"] = args.boundaries
    if args.stopwords:
        inputs["stopwords"] = args.stopwords
    write_manifest(args.output_dir, "ingest", inputs,
                   ["corpus.json", "ingest_report.json"], None, None, started)
    print(f"ingested {report.retained_documents}/{report.total_documents} documents, "
          f"T={corpus.T}, V={corpus.V}, coverage={report.coverage:.4f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    started = time.time()
    os.makedirs(args.output_dir, exist_ok=True)
    with open(args.spec, encoding="utf-8") as fh:
        spec = GeneratorSpec.from_dict(json.load(fh))
    corpus, truth = generate(spec)
    corpus_path = os.path.join(args.output_dir, "corpus.json")
    truth_path = os.path.join(args.output_dir, "truth.json")
    save_corpus(corpus, corpus_path)
    _dump_json(truth.to_dict(), truth_path)
    write_manifest(args.output_dir, "generate", {"spec": args.spec},
                   ["corpus.json", "truth.json"], spec.seed, None, started)
    print(f"generated synthetic corpus: T={corpus.T}, V={corpus.V}, "
          f"documents={corpus.num_documents}, tokens={corpus.num_tokens}")
    return EXIT_OK


def _write_diagnostics(diag, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, iteration in enumerate(diag.iterations):
            rates = diag.rate_trace[i]
            row = {
                "iteration": iteration,
                "log_joint": diag.log_joint_trace[i],
                "accept_alpha": _nan_to_none(rates.get("alpha")),
                "accept_pi": _nan_to_none(rates.get("pi")),
                "accept_eta": _nan_to_none(rates.get("eta")),
            }
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def cmd_train(args) -> int:
    started = time.time()
    os.makedirs(args.output_dir, exist_ok=True)
    corpus = load_corpus(args.corpus)
    digest = sha256_file(args.corpus)
    config = load_config(args.config, args.seed)
    ckpt_path = os.path.join(args.output_dir, "checkpoint.json")
    if args.resume:
        if not os.path.exists(ckpt_path):
            raise InputError(f"--resume given but {ckpt_path} does not exist")
        with open(ckpt_path, encoding="utf-8") as fh:
            checkpoint = json.load(fh)
        if checkpoint.get("corpus_digest") != digest:
            raise InputError("resume refused: corpus digest changed since the checkpoint")
        if checkpoint.get("config") != config.to_dict():
            raise InputError("resume refused: config changed since the checkpoint")
        if checkpoint.get("mode") != args.mode:
            raise InputError("resume refused: mode changed since the checkpoint")
        chain = Chain.resume(corpus, checkpoint)
    else:
        chain = Chain(corpus, config, args.mode, digest)

    def checkpoint_cb(ch):
        _dump_json(ch.checkpoint(), ckpt_path)

    chain.run(stop_after=args.stop_after, checkpoint_cb=checkpoint_cb)
    checkpoint_cb(chain)
    if chain.iteration < config.iterations:
        print(f"stopped after {chain.iteration}/{config.iterations} sweeps; "
              f"checkpoint written to {ckpt_path}")
        return EXIT_OK
    samples_path = os.path.join(args.output_dir, "samples.json")
    diag_path = os.path.join(args.output_dir, "diagnostics.ndjson")
    save_samples(samples_path, chain.samples, config, args.mode, digest)
    _write_diagnostics(chain.diag, diag_path)
    inputs = {"corpus": args.corpus}
    if args.config:
        inputs["config"] = args.config
    write_manifest(args.output_dir, "train", inputs,
                   ["checkpoint.json", "samples.json", "diagnostics.ndjson"],
                   config.seed, config, started, extra={"mode": args.mode})
    rates = chain.diag.acceptance_rates()
    rate_str = ", ".join(f"{b}={r:.3f}" for b, r in rates.items() if not math.isnan(r))
    print(f"trained {args.mode} for {chain.iteration} sweeps, retained "
          f"{len(chain.samples)} samples" + (f" (acceptance: {rate_str})" if rate_str else ""))
    return EXIT_OK


def _check_same_vocabulary(train: Corpus, test: Corpus) -> None:
    if train.vocabulary.terms != test.vocabulary.terms:
        raise InputError("test corpus does not share the training vocabulary")
    if train.period_labels != test.period_labels:
        raise InputError("test corpus does not share the training periods")


def cmd_eval(args) -> int:
    started = time.time()
    os.makedirs(args.output_dir, exist_ok=True)
    train_corpus = load_corpus(args.corpus)
    test_corpus = load_corpus(args.test_corpus)
    _check_same_vocabulary(train_corpus, test_corpus)
    samples, config, mode, digest = load_samples(args.samples, train_corpus)
    if digest != sha256_file(args.corpus):
        raise InputError("samples artifact was trained on a different corpus")
    summary = point_estimates(samples, train_corpus, config, mode)
    R = args.particles if args.particles is not None else config.particles
    seed = args.seed if args.seed is not None else config.seed
    report = perplexity(test_corpus, summary, R, seed, threads=args.threads)
    report_path = os.path.join(args.output_dir, "eval_report.csv")
    write_eval_report(report, report_path)
    write_manifest(args.output_dir, "eval",
                   {"samples": args.samples, "corpus": args.corpus,
                    "test_corpus": args.test_corpus},
                   ["eval_report.csv"], seed, config, started,
                   extra={"mode": mode, "particles": R})
    print(f"evaluated {mode}: overall perplexity {report.overall_perplexity:.3f} "
          f"(se {report.overall_se:.3f}, R={R})")
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.time()
    os.makedirs(args.output_dir, exist_ok=True)
    corpus = load_corpus(args.corpus)
    samples, config, mode, digest = load_samples(args.samples, corpus)
    if digest != sha256_file(args.corpus):
        raise InputError("samples artifact was trained on a different corpus")
    summary = point_estimates(samples, corpus, config, mode)
    topics_path = os.path.join(args.output_dir, "topics.csv")
    rho_path = os.path.join(args.output_dir, "rho.csv")
    pi_path = os.path.join(args.output_dir, "pi_series.csv")
    write_topics_csv(summary, topics_path)
    write_rho_csv(summary, rho_path)
    write_pi_series_csv(summary, corpus.period_labels, pi_path)
    write_manifest(args.output_dir, "report",
                   {"samples": args.samples, "corpus": args.corpus},
                   ["topics.csv", "rho.csv", "pi_series.csv"],
                   config.seed, config, started, extra={"mode": mode})
    print(f"wrote topic tables for {mode} ({config.K} topics, "
          f"{summary.n_samples} samples)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gclda",
        description="Temporal topic modeling with endogenous drift and exogenous covariates",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="index raw documents and covariates into a corpus")
    p.add_argument("--docs", required=True, help="newline-delimited JSON: id, timestamp, text")
    p.add_argument("--covariates", required=True, help="CSV: period label + numeric columns")
    p.add_argument("--period", choices=["month", "day"], default="month")
    p.add_argument("--boundaries", help="file of ISO timestamps defining explicit periods")
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--stem", action="store_true", help="apply Porter stemming")
    p.add_argument("--stopwords", help="stopword file overriding the bundled list")
    p.add_argument("--raw-covariates", action="store_true",
                   help="skip covariate standardization")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="forward-simulate a synthetic corpus")
    p.add_argument("--spec", required=True, help="JSON generator spec")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run the MCMC chain")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=["gclda", "lda"], default="gclda")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stop-after", type=int, help="run at most this many sweeps, then checkpoint")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="held-out perplexity from a samples artifact")
    p.add_argument("--samples", required=True)
    p.add_argument("--corpus", required=True, help="training corpus the samples refer to")
    p.add_argument("--test-corpus", required=True)
    p.add_argument("--particles", type=int, help="left-to-right particle count")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="topic, correlation, and time-series tables")
    p.add_argument("--samples", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except GcldaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
