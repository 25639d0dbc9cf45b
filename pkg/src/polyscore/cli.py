"""Batch commands: dataset building, training, transcription, evaluation.

Every command is deterministic given (config, seed): random substreams are
derived from stable string keys, so a rerun reproduces manifests, token files
and checkpoints byte for byte.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 model or decoding error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec, ctc, dsp, kern, metrics, net, synth

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3

VOCAB_FILENAME = "vocab.txt"
MANIFEST_FILENAME = "manifest.jsonl"
LOG_FILENAME = "train_log.txt"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    corpus_dir: str = "corpus"
    out_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    seed: int = 0
    train_fraction: float = 0.7
    validation_fraction: float = 0.0
    test_fraction: float = 0.3
    fragment_enabled: bool = True
    min_measures: int = 3
    max_measures: int = 6
    overlap_train: bool = True
    default_tempo: str = "allegro"
    tempo_jitter: bool = True
    max_duration_s: float | None = None
    batch_size: int = 4
    epochs: int = 1
    model: dict = field(default_factory=dict)
    voices: list | None = None

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        for name in ("min_measures", "max_measures", "batch_size", "epochs"):
            if not isinstance(getattr(self, name), int):
                raise ConfigError(f"{name} must be an integer")
        fractions = (self.train_fraction, self.validation_fraction, self.test_fraction)
        if not all(isinstance(f, (int, float)) for f in fractions):
            raise ConfigError("split fractions must be numbers")
        if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be non-negative and sum to 1")
        if self.train_fraction <= 0:
            raise ConfigError("train fraction must be positive")
        if not 1 <= self.min_measures <= self.max_measures:
            raise ConfigError("need 1 <= min_measures <= max_measures")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.max_duration_s is not None and self.max_duration_s <= 0:
            raise ConfigError("max_duration_s must be positive")
        kern.assign_tempo(self.default_tempo)  # raises on unknown labels

    @property
    def effective_max_duration(self) -> float:
        if self.max_duration_s is not None:
            return self.max_duration_s
        return 30.0 if self.fragment_enabled else 120.0

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        base = path.parent
        for attr in ("corpus_dir", "out_dir", "checkpoint_dir"):
            value = Path(getattr(cfg, attr))
            if not value.is_absolute():
                setattr(cfg, attr, str(base / value))
        return cfg


def _substream(*parts) -> np.random.Generator:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    entropy = np.frombuffer(digest[:16], dtype=np.uint32).tolist()
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _subseed(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _diag(message: str) -> None:
    print(message, file=sys.stderr)


@dataclass
class Sample:
    id: str
    audio: str
    tokens: str
    duration_s: float
    split: str


def write_manifest(path, samples: list[Sample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps(dataclasses.asdict(s), sort_keys=True) + "\n")


def read_manifest(path) -> list[Sample]:
    samples = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    samples.append(Sample(**json.loads(line)))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return samples


def _write_tokens(path, seq: codec.TokenSequence) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in seq.tokens:
            fh.write(f"{t}\n")


def _read_tokens(path, vocab: codec.Vocabulary) -> codec.TokenSequence:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tokens = tuple(int(line) for line in fh if line.strip())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read token file {path}: {exc}") from exc
    return codec.TokenSequence(tokens=tokens, vocab=vocab)


def _resolve_tempo_label(doc: kern.KernDocument, default: str) -> str:
    if doc.tempo_text:
        key = " ".join(doc.tempo_text.split()).lower()
        if key in kern.TEMPO_MAP:
            return doc.tempo_text
    return default


def _voices_for(config: RunConfig, spine_count: int) -> list[synth.SynthVoiceSpec]:
    if not config.voices:
        return synth.voices_for(spine_count)
    specs = [
        synth.SynthVoiceSpec(tuple(v["harmonics"]), float(v.get("decay", 3.0)))
        for v in config.voices
    ]
    return [specs[i % len(specs)] for i in range(spine_count)]


def cmd_build(config: RunConfig) -> int:
    """Corpus -> preprocessed fragments -> synthesized WAVs + token targets."""
    corpus = Path(config.corpus_dir)
    if not corpus.is_dir():
        raise DataError(f"corpus directory {corpus} does not exist")
    files = sorted(p for p in corpus.iterdir() if p.suffix in (".krn", ".kern"))
    if not files:
        raise DataError(f"no kern files in {corpus}")

    docs: list[tuple[str, kern.KernDocument]] = []
    failures = 0
    for path in files:
        try:
            doc = kern.parse_kern(path.read_text(encoding="utf-8"), source=path.name)
            docs.append((path.name, kern.preprocess(doc)))
        except (kern.KernError, UnicodeDecodeError) as exc:
            failures += 1
            _diag(f"build: skipping {path.name}: {exc}")
    if not docs:
        raise DataError("all corpus files failed to parse")

    # split by source score so no score spans two splits
    order = _substream(config.seed, "split").permutation(len(docs))
    n = len(docs)
    n_train = max(1, round(config.train_fraction * n))
    n_val = round(config.validation_fraction * n)
    split_of: dict[str, str] = {}
    for rank, doc_index in enumerate(order):
        name = docs[doc_index][0]
        if rank < n_train:
            split_of[name] = "train"
        elif rank < n_train + n_val:
            split_of[name] = "validation"
        else:
            split_of[name] = "test"

    fragments: list[tuple[str, str, kern.KernDocument]] = []
    for name, doc in docs:
        split = split_of[name]
        if not config.fragment_enabled:
            fragments.append((Path(name).stem, split, doc))
            continue
        try:
            parts = kern.fragment(
                doc,
                rng_seed=_subseed(config.seed, "fragment", name),
                min_measures=config.min_measures,
                max_measures=config.max_measures,
                allow_overlap=config.overlap_train and split == "train",
            )
        except kern.NoBarlines as exc:
            failures += 1
            _diag(f"build: skipping {name}: {exc}")
            continue
        for i, part in enumerate(parts):
            fragments.append((f"{Path(name).stem}_f{i:03d}", split, part))

    train_docs = [doc for _, split, doc in fragments if split == "train"]
    if not train_docs:
        raise DataError("no training material after fragmentation")
    vocab = codec.build_vocabulary(train_docs)

    out = Path(config.out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "tokens").mkdir(parents=True, exist_ok=True)
    vocab.save(out / VOCAB_FILENAME)

    samples: list[Sample] = []
    for sample_id, split, doc in fragments:
        tempo_label = _resolve_tempo_label(doc, config.default_tempo)
        tempo_seed = _subseed(config.seed, "tempo", sample_id) if config.tempo_jitter else None
        tempo = kern.assign_tempo(tempo_label, tempo_seed)
        try:
            seq = codec.encode(doc, vocab)
        except codec.OutOfVocabulary as exc:
            failures += 1
            _diag(f"build: skipping {sample_id}: {exc}")
            continue
        audio = synth.render(doc, tempo, _voices_for(config, doc.spine_count))
        duration = audio.size / dsp.SAMPLE_RATE
        if duration > config.effective_max_duration:
            failures += 1
            _diag(
                f"build: skipping {sample_id}: {duration:.1f}s exceeds "
                f"{config.effective_max_duration:.0f}s limit"
            )
            continue
        if audio.size < dsp.WINDOW_SIZE:
            failures += 1
            _diag(f"build: skipping {sample_id}: shorter than one analysis window")
            continue
        dsp.write_wav(out / "audio" / f"{sample_id}.wav", audio)
        _write_tokens(out / "tokens" / f"{sample_id}.tok", seq)
        samples.append(
            Sample(
                id=sample_id,
                audio=f"audio/{sample_id}.wav",
                tokens=f"tokens/{sample_id}.tok",
                duration_s=round(duration, 6),
                split=split,
            )
        )
    if not samples:
        raise DataError("no samples produced")
    write_manifest(out / MANIFEST_FILENAME, samples)
    counts = {s: sum(1 for x in samples if x.split == s) for s in ("train", "validation", "test")}
    print(
        f"build: {len(samples)} samples "
        f"(train {counts['train']}, validation {counts['validation']}, test {counts['test']}), "
        f"vocabulary {len(vocab)} symbols, {failures} skipped"
    )
    return EXIT_OK


def _load_split(manifest_path: Path, vocab: codec.Vocabulary, splits: tuple[str, ...]):
    """Load (id, spectrogram, target) triples for the requested splits."""
    base = manifest_path.parent
    loaded = {s: [] for s in splits}
    for sample in read_manifest(manifest_path):
        if sample.split not in splits:
            continue
        clip = dsp.load_wav(base / sample.audio)
        spec = dsp.stft_logfreq(clip)
        target = _read_tokens(base / sample.tokens, vocab)
        loaded[sample.split].append((sample.id, spec, target))
    return loaded


def _greedy_tokens(params, model_config, spec, vocab) -> codec.TokenSequence:
    grid = net.forward(params, model_config, spec, mode="eval")
    return ctc.collapse(ctc.greedy_decode(grid), vocab)


def _validation_rates(params, model_config, vocab, samples) -> tuple[float, float]:
    wer_stats, cer_stats = [], []
    for _, spec, target in samples:
        hyp = _greedy_tokens(params, model_config, spec, vocab)
        wer_stats.append(metrics.wer(target, hyp))
        cer_stats.append(metrics.cer(target, hyp))
    return metrics.corpus_rate(wer_stats), metrics.corpus_rate(cer_stats)


def cmd_train(config: RunConfig, manifest_path, resume_checkpoint=None) -> int:
    """Train with the annealed-restart schedule, tracking the best model by WER."""
    manifest_path = Path(manifest_path)
    vocab_path = manifest_path.parent / VOCAB_FILENAME
    if not vocab_path.exists():
        raise DataError(f"vocabulary file {vocab_path} not found")
    vocab = codec.Vocabulary.load(vocab_path)
    vocab_hash = vocab.sha256()

    data = _load_split(manifest_path, vocab, ("train", "validation"))
    train_samples = data["train"]
    val_samples = data["validation"] or train_samples
    if not train_samples:
        raise DataError("manifest has no training samples")

    try:
        model_config = net.ModelConfig(vocab_size=len(vocab), **config.model)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model configuration: {exc}") from exc
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(ckpt_dir / VOCAB_FILENAME)

    if resume_checkpoint is not None:
        loaded_config, params, velocity, state = net.load_checkpoint(
            resume_checkpoint, expected_vocab_hash=vocab_hash
        )
        if loaded_config != model_config:
            raise DataError("checkpoint model configuration does not match config")
        start_epoch = state["epoch"]
        best_wer = state["best_wer"]
    else:
        params = net.init_params(model_config, _subseed(config.seed, "init"))
        velocity = net.zero_velocity(params)
        start_epoch = 0
        best_wer = None

    log_path = ckpt_dir / LOG_FILENAME
    mode = "a" if resume_checkpoint is not None else "w"
    with open(log_path, mode, encoding="utf-8", newline="\n") as log:
        for epoch in range(start_epoch, config.epochs):
            lr = net.lr_at_epoch(epoch)
            order = _substream(config.seed, "order", epoch).permutation(len(train_samples))
            losses = []
            skipped = 0
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grads_sum: dict[str, np.ndarray] = {}
                moments = []
                contributed = 0
                for j in batch:
                    sample_id, spec, target = train_samples[j]
                    grid, cache = net.forward(
                        params,
                        model_config,
                        spec,
                        mode="train",
                        rng_seed=_subseed(config.seed, "dropout", epoch, sample_id),
                    )
                    try:
                        loss, lattice = ctc.ctc_loss(grid, target)
                    except ctc.InfeasibleLength as exc:
                        skipped += 1
                        _diag(f"train: skipping {sample_id} in epoch {epoch}: {exc}")
                        continue
                    grad_logits = ctc.ctc_grad(lattice, grid, target)
                    grads = net.backward(cache, grad_logits)
                    for name, g in grads.items():
                        if name in grads_sum:
                            grads_sum[name] += g
                        else:
                            grads_sum[name] = g.copy()
                    moments.append(cache.bn_moments)
                    losses.append(loss)
                    contributed += 1
                if not contributed:
                    continue
                # batch gradient is the sum over samples, not the mean
                net.sgd_nesterov_step(params, grads_sum, velocity, lr)
                net.update_batchnorm_stats(params, net.average_moments(moments))
            val_wer, val_cer = _validation_rates(params, model_config, vocab, val_samples)
            mean_loss = float(np.mean(losses)) if losses else float("nan")
            line = (
                f"epoch {epoch} lr {lr:.6e} loss {mean_loss:.6f} "
                f"val_wer {val_wer:.6f} val_cer {val_cer:.6f} skipped {skipped}"
            )
            print(line, flush=True)
            log.write(line + "\n")
            log.flush()
            if best_wer is None or val_wer < best_wer:
                best_wer = val_wer
                net.save_checkpoint(
                    ckpt_dir / "best.ckpt", model_config, params, velocity, vocab_hash,
                    epoch=epoch + 1, best_wer=best_wer,
                )
            net.save_checkpoint(
                ckpt_dir / "last.ckpt", model_config, params, velocity, vocab_hash,
                epoch=epoch + 1, best_wer=best_wer,
            )
    return EXIT_OK


def _load_model(checkpoint_path):
    checkpoint_path = Path(checkpoint_path)
    vocab_path = checkpoint_path.parent / VOCAB_FILENAME
    if not vocab_path.exists():
        raise DataError(f"vocabulary file {vocab_path} not found next to checkpoint")
    vocab = codec.Vocabulary.load(vocab_path)
    try:
        model_config, params, _, _ = net.load_checkpoint(
            checkpoint_path, expected_vocab_hash=vocab.sha256()
        )
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {checkpoint_path}: {exc}") from exc
    return vocab, model_config, params


def cmd_transcribe(checkpoint_path, wav_path) -> int:
    """WAV -> posteriors -> greedy collapse -> kern text on stdout."""
    vocab, model_config, params = _load_model(checkpoint_path)
    clip = dsp.load_wav(wav_path)
    spec = dsp.stft_logfreq(clip)
    hyp = _greedy_tokens(params, model_config, spec, vocab)
    try:
        doc = codec.decode(hyp)
    except codec.ScoreSyntaxError as exc:
        _diag(f"transcribe: output is not a well-formed score: {exc}")
        print(" ".join(codec._escape(s) for s in hyp.symbols()))
        return EXIT_MODEL
    sys.stdout.write(kern.serialize(doc))
    return EXIT_OK


def cmd_evaluate(checkpoint_path, manifest_path, split: str, as_json: bool, oracle: bool) -> int:
    """Per-sample and corpus word/symbol error rates for one split."""
    vocab, model_config, params = _load_model(checkpoint_path)
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    rows = []
    wer_stats, cer_stats = [], []
    requested = [s for s in read_manifest(manifest_path) if s.split == split]
    if not requested:
        raise DataError(f"manifest has no samples in split {split!r}")
    for sample in requested:
        try:
            target = _read_tokens(base / sample.tokens, vocab)
            if oracle:
                hyp = target
            else:
                spec = dsp.stft_logfreq(dsp.load_wav(base / sample.audio))
                hyp = _greedy_tokens(params, model_config, spec, vocab)
        except (
            DataError,
            dsp.UnsupportedFormat,
            dsp.WrongSampleRate,
            dsp.TooShort,
            FileNotFoundError,
        ) as exc:
            _diag(f"evaluate: skipping {sample.id}: {exc}")
            continue
        w = metrics.wer(target, hyp)
        c = metrics.cer(target, hyp)
        wer_stats.append(w)
        cer_stats.append(c)
        rows.append(
            {
                "id": sample.id,
                "wer": round(w.rate, 6),
                "cer": round(c.rate, 6),
                "substitutions": w.substitutions,
                "insertions": w.insertions,
                "deletions": w.deletions,
            }
        )
    if not rows:
        raise DataError("no samples could be evaluated")
    summary = {
        "split": split,
        "samples": len(rows),
        "wer": round(metrics.corpus_rate(wer_stats), 6),
        "cer": round(metrics.corpus_rate(cer_stats), 6),
    }
    if as_json:
        print(json.dumps({"samples": rows, "summary": summary}, sort_keys=True))
    else:
        for r in rows:
            print(
                f"{r['id']} wer {r['wer']:.4f} cer {r['cer']:.4f} "
                f"S {r['substitutions']} I {r['insertions']} D {r['deletions']}"
            )
        print(
            f"summary split {split} samples {summary['samples']} "
            f"wer {summary['wer']:.4f} cer {summary['cer']:.4f}"
        )
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="polyscore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="synthesize a dataset from a kern corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model on a built dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("transcribe", help="transcribe a WAV file to kern text")
    p.add_argument("wav")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("evaluate", help="score a model against a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--json", action="store_true")
    p.add_argument("--oracle", action="store_true", help="score references against themselves")
    return parser


def _load_config(path, seed_override: int | None) -> RunConfig:
    try:
        config = RunConfig.from_file(path)
        if seed_override is not None:
            config.seed = seed_override
        config.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "build":
            return cmd_build(_load_config(args.config, args.seed))
        if args.command == "train":
            config = _load_config(args.config, args.seed)
            return cmd_train(config, args.manifest, resume_checkpoint=args.checkpoint)
        if args.command == "transcribe":
            return cmd_transcribe(args.checkpoint, args.wav)
        if args.command == "evaluate":
            return cmd_evaluate(args.checkpoint, args.manifest, args.split, args.json, args.oracle)
    except ConfigError as exc:
        _diag(f"polyscore: config error: {exc}")
        return EXIT_USAGE
    except (
        DataError,
        kern.KernError,
        codec.EmptyCorpus,
        dsp.UnsupportedFormat,
        dsp.WrongSampleRate,
        dsp.TooShort,
        net.CheckpointError,
        metrics.EmptyReference,
        FileNotFoundError,
    ) as exc:
        _diag(f"polyscore: data error: {exc}")
        return EXIT_DATA
    except (net.ShapeMismatch, net.NonFiniteGradient, ctc.InfeasibleLength) as exc:
        _diag(f"polyscore: model error: {exc}")
        return EXIT_MODEL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
