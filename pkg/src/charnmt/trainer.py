"""Negative log-likelihood training with Adam, gradient clipping,
checkpointing, and validation-driven model selection.

The loop is: batch -> teacher-forced mean NLL -> backward -> global-norm
clip -> bias-corrected Adam step. Every validation interval a parameter
snapshot is scored on the dev set (mean NLL plus greedy-decode BLEU); the
best-by-dev-NLL checkpoint is kept alongside the latest. Each epoch
reshuffles with seed+epoch so an interrupted run can resume mid-epoch and
see the identical batch sequence.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .decode import default_max_len, greedy_decode, hypothesis_text
from .errors import ConfigError, ConsistencyError, ContractError, CorpusError, NonFiniteError
from .metrics import bleu
from .model import Model, ModelConfig, forced_log_probs, init_params
from .numerics import Graph, ParameterStore, backward, mul_const, scale, sum_all
from .textpipe import (
    EOS_ID,
    PAD_ID,
    MergeTable,
    Vocabulary,
    load_parallel,
    make_batches,
    segment_line,
)


@dataclass
class TrainConfig:
    batch_size: int = 128
    clip: float = 1.0
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_steps: int = 1000
    validate_every: int = 100
    seed: int = 0
    max_source_len: int = 50
    max_target_len: int | None = None  # default depends on the target unit
    target_unit: str = "character"

    def __post_init__(self):
        for name in ("batch_size", "validate_every", "max_source_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("clip", "step_size", "epsilon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.target_unit not in ("character", "subword"):
            raise ConfigError(f"unknown target unit {self.target_unit!r}")
        if self.max_target_len is not None and self.max_target_len < 1:
            raise ConfigError("max_target_len must be positive")

    def target_limit(self) -> int:
        if self.max_target_len is not None:
            return self.max_target_len
        return 500 if self.target_unit == "character" else 100


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def fresh(cls, store: ParameterStore) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in store.items()},
            v={k: np.zeros_like(t.data) for k, t in store.items()},
        )


def batch_nll(model: Model, batch) -> "Tensor":
    """Mean negative log-likelihood per non-PAD target token."""
    mask = batch.label_mask()
    n = float(mask.sum())
    if n == 0:
        raise ContractError("batch contains no unmasked target tokens")
    picked, _ = forced_log_probs(model, batch.source, batch.source_lengths, batch.target)
    return scale(sum_all(mul_const(picked, mask)), -1.0 / n)


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))


def clip_gradients(grads: dict, threshold: float):
    """Scale all gradients by threshold/norm when the global L2 norm exceeds
    the threshold. Returns (gradients, pre-clip norm)."""
    if threshold <= 0:
        raise ConfigError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads)
    if norm > threshold:
        factor = threshold / norm
        grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}
    return grads, norm


def adam_step(store: ParameterStore, grads: dict, opt: OptimizerState,
              config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place."""
    opt.step += 1
    t = opt.step
    rate = config.step_size * math.sqrt(1.0 - config.beta2**t) / (1.0 - config.beta1**t)
    b1, b2, eps = config.beta1, config.beta2, config.epsilon
    for name in list(grads):
        g = grads[name]
        opt.m[name] = b1 * opt.m[name] + (1.0 - b1) * g
        opt.v[name] = b2 * opt.v[name] + (1.0 - b2) * g * g
        update = rate * opt.m[name] / (np.sqrt(opt.v[name]) + eps)
        store.assign(name, store[name].data - update.astype(store.dtype))


@dataclass
class TrainPaths:
    train_source: Path
    train_target: Path
    dev_source: Path
    dev_target: Path
    src_vocab: Path
    tgt_vocab: Path
    merges: Path
    out_dir: Path


@dataclass
class TrainResult:
    steps: int
    latest_dir: Path
    best_dir: Path | None
    best_dev_nll: float | None
    log_path: Path


_ARCH_FIELDS = (
    "src_vocab_size", "tgt_vocab_size", "d_emb", "d_enc", "d_dec", "d_att",
    "decoder", "attention_query", "precision",
)


def config_dict(model_config: ModelConfig, train_config: TrainConfig) -> dict:
    out = {k: str(v) for k, v in model_config.to_dict().items()}
    out.update({k: str(v) for k, v in asdict(train_config).items()})
    return out


def _coerce(raw: str, typ):
    if raw == "None":
        return None
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


_MODEL_TYPES = {"src_vocab_size": int, "tgt_vocab_size": int, "d_emb": int,
                "d_enc": int, "d_dec": int, "d_att": int,
                "decoder": str, "attention_query": str, "precision": str}
_TRAIN_TYPES = {"batch_size": int, "clip": float, "step_size": float,
                "beta1": float, "beta2": float, "epsilon": float,
                "max_steps": int, "validate_every": int, "seed": int,
                "max_source_len": int, "max_target_len": int, "target_unit": str}


def configs_from_dict(raw: dict) -> tuple[ModelConfig, TrainConfig]:
    """Rebuild the two config dataclasses from a checkpoint's flat mapping."""
    try:
        mc = ModelConfig(**{k: _coerce(raw[k], t) for k, t in _MODEL_TYPES.items()})
        tc = TrainConfig(**{k: _coerce(raw[k], t) for k, t in _TRAIN_TYPES.items()})
    except KeyError as exc:
        raise ConsistencyError(f"checkpoint config is missing key {exc}") from None
    return mc, tc


def check_architecture(stored: ModelConfig, requested: ModelConfig) -> None:
    for name in _ARCH_FIELDS:
        a, b = getattr(stored, name), getattr(requested, name)
        if a != b:
            raise ConsistencyError(
                f"checkpoint was trained with {name}={a!r}, requested {name}={b!r}"
            )


def _load_params(store: ParameterStore, opt: OptimizerState, tensors: dict) -> None:
    for name in store.names():
        if name not in tensors:
            raise ConsistencyError(f"checkpoint lacks parameter {name!r}")
        if tensors[name].shape != store[name].shape:
            raise ConsistencyError(
                f"checkpoint parameter {name!r} has shape {tensors[name].shape}, "
                f"expected {store[name].shape}"
            )
        store.assign(name, tensors[name])
        opt.m[name] = np.ascontiguousarray(tensors[f"adam.m.{name}"], dtype=store.dtype)
        opt.v[name] = np.ascontiguousarray(tensors[f"adam.v.{name}"], dtype=store.dtype)


@dataclass
class TrainedModel:
    """A checkpoint materialized for inference: model plus its data plumbing."""

    model: Model
    model_config: ModelConfig
    train_config: TrainConfig
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    merges: MergeTable
    state: dict


def load_trained_model(directory) -> TrainedModel:
    """Rebuild a ready-to-decode model from a checkpoint directory.

    Validates that every expected parameter is present with its declared
    shape and that the bundled vocabularies match the stored architecture.
    """
    cp = load_checkpoint(directory)
    mc, tc = configs_from_dict(cp.config)
    reference = init_params(mc, seed=0)
    store = ParameterStore(mc.precision)
    for name in reference.names():
        if name not in cp.tensors:
            raise ConsistencyError(f"checkpoint lacks parameter {name!r}")
        if cp.tensors[name].shape != reference[name].shape:
            raise ConsistencyError(
                f"checkpoint parameter {name!r} has shape {cp.tensors[name].shape}, "
                f"expected {reference[name].shape}"
            )
        store.add(name, cp.tensors[name])
    for role in ("src_vocab", "tgt_vocab", "merges"):
        if role not in cp.files:
            raise ConsistencyError(f"checkpoint lacks bundled file {role!r}")
    src_vocab = Vocabulary.load(cp.files["src_vocab"], "subword")
    tgt_vocab = Vocabulary.load(cp.files["tgt_vocab"], tc.target_unit)
    merges = MergeTable.load(cp.files["merges"])
    if len(src_vocab) != mc.src_vocab_size or len(tgt_vocab) != mc.tgt_vocab_size:
        raise ConsistencyError(
            f"bundled vocabularies ({len(src_vocab)}/{len(tgt_vocab)} symbols) do not "
            f"match the stored architecture "
            f"({mc.src_vocab_size}/{mc.tgt_vocab_size})"
        )
    return TrainedModel(
        model=Model(mc, store), model_config=mc, train_config=tc,
        src_vocab=src_vocab, tgt_vocab=tgt_vocab, merges=merges, state=cp.state,
    )


def _segment_pairs(pairs, merges, unit):
    return [
        (segment_line(s, "subword", merges), segment_line(t, unit, merges))
        for s, t in pairs
    ]


def _pad_sources(rows):
    width = max(len(r) for r in rows)
    mat = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, r in enumerate(rows):
        mat[i, : len(r)] = r
    return mat, np.array([len(r) for r in rows])


def greedy_corpus_bleu(model: Model, src_lines, ref_lines, src_vocab, merges,
                       tgt_vocab, unit, chunk: int = 64) -> float:
    """BLEU of batched greedy decoding against raw reference lines."""
    texts = []
    for start in range(0, len(src_lines), chunk):
        part = src_lines[start : start + chunk]
        rows = [src_vocab.encode(segment_line(l, "subword", merges)) + [EOS_ID] for l in part]
        mat, lengths = _pad_sources(rows)
        cap = max(default_max_len(len(r) - 1, unit) for r in rows)
        for hyp in greedy_decode([model], mat, lengths, cap):
            texts.append(hypothesis_text(hyp, tgt_vocab, unit))
    return bleu(texts, ref_lines).bleu


def _dev_nll(model: Model, batches) -> float:
    total, count = 0.0, 0
    for batch in batches:
        n = batch.label_mask().sum()
        total += float(batch_nll(model, batch).data) * n
        count += n
    return total / max(count, 1)


def _batch_stream(pairs, src_vocab, tgt_vocab, config: TrainConfig, epoch: int, start: int):
    while True:
        batches = make_batches(
            pairs, src_vocab, tgt_vocab, config.max_source_len,
            config.target_limit(), config.batch_size, seed=config.seed + epoch,
        )
        if not batches:
            raise CorpusError("no training pairs survive the length limits")
        for index in range(start, len(batches)):
            after = (epoch, index + 1) if index + 1 < len(batches) else (epoch + 1, 0)
            yield batches[index], epoch, index, after
        epoch, start = epoch + 1, 0


def train(model_config: ModelConfig, train_config: TrainConfig, paths: TrainPaths,
          resume: Path | None = None, echo=None) -> TrainResult:
    """Run the full training loop; see the module docstring for the shape.

    `resume` points at a checkpoint directory; architecture fields must
    match the requested config. `echo`, when given, receives each log line.
    """
    merges = MergeTable.load(paths.merges)
    src_vocab = Vocabulary.load(paths.src_vocab, "subword")
    tgt_vocab = Vocabulary.load(paths.tgt_vocab, train_config.target_unit)
    if model_config.src_vocab_size != len(src_vocab):
        raise ConsistencyError(
            f"config says src_vocab_size={model_config.src_vocab_size}, "
            f"file has {len(src_vocab)} symbols"
        )
    if model_config.tgt_vocab_size != len(tgt_vocab):
        raise ConsistencyError(
            f"config says tgt_vocab_size={model_config.tgt_vocab_size}, "
            f"file has {len(tgt_vocab)} symbols"
        )
    train_pairs = _segment_pairs(
        load_parallel(paths.train_source, paths.train_target), merges,
        train_config.target_unit,
    )
    dev_raw = load_parallel(paths.dev_source, paths.dev_target)
    dev_pairs = _segment_pairs(dev_raw, merges, train_config.target_unit)
    dev_src_lines = [s for s, _ in dev_raw]
    dev_ref_lines = [t for _, t in dev_raw]
    dev_batches = make_batches(
        dev_pairs, src_vocab, tgt_vocab, train_config.max_source_len,
        train_config.target_limit(), train_config.batch_size, seed=0,
    )

    store = init_params(model_config, train_config.seed)
    opt = OptimizerState.fresh(store)
    epoch, batch_start = 0, 0
    best_nll = math.inf
    if resume is not None:
        cp = load_checkpoint(resume)
        stored_mc, _ = configs_from_dict(cp.config)
        check_architecture(stored_mc, model_config)
        _load_params(store, opt, cp.tensors)
        opt.step = int(cp.state["step"])
        epoch = int(cp.state["epoch"])
        batch_start = int(cp.state["batch"])
        best_nll = float(cp.state.get("best_dev_nll", math.inf))

    model = Model(model_config, store)
    out_dir = Path(paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train.log"
    latest_dir = out_dir / "latest"
    best_dir = out_dir / "best"
    conf = config_dict(model_config, train_config)
    files = {"src_vocab": paths.src_vocab, "tgt_vocab": paths.tgt_vocab,
             "merges": paths.merges}

    def save(directory, position):
        tensors = {name: t.data for name, t in store.items()}
        tensors.update({f"adam.m.{k}": v for k, v in opt.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in opt.v.items()})
        state = {"step": opt.step, "epoch": position[0], "batch": position[1]}
        if math.isfinite(best_nll):
            state["best_dev_nll"] = best_nll
        save_checkpoint(directory, conf, state, tensors, files)

    stream = _batch_stream(train_pairs, src_vocab, tgt_vocab, train_config,
                           epoch, batch_start)
    position = (epoch, batch_start)
    with open(log_path, "a", encoding="utf-8") as log:
        while opt.step < train_config.max_steps:
            batch, cur_epoch, cur_index, position = next(stream)
            with Graph(store) as graph:
                loss = batch_nll(model, batch)
            loss_value = float(loss.data)
            if not math.isfinite(loss_value):
                raise NonFiniteError(
                    f"non-finite training loss at step {opt.step + 1} "
                    f"(epoch {cur_epoch}, batch {cur_index})"
                )
            grads = {k: t.data for k, t in backward(graph, loss).items()}
            grads, grad_norm = clip_gradients(grads, train_config.clip)
            adam_step(store, grads, opt, train_config)

            dev_nll = dev_bleu = None
            if opt.step % train_config.validate_every == 0:
                snapshot = Model(model_config, store.snapshot())
                dev_nll = _dev_nll(snapshot, dev_batches)
                dev_bleu = greedy_corpus_bleu(
                    snapshot, dev_src_lines, dev_ref_lines, src_vocab, merges,
                    tgt_vocab, train_config.target_unit,
                    chunk=train_config.batch_size,
                )
                if dev_nll < best_nll:
                    best_nll = dev_nll
                    save(best_dir, position)
                save(latest_dir, position)

            line = "\t".join([
                str(opt.step),
                f"{loss_value:.6f}",
                f"{grad_norm:.6f}",
                "-" if dev_nll is None else f"{dev_nll:.6f}",
                "-" if dev_bleu is None else f"{dev_bleu:.4f}",
            ])
            log.write(line + "\n")
            if echo is not None:
                echo(line)
    save(latest_dir, position)
    return TrainResult(
        steps=opt.step,
        latest_dir=latest_dir,
        best_dir=best_dir if best_dir.exists() else None,
        best_dev_nll=best_nll if math.isfinite(best_nll) else None,
        log_path=log_path,
    )
