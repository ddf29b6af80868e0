"""Batch assembly and the training loop over the story/catalog mixture."""
from __future__ import annotations

import time

import numpy as np

from .corpus import MaskingConfig, MixtureConfig, sample_mixture
from .model import AdamState, Model, TrainConfig, backward_and_step, cross_entropy


def make_batch(sequences, dtype=np.float32, pad_to: int | None = None):
    """Next-token batch from variable-length id sequences: right-padded
    (inputs, targets, weights); weights zero over padding."""
    usable = [s for s in sequences if len(s) >= 2]
    if not usable:
        raise ValueError("batch has no sequence with a prediction target")
    width = max(len(s) - 1 for s in usable)
    if pad_to is not None:
        width = max(width, pad_to)
    b = len(usable)
    inputs = np.zeros((b, width), dtype=np.int64)
    targets = np.zeros((b, width), dtype=np.int64)
    weights = np.zeros((b, width), dtype=dtype)
    for r, seq in enumerate(usable):
        n = len(seq) - 1
        arr = np.asarray(seq, dtype=np.int64)
        inputs[r, :n] = arr[:-1]
        targets[r, :n] = arr[1:]
        weights[r, :n] = 1.0
    return inputs, targets, weights


def train(model: Model, opt: AdamState, story_examples, catalog_examples,
          mixture_cfg: MixtureConfig, masking_cfg: MaskingConfig,
          vocabulary, train_cfg: TrainConfig, log_every: int = 100,
          log=print) -> list[dict]:
    """Run macro_steps optimizer steps over the sampled mixture. Fully
    deterministic given the config seeds; returns per-log-point metrics."""
    stream = sample_mixture(story_examples, catalog_examples, mixture_cfg,
                            n=train_cfg.macro_steps * train_cfg.batch_size,
                            masking=masking_cfg, vocabulary=vocabulary)
    history = []
    started = time.perf_counter()
    for step in range(train_cfg.macro_steps):
        batch_seqs = [next(stream).token_ids for _ in range(train_cfg.batch_size)]
        batch = make_batch(batch_seqs, dtype=model.config.np_dtype)
        metrics = backward_and_step(model, opt, batch, train_cfg, batch_index=step)
        if log_every and (step + 1) % log_every == 0:
            metrics = dict(metrics, step=step + 1,
                           elapsed_s=round(time.perf_counter() - started, 2))
            history.append(metrics)
            if log:
                log(f"step {metrics['step']}: loss {metrics['loss']:.4f} "
                    f"grad_norm {metrics['grad_norm']:.3f} lr {metrics['lr']:.2e} "
                    f"({metrics['elapsed_s']}s)")
    return history


def held_out_loss(model: Model, examples, batch_size: int = 16) -> float:
    """Mean next-token cross entropy over fixed examples (no masking)."""
    total_nll = 0.0
    total_weight = 0.0
    for i in range(0, len(examples), batch_size):
        chunk = [ex.token_ids for ex in examples[i:i + batch_size]]
        inputs, targets, weights = make_batch(chunk, dtype=model.config.np_dtype)
        logits = model.forward(inputs)
        loss = cross_entropy(logits, targets, weights)
        total_nll += loss * weights.sum()
        total_weight += weights.sum()
    if total_weight == 0:
        raise ValueError("no prediction targets in held-out examples")
    return float(total_nll / total_weight)
