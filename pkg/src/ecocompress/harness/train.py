"""Pretraining, entropy-constrained training, quantization and evaluation."""
from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .. import tensor as T
from ..codec import CompressedModel, decompress_model
from ..discrete import entropy_np, kernel_probs, moments
from ..errors import ContractError, TrainingDiverged
from ..layers import (
    DenseLayer,
    NoiseSource,
    QuantizedDense,
    StochasticDense,
    dense_forward,
    quantize,
    quantized_forward,
    stochastic_forward,
)
from ..objective import (
    alpha_schedule,
    eco_loss,
    empirical_entropy_bits,
    lr_schedule,
    schedule_value,
)
from .adam import AdamState, apply_adam
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import Dataset, load_mnist, make_blobs
from .metrics import MetricsRow, MetricsTrace

log = logging.getLogger(__name__)

EVAL_CHUNK = 2000
EVAL_STREAM = 1


def load_data(config: TrainConfig) -> tuple:
    if config.dataset == "mnist":
        train, test = load_mnist(config.data_dir)
    else:
        train, test = make_blobs(config.blob_train, config.blob_test, config.arch[0],
                                 config.arch[-1], config.blob_spread, config.seed)
    if train.dim != config.arch[0] or train.n_classes != config.arch[-1]:
        raise ContractError(f"data is {train.dim}-d with {train.n_classes} classes; arch is {config.arch}")
    return train, test


def _batches(n: int, batch_size: int, seed: int, salt: int):
    """Endless deterministic minibatch index stream, reshuffled every epoch."""
    epoch = 0
    while True:
        order = np.random.default_rng([seed, salt, epoch]).permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]
        epoch += 1


def steps_per_epoch(n: int, batch_size: int) -> int:
    return int(math.ceil(n / batch_size))


# ---------------------------------------------------------------------------
def init_dense(arch: Sequence[int], seed: int) -> list:
    rng = np.random.default_rng([seed, 7])
    return [DenseLayer.init(a, b, rng) for a, b in zip(arch[:-1], arch[1:])]


def pretrain(config: TrainConfig, train: Dataset, test: Optional[Dataset] = None) -> tuple:
    """Plain deterministic training of the dense net; returns ``(layers, test_error)``."""
    layers = init_dense(config.arch, config.seed)
    params = [p for layer in layers for p in layer.parameters()]
    state = AdamState.for_params([p.data for p in params])
    steps = config.pretrain_steps
    if steps is None:
        steps = config.pretrain_epochs * steps_per_epoch(len(train), config.batch_size)
    batches = _batches(len(train), config.batch_size, config.seed, 1)
    for step in range(steps):
        idx = next(batches)
        loss = T.softmax_cross_entropy(dense_forward(layers, train.inputs[idx]), train.labels[idx])
        if not math.isfinite(loss.item()):
            raise TrainingDiverged(f"pretraining loss became {loss.item()} at step {step}")
        T.backward(loss)
        apply_adam(state, params, config.pretrain_lr)
        if step % 500 == 0:
            log.info("pretrain step %d loss %.4f", step, loss.item())
    err = evaluate(layers, test) if test is not None else None
    return layers, err


# ---------------------------------------------------------------------------
def to_stochastic(dense: Sequence[DenseLayer], config: TrainConfig) -> list:
    noise = NoiseSource(config.seed)
    return [StochasticDense.from_dense(layer, K, noise, i, config.codebook_bits, config.sigma_init_frac)
            for i, (layer, K) in enumerate(zip(dense, config.cardinalities))]


def quantize_model(layers: Sequence[StochasticDense]) -> list:
    return [quantize(layer) for layer in layers]


def _forward_chunks(fn, x: np.ndarray) -> np.ndarray:
    return np.concatenate([fn(x[i:i + EVAL_CHUNK]) for i in range(0, x.shape[0], EVAL_CHUNK)])


def predict_logits(model, x: np.ndarray) -> np.ndarray:
    if isinstance(model, CompressedModel):
        model = decompress_model(model)
    if not model:
        raise ContractError("empty model")
    kind = type(model[0])
    if not all(isinstance(layer, kind) for layer in model):
        raise ContractError("mixed layer types in one model")
    if model[0].shape[0] != x.shape[1]:
        raise ContractError(f"model expects {model[0].shape[0]} inputs, data has {x.shape[1]}")
    with T.no_grad():
        if kind is QuantizedDense:
            return _forward_chunks(lambda c: quantized_forward(model, c), x)
        if kind is StochasticDense:
            probs = [kernel_probs(layer.posterior) for layer in model]
            return _forward_chunks(lambda c: stochastic_forward(model, c, mean=True, probs=probs).data, x)
        if kind is DenseLayer:
            return _forward_chunks(lambda c: dense_forward(model, c).data, x)
    raise ContractError(f"cannot evaluate layers of type {kind.__name__}")


def evaluate(model, dataset: Dataset) -> float:
    """Top-1 error rate.  Stochastic models are evaluated through their mean weights."""
    logits = predict_logits(model, dataset.inputs)
    if logits.shape[1] != dataset.n_classes:
        raise ContractError(f"model has {logits.shape[1]} outputs, dataset has {dataset.n_classes} classes")
    return float(np.mean(np.argmax(logits, axis=1) != dataset.labels))


def _task_bits(logits: np.ndarray, labels: np.ndarray) -> float:
    return T.softmax_cross_entropy(logits, labels).item()


def monitor(model: Sequence[StochasticDense], step: int, alpha: float,
            train_eval: Dataset, test: Dataset) -> MetricsRow:
    """Evaluate the continuous and MAP-quantized models at one point of training."""
    with T.no_grad():
        probs = [kernel_probs(layer.posterior) for layer in model]
        H_P = [entropy_np(p.data.mean(axis=0)) for p in probs]
        var = np.concatenate([moments(layer.posterior, p)[1].data for layer, p in zip(model, probs)])
        x, y = train_eval.inputs, train_eval.labels
        var_logits = _forward_chunks(
            lambda c: stochastic_forward(model, c, step=step, stream=EVAL_STREAM, probs=probs).data, x)
        mean_logits = _forward_chunks(
            lambda c: stochastic_forward(model, c, mean=True, probs=probs).data, test.inputs)
    qmodel = quantize_model(model)
    n = [layer.posterior.n for layer in model]
    K = [layer.posterior.K for layer in model]
    ent_P = sum(nl * h for nl, h in zip(n, H_P))
    ent_mu_layers = [empirical_entropy_bits(q) for q in qmodel]
    var_loss = _task_bits(var_logits, y) + alpha * ent_P
    quant_loss = _task_bits(_forward_chunks(lambda c: quantized_forward(qmodel, c), x), y) \
        + alpha * sum(ent_mu_layers)
    return MetricsRow(
        step=step,
        alpha=alpha,
        var_loss=var_loss,
        quant_loss=quant_loss,
        layer_n=n,
        layer_K=K,
        H_P=H_P,
        H_mu=[e / nl for e, nl in zip(ent_mu_layers, n)],
        sigma2_mean=float(var.mean()),
        sigma2_std=float(var.std()),
        err_cont=float(np.mean(np.argmax(mean_logits, axis=1) != test.labels)),
        err_quant=evaluate(qmodel, test),
    )


def eco_steps(config: TrainConfig, n_train: int) -> int:
    if config.steps is not None:
        return config.steps
    return config.eco_epochs * steps_per_epoch(n_train, config.batch_size)


def train_eco(config: TrainConfig, dense: Sequence[DenseLayer], train: Dataset, test: Dataset,
              checkpoint_path: Union[str, Path, None] = None) -> tuple:
    """Entropy-constrained training from a pretrained dense net.

    Returns ``(stochastic_layers, MetricsTrace)``.  The trace is logged every
    ``config.log_every`` steps and once more after the final update.  With
    ``checkpoint_path`` set, the model is saved at every logged step so a
    diverged run keeps its last good state.
    """
    if tuple(d.shape for d in dense) != tuple(zip(config.arch[:-1], config.arch[1:])):
        raise ContractError("checkpoint architecture does not match the config")
    model = to_stochastic(dense, config)
    params = [p for layer in model for p in layer.parameters()]
    state = AdamState.for_params([p.data for p in params])
    total = eco_steps(config, len(train))
    a_sched = alpha_schedule(config.alpha_max, total, config.alpha_ramp_frac)
    lr_sched = lr_schedule(config.lr_start, config.lr_end, total)
    train_eval = train.subset(config.eval_train_samples)
    trace = MetricsTrace()
    batches = _batches(len(train), config.batch_size, config.seed, 2)

    def log_point(step):
        row = monitor(model, step, schedule_value(a_sched, step), train_eval, test)
        trace.append(row)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, seed=config.seed)
        log.info("eco step %d: var %.4f quant %.4f H_P %.0f H_mu %.0f err %.4f/%.4f",
                 step, row.var_loss, row.quant_loss, row.H_P_total, row.H_mu_total,
                 row.err_cont, row.err_quant)

    for step in range(total):
        if step % config.log_every == 0:
            log_point(step)
        idx = next(batches)
        alpha = schedule_value(a_sched, step)
        loss = eco_loss(model, train.inputs[idx], train.labels[idx], alpha, step=step)
        value = loss.total.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"ECO loss became {value} at step {step}; last good state kept")
        loss.backward()
        for layer in model:
            layer.posterior.mask_pinned_grads()
        apply_adam(state, params, schedule_value(lr_sched, step))
    if not trace.rows or trace.rows[-1].step != total:
        log_point(total)
    return model, trace
