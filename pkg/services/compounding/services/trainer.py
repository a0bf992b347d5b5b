import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from config import TrainerConfig
from errors import ConfigurationError
from schema.reports import EpochRecord
from services.layers import Planes, squared_error
from services.network import Network, backward, predict

logger = logging.getLogger("compounding.trainer")

Sample = Tuple[Planes, Planes]


class AdamOptimizer:
    """Adam with one moment pair per real array; re and im planes are separate arrays."""

    def __init__(self, params: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> None:
        """Update params in place."""
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@dataclass
class TrainingResult:
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stopped_early: bool = False


def mean_loss(network: Network, samples: Sequence[Sample], workers: int = 1) -> float:
    """Average per-sample loss over a set."""
    predictions = predict(network, [x for x, _ in samples], workers)
    total = 0.0
    for pred, (_, y) in zip(predictions, samples):
        loss, _ = squared_error(pred, y, 1)
        total += loss
    return total / len(samples)


def _writable_parameters(network: Network) -> List[np.ndarray]:
    params = network.parameters()
    if any(not p.flags.writeable for p in params):
        network.set_parameters([np.array(p, copy=True) for p in params])
        params = network.parameters()
    return params


def train(
    network: Network,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    cfg: TrainerConfig,
) -> TrainingResult:
    """Adam on the squared-modulus loss with plateau halving and early stopping.

    The learning rate halves after `plateau_patience` epochs without a new best
    validation loss and training stops after `stop_patience` such epochs (or at
    `max_epochs`). The best-validation weights are restored before returning.
    """
    if not train_set:
        raise ConfigurationError("training set is empty")
    if not val_set:
        raise ConfigurationError("validation set is empty")

    rng = np.random.default_rng(cfg.seed)
    params = _writable_parameters(network)
    optimizer = AdamOptimizer(params, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainingResult()
    best_params = [p.copy() for p in params]
    lr = cfg.lr0
    since_best = 0
    since_halving = 0
    epoch = 0
    n = len(train_set)

    while True:
        epoch += 1
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            loss, grads = backward(network, [x for x, _ in batch], [y for _, y in batch], cfg.workers)
            optimizer.step(params, grads, lr)
            epoch_loss += loss * len(batch)
        train_loss = epoch_loss / n
        val_loss = mean_loss(network, val_set, cfg.workers)
        result.history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr))

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_params = [p.copy() for p in params]
            since_best = 0
            since_halving = 0
        else:
            since_best += 1
            since_halving += 1
            if since_halving >= cfg.plateau_patience:
                lr /= 2.0
                since_halving = 0
                logger.info("epoch %d: validation loss stalled, learning rate now %.3g", epoch, lr)

        logger.debug("epoch %d train=%.6g val=%.6g lr=%.3g", epoch, train_loss, val_loss, lr)

        if since_best >= cfg.stop_patience:
            result.stopped_early = True
            logger.info("early stop at epoch %d, best epoch %d", epoch, result.best_epoch)
            break
        if cfg.max_epochs is not None and epoch >= cfg.max_epochs:
            break

    for p, best in zip(params, best_params):
        p[...] = best
    return result
