"""Desk-scale ordering experiment: SC-initialized vs scratch fine-tuning on MNIST.

Per seed: pretrain the trunk on ``n_unlabeled`` training images, then train
two networks on the first ``n_labeled`` labeled images, one from the
pretrained trunk and one from scratch, with identical seeds, heads and
schedules. The claim holds when the mean test accuracy of the pretrained
runs is at least that of the scratch runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, load_mnist
from .models import build_mnist_model
from .sampler import SampleConfig
from .trainer import TrainConfig, finetune, pretrain


@dataclass
class OrderingResult:
    seeds: list[int]
    pretrained: list[float] = field(default_factory=list)
    scratch: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean_pretrained(self) -> float:
        return float(np.mean(self.pretrained))

    @property
    def mean_scratch(self) -> float:
        return float(np.mean(self.scratch))

    @property
    def holds(self) -> bool:
        return self.mean_pretrained >= self.mean_scratch

    def summary(self) -> str:
        rows = [f"seed {s}: pretrained {p:.4f}  scratch {c:.4f}" for s, p, c in zip(self.seeds, self.pretrained, self.scratch)]
        rows.append(f"mean: pretrained {self.mean_pretrained:.4f}  scratch {self.mean_scratch:.4f}  ({self.seconds:.0f} s)")
        return "\n".join(rows)


def ordering_experiment(
    directory: str | Path,
    seeds=(0, 1, 2),
    n_unlabeled: int = 10000,
    n_labeled: int = 1000,
    n_test: int | None = None,
    pretrain_epochs: int = 5,
    finetune_epochs: int = 30,
    normalize: bool = False,
    batch_size: int = 32,
    log=None,
) -> OrderingResult:
    train = load_mnist(directory, "train")
    test = load_mnist(directory, "test").take(n_test)
    unlabeled = Dataset(train.images[:n_unlabeled], None, "unlabeled")
    labeled = train.take(n_labeled)
    result = OrderingResult(list(seeds))
    t0 = time.perf_counter()
    for seed in seeds:
        pre_cfg = TrainConfig.for_phase("pretrain", max_epochs=pretrain_epochs, batch_size=batch_size, seed=seed, max_translate=2)
        ft = dict(max_epochs=finetune_epochs, batch_size=batch_size, seed=seed, max_translate=2, eval_every=0)
        init = pretrain(build_mnist_model(seed), unlabeled, pre_cfg, SampleConfig(seed=seed, normalize=normalize)).checkpoint
        warm = finetune(build_mnist_model(seed), labeled, TrainConfig.for_phase("finetune", **ft), init=init, test=test)
        cold = finetune(build_mnist_model(seed), labeled, TrainConfig.for_phase("scratch", **ft), test=test)
        result.pretrained.append(warm.test_accuracy)
        result.scratch.append(cold.test_accuracy)
        if log is not None:
            log(f"seed {seed}: pretrained {warm.test_accuracy:.4f}  scratch {cold.test_accuracy:.4f}  ({time.perf_counter() - t0:.0f} s)")
    result.seconds = time.perf_counter() - t0
    return result
