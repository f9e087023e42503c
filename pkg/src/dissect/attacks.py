"""PGD attacks, adversarial datasets and adversarial training."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledData
from .errors import ConsistencyError, EmptyAdvSplitError, ParseError
from .nn import Network, TrainConfig, dump_container, grad_input_batch, load_container, predict, train


@dataclass
class PgdConfig:
    """Untargeted L-infinity PGD.

    ``epsilon_iter`` defaults to ``2 * epsilon / steps``.
    """

    epsilon: float = 0.1
    steps: int = 50
    epsilon_iter: Optional[float] = None
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.steps < 1:
            raise ValueError("PGD needs at least one step")
        if self.epsilon_iter is not None and self.epsilon_iter <= 0:
            raise ValueError("epsilon_iter must be positive")
        if not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")

    @property
    def step_size(self):
        if self.epsilon_iter is not None:
            return self.epsilon_iter
        return 2.0 * self.epsilon / self.steps


def pgd_batch(network: Network, X, y, config: PgdConfig) -> np.ndarray:
    """PGD on a batch; every step is projected onto the epsilon-ball and the clip range."""
    X = np.asarray(X, dtype=np.float64)
    if X.size and (X.min() < config.clip_min - 1e-12 or X.max() > config.clip_max + 1e-12):
        raise ValueError(f"inputs fall outside [{config.clip_min}, {config.clip_max}]")
    lo = np.maximum(X - config.epsilon, config.clip_min)
    hi = np.minimum(X + config.epsilon, config.clip_max)
    x_adv = X.copy()
    step = config.step_size
    for _ in range(config.steps):
        g = grad_input_batch(network, x_adv, y, reduction="sum")
        x_adv = np.clip(x_adv + step * np.sign(g), lo, hi)
    return x_adv


def pgd(network: Network, x, y: int, config: PgdConfig) -> np.ndarray:
    return pgd_batch(network, np.asarray(x, dtype=np.float64)[None], [y], config)[0]


@dataclass
class AdvDataset:
    """Clean inputs held out from attack generation plus successful adversaries."""

    clean: LabeledData
    source_ids: np.ndarray  # every input offered as an attack source
    adv_ids: np.ndarray  # source id of each successful adversary
    x_orig: np.ndarray
    x_adv: np.ndarray
    y_orig: np.ndarray
    y_pred: np.ndarray
    success_rate: float
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.adv_ids)

    def verify(self, network: Network, epsilon: float) -> np.ndarray:
        """Re-check every stored pair: inside the budget and misclassified."""
        if len(self) == 0:
            return np.zeros(0, dtype=bool)
        pred = predict(network, self.x_adv)
        dist = np.abs(self.x_adv - self.x_orig).reshape(len(self), -1).max(axis=1)
        return (pred != self.y_orig) & (dist <= epsilon + 1e-9)


def build_adv_dataset(
    network: Network,
    sources: LabeledData,
    config: PgdConfig,
    clean: Optional[LabeledData] = None,
    batch_size: int = 256,
) -> AdvDataset:
    """Attack every correctly classified source input and keep the successes.

    Success means the prediction on the perturbed input differs from the
    original label. ``clean`` must not share ids with ``sources``.
    """
    if clean is None:
        clean = LabeledData(np.zeros((0,) + network.input_shape), [], [])
    overlap = np.intersect1d(clean.ids, sources.ids)
    if overlap.size:
        raise ConsistencyError(f"{overlap.size} clean inputs are also attack sources")
    correct = np.flatnonzero(predict(network, sources.x) == sources.y)
    x_orig = sources.x[correct]
    y_orig = sources.y[correct]
    x_adv = np.concatenate(
        [pgd_batch(network, x_orig[s : s + batch_size], y_orig[s : s + batch_size], config)
         for s in range(0, len(correct), batch_size)]
    ) if len(correct) else x_orig.copy()
    y_pred = predict(network, x_adv) if len(correct) else y_orig.copy()
    ok = y_pred != y_orig
    rate = float(ok.mean()) if len(correct) else 0.0
    if not ok.any():
        raise EmptyAdvSplitError(
            f"no successful adversaries among {len(correct)} correctly classified inputs "
            f"(epsilon={config.epsilon})"
        )
    return AdvDataset(
        clean=clean,
        source_ids=sources.ids.copy(),
        adv_ids=sources.ids[correct][ok],
        x_orig=x_orig[ok],
        x_adv=x_adv[ok],
        y_orig=y_orig[ok],
        y_pred=y_pred[ok],
        success_rate=rate,
        provenance={"attack": "pgd", "config": asdict(config)},
    )


def dumps_adv_dataset(adv: AdvDataset, network_hash: str = "") -> bytes:
    provenance = dict(adv.provenance, network_hash=network_hash)
    header = {
        "version": 1,
        "type": "adv_dataset",
        "input_shape": list(adv.x_adv.shape[1:]) or list(adv.clean.x.shape[1:]),
        "n_adv": len(adv),
        "n_clean": len(adv.clean),
        "success_rate": adv.success_rate,
        "provenance": provenance,
    }
    arrays = [
        adv.clean.x, adv.clean.y, adv.clean.ids, adv.source_ids,
        adv.adv_ids, adv.x_orig, adv.x_adv, adv.y_orig, adv.y_pred,
    ]
    return dump_container(header, arrays)


def loads_adv_dataset(data: bytes) -> AdvDataset:
    header, arrays = load_container(data)
    if header.get("type") != "adv_dataset":
        raise ParseError(f"container holds {header.get('type')!r}, not an adversarial dataset")
    if len(arrays) != 9:
        raise ParseError(f"expected 9 arrays, found {len(arrays)}")
    shape = tuple(header["input_shape"])
    cx, cy, cid, src, aid, xo, xa, yo, yp = arrays
    as_int = lambda a: a.astype(np.int64)
    return AdvDataset(
        clean=LabeledData(cx.reshape((-1,) + shape), as_int(cy), as_int(cid)),
        source_ids=as_int(src),
        adv_ids=as_int(aid),
        x_orig=xo.reshape((-1,) + shape),
        x_adv=xa.reshape((-1,) + shape),
        y_orig=as_int(yo),
        y_pred=as_int(yp),
        success_rate=header["success_rate"],
        provenance=header["provenance"],
    )


def adversarial_train(
    network: Network,
    X,
    y,
    pgd_config: PgdConfig,
    train_config: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> Network:
    """Train with every batch replaced by its PGD perturbation."""
    return train(
        network,
        X,
        y,
        train_config,
        perturb=lambda net, xb, yb: pgd_batch(net, xb, yb, pgd_config),
        on_epoch=on_epoch,
    )


def adversarial_accuracy(network: Network, data: LabeledData, config: PgdConfig, batch_size=256) -> float:
    """Fraction of inputs still classified correctly after a PGD attack."""
    if len(data) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(data), batch_size):
        xb, yb = data.x[s : s + batch_size], data.y[s : s + batch_size]
        hits += int(np.sum(predict(network, pgd_batch(network, xb, yb, config)) == yb))
    return hits / len(data)


def file_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
