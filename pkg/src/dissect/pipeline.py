"""End-to-end experiments.

A run goes through three stages, each cached on disk under a key derived
from the part of the configuration it depends on:

1. data + network training, then PGD on the test split to build the
   adversarial set (the validation split provides held-out clean inputs);
2. feature extraction for every clean and adversarial input
   (persistence diagram, raw graph vector or diagram point counts);
3. kernel gram matrices, a one-class (unsupervised) or two-class
   (supervised) SVM, and the AUC with its bootstrap interval.

The cache directory comes from ``$DISSECT_CACHE_DIR`` (default
``~/.cache/dissect``).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import time
import warnings
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .attacks import (
    AdvDataset,
    PgdConfig,
    adversarial_accuracy,
    adversarial_train,
    build_adv_dataset,
    dumps_adv_dataset,
    loads_adv_dataset,
)
from .data import LabeledData, ToySpec, gen_toy, load_idx, split
from .detector import DetectionReport, auc, bootstrap_ci, fit_binary, fit_one_class
from .errors import ConsistencyError, ParseError, StaleCacheError
from .graph import (
    GraphStructure,
    apply_mask,
    induce,
    prune_under_optimized,
    select_under_optimized,
)
from .kernels import kernel_from_distances, median_sigma, range_cap, squared_distances, sw_distances
from .nn import (
    TrainConfig,
    accuracy,
    build_lenet,
    build_mlp,
    build_toy_net,
    dump_container,
    dumps_network,
    forward,
    load_container,
    loads_network,
    train,
)
from .persistence import PersistenceDiagram, pd0, pd_stats

log = logging.getLogger(__name__)

CACHE_ENV = "DISSECT_CACHE_DIR"
FEATURES = ("pd", "rg", "counts")
MODES = ("unsupervised", "supervised")
# fraction of parameters kept per layer; the toy net's smallest layers have
# 16 weights, so 0.1 would leave a single edge class there
DEFAULT_Q = {"toy": 0.3, "mlp": 0.1, "lenet": 0.025}


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "toy"
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    toy_high: float = 0.6
    toy_low: float = 0.4
    toy_std: float = 0.05
    toy_samples_per_class: int = 500
    # network and training
    architecture: str = "toy"
    mlp_widths: Optional[list] = None
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    adversarial_training: bool = False
    # attack
    epsilon: float = 0.1
    pgd_steps: int = 50
    epsilon_iter: Optional[float] = None
    clip_min: float = 0.0
    clip_max: float = 1.0
    max_sources: Optional[int] = None
    max_clean: Optional[int] = None
    # features
    feature: str = "pd"
    q: Optional[float] = None  # None: per-architecture default
    layers: Optional[list] = None
    criterion: str = "mi"
    edge_direction: str = "under"
    # detector
    mode: str = "unsupervised"
    directions: int = 50
    sigma: Optional[float] = None
    cap_strategy: str = "range-cap"
    nu: float = 0.1
    C: float = 1.0
    bootstrap: int = 100
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.q is None:
            self.q = DEFAULT_Q.get(self.architecture, 0.1)
        if self.dataset not in ("toy", "idx"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "idx":
            for p in (self.idx_images, self.idx_labels):
                if p is None or not Path(p).exists():
                    raise ValueError(f"IDX file {p!r} does not exist")
        if self.architecture not in ("toy", "mlp", "lenet"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == "mlp" and not self.mlp_widths:
            raise ValueError("architecture 'mlp' needs mlp_widths")
        if not 0 < self.q <= 1:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.feature not in FEATURES:
            raise ValueError(f"unknown feature {self.feature!r}, expected one of {FEATURES}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.criterion not in ("mi", "lf"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.edge_direction not in ("under", "well"):
            raise ValueError(f"unknown edge direction {self.edge_direction!r}")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self):
        return asdict(self)

    def pgd(self):
        return PgdConfig(self.epsilon, self.pgd_steps, self.epsilon_iter, self.clip_min, self.clip_max)

    def train_config(self):
        return TrainConfig(self.optimizer, self.lr, self.epochs, self.batch_size, self.seed)


_DATA_KEYS = ("dataset", "idx_images", "idx_labels", "toy_high", "toy_low", "toy_std",
              "toy_samples_per_class", "seed")
_NET_KEYS = _DATA_KEYS + ("architecture", "mlp_widths", "optimizer", "lr", "epochs",
                          "batch_size", "adversarial_training")
_ADV_KEYS = _NET_KEYS + ("epsilon", "pgd_steps", "epsilon_iter", "clip_min", "clip_max",
                         "max_sources", "max_clean")
_FEATURE_KEYS = _ADV_KEYS + ("feature", "q", "layers", "criterion", "edge_direction")


def stage_key(config: ExperimentConfig, stage: str) -> str:
    names = {"network": _NET_KEYS, "adv": _ADV_KEYS, "features": _FEATURE_KEYS}[stage]
    d = config.to_dict()
    return json.dumps({"stage": stage, **{k: d[k] for k in names}}, sort_keys=True)


# --------------------------------------------------------------------------
# Cache
# --------------------------------------------------------------------------


class Cache:
    """Single-writer on-disk cache of stage artifacts.

    Each file starts with the full key it was written for; reading it back
    under a different key raises :class:`StaleCacheError`.
    """

    MAGIC = b"DSCK"

    def __init__(self, root=None):
        root = root or os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "dissect"
        self.root = Path(root)

    def path(self, stage, key):
        digest = hashlib.sha256(key.encode()).hexdigest()[:24]
        return self.root / f"{stage}-{digest}.bin"

    def get(self, stage, key) -> Optional[bytes]:
        path = self.path(stage, key)
        if not path.exists():
            return None
        data = path.read_bytes()
        if data[:4] != self.MAGIC or len(data) < 12:
            raise ParseError(f"{path} is not a cache file", 0)
        (n,) = struct.unpack_from("<Q", data, 4)
        stored = data[12 : 12 + n].decode()
        if stored != key:
            raise StaleCacheError(f"{path} was written for a different configuration")
        return data[12 + n :]

    def put(self, stage, key, payload: bytes):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(stage, key)
        k = key.encode()
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(self.MAGIC + struct.pack("<Q", len(k)) + k + payload)
        os.replace(tmp, path)


# --------------------------------------------------------------------------
# Stage 1: data, network, adversaries
# --------------------------------------------------------------------------


def load_data(config: ExperimentConfig):
    """Train/validation/test splits (60/20/20)."""
    if config.dataset == "toy":
        spec = ToySpec(high=config.toy_high, low=config.toy_low, std=config.toy_std,
                       samples_per_class=config.toy_samples_per_class)
        data = gen_toy(spec, config.seed)
    else:
        data = load_idx(config.idx_images, config.idx_labels)
    return split(data, (0.6, 0.2, 0.2), config.seed)


def build_network(config: ExperimentConfig, n_classes: int, input_shape):
    if config.architecture == "toy":
        return build_toy_net(config.seed, n_classes=n_classes)
    if config.architecture == "lenet":
        return build_lenet(config.seed, n_classes=n_classes)
    widths = [int(np.prod(input_shape))] + list(config.mlp_widths) + [n_classes]
    return build_mlp(widths, config.seed)


def match_input_shape(net, data):
    if data.x.shape[1:] != net.input_shape:
        return LabeledData(data.x.reshape((len(data),) + net.input_shape), data.y, data.ids)
    return data


def get_network(config: ExperimentConfig, cache: Cache):
    key = stage_key(config, "network")
    hit = cache.get("network", key)
    if hit is not None:
        return loads_network(hit)
    tr, _, _ = load_data(config)
    n_classes = 2 if config.dataset == "toy" else 10
    net = build_network(config, n_classes, tr.x.shape[1:])
    tr = match_input_shape(net, tr)
    t0 = time.perf_counter()
    if config.adversarial_training:
        net = adversarial_train(net, tr.x, tr.y, config.pgd(), config.train_config())
    else:
        net = train(net, tr.x, tr.y, config.train_config())
    log.info("trained network in %.2fs", time.perf_counter() - t0)
    cache.put("network", key, dumps_network(net))
    return net


def get_adv(config: ExperimentConfig, cache: Cache, net=None) -> AdvDataset:
    key = stage_key(config, "adv")
    hit = cache.get("adv", key)
    if hit is not None:
        return loads_adv_dataset(hit)
    if net is None:
        net = get_network(config, cache)
    _, val, test = load_data(config)
    val, test = match_input_shape(net, val), match_input_shape(net, test)
    if config.max_sources is not None:
        test = test.subset(slice(0, config.max_sources))
    if config.max_clean is not None:
        val = val.subset(slice(0, config.max_clean))
    t0 = time.perf_counter()
    adv = build_adv_dataset(net, test, config.pgd(), clean=val)
    log.info("PGD: %d/%d successful (rate %.3f) in %.2fs", len(adv), len(test),
             adv.success_rate, time.perf_counter() - t0)
    cache.put("adv", key, dumps_adv_dataset(adv, net.digest()))
    return adv


# --------------------------------------------------------------------------
# Stage 2: features
# --------------------------------------------------------------------------


def extract_features(net, X, mask, feature: str):
    """One feature per input: a diagram, a raw-graph vector or a count pair."""
    structure = GraphStructure(net)
    out = []
    for x in X:
        _, record = forward(net, x)
        graph = apply_mask(induce(net, record, structure), mask)
        if feature == "rg":
            out.append(graph.weight.copy())
        elif feature == "pd":
            out.append(pd0(graph))
        elif feature == "counts":
            out.append(np.array(pd_stats(pd0(graph)), dtype=np.float64))
        else:
            raise ValueError(f"unknown feature {feature!r}")
    return out


def _dump_features(feature, clean, adv):
    items = list(clean) + list(adv)
    header = {"type": "features", "feature": feature, "n_clean": len(clean), "n_adv": len(adv)}
    if feature == "pd":
        arrays = [np.array([len(d) for d in items], dtype=np.float64)]
        arrays.append(np.concatenate([d.points.ravel() for d in items]) if items else np.zeros(0))
    else:
        arrays = [np.array(items, dtype=np.float64)]
        header["width"] = arrays[0].shape[1] if items else 0
    return dump_container(header, arrays)


def _load_features(data):
    header, arrays = load_container(data)
    if header.get("type") != "features":
        raise ParseError("cache entry does not hold features")
    if header["feature"] == "pd":
        counts = arrays[0].astype(int)
        ends = np.cumsum(2 * counts)
        chunks = np.split(arrays[1], ends[:-1]) if len(counts) else []
        items = [PersistenceDiagram(c.reshape(-1, 2)) for c in chunks]
    else:
        items = list(arrays[0].reshape(-1, header["width"]))
    n = header["n_clean"]
    return items[:n], items[n:]


def make_mask(config: ExperimentConfig, net):
    return select_under_optimized(net, config.q, config.layers, config.criterion, config.edge_direction)


def get_features(config: ExperimentConfig, cache: Cache):
    """``(clean_features, adv_features, adv_dataset)``."""
    key = stage_key(config, "features")
    net = get_network(config, cache)
    adv = get_adv(config, cache, net)
    hit = cache.get("features", key)
    if hit is not None:
        clean, bad = _load_features(hit)
        return clean, bad, adv
    mask = make_mask(config, net)
    t0 = time.perf_counter()
    clean = extract_features(net, adv.clean.x, mask, config.feature)
    bad = extract_features(net, adv.x_adv, mask, config.feature)
    log.info("extracted %d features in %.2fs", len(clean) + len(bad), time.perf_counter() - t0)
    cache.put("features", key, _dump_features(config.feature, clean, bad))
    return clean, bad, adv


# --------------------------------------------------------------------------
# Stage 3: detection
# --------------------------------------------------------------------------


def detection_split(n_clean, n_adv, seed):
    """Halve clean and adversarial items into detector-train and evaluation parts."""
    rng = np.random.default_rng([seed, 1])
    pc, pa = rng.permutation(n_clean), rng.permutation(n_adv)
    return pc[: n_clean // 2], pc[n_clean // 2 :], pa[: n_adv // 2], pa[n_adv // 2 :]


def _distances(config, train_items, eval_items):
    """Train/train and eval/train distance matrices plus the cap used."""
    if config.feature == "pd":
        cap = range_cap(train_items)
        D_train = sw_distances(train_items, None, config.directions, config.cap_strategy, cap)
        D_eval = sw_distances(eval_items, train_items, config.directions, config.cap_strategy, cap)
        return D_train, D_eval, cap
    A = np.array(train_items)
    B = np.array(eval_items)
    return squared_distances(A), squared_distances(B, A), None


def detect(config: ExperimentConfig, clean, bad, adv: AdvDataset) -> DetectionReport:
    ids_overlap = np.intersect1d(adv.clean.ids, adv.source_ids)
    if ids_overlap.size:
        raise ConsistencyError("detector clean data overlaps the attack sources")
    c_tr, c_ev, a_tr, a_ev = detection_split(len(clean), len(bad), config.seed)
    train_items = [clean[i] for i in c_tr]
    train_labels = [1] * len(c_tr)
    if config.mode == "supervised":
        train_items += [bad[i] for i in a_tr]
        train_labels += [0] * len(a_tr)
    eval_items = [clean[i] for i in c_ev] + [bad[i] for i in a_ev]
    labels = [1] * len(c_ev) + [0] * len(a_ev)

    D_train, D_eval, cap = _distances(config, train_items, eval_items)
    n_ct = len(c_tr)
    sigma = config.sigma or median_sigma(D_train[:n_ct, :n_ct])
    K_train = kernel_from_distances(D_train, sigma)
    K_eval = kernel_from_distances(D_eval, sigma)
    np.fill_diagonal(K_train, 1.0)
    if config.mode == "unsupervised":
        model = fit_one_class(K_train, config.nu)
    else:
        model = fit_binary(K_train, train_labels, config.C)
    scores = model.decision_function(K_eval)
    value = auc(scores, labels)
    lo, hi = bootstrap_ci(scores, labels, config.bootstrap, config.seed)
    log.info("AUC %.4f [%.4f, %.4f] sigma=%.4g", value, lo, hi, sigma)
    details = {
        "sigma": sigma,
        "cap": cap,
        "attack_success_rate": adv.success_rate,
        "n_train": len(train_items),
        "n_clean_eval": len(c_ev),
        "n_adv_eval": len(a_ev),
        "solver_iterations": model.iterations,
    }
    return DetectionReport(value, lo, hi, [float(s) for s in scores], labels, config.to_dict(), details)


def run_detection(config: ExperimentConfig, cache: Optional[Cache] = None) -> DetectionReport:
    cache = cache or Cache()
    clean, bad, adv = get_features(config, cache)
    return detect(config, clean, bad, adv)


def run_edge_comparison(config: ExperimentConfig, cache: Optional[Cache] = None):
    """Detection with under-optimized edges and with well-optimized edges."""
    cache = cache or Cache()
    under = run_detection(replace(config, edge_direction="under"), cache)
    well = run_detection(replace(config, edge_direction="well"), cache)
    return under, well


def point_counts(config: ExperimentConfig, cache: Optional[Cache] = None):
    """Diagram sizes ``(clean_counts, adv_counts)``, each an ``(n, 2)`` array of
    (total points, infinite points)."""
    cache = cache or Cache()
    clean, bad, _ = get_features(replace(config, feature="pd"), cache)
    as_counts = lambda ds: np.array([pd_stats(d) for d in ds], dtype=int).reshape(-1, 2)
    return as_counts(clean), as_counts(bad)


# --------------------------------------------------------------------------
# Pruning sweep
# --------------------------------------------------------------------------


def run_pruning_sweep(config: ExperimentConfig, prune_fractions, cache: Optional[Cache] = None):
    """Clean and PGD accuracy after zeroing the most under-optimized weights.

    Attacks are regenerated against each pruned network. Returns a list of
    ``{"fraction", "clean_accuracy", "adversarial_accuracy"}`` rows.
    """
    cache = cache or Cache()
    net = get_network(config, cache)
    _, _, test = load_data(config)
    test = match_input_shape(net, test)
    if config.max_sources is not None:
        test = test.subset(slice(0, config.max_sources))
    rows = []
    for p in prune_fractions:
        if p >= 1:
            warnings.warn("pruning every weight leaves a degenerate network", RuntimeWarning)
        pruned = prune_under_optimized(net, p, config.criterion)
        rows.append({
            "fraction": float(p),
            "clean_accuracy": accuracy(pruned, test.x, test.y),
            "adversarial_accuracy": adversarial_accuracy(pruned, test, config.pgd()),
        })
    return rows


def write_rows_csv(rows, path):
    import csv

    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
