"""Induced graphs and under-optimized edge selection.

Vertices are all neurons of the network, numbered layer by layer: the
input neurons first, then the output neurons of every parametric layer
(Flatten layers only reshape and add no vertices). The edge from neuron
``u`` of one vertex layer to neuron ``v`` of the next carries weight
``|activation_u * W[v, u]|``. Convolutions enter through their sparse
matrix expansion.

Edges are always kept in canonical ``(layer, row, col)`` order, so the
weight array of a masked graph doubles as the raw-graph feature vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConsistencyError, MissingSnapshotError
from .nn import Conv2d, Dense, Network, conv_as_matrix, dense_as_matrix

CRITERIA = ("mi", "lf")


@dataclass
class InducedGraph:
    vertex_count: int
    layer_offsets: tuple
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    layer: np.ndarray  # graph-layer index of each edge
    param: np.ndarray  # flat index into that layer's weight tensor

    def __len__(self):
        return len(self.weight)

    def edges(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))


class GraphStructure:
    """Input-independent edge layout of a network.

    Building the sparse expansion of conv layers is the expensive part of
    graph induction, so it is done once per network and reused for every
    input.
    """

    def __init__(self, network: Network):
        self.network = network
        self.layer_indices = network.parametric_layers()
        self.matrices = []
        sizes = [int(np.prod(network.input_shape))]
        for i in self.layer_indices:
            layer = network.layers[i]
            if isinstance(layer, Conv2d):
                m = conv_as_matrix(layer, network.shapes[i])
            else:
                m = dense_as_matrix(layer)
            self.matrices.append(m)
            sizes.append(m.shape[0])
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)]))
        self.vertex_count = self.offsets[-1]

    @property
    def n_layers(self):
        return len(self.matrices)

    def param_counts(self):
        return [self.network.layers[i].weight.size for i in self.layer_indices]


def induce(network: Network, record, structure: Optional[GraphStructure] = None) -> InducedGraph:
    """Induced graph of one forward pass (``record`` from :func:`dissect.nn.forward`)."""
    if structure is None:
        structure = GraphStructure(network)
    elif structure.network is not network:
        raise ConsistencyError("graph structure was built for a different network")
    if len(record.outputs) != len(network.layers) + 1 or any(
        o.shape != s for o, s in zip(record.outputs, network.shapes)
    ):
        raise ConsistencyError("activation record does not match the network layout")
    src, dst, weight, layer, param = [], [], [], [], []
    for g, (i, m) in enumerate(zip(structure.layer_indices, structure.matrices)):
        act = record.outputs[i].ravel()
        src.append(m.cols + structure.offsets[g])
        dst.append(m.rows + structure.offsets[g + 1])
        weight.append(np.abs(act[m.cols] * m.values))
        layer.append(np.full(len(m.rows), g))
        param.append(m.params)
    return InducedGraph(
        structure.vertex_count,
        structure.offsets,
        np.concatenate(src),
        np.concatenate(dst),
        np.concatenate(weight),
        np.concatenate(layer),
        np.concatenate(param),
    )


@dataclass
class EdgeMask:
    """Per-layer set of retained parameters.

    ``kept[g]`` is a boolean array over the flattened weight tensor of graph
    layer ``g``; layers not in ``selected_layers`` have no entry.
    """

    criterion: str
    q: float
    selected_layers: tuple
    kept: dict
    direction: str = "under"

    def kept_indices(self, g):
        return np.flatnonzero(self.kept[g])


def keep_count(q, n):
    """Number of parameters kept out of ``n`` for fraction ``q`` (at least one)."""
    return max(1, min(n, math.floor(q * n + 1e-9)))


def criterion_values(network: Network, layer_index: int, criterion: str):
    w = np.abs(network.layers[layer_index].weight.ravel())
    if criterion == "lf":
        return w
    if criterion == "mi":
        if not network.has_snapshot:
            raise MissingSnapshotError(
                "the magnitude-increase criterion needs initial weights; use 'lf' instead"
            )
        return w - np.abs(network.init_weight(layer_index).ravel())
    raise ValueError(f"unknown criterion {criterion!r}, expected one of {CRITERIA}")


def rank_parameters(values, direction="under"):
    """Parameter order for selection: smallest value first, ties by index."""
    idx = np.arange(len(values))
    if direction == "under":
        return np.lexsort((idx, values))
    if direction == "well":
        return np.lexsort((idx, -values))
    raise ValueError(f"unknown direction {direction!r}")


def select_under_optimized(
    network: Network,
    q: float,
    selected_layers: Optional[Sequence[int]] = None,
    criterion: str = "mi",
    direction: str = "under",
) -> EdgeMask:
    """Keep, per selected layer, the ``q`` fraction of parameters with the
    smallest criterion value.

    ``criterion`` is ``"mi"`` (magnitude increase ``|W| - |W_init|``) or
    ``"lf"`` (large final, ``|W|``). ``direction="well"`` keeps the largest
    values instead, for comparison runs. Only weights are read, never
    activations.
    """
    if not 0 < q <= 1:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    layer_indices = network.parametric_layers()
    if selected_layers is None:
        selected_layers = range(len(layer_indices))
    selected = tuple(sorted(set(int(g) for g in selected_layers)))
    if any(g < 0 or g >= len(layer_indices) for g in selected):
        raise ValueError(f"selected layers {selected} outside [0, {len(layer_indices)})")
    kept = {}
    for g in selected:
        values = criterion_values(network, layer_indices[g], criterion)
        order = rank_parameters(values, direction)
        mask = np.zeros(len(values), dtype=bool)
        mask[order[: keep_count(q, len(values))]] = True
        kept[g] = mask
    return EdgeMask(criterion, q, selected, kept, direction)


def apply_mask(graph: InducedGraph, mask: EdgeMask) -> InducedGraph:
    """Thresholded graph: edges whose parameter is kept, selected layers only."""
    keep = np.zeros(len(graph.weight), dtype=bool)
    for g in mask.selected_layers:
        in_layer = graph.layer == g
        params = graph.param[in_layer]
        if params.size and params.max() >= len(mask.kept[g]):
            raise ConsistencyError(f"mask for layer {g} does not fit the graph")
        keep[in_layer] = mask.kept[g][params]
    return InducedGraph(
        graph.vertex_count,
        graph.layer_offsets,
        graph.src[keep],
        graph.dst[keep],
        graph.weight[keep],
        graph.layer[keep],
        graph.param[keep],
    )


def raw_graph_features(graph: InducedGraph, mask: EdgeMask) -> np.ndarray:
    """Weights of the kept edges in canonical order (zeros for inactive ones)."""
    return apply_mask(graph, mask).weight.copy()


def dump_graph(graph: InducedGraph, fh):
    """Write ``graph`` as text: two header lines, then one ``u v weight`` line per edge."""
    fh.write(f"# vertex_count {graph.vertex_count}\n")
    fh.write("# layer_offsets " + " ".join(str(o) for o in graph.layer_offsets) + "\n")
    for u, v, w in zip(graph.src.tolist(), graph.dst.tolist(), graph.weight.tolist()):
        fh.write(f"{u} {v} {w!r}\n")


def load_graph_edges(fh):
    """Parse a dump back into ``(vertex_count, layer_offsets, edges)``."""
    vertex_count, offsets, edges = None, None, []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("# vertex_count"):
            vertex_count = int(line.split()[-1])
        elif line.startswith("# layer_offsets"):
            offsets = tuple(int(t) for t in line.split()[2:])
        else:
            u, v, w = line.split()
            edges.append((int(u), int(v), float(w)))
    return vertex_count, offsets, edges


def prune_under_optimized(network: Network, fraction: float, criterion: str = "mi") -> Network:
    """Zero the ``fraction`` of weights with the smallest criterion value, per layer.

    Biases are left alone and the initialization snapshot is kept.
    """
    if not 0 <= fraction <= 1:
        raise ValueError(f"prune fraction must lie in [0, 1], got {fraction}")
    params = [np.array(p) for p in network.params()]
    pos = 0
    for i, layer in enumerate(network.layers):
        n_params = len(layer.params())
        if n_params:
            values = criterion_values(network, i, criterion)
            k = min(len(values), math.floor(fraction * len(values) + 1e-9))
            w = params[pos].reshape(-1)
            w[rank_parameters(values)[:k]] = 0.0
        pos += n_params
    return network.with_params(params)
