"""Three-stage progressive emotion graphs with a graph attention encoder.

The pipeline builds and encodes three graphs in sequence:

1. the basic graph: the target's own scene/face/text features wired as a
   triangle;
2. the indirect extension: each retrieved same-channel hit attaches to its
   basic node, with the basic nodes initialized from the encoded stage-1
   features;
3. the direct extension: each hit's matched audio vector attaches to the
   basic node whose query produced it, on top of the encoded stage-2
   features.

Each stage is encoded by a graph attention encoder (GAE): per node,
attention over its neighborhood plus a self-loop, scores
``leaky_relu(attn . [W h_i | W h_j])``, softmax-normalized, then a weighted
sum of the projected neighbor features. Edge kinds label topology only;
all edges share the same learned transform.

Node order is fixed so the encoded feature matrices are reproducible:
basic (scene, face, text), then indirect hits per channel in rank order,
then direct audio in the same channel/rank order.

One progressive encode is inherently sequential (each stage consumes the
previous one); distinct inputs encode concurrently against shared
read-only parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .autodiff import (
    LinearParams,
    Parameter,
    Tensor,
    add,
    apply_linear,
    as_tensor,
    concat_cols,
    concat_rows,
    leaky_relu,
    masked_softmax_rows,
    matmul,
    slice_cols,
    transpose,
    uniform_init,
)
from .errors import ArgumentError, ConfigError, SchemaError, StateError
from .retrieval import CHANNELS, RetrievalResult
from .rng import SplitMix64


class GraphStage(Enum):
    BASIC = "basic"
    INDIRECT = "indirect"
    DIRECT = "direct"


class NodeKind(Enum):
    BASIC_SCENE = "basic_scene"
    BASIC_FACE = "basic_face"
    BASIC_TEXT = "basic_text"
    INDIRECT_SCENE = "indirect_scene"
    INDIRECT_FACE = "indirect_face"
    INDIRECT_TEXT = "indirect_text"
    DIRECT_AUDIO_SCENE = "direct_audio_scene"
    DIRECT_AUDIO_FACE = "direct_audio_face"
    DIRECT_AUDIO_TEXT = "direct_audio_text"


class EdgeKind(Enum):
    BASIC = "basic"
    INDIRECT = "indirect"
    DIRECT = "direct"


_BASIC_KINDS = {"scene": NodeKind.BASIC_SCENE, "face": NodeKind.BASIC_FACE, "text": NodeKind.BASIC_TEXT}
_INDIRECT_KINDS = {
    "scene": NodeKind.INDIRECT_SCENE,
    "face": NodeKind.INDIRECT_FACE,
    "text": NodeKind.INDIRECT_TEXT,
}
_DIRECT_KINDS = {
    "scene": NodeKind.DIRECT_AUDIO_SCENE,
    "face": NodeKind.DIRECT_AUDIO_FACE,
    "text": NodeKind.DIRECT_AUDIO_TEXT,
}

#: index of each channel's basic node, by construction order
BASIC_NODE_INDEX = {"scene": 0, "face": 1, "text": 2}


@dataclass
class GraphNode:
    kind: NodeKind
    source_record_id: int | None = None


@dataclass
class EmotionGraph:
    """Typed-node, typed-edge undirected graph with node features.

    ``features`` is an (n_nodes x d) tensor; row i belongs to ``nodes[i]``.
    ``encoded`` flips to True after a GAE pass; the extension constructors
    require their input stage to be encoded.
    """

    stage: GraphStage
    nodes: list[GraphNode]
    edges: list[tuple[int, int, EdgeKind]]
    features: Tensor
    encoded: bool = False

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degree(self, index: int) -> int:
        return sum(1 for a, b, _ in self.edges if index in (a, b))

    def adjacency_mask(self) -> np.ndarray:
        """Symmetric 0/1 mask with self-loops, used by GAE attention."""
        n = self.node_count
        mask = np.eye(n)
        for a, b, _ in self.edges:
            mask[a, b] = 1.0
            mask[b, a] = 1.0
        return mask

    def is_connected(self) -> bool:
        n = self.node_count
        if n == 0:
            return False
        seen = {0}
        frontier = [0]
        neighbors: dict[int, list[int]] = {i: [] for i in range(n)}
        for a, b, _ in self.edges:
            neighbors[a].append(b)
            neighbors[b].append(a)
        while frontier:
            cur = frontier.pop()
            for nxt in neighbors[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return len(seen) == n


def check_edge_kinds(graph: EmotionGraph) -> None:
    """Raise if any edge violates the wiring rules for its kind."""
    basic_of_channel = {v: k for k, v in _BASIC_KINDS.items()}
    indirect_of_channel = {v: k for k, v in _INDIRECT_KINDS.items()}
    direct_of_channel = {v: k for k, v in _DIRECT_KINDS.items()}
    for a, b, kind in graph.edges:
        ka, kb = graph.nodes[a].kind, graph.nodes[b].kind
        if kind is EdgeKind.BASIC:
            if ka not in basic_of_channel or kb not in basic_of_channel:
                raise SchemaError(f"basic edge connects non-basic nodes {ka} - {kb}")
        elif kind is EdgeKind.INDIRECT:
            pair = {ka, kb}
            indirect = pair & set(indirect_of_channel)
            basic = pair & set(basic_of_channel)
            if len(indirect) != 1 or len(basic) != 1:
                raise SchemaError(f"indirect edge must join indirect and basic nodes, got {ka} - {kb}")
            if indirect_of_channel[indirect.pop()] != basic_of_channel[basic.pop()]:
                raise SchemaError(f"indirect edge crosses channels: {ka} - {kb}")
        else:
            pair = {ka, kb}
            direct = pair & set(direct_of_channel)
            basic = pair & set(basic_of_channel)
            if len(direct) != 1 or len(basic) != 1:
                raise SchemaError(f"direct edge must join direct-audio and basic nodes, got {ka} - {kb}")
            if direct_of_channel[direct.pop()] != basic_of_channel[basic.pop()]:
                raise SchemaError(f"direct edge crosses channels: {ka} - {kb}")


@dataclass
class ProjectionParams:
    """Per-channel linear maps from raw emotion vectors to node features.

    The text projection takes the concatenated self+react vector; the audio
    projection feeds the direct-audio nodes.
    """

    scene: LinearParams
    face: LinearParams
    text: LinearParams
    audio: LinearParams

    @classmethod
    def init(
        cls,
        scene_dim: int,
        face_dim: int,
        text_dim: int,
        audio_dim: int,
        out_dim: int,
        rng: SplitMix64,
    ) -> "ProjectionParams":
        return cls(
            scene=LinearParams.init("proj.scene", scene_dim, out_dim, rng),
            face=LinearParams.init("proj.face", face_dim, out_dim, rng),
            text=LinearParams.init("proj.text", text_dim, out_dim, rng),
            audio=LinearParams.init("proj.audio", audio_dim, out_dim, rng),
        )

    @property
    def out_dim(self) -> int:
        return self.scene.d_out

    def parameters(self) -> list[Parameter]:
        return (
            self.scene.parameters()
            + self.face.parameters()
            + self.text.parameters()
            + self.audio.parameters()
        )


def project_input(raw, proj: LinearParams) -> Tensor:
    """Project one raw vector to a 1 x d node feature row."""
    row = as_tensor(raw)
    if row.rows != 1:
        raise SchemaError(f"raw input must be a single row, got shape {row.shape}")
    if row.cols != proj.d_in:
        raise SchemaError(f"raw input dim {row.cols} does not match projection dim {proj.d_in}")
    return apply_linear(row, proj)


@dataclass
class GAEHeadParams:
    weight: Parameter  # d x d_head
    attn: Parameter  # 1 x 2*d_head


@dataclass
class GAEParams:
    """Graph attention encoder parameters.

    ``layers[i]`` holds the attention heads of layer i; head outputs are
    concatenated back to width d, so d must be divisible by the head count.
    The same parameter set is reused across all three stages.
    """

    layers: list[list[GAEHeadParams]]
    slope: float = 0.2
    activation: str = "identity"  # or "leaky_relu"

    @classmethod
    def init(
        cls,
        dim: int,
        rng: SplitMix64,
        num_layers: int = 1,
        heads: int = 1,
        slope: float = 0.2,
        activation: str = "identity",
    ) -> "GAEParams":
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"head count {heads} must divide dim {dim}")
        if num_layers < 1:
            raise ConfigError(f"need at least one layer, got {num_layers}")
        if activation not in ("identity", "leaky_relu"):
            raise ConfigError(f"unknown activation {activation!r}")
        d_head = dim // heads
        layers = []
        for li in range(num_layers):
            layer = []
            for hi in range(heads):
                prefix = f"gae.layer{li}.head{hi}"
                layer.append(
                    GAEHeadParams(
                        weight=Parameter(uniform_init(rng, dim, d_head, dim), f"{prefix}.weight"),
                        attn=Parameter(uniform_init(rng, 1, 2 * d_head, dim), f"{prefix}.attn"),
                    )
                )
            layers.append(layer)
        return cls(layers=layers, slope=slope, activation=activation)

    @property
    def dim(self) -> int:
        return self.layers[0][0].weight.rows

    def parameters(self) -> list[Parameter]:
        out = []
        for layer in self.layers:
            for head in layer:
                out.extend([head.weight, head.attn])
        return out


def gae_encode(
    graph: EmotionGraph,
    params: GAEParams,
    with_attention: bool = False,
):
    """Encode node features with masked graph attention; topology unchanged.

    Per node i the attention neighborhood is N(i) plus a self-loop; scores
    are ``leaky_relu(attn . [W h_i | W h_j])``, normalized by softmax over
    the neighborhood, and the new feature is the attention-weighted sum of
    projected neighbor features. Returns the encoded graph, plus the list
    of attention matrices (one per layer and head) when requested.
    """
    if graph.node_count == 0:
        raise ArgumentError("cannot encode an empty graph")
    if graph.features.cols != params.dim:
        raise SchemaError(
            f"feature dim {graph.features.cols} does not match encoder dim {params.dim}"
        )
    mask = graph.adjacency_mask()
    h = graph.features
    attention_maps: list[np.ndarray] = []
    for layer in params.layers:
        head_outs = []
        for head in layer:
            wh = matmul(h, head.weight)
            d_head = head.weight.cols
            a_src = slice_cols(head.attn, 0, d_head)
            a_dst = slice_cols(head.attn, d_head, 2 * d_head)
            s_src = matmul(wh, transpose(a_src))  # n x 1
            s_dst = matmul(wh, transpose(a_dst))  # n x 1
            scores = leaky_relu(add(s_src, transpose(s_dst)), params.slope)
            alpha = masked_softmax_rows(scores, mask)
            attention_maps.append(alpha.data)
            head_outs.append(matmul(alpha, wh))
        merged = head_outs[0]
        for part in head_outs[1:]:
            merged = concat_cols(merged, part)
        if params.activation == "leaky_relu":
            merged = leaky_relu(merged, params.slope)
        h = merged
    out = EmotionGraph(
        stage=graph.stage,
        nodes=list(graph.nodes),
        edges=list(graph.edges),
        features=h,
        encoded=True,
    )
    return (out, attention_maps) if with_attention else out


def build_basic_graph(scene_raw, face_raw, text_concat_raw, proj: ProjectionParams) -> EmotionGraph:
    """Triangle over the target's own scene, face and text features."""
    rows = [
        project_input(scene_raw, proj.scene),
        project_input(face_raw, proj.face),
        project_input(text_concat_raw, proj.text),
    ]
    nodes = [GraphNode(_BASIC_KINDS[c]) for c in CHANNELS]
    edges = [
        (0, 1, EdgeKind.BASIC),
        (0, 2, EdgeKind.BASIC),
        (1, 2, EdgeKind.BASIC),
    ]
    return EmotionGraph(
        stage=GraphStage.BASIC,
        nodes=nodes,
        edges=edges,
        features=concat_rows(rows),
    )


def extend_indirect(
    encoded_basic: EmotionGraph,
    retrieved: RetrievalResult,
    proj: ProjectionParams,
) -> EmotionGraph:
    """Attach retrieved indirect hits to their same-channel basic nodes.

    Basic-node features are the encoded stage-1 rows, carried over as-is.
    """
    if encoded_basic.stage is not GraphStage.BASIC or not encoded_basic.encoded:
        raise StateError("extend_indirect needs an encoded basic-stage graph")
    nodes = list(encoded_basic.nodes)
    edges = list(encoded_basic.edges)
    new_rows: list[Tensor] = []
    for channel in CHANNELS:
        proj_params: LinearParams = getattr(proj, channel)
        ranking = retrieved.rankings[channel]
        vectors = retrieved.indirect_vectors[channel]
        for (record_id, _score), vec in zip(ranking, vectors):
            index = len(nodes)
            nodes.append(GraphNode(_INDIRECT_KINDS[channel], record_id))
            edges.append((BASIC_NODE_INDEX[channel], index, EdgeKind.INDIRECT))
            new_rows.append(project_input(vec, proj_params))
    features = (
        concat_rows([encoded_basic.features] + new_rows) if new_rows else encoded_basic.features
    )
    return EmotionGraph(GraphStage.INDIRECT, nodes, edges, features)


def extend_direct(
    encoded_indirect: EmotionGraph,
    retrieved: RetrievalResult,
    proj: ProjectionParams,
) -> EmotionGraph:
    """Attach each hit's matched audio vector to the basic node that issued
    the query; all encoded stage-2 features are carried over."""
    if encoded_indirect.stage is not GraphStage.INDIRECT or not encoded_indirect.encoded:
        raise StateError("extend_direct needs an encoded indirect-stage graph")
    nodes = list(encoded_indirect.nodes)
    edges = list(encoded_indirect.edges)
    new_rows: list[Tensor] = []
    for channel in CHANNELS:
        ranking = retrieved.rankings[channel]
        audio_vectors = retrieved.matched_audio[channel]
        for (record_id, _score), vec in zip(ranking, audio_vectors):
            index = len(nodes)
            nodes.append(GraphNode(_DIRECT_KINDS[channel], record_id))
            edges.append((BASIC_NODE_INDEX[channel], index, EdgeKind.DIRECT))
            new_rows.append(project_input(vec, proj.audio))
    features = (
        concat_rows([encoded_indirect.features] + new_rows)
        if new_rows
        else encoded_indirect.features
    )
    return EmotionGraph(GraphStage.DIRECT, nodes, edges, features)


@dataclass
class ProgressiveEncoding:
    """Encoded feature matrices of the three stages, plus their graphs."""

    h_basic: Tensor  # 3 x d
    h_indirect: Tensor  # (3 + sum of indirect hits) x d
    h_direct: Tensor  # (3 + 2 * sum of hits) x d
    graphs: tuple[EmotionGraph, EmotionGraph, EmotionGraph] = field(repr=False, default=())


def progressive_encode(
    scene_raw,
    face_raw,
    text_concat_raw,
    retrieved: RetrievalResult,
    proj: ProjectionParams,
    gae: GAEParams,
) -> ProgressiveEncoding:
    """Run the full construct-and-encode sequence over the three stages.

    Differentiable end to end: gradients flow from any encoded feature back
    to the projections, the encoder parameters, and the raw inputs.
    """
    basic = build_basic_graph(scene_raw, face_raw, text_concat_raw, proj)
    basic_enc = gae_encode(basic, gae)
    indirect = extend_indirect(basic_enc, retrieved, proj)
    indirect_enc = gae_encode(indirect, gae)
    direct = extend_direct(indirect_enc, retrieved, proj)
    direct_enc = gae_encode(direct, gae)
    return ProgressiveEncoding(
        h_basic=basic_enc.features,
        h_indirect=indirect_enc.features,
        h_direct=direct_enc.features,
        graphs=(basic_enc, indirect_enc, direct_enc),
    )
