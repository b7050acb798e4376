"""Graph autoencoder: encoder blocks, two pooling levels, mirrored decoder, heads.

Layout for a config with blocks ``stem | fine | mid | reduced``::

    stem, fine            on the fine graph
    pool 1 (down)
    mid                   on the level-1 graph
    pool 2 (down)
    reduced               on the level-2 graph
    unpool 2 (up)
    mirror(mid)           on the level-1 graph
    unpool 1 (up)
    mirror(fine)          on the fine graph
    4 single-channel heads, concatenated as (Cp, Cfx, Cfy, Cfz)

A mirrored block retraces the widths its encoder counterpart passed
through: an encoder block ``w0 -> w1 -> ... -> wL`` (``w0`` being its input
width) is mirrored by a decoder block whose outputs are
``w(L-1), ..., w0``.  The decoder is derived from the encoder and never
stored on its own.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _backend, gcn
from .coarsening import PoolingLevel
from .mesh import PropagationOperator, normalize_adjacency

__all__ = [
    "ModelConfig",
    "Model",
    "build_model",
    "parameter_counts",
    "reference_report",
    "REFERENCE_ARCHITECTURES",
    "N_INPUTS",
    "N_HEADS",
]

N_INPUTS = 5
N_HEADS = 4
WIDTH_MIN, WIDTH_MAX, WIDTH_STEP = 32, 512, 16


@dataclass(frozen=True)
class ModelConfig:
    """Encoder widths per block and the two compression ratios.

    Set ``strict=False`` to allow widths outside the search grid (handy for
    tiny test models).
    """

    stem: tuple = (64,)
    fine: tuple = (64,)
    mid: tuple = (64,)
    reduced: tuple = (64,)
    ratios: tuple = (1 / 3, 1 / 3)
    strict: bool = True

    def __post_init__(self):
        for name in ("stem", "fine", "mid", "reduced", "ratios"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        problems = self.problems()
        if problems:
            raise ValueError("invalid model config: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("stem", "fine", "mid", "reduced"):
            block = getattr(self, name)
            if not 1 <= len(block) <= 3:
                out.append(f"block {name!r} has {len(block)} layers (allowed 1 to 3)")
            for w in block:
                if int(w) != w or w < 1:
                    out.append(f"block {name!r}: width {w} is not a positive integer")
                elif self.strict and (
                    w < WIDTH_MIN or w > WIDTH_MAX or (w - WIDTH_MIN) % WIDTH_STEP
                ):
                    out.append(
                        f"block {name!r}: width {w} not in {WIDTH_MIN}..{WIDTH_MAX} step {WIDTH_STEP}"
                    )
        if len(self.ratios) != 2:
            out.append(f"need two compression ratios, got {len(self.ratios)}")
        else:
            for r in self.ratios:
                if not 0.0 < r < 1.0:
                    out.append(f"compression ratio {r} outside (0, 1)")
        return out

    def decoder(self):
        """Mirrored ``(mid, fine)`` decoder widths."""
        mid_in = (self.fine[-1],) + self.mid[:-1]
        fine_in = (self.stem[-1],) + self.fine[:-1]
        return tuple(reversed(mid_in)), tuple(reversed(fine_in))

    def layer_shapes(self):
        """``(name, level, c_in, c_out)`` for every GCN layer in order."""
        shapes = []
        c = N_INPUTS

        def add(block, widths, level):
            nonlocal c
            for i, w in enumerate(widths):
                shapes.append((f"{block}{i}", level, c, int(w)))
                c = int(w)

        dec_mid, dec_fine = self.decoder()
        add("stem", self.stem, 0)
        add("fine", self.fine, 0)
        add("mid", self.mid, 1)
        add("reduced", self.reduced, 2)
        add("dmid", dec_mid, 1)
        add("dfine", dec_fine, 0)
        for h in range(N_HEADS):
            shapes.append((f"head{h}", 0, c, 1))
        return shapes

    @property
    def n_layers(self) -> int:
        return len(self.layer_shapes())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        for k in ("stem", "fine", "mid", "reduced"):
            d[k] = [int(w) for w in d[k]]
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        return cls(**d)


def parameter_counts(shapes) -> dict:
    """Totals for ``(c_in, c_out)`` layer shapes under several conventions.

    ``weights``: weight matrices only.  ``per_channel_prelu``: plus one
    slope per output channel (what :class:`Model` trains).
    ``bias_shared_prelu``: weights, a bias per output channel and one
    shared slope per layer.  ``bias_per_channel_prelu``: weights, bias and
    per-channel slopes.
    """
    shapes = [(int(a), int(b)) for a, b in shapes]
    w = sum(a * b for a, b in shapes)
    ch = sum(b for _, b in shapes)
    n = len(shapes)
    return {
        "weights": w,
        "per_channel_prelu": w + ch,
        "bias_shared_prelu": w + ch + n,
        "bias_per_channel_prelu": w + 2 * ch,
    }


def _printed_shapes(widths):
    c, out = N_INPUTS, []
    for w in widths:
        out.append((c, w))
        c = w
    out += [(c, 1)] * N_HEADS
    return out


# Published optimal architectures: the layer widths as listed, plus the
# closest encoder-only config under this package's mirror rule.
REFERENCE_ARCHITECTURES = {
    "wing": {
        "listed_widths": (64, 112, 192, 256, 256, 288, 496, 288, 256, 256, 256, 192, 160),
        "reported_layers": 17,
        "reported_parameters": 711_493,
        "config": dict(stem=(64,), fine=(112, 192, 256), mid=(256, 288), reduced=(496, 288)),
    },
    "wing_body": {
        "listed_widths": (224, 192, 192, 240, 304, 432, 304, 240, 192, 192, 64),
        "reported_layers": 15,
        "reported_parameters": 633_731,
        "config": dict(stem=(224,), fine=(192, 192), mid=(240, 304), reduced=(432, 304)),
    },
}


def reference_report(key) -> dict:
    """Layer and parameter counts of a reference architecture, every convention."""
    ref = REFERENCE_ARCHITECTURES[key]
    cfg = ModelConfig(**ref["config"])
    listed = _printed_shapes(ref["listed_widths"])
    mirrored = [(a, b) for _, _, a, b in cfg.layer_shapes()]
    return {
        "reported_layers": ref["reported_layers"],
        "reported_parameters": ref["reported_parameters"],
        "listed_layers": len(listed),
        "listed_counts": parameter_counts(listed),
        "mirrored_layers": len(mirrored),
        "mirrored_counts": parameter_counts(mirrored),
    }


@dataclass
class _Transfer:
    """CSR arrays of a transfer matrix and of its transpose."""

    n_out: int
    n_in: int
    fwd: tuple
    bwd: tuple

    @classmethod
    def from_matrix(cls, m):
        t = m.transpose_csr()
        return cls(
            m.n_dest, m.n_source,
            (m.indptr, m.indices, m.data),
            (t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data.astype(np.float64)),
        )

    def _run(self, arrays, x, n_rows_in):
        if x.shape[0] != n_rows_in:
            raise ValueError(f"transfer expects {n_rows_in} rows, got {x.shape[0]}")
        return _backend.kernels().spmm(*arrays, np.ascontiguousarray(x), _backend.threads())

    def apply(self, x):
        return self._run(self.fwd, x, self.n_in)

    def apply_t(self, x):
        return self._run(self.bwd, x, self.n_out)


class Model:
    """Layers, per-level propagation operators and pooling transfers.

    ``plan`` is the ordered list of steps ``("gcn", layer_index)``,
    ``("down", level)`` or ``("up", level)``; heads are run separately and
    concatenated.
    """

    def __init__(self, config: ModelConfig, layers, levels, ops):
        self.config = config
        self.layers = list(layers)
        self.levels = tuple(levels)
        self.ops = tuple(ops)
        self.down = [_Transfer.from_matrix(lv.down) for lv in self.levels]
        self.up = [_Transfer.from_matrix(lv.up) for lv in self.levels]
        shapes = config.layer_shapes()
        self.layer_levels = [lvl for _, lvl, _, _ in shapes]
        n_body = len(shapes) - N_HEADS
        self.head_index = list(range(n_body, len(shapes)))
        names = [s[0] for s in shapes]
        plan = []
        for i in range(n_body):
            prev = self.layer_levels[i - 1] if i else 0
            lvl = self.layer_levels[i]
            if lvl > prev:
                plan.append(("down", prev))
            elif lvl < prev:
                plan.append(("up", lvl))
            plan.append(("gcn", i))
        self.plan = plan
        self._names = names

    @property
    def n_nodes(self) -> int:
        return self.ops[0].n_nodes

    def parameters(self) -> dict:
        """Name -> array views of every trainable tensor (mutable in place)."""
        out = {}
        for layer in self.layers:
            out[f"{layer.name}.W"] = layer.W
            out[f"{layer.name}.beta"] = layer.beta
        return out

    def n_parameters(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def forward(self, X, tape: gcn.Tape | None = None) -> np.ndarray:
        """Normalized (n, 5) features -> normalized (n, 4) outputs."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape != (self.n_nodes, N_INPUTS):
            raise ValueError(f"inputs must have shape ({self.n_nodes}, {N_INPUTS}), got {X.shape}")
        H = X
        for kind, arg in self.plan:
            if kind == "gcn":
                H = gcn.gcn_forward(self.ops[self.layer_levels[arg]], H, self.layers[arg], tape)
            elif kind == "down":
                H = self.down[arg].apply(H)
            else:
                H = self.up[arg].apply(H)
        heads = [gcn.gcn_forward(self.ops[0], H, self.layers[i], tape) for i in self.head_index]
        return np.concatenate(heads, axis=1)

    def backward(self, tape: gcn.Tape, G) -> dict:
        """Parameter gradients for upstream ``G`` (n, 4); empties ``tape``."""
        G = np.asarray(G, dtype=np.float64)
        grads = {}
        dH = None
        for h in reversed(range(N_HEADS)):
            layer = self.layers[self.head_index[h]]
            dW, db, dx = gcn.gcn_backward(tape, G[:, h : h + 1])
            grads[f"{layer.name}.W"] = dW
            grads[f"{layer.name}.beta"] = db
            dH = dx if dH is None else dH + dx
        for kind, arg in reversed(self.plan):
            if kind == "gcn":
                layer = self.layers[arg]
                dW, db, dH = gcn.gcn_backward(tape, dH)
                grads[f"{layer.name}.W"] = dW
                grads[f"{layer.name}.beta"] = db
            elif kind == "down":
                dH = self.down[arg].apply_t(dH)
            else:
                dH = self.up[arg].apply_t(dH)
        if tape.records:
            raise RuntimeError("tape still holds records after a full backward pass")
        return grads

    def get_state(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_state(self, state: dict) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters {sorted(missing)}")
        for k, v in params.items():
            src = np.asarray(state[k], dtype=np.float64)
            if src.shape != v.shape:
                raise ValueError(f"parameter {k!r}: shape {src.shape} != {v.shape}")
            v[...] = src


def check_levels(config: ModelConfig, fine_n, levels) -> list[str]:
    """Every inconsistency between ``config`` ratios and the levels."""
    out = []
    if len(levels) != 2:
        return [f"need two pooling levels, got {len(levels)}"]
    n = fine_n
    for i, (lv, r) in enumerate(zip(levels, config.ratios)):
        if lv.fine_n != n:
            out.append(f"level {i + 1} starts from {lv.fine_n} nodes, expected {n}")
        if abs(lv.ratio - r) > 1e-9:
            out.append(f"level {i + 1} ratio {lv.ratio:.6g} differs from config {r:.6g}")
        if lv.coarse_n != int(round(r * lv.fine_n)):
            out.append(f"level {i + 1} has {lv.coarse_n} nodes, ratio implies {int(round(r * lv.fine_n))}")
        n = lv.coarse_n
    return out


def build_model(config: ModelConfig, fine_graph, levels, seed=0, ops=None) -> Model:
    """Wire a :class:`Model` to the fine graph and two prebuilt levels."""
    levels = tuple(levels)
    problems = check_levels(config, fine_graph.n_nodes, levels)
    if problems:
        raise ValueError("levels do not match config: " + "; ".join(problems))
    if ops is None:
        ops = [normalize_adjacency(fine_graph)] + [
            normalize_adjacency(lv.coarse_graph) for lv in levels
        ]
    rng = np.random.default_rng(seed)
    layers = [gcn.init_layer(a, b, rng, name) for name, _, a, b in config.layer_shapes()]
    return Model(config, layers, levels, ops)


def propagation_ops(fine_graph, levels) -> list[PropagationOperator]:
    return [normalize_adjacency(fine_graph)] + [normalize_adjacency(lv.coarse_graph) for lv in levels]
