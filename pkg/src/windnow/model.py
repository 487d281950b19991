"""GCN encoder with learnable feature embeddings and a regression head.

Forward pass per window: every input time step runs through one shared
GCN layer (sparse diffusion aggregation, then a linear map and relu);
the per-step outputs are mean-pooled over time into one embedding per
node, which feeds both the contrastive branch and two further GCN
layers plus a per-node linear head predicting the six-lead encoded
targets. Batches and time steps are stacked into consecutive N-row
blocks so the whole pass is a handful of matrix ops.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ContractError, ShapeError
from .features import CONST_WIDTH, LAG_COLS, N_MET, FeatureLayout, NormStats

CHECKPOINT_VERSION = "windnow-checkpoint-v1"


def glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class GCNLayer:
    w: Parameter
    b: Parameter


class EmbeddingBatch:
    """Node embeddings for a stack of windows: rows are (window, node)."""

    def __init__(self, h, n_windows, n_nodes):
        if h.data.shape[0] != n_windows * n_nodes:
            raise ShapeError("embedding rows do not match windows * nodes")
        self.h = h
        self.n_windows = n_windows
        self.n_nodes = n_nodes

    @property
    def dim(self):
        return self.h.data.shape[1]


class Model:
    """Query-side parameters and the shared forward pass."""

    def __init__(self, node_set, layout=None, embed_dim=64, t_in=36, t_out=6, seed=0):
        self.node_set = node_set
        self.layout = layout or FeatureLayout()
        self.embed_dim = embed_dim
        self.t_in = t_in
        self.t_out = t_out
        self.seed = seed
        self.n_nodes = len(node_set)
        self.n_virtual = node_set.n_virtual

        rng = np.random.default_rng(seed)
        f_in = self.layout.total_width
        d = embed_dim
        td = self.layout.type_embed_dim
        self.params = {
            "type_table": Parameter(glorot(rng, 2, td), "type_table"),
            "lag_table": Parameter(np.zeros((max(self.n_virtual, 1), 3)), "lag_table"),
            "w_shared": Parameter(glorot(rng, f_in, d), "w_shared"),
            "b_shared": Parameter(np.zeros((1, d)), "b_shared"),
            "w_deep1": Parameter(glorot(rng, d, d), "w_deep1"),
            "b_deep1": Parameter(np.zeros((1, d)), "b_deep1"),
            "w_deep2": Parameter(glorot(rng, d, d), "w_deep2"),
            "b_deep2": Parameter(np.zeros((1, d)), "b_deep2"),
            "w_head": Parameter(glorot(rng, d, t_out * 4), "w_head"),
            "b_head": Parameter(np.zeros((1, t_out * 4)), "b_head"),
        }

    def real_rows(self, n_windows):
        offsets = np.arange(n_windows, dtype=np.int64)[:, None] * self.n_nodes
        return (offsets + self.node_set.real_indices[None, :]).ravel()

    def virtual_rows(self, n_windows):
        offsets = np.arange(n_windows, dtype=np.int64)[:, None] * self.n_nodes
        return (offsets + self.node_set.virtual_indices[None, :]).ravel()

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- forward ------------------------------------------------------------
    def forward(self, x_const, s_mix, n_windows, pset=None, mask=None):
        """x_const: [(B*t_in*N) x 37] stacked constants.

        Returns (EmbeddingBatch, predictions [(B*N) x (t_out*4)]).
        pset defaults to the trainable parameters; pass constant tensors
        (e.g. the momentum copy) to run the same math untracked.
        """
        pset = pset if pset is not None else self.params
        n, t = self.n_nodes, self.t_in
        rows = x_const.shape[0]
        if rows != n_windows * t * n:
            raise ShapeError(f"expected {n_windows * t * n} stacked rows, got {rows}")

        met = Tensor(x_const[:, :N_MET])
        lag_obs = Tensor(x_const[:, LAG_COLS])
        rest = Tensor(x_const[:, N_MET + 3: CONST_WIDTH])

        # per-node learnable blocks, tiled over every window and time step
        lag_full = ad.scatter_rows(pset["lag_table"],
                                   self.node_set.virtual_indices, n)
        lag = ad.add(lag_obs, ad.tile_rows(lag_full, n_windows * t))
        typ = ad.tile_rows(ad.gather_rows(pset["type_table"], self.node_set.kinds),
                           n_windows * t)
        x = ad.concat_cols(met, lag, rest, typ)
        if mask is not None:
            x = ad.mul(x, Tensor(mask))

        h1 = ad.relu(ad.add(ad.matmul(ad.row_mix(x, s_mix, n_windows * t),
                                      pset["w_shared"]), pset["b_shared"]))
        h = ad.mean_time(h1, t, n)  # [(B*N) x d]

        z = ad.relu(ad.add(ad.matmul(ad.row_mix(h, s_mix, n_windows),
                                     pset["w_deep1"]), pset["b_deep1"]))
        z = ad.relu(ad.add(ad.matmul(ad.row_mix(z, s_mix, n_windows),
                                     pset["w_deep2"]), pset["b_deep2"]))
        y = ad.add(ad.matmul(z, pset["w_head"]), pset["b_head"])
        return EmbeddingBatch(h, n_windows, self.n_nodes), y

    def predict_real(self, y, n_windows):
        """Slice head outputs down to real-node rows for the supervised loss."""
        return ad.gather_rows(y, self.real_rows(n_windows))


def gcn_forward(s_mix, h, layer, n_blocks=1):
    """relu(S H W + b) for one layer; the module-level building block."""
    return ad.relu(ad.add(ad.matmul(ad.row_mix(h, s_mix, n_blocks), layer.w), layer.b))


class MomentumEncoder:
    """EMA copy of every query-side parameter; never receives gradients."""

    def __init__(self, model, momentum=0.999):
        if not (0.0 <= momentum < 1.0) and momentum != 1.0:
            raise ContractError("momentum must lie in [0, 1]")
        self.momentum = momentum
        self.values = {k: p.data.copy() for k, p in model.params.items()}

    def update(self, model, momentum=None):
        m = self.momentum if momentum is None else momentum
        for k, p in model.params.items():
            if self.values[k].shape != p.data.shape:
                raise ContractError(f"momentum shape mismatch for {k}")
            self.values[k] = m * self.values[k] + (1.0 - m) * p.data

    def tensors(self):
        return {k: Tensor(v) for k, v in self.values.items()}


# ---------------------------------------------------------------------------
# checkpointing

def save_checkpoint(path, model, stats, diffusion_params, extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "embed_dim": model.embed_dim,
        "t_in": model.t_in,
        "t_out": model.t_out,
        "n_nodes": model.n_nodes,
        "n_virtual": model.n_virtual,
        "type_embed_dim": model.layout.type_embed_dim,
        "norm_channels": list(stats.channels),
        "diffusion": {
            "alpha_ppr": diffusion_params.alpha_ppr,
            "gamma": diffusion_params.gamma,
            "delta": diffusion_params.delta,
            "top_k": diffusion_params.top_k,
            "renormalize": diffusion_params.renormalize,
        },
    }
    if extra:
        meta["extra"] = extra
    arrays = {f"param_{k}": p.data for k, p in model.params.items()}
    arrays["norm_mean"] = stats.mean
    arrays["norm_std"] = stats.std
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param_"):]: z[k] for k in z.files if k.startswith("param_")}
        stats = NormStats(z["norm_mean"], z["norm_std"],
                          tuple(meta["norm_channels"]))
    return params, stats, meta


def restore_model(node_set, params, meta):
    """Rebuild a Model around checkpointed parameters."""
    if len(node_set) != meta["n_nodes"] or node_set.n_virtual != meta["n_virtual"]:
        raise ContractError(
            f"node set ({len(node_set)} nodes, {node_set.n_virtual} virtual) does not "
            f"match checkpoint ({meta['n_nodes']}, {meta['n_virtual']})"
        )
    model = Model(node_set, FeatureLayout(meta["type_embed_dim"]),
                  embed_dim=meta["embed_dim"], t_in=meta["t_in"],
                  t_out=meta["t_out"], seed=meta["seed"])
    for k, p in model.params.items():
        if k not in params or params[k].shape != p.data.shape:
            raise ContractError(f"checkpoint parameter mismatch for {k}")
        p.data = params[k].astype(np.float64)
    return model
