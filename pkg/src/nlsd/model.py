"""Sheaf diffusion networks: encoder, diffusion layers, classifier head.

Layer update, all variants:

    X_{t+1} = (1 + eps) X_t - [(1 + alpha)] sigma( Dagg^T Phi( Dagg (I (x) W1) X_t W2 ) )

where Dagg is the coboundary of the layer's learned sheaf, D^{-1/2}-normalized
for the degree-normalized variants, and Phi is identity (linear model),
bounded-confidence gating, or a per-vector MLP.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import sheaf as sheaf_mod
from . import tape
from .errors import ParseError, ShapeError
from .nonlin import NonlinearitySpec, apply_phi, edge_thresholds
from .tape import Tensor


@dataclass
class ModelConfig:
    variant: str = "nsd"            # nsd | bc | mlp | baseline_mlp | baseline_gcn
    maps: str = "diagonal"          # diagonal | orthogonal
    d: int = 2
    channels: int = 8               # feature channels f, constant across layers
    layers: int = 2
    activation: str = "relu"        # relu | elu | id
    normalization: str = "degree"   # degree | alpha (alpha: bc only)
    psi: str = "psi2"
    threshold_mode: str = "single"
    mlp_hidden: tuple = field(default=())  # Phi-MLP hidden widths; () = 2-layer default below
    input_dim: int = 2
    num_classes: int = 3
    shared_sheaf: bool = False      # ablation: one sheaf reused by every layer
    use_w2: bool = True
    use_sigma: bool = True

    def __post_init__(self):
        if self.d < 1 or self.layers < 0:
            raise ShapeError("d must be >= 1 and layers >= 0")
        self.mlp_hidden = tuple(self.mlp_hidden)

    def nonlinearity(self):
        if self.variant == "nsd":
            return NonlinearitySpec(variant="identity")
        if self.variant == "bc":
            return NonlinearitySpec(variant="bounded_confidence", psi=self.psi,
                                    threshold_mode=self.threshold_mode)
        if self.variant == "mlp":
            hidden = self.mlp_hidden if self.mlp_hidden else (self.d,)
            return NonlinearitySpec(variant="mlp", mlp_hidden=hidden)
        raise ValueError(f"variant {self.variant} has no edge nonlinearity")


VARIANT_NAMES = {
    "NSD-Diag": dict(variant="nsd", maps="diagonal"),
    "NSD-O(d)": dict(variant="nsd", maps="orthogonal"),
    "BC-s-Diag-NLSD": dict(variant="bc", maps="diagonal", threshold_mode="single"),
    "BC-s-O(d)-NLSD": dict(variant="bc", maps="orthogonal", threshold_mode="single"),
    "BC-m-Diag-NLSD": dict(variant="bc", maps="diagonal", threshold_mode="per_edge"),
    "BC-m-O(d)-NLSD": dict(variant="bc", maps="orthogonal", threshold_mode="per_edge"),
    "MLP-Diag-NLSD": dict(variant="mlp", maps="diagonal"),
    "MLP-O(d)-NLSD": dict(variant="mlp", maps="orthogonal"),
    "GCN": dict(variant="baseline_gcn"),
    "MLP": dict(variant="baseline_mlp"),
}


def parse_variant(name):
    """Map a roster name (optionally with an -alpha suffix) to config fields."""
    base = name
    alpha = False
    if name.endswith("-alphaNLSD"):
        base, alpha = name[:-len("-alphaNLSD")] + "-NLSD", True
    if base not in VARIANT_NAMES:
        raise ParseError(f"unknown model variant: {name}")
    fields = dict(VARIANT_NAMES[base])
    if alpha:
        if fields.get("variant") != "bc":
            raise ParseError("alpha normalization applies to bounded-confidence variants only")
        fields["normalization"] = "alpha"
    return fields


def _glorot(rng, shape):
    fan_in, fan_out = shape[-2] if len(shape) > 1 else shape[0], shape[-1]
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(config, rng):
    """Fresh parameter pytree (dicts/lists of Tensor leaves) for the config."""
    p, d, f, c = config.input_dim, config.d, config.channels, config.num_classes
    if config.variant == "baseline_mlp":
        h = max(d * f, 8)
        return {
            "w1": Tensor.param(_glorot(rng, (p, h))), "b1": Tensor.param(np.zeros(h)),
            "w2": Tensor.param(_glorot(rng, (h, c))), "b2": Tensor.param(np.zeros(c)),
        }
    if config.variant == "baseline_gcn":
        h = max(d * f, 8)
        return {
            "w1": Tensor.param(_glorot(rng, (p, h))), "b1": Tensor.param(np.zeros(h)),
            "w2": Tensor.param(_glorot(rng, (h, c))), "b2": Tensor.param(np.zeros(c)),
        }
    params = {
        "encoder": {"w": Tensor.param(_glorot(rng, (p, d * f))),
                    "b": Tensor.param(np.zeros(d * f))},
        "head": {"w": Tensor.param(_glorot(rng, (d * f, c))),
                 "b": Tensor.param(np.zeros(c))},
        "layers": [],
    }
    out_dim = sheaf_mod.learner_output_dim(d, config.maps)
    for _ in range(config.layers):
        layer = {
            "learner_w": Tensor.param(_glorot(rng, (out_dim, 2 * d)) if out_dim else np.zeros((0, 2 * d))),
            "learner_b": Tensor.param(np.zeros(out_dim)),
            "w1": Tensor.param(_glorot(rng, (d, d))),
            "w2": Tensor.param(_glorot(rng, (f, f))),
            "eps": Tensor.param(np.zeros(d)),
        }
        if config.variant == "bc":
            if config.normalization == "alpha":
                layer["alpha"] = Tensor.param(np.zeros(d))
            if config.threshold_mode == "single":
                # softplus(0.5413) ~= 1.0
                layer["theta"] = Tensor.param(np.array(0.5413))
            else:
                layer["thr_w"] = Tensor.param(_glorot(rng, (d, 1)).ravel())
                layer["thr_b"] = Tensor.param(np.zeros(1))
        if config.variant == "mlp":
            widths = (d,) + (config.mlp_hidden if config.mlp_hidden else (d,)) + (d,)
            layer["phi"] = [(Tensor.param(_glorot(rng, (a, b))), Tensor.param(np.zeros(b)))
                            for a, b in zip(widths[:-1], widths[1:])]
        params["layers"].append(layer)
    return params


def collect_params(params):
    """Flatten the parameter pytree into a list of Tensor leaves."""
    leaves = []

    def walk(node):
        if isinstance(node, Tensor):
            leaves.append(node)
        elif isinstance(node, dict):
            for k in node:
                walk(node[k])
        elif isinstance(node, (list, tuple)):
            for item in node:
                walk(item)
    walk(params)
    return leaves


def _sigma(x, config):
    if not config.use_sigma or config.activation == "id":
        return x
    if config.activation == "relu":
        return tape.relu(x)
    if config.activation == "elu":
        return tape.elu(x)
    raise ValueError(f"unknown activation {config.activation}")


def input_encoder(raw, params):
    """Raw n x p features -> (n, d, f) stalk features via one linear layer + relu."""
    n = raw.shape[0]
    z = tape.relu(Tensor.constant(raw) @ params["encoder"]["w"] + params["encoder"]["b"])
    df = z.shape[1]
    return z, n, df


def diffusion_layer(x, g, layer, config, shared=None, gate_margin=0.0):
    """One diffusion step on x of shape (n, d, f); returns (x_next, shared_state)."""
    n, d, f = x.shape
    tails, heads = g.tails, g.heads
    if shared is None:
        summary = sheaf_mod.stalk_summary(x)
        ft, fh = sheaf_mod.learner_maps(summary, tails, heads,
                                        layer["learner_w"], layer["learner_b"], config.maps)
        if config.normalization == "degree":
            deg = sheaf_mod.block_degree_t(ft, fh, tails, heads, n)
            dinv = tape.sym_inv_sqrt(deg, floor=sheaf_mod.DEGREE_FLOOR)
        else:
            dinv = None
        shared = (ft, fh, dinv, summary)
    ft, fh, dinv, summary = shared

    z = layer["w1"] @ x
    if config.use_w2:
        z = z @ layer["w2"]
    if dinv is not None:
        z = dinv @ z
    y = fh @ tape.gather(z, heads) - ft @ tape.gather(z, tails)

    spec = config.nonlinearity()
    if spec.variant == "bounded_confidence":
        if spec.threshold_mode == "single":
            thr = edge_thresholds("single", {"theta": layer["theta"]}, num_edges=g.num_edges)
        else:
            diff = tape.absolute(tape.gather(summary, tails) - tape.gather(summary, heads))
            thr = edge_thresholds("per_edge", {"w": layer["thr_w"], "b": layer["thr_b"]},
                                  pair_diff=diff)
        phi_y = apply_phi(y, spec, thresholds=thr, gate_margin=gate_margin)
    elif spec.variant == "mlp":
        phi_y = apply_phi(y, spec, mlp_params=layer["phi"])
    else:
        phi_y = y

    agg = tape.scatter_add(fh.swap_last() @ phi_y, heads, n) \
        - tape.scatter_add(ft.swap_last() @ phi_y, tails, n)
    if dinv is not None:
        agg = dinv @ agg
    agg = _sigma(agg, config)
    if config.normalization == "alpha":
        alpha = tape.tanh(layer["alpha"]).reshape(1, d, 1)
        agg = (alpha + 1.0) * agg
    eps = tape.tanh(layer["eps"]).reshape(1, d, 1)
    x_next = (eps + 1.0) * x - agg
    return x_next, shared


def forward(raw, g, params, config, gate_margin=0.0):
    """Full network: encoder -> diffusion layers -> linear head. Returns n x C logits."""
    raw = np.asarray(raw, dtype=np.float64)
    if config.variant == "baseline_mlp":
        h = tape.relu(Tensor.constant(raw) @ params["w1"] + params["b1"])
        return h @ params["w2"] + params["b2"]
    if config.variant == "baseline_gcn":
        src, dst, w = gcn_propagation(g)
        wt = Tensor.constant(w[:, None])

        def propagate(h):
            return tape.scatter_add(wt * tape.gather(h, src), dst, g.n)
        h = tape.relu(propagate(Tensor.constant(raw) @ params["w1"] + params["b1"]))
        return propagate(h @ params["w2"] + params["b2"])

    d, f = config.d, config.channels
    z, n, df = input_encoder(raw, params)
    if df != d * f:
        raise ShapeError(f"encoder output width {df} != d*f = {d * f}")
    x = z.reshape(n, d, f)
    shared = None
    for t, layer in enumerate(params["layers"]):
        use_shared = shared if (config.shared_sheaf and t > 0) else None
        x, state = diffusion_layer(x, g, layer, config, shared=use_shared,
                                   gate_margin=gate_margin)
        if config.shared_sheaf and t == 0:
            shared = state
    flat = x.reshape(n, d * f)
    return flat @ params["head"]["w"] + params["head"]["b"]


def gcn_propagation(g):
    """GCN operator D~^{-1/2} (A + I) D~^{-1/2} as (src, dst, weight) arrays."""
    deg = (g.degrees() + 1.0).astype(np.float64)
    dinv = deg ** -0.5
    loops = np.arange(g.n)
    src = np.concatenate([loops, g.edges[:, 0], g.edges[:, 1]])
    dst = np.concatenate([loops, g.edges[:, 1], g.edges[:, 0]])
    return src, dst, dinv[src] * dinv[dst]


def loss(logits, labels, mask):
    """Mean softmax cross-entropy over the masked nodes."""
    return tape.softmax_cross_entropy(logits, labels, mask)


# -- checkpointing -------------------------------------------------------------

def _params_to_jsonable(node):
    if isinstance(node, Tensor):
        return {"__tensor__": True, "shape": list(node.value.shape),
                "data": node.value.ravel().tolist()}
    if isinstance(node, dict):
        return {k: _params_to_jsonable(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_params_to_jsonable(v) for v in node]
    return node


def _params_from_jsonable(node):
    if isinstance(node, dict):
        if node.get("__tensor__"):
            arr = np.asarray(node["data"], dtype=np.float64).reshape(node["shape"])
            return Tensor.param(arr)
        return {k: _params_from_jsonable(v) for k, v in node.items()}
    if isinstance(node, list):
        out = [_params_from_jsonable(v) for v in node]
        # phi layers round-trip as 2-element lists; keep them as tuples
        if len(out) == 2 and all(isinstance(t, Tensor) for t in out):
            return tuple(out)
        return out
    return node


def save_checkpoint(path, config, params):
    doc = {"version": 1, "config": asdict(config), "params": _params_to_jsonable(params)}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ParseError(f"unsupported checkpoint version: {doc.get('version')}")
    cfg = doc["config"]
    cfg["mlp_hidden"] = tuple(cfg.get("mlp_hidden", ()))
    config = ModelConfig(**cfg)
    return config, _params_from_jsonable(doc["params"])
