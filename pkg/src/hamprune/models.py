"""CTR prediction heads (FM, DeepFM, DCN-V2) on top of an :class:`EmbeddingLayer`."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import numerics as nx
from .embeddings import EmbeddingLayer, base_dims, schema_hash
from .numerics import Tensor

MODELS = ("fm", "deepfm", "dcnv2")
CHECKPOINT_MAGIC = "HAMPRUNE-CKPT"
PROJ_DIM = 16


def _glorot(rng, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out else 0.0
    return Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def fm_interaction(vectors) -> Tensor:
    """Sum of pairwise inner products via ``0.5 * (||sum e||^2 - sum ||e||^2)``."""
    e = nx.stack(vectors, axis=1)  # B x K x D
    summed = nx.reduce_sum(e, axis=1)
    sq = nx.reduce_sum(nx.square(e), axis=1)
    return nx.mul(nx.reduce_sum(nx.sub(nx.square(summed), sq), axis=1), 0.5)


def mlp(x: Tensor, layers) -> Tensor:
    """ReLU MLP; ``layers`` is a list of (W, b) with the last layer linear."""
    for i, (W, b) in enumerate(layers):
        x = nx.add(nx.matmul(x, W), b)
        if i < len(layers) - 1:
            x = nx.relu(x)
    return x


class CTRModel:
    kind = "base"

    def __init__(self, embeddings: EmbeddingLayer, params: dict, config: dict):
        self.embeddings = embeddings
        self.params = params
        self.config = config

    def parameters(self) -> list[Tensor]:
        return self.embeddings.parameters() + list(self.params.values())

    def logits(self, idx, mask: Tensor | None = None) -> Tensor:
        raise NotImplementedError

    def predict(self, idx, mask=None, chunk=8192) -> np.ndarray:
        m = None if mask is None else Tensor(np.asarray(mask, dtype=float))
        out = []
        with nx.no_grad():
            for start in range(0, len(idx), chunk):
                out.append(nx.stable_sigmoid(self.logits(idx[start:start + chunk], m).data))
        return np.concatenate(out) if out else np.zeros(0)

    def dense_param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def pruned(self, mask) -> "CTRModel":
        """Physically smaller model equivalent to this one under ``mask``."""
        emb = self.embeddings.materialize_pruned(mask)
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return type(self)(emb, params, dict(self.config))

    def clone(self) -> "CTRModel":
        full = np.ones(self.embeddings.layout.size)
        return self.pruned(full)

    # ------------------------------------------------------------ checkpoints

    def state_dict(self) -> dict:
        out = {f"emb.{k}": v for k, v in self.embeddings.state().items()}
        out.update({f"theta.{k}": v.data for k, v in self.params.items()})
        return out

    def load_state(self, other: "CTRModel"):
        for dst, src in zip(self.parameters(), other.parameters()):
            dst.data[...] = src.data

    def save(self, path):
        header = {"magic": CHECKPOINT_MAGIC, "version": 1, "kind": self.kind, "config": self.config,
                  "cardinalities": self.embeddings.cardinalities, "dims": self.embeddings.dims,
                  "proj_dim": self.embeddings.proj_dim,
                  "schema_hash": schema_hash(self.embeddings.cardinalities)}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), **self.state_dict())

    @staticmethod
    def load(path) -> "CTRModel":
        with np.load(Path(path), allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("magic") != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a model checkpoint")
            if header["schema_hash"] != schema_hash(header["cardinalities"]):
                raise ValueError(f"{path}: schema hash mismatch")
            K = len(header["cardinalities"])
            tables = [Tensor(z[f"emb.V{j}"], requires_grad=True) for j in range(K)]
            projections = None
            if header["proj_dim"] is not None:
                projections = [Tensor(z[f"emb.P{j}"], requires_grad=True) for j in range(K)]
            emb = EmbeddingLayer(header["cardinalities"], proj_dim=header["proj_dim"],
                                 tables=tables, projections=projections)
            params = {k[len("theta."):]: Tensor(z[k], requires_grad=True)
                      for k in z.files if k.startswith("theta.")}
        return MODEL_CLASSES[header["kind"]](emb, params, header["config"])


class FM(CTRModel):
    kind = "fm"

    @classmethod
    def build(cls, cardinalities, dims=None, rng=None, proj_dim=PROJ_DIM, **_):
        rng = np.random.default_rng(0) if rng is None else rng
        emb = EmbeddingLayer(cardinalities, dims, proj_dim=proj_dim, rng=rng)
        params = {"w0": _zeros(1)}
        params.update({f"w1_{j}": _zeros(c, 1) for j, c in enumerate(cardinalities)})
        return cls(emb, params, {"proj_dim": proj_dim})

    def first_order(self, idx) -> Tensor:
        terms = [nx.gather_rows(self.params[f"w1_{j}"], idx[:, j]) for j in range(idx.shape[1])]
        return nx.add(nx.reshape(nx.reduce_sum(nx.concat(terms, axis=1), axis=1), (-1,)), self.params["w0"])

    def fm_logit(self, idx, vectors) -> Tensor:
        return nx.add(self.first_order(idx), fm_interaction(vectors))

    def logits(self, idx, mask=None) -> Tensor:
        idx = np.asarray(idx)
        return self.fm_logit(idx, self.embeddings.field_vectors(idx, mask))


class DeepFM(FM):
    kind = "deepfm"

    @classmethod
    def build(cls, cardinalities, dims=None, rng=None, proj_dim=PROJ_DIM, hidden=(64, 64), **_):
        rng = np.random.default_rng(0) if rng is None else rng
        model = FM.build(cardinalities, dims, rng, proj_dim)
        widths = [len(cardinalities) * proj_dim, *hidden, 1]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            model.params[f"mlp_W{i}"] = _glorot(rng, a, b)
            model.params[f"mlp_b{i}"] = _zeros(b)
        return cls(model.embeddings, model.params, {"proj_dim": proj_dim, "hidden": list(hidden)})

    def mlp_layers(self):
        n = len(self.config["hidden"]) + 1
        return [(self.params[f"mlp_W{i}"], self.params[f"mlp_b{i}"]) for i in range(n)]

    def logits(self, idx, mask=None) -> Tensor:
        idx = np.asarray(idx)
        vectors = self.embeddings.field_vectors(idx, mask)
        deep = mlp(nx.concat(vectors, axis=1), self.mlp_layers())
        return nx.add(self.fm_logit(idx, vectors), nx.reshape(deep, (-1,)))


class DCNV2(CTRModel):
    """Full-rank cross network ``x_{l+1} = x0 * (x_l W_l + b_l) + x_l`` on raw embeddings."""

    kind = "dcnv2"

    @classmethod
    def build(cls, cardinalities, dims=None, rng=None, cross_layers=2, hidden=(), **_):
        rng = np.random.default_rng(0) if rng is None else rng
        emb = EmbeddingLayer(cardinalities, dims, proj_dim=None, rng=rng)
        S = emb.layout.size
        params = {}
        for l in range(cross_layers):
            params[f"cross_W{l}"] = _glorot(rng, S, S)
            params[f"cross_b{l}"] = _zeros(S)
        widths = [S, *hidden, 1]
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            params[f"head_W{i}"] = _glorot(rng, a, b)
            params[f"head_b{i}"] = _zeros(b)
        return cls(emb, params, {"cross_layers": cross_layers, "hidden": list(hidden)})

    def cross(self, x0: Tensor) -> Tensor:
        x = x0
        for l in range(self.config["cross_layers"]):
            xw = nx.add(nx.matmul(x, self.params[f"cross_W{l}"]), self.params[f"cross_b{l}"])
            x = nx.add(nx.mul(x0, xw), x)
        return x

    def logits(self, idx, mask=None) -> Tensor:
        x0 = self.embeddings.lookup(np.asarray(idx), mask)
        n = len(self.config["hidden"]) + 1
        head = [(self.params[f"head_W{i}"], self.params[f"head_b{i}"]) for i in range(n)]
        return nx.reshape(mlp(self.cross(x0), head), (-1,))

    def pruned(self, mask) -> "DCNV2":
        keep = np.asarray(mask) != 0
        emb = self.embeddings.materialize_pruned(mask)
        params = {}
        for k, v in self.params.items():
            a = v.data
            if k.startswith("cross_W"):
                a = a[np.ix_(keep, keep)]
            elif k.startswith("cross_b") or k == "head_W0":
                a = a[keep]
            params[k] = Tensor(a.copy(), requires_grad=True)
        return DCNV2(emb, params, dict(self.config))


MODEL_CLASSES = {"fm": FM, "deepfm": DeepFM, "dcnv2": DCNV2}


def build_model(kind: str, cardinalities, dims=None, seed=0, **opts) -> CTRModel:
    if kind not in MODEL_CLASSES:
        raise ValueError(f"unknown model {kind!r}; choose from {MODELS}")
    dims = base_dims(cardinalities) if dims is None else dims
    return MODEL_CLASSES[kind].build(list(cardinalities), list(dims), np.random.default_rng(seed), **opts)
