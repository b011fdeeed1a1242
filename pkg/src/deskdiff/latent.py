"""Diffusion in a compressed latent space, optionally label-conditioned.

The codec is fixed and linear: encoding averages consecutive blocks of
``2**m`` components, decoding copies each latent value back over its block.
``m = 0`` gives the identity codec.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserParams, NetConfig, init_params
from .io import fmt, read_csv, write_csv
from .rng import make_rng
from .sampler import SampleRunConfig, generate
from .schedule import Schedule
from .trainer import TrainConfig, train


@dataclass(frozen=True, eq=False)
class Codec:
    encode_matrix: np.ndarray  # (latent_dim, data_dim)
    decode_matrix: np.ndarray  # (data_dim, latent_dim)

    @property
    def data_dim(self) -> int:
        return self.encode_matrix.shape[1]

    @property
    def latent_dim(self) -> int:
        return self.encode_matrix.shape[0]


def block_codec(data_dim: int, m: int) -> Codec:
    block = 2 ** m
    if data_dim % block:
        raise ValueError(f"data_dim {data_dim} is not divisible by 2**{m}")
    latent_dim = data_dim // block
    dup = np.kron(np.eye(latent_dim), np.ones((block, 1)))  # (data_dim, latent_dim)
    return Codec(dup.T / block, dup)


def encode(c: Codec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != c.data_dim:
        raise ValueError(f"expected width {c.data_dim}, got {x.shape[-1]}")
    return x @ c.encode_matrix.T


def decode(c: Codec, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != c.latent_dim:
        raise ValueError(f"expected width {c.latent_dim}, got {y.shape[-1]}")
    return y @ c.decode_matrix.T


@dataclass
class ConditionVocab:
    names: list[str]
    embeddings: np.ndarray  # (n_labels, dim)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be distinct")
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if self.embeddings.shape[0] != len(self.names):
            raise ValueError("one embedding per label")

    @classmethod
    def one_hot(cls, names) -> "ConditionVocab":
        return cls(list(names), np.eye(len(names)))

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def id_of(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.names):
                raise KeyError(f"unknown label id {label}")
            return int(label)
        try:
            return self.names.index(label)
        except ValueError:
            raise KeyError(f"unknown label {label!r}") from None

    def ids(self, labels) -> np.ndarray:
        return np.array([self.id_of(v) for v in labels], dtype=np.int64)

    def write_csv(self, path) -> None:
        rows = ([i, n, *map(fmt, e)] for i, (n, e) in enumerate(zip(self.names, self.embeddings)))
        header = ["label_id", "label_name"] + [f"e{k}" for k in range(self.dim)]
        write_csv(path, header, rows)

    @classmethod
    def read_csv(cls, path) -> "ConditionVocab":
        rows = sorted(read_csv(path), key=lambda r: int(r["label_id"]))
        names = [r["label_name"] for r in rows]
        keys = [k for k in rows[0] if k not in ("label_id", "label_name")]
        return cls(names, np.array([[float(r[k]) for k in keys] for r in rows]))


def train_latent(data, codec: Codec, s: Schedule, cfg: TrainConfig, labels=None,
                 vocab: ConditionVocab | None = None, net: NetConfig | None = None, **kw):
    """Encode the data, then train the ordinary noise predictor on the latents.

    With ``labels`` the network is conditioned on ``vocab`` embeddings (the
    table is trainable and initialised from the vocabulary).
    """
    y = encode(codec, data)
    ids = None
    if labels is not None:
        if vocab is None:
            raise ValueError("conditioning labels need a vocabulary")
        ids = vocab.ids(labels)
    if net is None:
        n_classes = 0 if ids is None else len(vocab.names)
        net = NetConfig(data_dim=codec.latent_dim, T=s.T, n_classes=n_classes,
                        cond_dim=vocab.dim if ids is not None else 0)
    params = kw.pop("params", None)
    if params is None and ids is not None:
        params = init_params(net, make_rng(cfg.seed, "init"), cond_table=vocab.embeddings)
    return train(y, s, cfg, net, ids, params=params, **kw)


def generate_conditioned(params: DenoiserParams, codec: Codec, s: Schedule, cfg: SampleRunConfig,
                         label=None, vocab: ConditionVocab | None = None) -> np.ndarray:
    """Sample latents (conditioned on ``label`` if given) and decode them."""
    cond = None
    if label is not None:
        cond = vocab.id_of(label) if vocab is not None else int(label)
        if not 0 <= cond < params.config.n_classes:
            raise KeyError(f"unknown label {label!r}")
    res = generate(params, s, cfg, cond=cond, data_dim=codec.latent_dim)
    return decode(codec, res.samples)
