"""Topic model containers: prior variants, trained model, on-disk format."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neural_prior as nprior
from .corpus import Corpus, SideSchema, Vocabulary

SCHEMA_VERSION = 1
PRIOR_KINDS = ("lda", "lda-opt", "dmr", "nnlda")


class ModelFormatError(ValueError):
    """Model file is unreadable or internally inconsistent."""


class SchemaVersionError(ModelFormatError):
    pass


class DimensionMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    tol: float = 1e-4
    max_rounds: int = 200
    estep_tol: float = 1e-6
    estep_max_iter: int = 100
    batch_size: int = 64
    hidden_dim: int = 20
    learning_rate: float = 1e-3
    weight_decay: float = 0.1
    alpha_floor: float = 1e-3
    alpha0: float = 1.0
    dmr_step: float = 1e-3
    dmr_sigma2: float = 10.0
    beta_floor: float = 1e-12
    # "lda": side-aware priors start from the beta of a plain-LDA fit (same seed)
    beta_init: str = "lda"

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        known = {k: v for k, v in obj.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass(eq=False)
class FixedPrior:
    """One alpha shared by every document; ``optimize`` enables the lda-opt update."""

    alpha: np.ndarray
    optimize: bool = False

    @property
    def kind(self) -> str:
        return "lda-opt" if self.optimize else "lda"

    @property
    def K(self) -> int:
        return self.alpha.size

    def alphas(self, side: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.alpha, (side.shape[0], self.K)).copy()

    def copy(self) -> "FixedPrior":
        return FixedPrior(self.alpha.copy(), self.optimize)

    def to_json(self) -> dict:
        return {"alpha": self.alpha.tolist(), "optimize": self.optimize}

    @classmethod
    def from_json(cls, obj: dict) -> "FixedPrior":
        return cls(np.asarray(obj["alpha"], dtype=np.float64), bool(obj["optimize"]))


@dataclass(eq=False)
class LogLinearPrior:
    """alpha_d = exp(lam @ [s_d; 1]); Gaussian prior N(0, sigma2) on lam."""

    lam: np.ndarray  # K x (q + 1)
    sigma2: float = 10.0
    step: float = 1e-3

    kind = "dmr"

    @property
    def K(self) -> int:
        return self.lam.shape[0]

    @staticmethod
    def augment(side: np.ndarray) -> np.ndarray:
        side = np.atleast_2d(side)
        return np.hstack([side, np.ones((side.shape[0], 1))])

    def alphas(self, side: np.ndarray) -> np.ndarray:
        return np.exp(self.augment(side) @ self.lam.T)

    def copy(self) -> "LogLinearPrior":
        return LogLinearPrior(self.lam.copy(), self.sigma2, self.step)

    def to_json(self) -> dict:
        return {"lambda": self.lam.tolist(), "sigma2": self.sigma2, "step": self.step}

    @classmethod
    def from_json(cls, obj: dict) -> "LogLinearPrior":
        return cls(np.asarray(obj["lambda"], dtype=np.float64), float(obj["sigma2"]),
                   float(obj["step"]))


@dataclass(eq=False)
class NeuralPrior:
    net: nprior.PriorNet
    opt: nprior.AdamState

    kind = "nnlda"

    @property
    def K(self) -> int:
        return self.net.K

    def alphas(self, side: np.ndarray) -> np.ndarray:
        return nprior.forward(self.net, np.atleast_2d(side))[0]

    def copy(self) -> "NeuralPrior":
        return NeuralPrior(self.net.copy(), self.opt.copy())

    def to_json(self) -> dict:
        return {"net": nprior.params_to_json(self.net), "adam": nprior.adam_to_json(self.opt)}

    @classmethod
    def from_json(cls, obj: dict) -> "NeuralPrior":
        net = nprior.params_from_json(obj["net"])
        return cls(net, nprior.adam_from_json(obj["adam"], net))


Prior = FixedPrior | LogLinearPrior | NeuralPrior


@dataclass(eq=False)
class VariationalState:
    """Per-document Dirichlet parameters and per-entry responsibilities.

    ``phi`` rows follow the entry order of ``Corpus.flat`` (documents in
    order, distinct words ascending within each document).
    """

    eta: np.ndarray  # M x K
    phi: np.ndarray  # T x K

    def copy(self) -> "VariationalState":
        return VariationalState(self.eta.copy(), self.phi.copy())


@dataclass(eq=False)
class TopicModel:
    beta: np.ndarray
    prior: Prior
    vocabulary: Vocabulary
    side_schema: SideSchema
    training_log: list[tuple[int, float]] = field(default_factory=list)
    seed: int | None = None
    config: TrainConfig = field(default_factory=TrainConfig)
    # final training posterior; not persisted
    state: VariationalState | None = None

    def __post_init__(self):
        if self.beta.ndim != 2 or self.beta.shape[1] != len(self.vocabulary):
            raise DimensionMismatchError(
                f"beta shape {self.beta.shape} does not match V={len(self.vocabulary)}"
            )
        if self.prior.K != self.beta.shape[0]:
            raise DimensionMismatchError(f"prior has K={self.prior.K}, beta has {self.beta.shape[0]}")

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def V(self) -> int:
        return self.beta.shape[1]

    @property
    def kind(self) -> str:
        return self.prior.kind

    @property
    def final_elbo(self) -> float:
        return self.training_log[-1][1] if self.training_log else float("nan")

    def alphas(self, corpus: Corpus) -> np.ndarray:
        self.check_corpus(corpus)
        return self.prior.alphas(corpus.side_matrix)

    def alpha_for(self, side) -> np.ndarray:
        side = np.asarray(side, dtype=np.float64)
        if side.size != self.side_schema.dim:
            raise DimensionMismatchError(
                f"side vector has {side.size} entries, model expects {self.side_schema.dim}"
            )
        return self.prior.alphas(side.reshape(1, -1))[0]

    def check_corpus(self, corpus: Corpus) -> None:
        if corpus.vocabulary != self.vocabulary:
            raise DimensionMismatchError(
                f"corpus vocabulary (V={corpus.V}) differs from the model's (V={self.V})"
            )
        # a side-free model ignores whatever side columns the corpus carries
        if self.side_schema.dim and corpus.q != self.side_schema.dim:
            raise DimensionMismatchError(
                f"corpus side dimension {corpus.q} != model side dimension {self.side_schema.dim}"
            )

    def top_words(self, n: int = 5) -> list[list[str]]:
        n = min(n, self.V)
        order = np.argsort(-self.beta, axis=1, kind="stable")[:, :n]
        terms = self.vocabulary.terms
        return [[terms[j] for j in row] for row in order]

    def copy(self) -> "TopicModel":
        return TopicModel(
            self.beta.copy(), self.prior.copy(), self.vocabulary, self.side_schema,
            list(self.training_log), self.seed, TrainConfig(**asdict(self.config)),
            None if self.state is None else self.state.copy(),
        )


_PRIOR_TYPES = {"lda": FixedPrior, "lda-opt": FixedPrior, "dmr": LogLinearPrior,
                "nnlda": NeuralPrior}


def model_to_json(model: TopicModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "prior_kind": model.kind,
        "K": model.K,
        "V": model.V,
        "q": model.side_schema.dim,
        "beta": model.beta.tolist(),
        "prior": model.prior.to_json(),
        "vocabulary": list(model.vocabulary.terms),
        "side_schema": model.side_schema.to_json(),
        "training_log": [[int(i), float(e)] for i, e in model.training_log],
        "seed": model.seed,
        "config": asdict(model.config),
    }


def model_from_json(obj: dict) -> TopicModel:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"model schema_version {version!r}, expected {SCHEMA_VERSION}")
    try:
        kind = obj["prior_kind"]
        if kind not in _PRIOR_TYPES:
            raise ModelFormatError(f"unknown prior_kind {kind!r}")
        beta = np.asarray(obj["beta"], dtype=np.float64)
        if beta.shape != (obj["K"], obj["V"]):
            raise ModelFormatError(f"beta shape {beta.shape} != (K={obj['K']}, V={obj['V']})")
        schema = SideSchema.from_json(obj["side_schema"])
        if schema.dim != obj["q"]:
            raise ModelFormatError(f"side schema width {schema.dim} != q={obj['q']}")
        model = TopicModel(
            beta=beta,
            prior=_PRIOR_TYPES[kind].from_json(obj["prior"]),
            vocabulary=Vocabulary(tuple(obj["vocabulary"])),
            side_schema=schema,
            training_log=[(int(i), float(e)) for i, e in obj["training_log"]],
            seed=obj["seed"],
            config=TrainConfig.from_json(obj["config"]),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelFormatError(f"malformed model file: {exc!r}") from exc
    if model.kind != kind:
        raise ModelFormatError(f"prior payload kind {model.kind!r} != prior_kind {kind!r}")
    return model


def save_model(model: TopicModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model), indent=1), encoding="utf-8")


def load_model(path, expect_K: int | None = None) -> TopicModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from exc
    if not isinstance(obj, dict):
        raise ModelFormatError(f"{path}: top-level value is not an object")
    model = model_from_json(obj)
    if expect_K is not None and model.K != expect_K:
        raise DimensionMismatchError(f"{path}: model has K={model.K}, expected {expect_K}")
    return model
