"""Run configuration: a YAML/JSON document validated before any compute.

Sections: ``system``, ``data``, ``dictionary``, ``training``, ``evaluation``.
Unknown keys anywhere are rejected. One root seed (``data.seed``) drives
every random draw; consumers split it into named child streams.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .dictionaries import DEFAULT_CAP
from .edmd import EdmdConfig
from .errors import InvalidArgument
from .neural import ACTIVATIONS, MlpSpec
from .systems import GlycolysisParams
from .trainer import TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PolsSystem(_Strict):
    kind: Literal["pols"] = "pols"
    n: int = Field(4, ge=1)
    p: int = Field(2, ge=1)
    oscillatory: bool = True

    @model_validator(mode="after")
    def _p_le_n(self):
        if self.p > self.n:
            raise ValueError("p must not exceed n")
        return self


class GlycolysisParamsModel(_Strict):
    j0: float = Field(2.5, gt=0)
    k1: float = Field(100.0, gt=0)
    k2: float = Field(6.0, gt=0)
    k3: float = Field(16.0, gt=0)
    k4: float = Field(100.0, gt=0)
    k5: float = Field(1.28, gt=0)
    k6: float = Field(12.0, gt=0)
    k_cap1: float = Field(0.52, gt=0)
    q: float = Field(4.0, ge=1)
    n_tot: float = Field(1.0, gt=0)
    a_tot: float = Field(4.0, gt=0)
    kappa: float = Field(13.0, gt=0)
    mu: float = Field(0.1, gt=0)
    k: float = Field(1.8, gt=0)

    def build(self) -> GlycolysisParams:
        return GlycolysisParams(**self.model_dump())


class GlycolysisSystem(_Strict):
    kind: Literal["glycolysis"] = "glycolysis"
    params: GlycolysisParamsModel = GlycolysisParamsModel()
    observe: list[Annotated[int, Field(ge=0, le=6)]] = [0, 1, 2, 3, 4, 5, 6]

    @model_validator(mode="after")
    def _distinct(self):
        if not self.observe or len(set(self.observe)) != len(self.observe):
            raise ValueError("observe must list distinct species indices")
        return self


class SwingSystem(_Strict):
    kind: Literal["swing"] = "swing"
    params_file: Optional[str] = None  # None selects the bundled reduced system
    delta_scale: float = Field(0.3, ge=0)


SystemConfig = Annotated[Union[PolsSystem, GlycolysisSystem, SwingSystem], Field(discriminator="kind")]


class DataConfig(_Strict):
    trajectories: int = Field(20, ge=2)
    length: int = Field(100, ge=2)
    dt: float = Field(1.0, gt=0)  # ignored by pols, which is discrete-time
    substeps: int = Field(10, ge=1)
    burn_in: int = Field(0, ge=0)
    train_fraction: float = Field(0.8, gt=0, lt=1)
    seed: int = Field(0, ge=0)


class PolyDictConfig(_Strict):
    kind: Literal["poly"] = "poly"
    family: Literal["legendre", "monomial"] = "legendre"
    max_total_degree: int = Field(2, ge=0)
    margin: float = Field(0.1, ge=0)
    cap: int = Field(DEFAULT_CAP, ge=1)


class MlpDictConfig(_Strict):
    kind: Literal["mlp"] = "mlp"
    hidden_widths: list[Annotated[int, Field(ge=1)]] = [20, 20, 20, 20]
    output_width: int = Field(20, ge=1)
    activation: Literal[ACTIVATIONS] = "elu"
    dropout_rate: float = Field(0.0, ge=0, lt=1)
    residual: bool = False

    def build(self, p: int) -> MlpSpec:
        return MlpSpec(p, tuple(self.hidden_widths), self.output_width, self.activation, self.dropout_rate,
                       self.residual)


DictionaryConfig = Annotated[Union[PolyDictConfig, MlpDictConfig], Field(discriminator="kind")]


class EdmdTraining(_Strict):
    method: Literal["edmd"] = "edmd"
    lambdas: list[Annotated[float, Field(ge=0)]] = [0.0]
    degrees: Optional[list[Annotated[int, Field(ge=0)]]] = None  # None: the dictionary's degree only
    max_iter: int = Field(2000, ge=1)
    tol: float = Field(1e-9, gt=0)
    max_regularized_dim: int = Field(600, ge=1)  # larger dictionaries are fit at lambda = 0 only

    def solver(self, lam: float) -> EdmdConfig:
        return EdmdConfig(lam, self.max_iter, self.tol)


class DeepTraining(_Strict):
    method: Literal["ddmd"] = "ddmd"
    optimizer: Literal["adagrad", "adam"] = "adagrad"
    learning_rate: float = Field(0.01, gt=0)
    batch_size: int = Field(64, ge=1)
    iterations: int = Field(10000, ge=0)
    lambda1: float = Field(0.0, ge=0)
    lambda2: float = Field(0.0, ge=0)
    shuffle: bool = True
    k_update: Literal["joint-gradient", "alternating-least-squares"] = "joint-gradient"
    eval_every: int = Field(500, ge=1)
    select: Literal["last", "best-train"] = "last"

    def build(self, seed: int) -> TrainConfig:
        doc = self.model_dump()
        doc.pop("method")
        return TrainConfig(seed=seed, **doc)


class FixedDictTraining(_Strict):
    method: Literal["fixed-dict-dmd"] = "fixed-dict-dmd"


TrainingConfig = Annotated[Union[EdmdTraining, DeepTraining, FixedDictTraining], Field(discriminator="method")]


class EvaluationConfig(_Strict):
    forecast_steps: int = Field(100, ge=1)
    modes: list[Literal["lifted", "relift"]] = ["lifted"]
    root_index: int = Field(0, ge=0)
    trajectory: int = Field(0, ge=0)  # index into the test split


class RunConfig(_Strict):
    system: SystemConfig = PolsSystem()
    data: DataConfig = DataConfig()
    dictionary: DictionaryConfig = MlpDictConfig()
    training: TrainingConfig = DeepTraining()
    evaluation: EvaluationConfig = EvaluationConfig()

    @model_validator(mode="after")
    def _compatible(self):
        poly = self.dictionary.kind == "poly"
        if self.training.method == "edmd" and not poly:
            raise ValueError("training.method edmd needs a poly dictionary")
        if self.training.method in ("ddmd", "fixed-dict-dmd") and poly:
            raise ValueError(f"training.method {self.training.method} needs an mlp dictionary")
        return self

    def with_overrides(self, seed: int = None, steps: int = None, mode: str = None) -> "RunConfig":
        doc = self.model_dump()
        if seed is not None:
            doc["data"]["seed"] = seed
        if steps is not None:
            doc["evaluation"]["forecast_steps"] = steps
        if mode is not None:
            doc["evaluation"]["modes"] = [mode]
        return validate(doc)

    def digest(self) -> str:
        return config_digest(self.model_dump(mode="json"))


def config_digest(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def validate(doc) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise InvalidArgument("config must be a mapping")
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise InvalidArgument("invalid config:\n  " + "\n  ".join(lines)) from None


def load_config(path) -> RunConfig:
    """Parse a ``.json``, ``.yaml`` or ``.yml`` file and validate it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise InvalidArgument(f"cannot parse config {path}: {exc}") from None
    return validate(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False)
