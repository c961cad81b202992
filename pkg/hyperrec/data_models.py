import math
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from hyperrec.errors import ConfigError
from hyperrec.geometry import DEFAULT_MAX_HYP_NORM


class SpaceTag(str, Enum):
    EUCLIDEAN = 'euclidean'
    POINCARE = 'poincare'


class ModelKind(str, Enum):
    MF_BPR = 'mf_bpr'
    MF_RATING = 'mf_rating'
    CML = 'cml'
    SCML = 'scml'

    @property
    def is_distance(self) -> bool:
        return self in (ModelKind.CML, ModelKind.SCML)

    @property
    def is_rating(self) -> bool:
        return self is ModelKind.MF_RATING


class SpaceKind(BaseModel):
    """
    The latent space a model lives in: Euclidean or the Poincaré ball.
    """
    model_config = ConfigDict(frozen=True)

    tag: SpaceTag = Field(
        description="Which geometry the embeddings are materialized in"
    )
    curvature: Optional[float] = Field(
        description="Curvature parameter c (space curvature is -c); Poincaré ball only",
        default=None
    )
    max_hyp_norm: Optional[float] = Field(
        description="Cap on the hyperbolic norm of materialized points; Poincaré ball only",
        default=None
    )
    max_norm: Optional[float] = Field(
        description="Optional Euclidean norm cap applied after each step; Euclidean only",
        default=None
    )

    @model_validator(mode='after')
    def check_fields_match_tag(self):
        if self.tag is SpaceTag.POINCARE:
            if self.curvature is None or self.max_hyp_norm is None:
                raise ValueError("Poincaré space needs curvature and max_hyp_norm")
            if not (math.isfinite(self.curvature) and self.curvature > 0):
                raise ValueError(f"curvature must be positive and finite, got {self.curvature}")
            if not self.max_hyp_norm > 0:
                raise ValueError(f"max_hyp_norm must be positive, got {self.max_hyp_norm}")
            if self.max_norm is not None:
                raise ValueError("max_norm applies to Euclidean space only")
        else:
            if self.curvature is not None or self.max_hyp_norm is not None:
                raise ValueError("Euclidean space takes no curvature or max_hyp_norm")
            if self.max_norm is not None and not self.max_norm > 0:
                raise ValueError(f"max_norm must be positive, got {self.max_norm}")
        return self

    @classmethod
    def euclidean(cls, max_norm: Optional[float] = None) -> 'SpaceKind':
        return cls(tag=SpaceTag.EUCLIDEAN, max_norm=max_norm)

    @classmethod
    def poincare(cls, c: float = 1.0, max_hyp_norm: float = DEFAULT_MAX_HYP_NORM) -> 'SpaceKind':
        return cls(tag=SpaceTag.POINCARE, curvature=c, max_hyp_norm=max_hyp_norm)

    @property
    def is_hyperbolic(self) -> bool:
        return self.tag is SpaceTag.POINCARE


class ModelConfig(BaseModel):
    """
    Hyper-parameters of one training run.
    """
    model: ModelKind = Field(description="Which latent space model to train")
    space: SpaceKind = Field(default_factory=SpaceKind.euclidean)
    dim: int = Field(description="Latent size d", default=10, ge=1)
    margin_item: float = Field(description="Item-side hinge margin m_item", default=1.0, ge=0)
    margin_social: float = Field(description="Social-side hinge margin m_so", default=1.0, ge=0)
    social_weight: float = Field(description="Weight lambda of the social loss", default=0.1, ge=0)
    lr: float = Field(description="Adam learning rate", default=0.01, gt=0)
    batch_size: int = Field(default=5000, ge=1)
    epochs: int = Field(default=20, ge=0)
    seed: int = 0
    negatives_per_positive: Optional[int] = Field(
        description="Sampled negatives per positive; 1 for MF models and 10 for CML/SCML when unset",
        default=None, ge=1
    )
    init_scale: float = Field(description="Uniform initialization half-width", default=0.01, gt=0)
    rank_weighting: bool = Field(description="Weight hinge terms by estimated rank", default=False)
    clip_grad_norm: Optional[float] = Field(
        description="Global gradient-norm cap; disabled when unset", default=None, gt=0
    )

    @property
    def n_negatives(self) -> int:
        if self.negatives_per_positive is not None:
            return self.negatives_per_positive
        return 10 if self.model.is_distance else 1


class EpochStats(BaseModel):
    epoch: int
    mean_loss: float
    triplets: int
    wall_time: float
    val_score: Optional[float] = None


class DatasetStats(BaseModel):
    """
    Summary statistics of a built dataset, the columns of a dataset table.
    """
    n_users: int
    n_items: int
    n_ratings: int
    density: float
    n_social: int = 0
    social_density: float = 0.0
    rating_min: float
    rating_max: float
    malformed_lines: int = 0
    duplicates_removed: int = 0
    dropped_self_loops: int = 0
    dropped_social_edges: int = 0

    @property
    def density_percent(self) -> str:
        return f"{100 * self.density:.4f}%"


class MetricsReport(BaseModel):
    """
    Evaluation results for one (dataset, model, space, dim, seed) cell.
    """
    hr: dict[int, float] = Field(default_factory=dict)
    ndcg: dict[int, float] = Field(default_factory=dict)
    mae: Optional[float] = None
    rmse: Optional[float] = None
    n_users_evaluated: int = 0
    n_users_skipped: int = 0
    protocol: str = 'full'
    dataset: str = ''
    model: str = ''
    space: str = ''
    dim: int = 0
    seed: str = '0'

    @field_validator('hr', 'ndcg')
    def check_unit_interval(cls, value: dict[int, float]) -> dict[int, float]:
        for k, v in value.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"metric at k={k} outside [0, 1]: {v}")
        return value

    @model_validator(mode='after')
    def check_mae_below_rmse(self):
        if self.mae is not None and self.rmse is not None and self.mae > self.rmse + 1e-12:
            raise ValueError(f"MAE {self.mae} exceeds RMSE {self.rmse}")
        return self

    def to_rows(self) -> list[dict]:
        base = dict(dataset=self.dataset, model=self.model, space=self.space, dim=self.dim,
                    seed=self.seed, protocol=self.protocol)
        rows = []
        for metric, values in (('hr', self.hr), ('ndcg', self.ndcg)):
            for k in sorted(values):
                rows.append(dict(base, metric=metric, k=k, value=values[k]))
        for metric in ('mae', 'rmse'):
            value = getattr(self, metric)
            if value is not None:
                rows.append(dict(base, metric=metric, k=None, value=value))
        return rows

    @classmethod
    def from_rows(cls, rows: list[dict]) -> 'MetricsReport':
        if not rows:
            raise ValueError("no rows to build a report from")
        first = rows[0]
        report = dict(dataset=first['dataset'], model=first['model'], space=first['space'],
                      dim=int(first['dim']), seed=str(first['seed']), protocol=first['protocol'],
                      hr={}, ndcg={})
        for row in rows:
            if row['metric'] in ('hr', 'ndcg'):
                report[row['metric']][int(row['k'])] = float(row['value'])
            else:
                report[row['metric']] = float(row['value'])
        return cls(**report)


class CheckpointMeta(BaseModel):
    config: ModelConfig
    epoch: int
    validation_metric: str
    validation_score: Optional[float] = None
    global_bias: float = 0.0
    n_users: int
    n_items: int


def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(',') if v.strip()]
    return value


def _none_if_empty(value):
    if isinstance(value, str) and value.strip().lower() in ('', 'none'):
        return None
    return value


class ExperimentConfig(BaseModel):
    """
    Flat experiment description; serialized as one ``key=value`` per line.
    """
    model_config = ConfigDict(extra='forbid')

    dataset: str = Field(description="Prepared dataset directory or raw interaction file")
    format: str = Field(description="auto, movielens_dat or tsv", default='auto')
    trust: Optional[str] = Field(description="Optional trust-edge file for raw inputs", default=None)
    split: str = Field(description="auto, loo (leave-one-out) or ratio (60/20/20)", default='auto')
    min_rating_as_positive: float = 0.0
    model: ModelKind = ModelKind.CML
    models: list[ModelKind] = Field(
        description="Models crossed in a sweep; the single model when empty", default=[]
    )
    space: SpaceTag = SpaceTag.EUCLIDEAN
    spaces: list[SpaceTag] = Field(
        description="Spaces crossed in a sweep", default=[SpaceTag.EUCLIDEAN, SpaceTag.POINCARE]
    )
    curvature: float = Field(default=1.0, gt=0)
    max_hyp_norm: float = Field(default=DEFAULT_MAX_HYP_NORM, gt=0)
    euclidean_max_norm: Optional[float] = Field(default=None, gt=0)
    dim: int = Field(default=10, ge=1)
    dims: list[int] = Field(description="Latent sizes crossed in a sweep; task grid when empty", default=[])
    margin_item: float = Field(description="Euclidean item margin", default=0.5, ge=0)
    margin_item_poincare: float = Field(description="Hyperbolic item margin", default=4.0, ge=0)
    margin_social: float = Field(default=0.5, ge=0)
    margin_social_poincare: float = Field(default=4.0, ge=0)
    social_weight: float = Field(default=0.1, ge=0)
    lr: float = Field(default=0.01, gt=0)
    batch_size: int = Field(default=5000, ge=1)
    epochs: int = Field(default=20, ge=0)
    negatives_per_positive: Optional[int] = Field(default=None, ge=1)
    init_scale: float = Field(default=0.01, gt=0)
    rank_weighting: bool = False
    grad_clipping: bool = False
    clip_grad_norm: float = Field(default=5.0, gt=0)
    seeds: list[int] = [0]
    protocol: str = Field(description="full or sampled:<n_negatives>", default='full')
    ks: list[int] = [1, 5, 10, 15, 20]
    output: str = 'runs'
    workers: int = Field(description="Parallel sweep cells", default=1, ge=1)

    split_lists = field_validator('models', 'spaces', 'dims', 'seeds', 'ks', mode='before')(_split_list)
    empty_to_none = field_validator(
        'trust', 'euclidean_max_norm', 'negatives_per_positive', mode='before'
    )(_none_if_empty)

    @field_validator('format')
    def check_format(cls, value: str) -> str:
        if value not in ('auto', 'movielens_dat', 'tsv'):
            raise ValueError(f"unknown format '{value}'")
        return value

    @field_validator('split')
    def check_split(cls, value: str) -> str:
        if value not in ('auto', 'loo', 'ratio'):
            raise ValueError(f"unknown split mode '{value}'")
        return value

    @field_validator('protocol')
    def check_protocol(cls, value: str) -> str:
        parse_protocol(value)
        return value

    @field_validator('ks')
    def check_ks(cls, value: list[int]) -> list[int]:
        if not value or min(value) < 1:
            raise ValueError("ks must be a non-empty list of positive cut-offs")
        return sorted(set(value))

    @property
    def split_mode(self) -> str:
        if self.split != 'auto':
            return self.split
        return 'ratio' if self.model.is_rating else 'loo'

    @property
    def sweep_models(self) -> list[ModelKind]:
        return self.models or [self.model]

    def sweep_dims(self, model: Optional[ModelKind] = None) -> list[int]:
        if self.dims:
            return self.dims
        return [8, 16, 32, 64] if (model or self.model).is_rating else [10, 50, 100]

    def space_kind(self, tag: Optional[SpaceTag] = None) -> SpaceKind:
        tag = SpaceTag(tag or self.space)
        if tag is SpaceTag.POINCARE:
            return SpaceKind.poincare(self.curvature, self.max_hyp_norm)
        return SpaceKind.euclidean(self.euclidean_max_norm)

    def to_model_config(self, space: Optional[SpaceTag] = None, dim: Optional[int] = None,
                        seed: Optional[int] = None, model: Optional[ModelKind] = None) -> ModelConfig:
        kind = self.space_kind(space)
        hyperbolic = kind.is_hyperbolic
        return ModelConfig(
            model=model or self.model,
            space=kind,
            dim=dim or self.dim,
            margin_item=self.margin_item_poincare if hyperbolic else self.margin_item,
            margin_social=self.margin_social_poincare if hyperbolic else self.margin_social,
            social_weight=self.social_weight,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seeds[0] if seed is None else seed,
            negatives_per_positive=self.negatives_per_positive,
            init_scale=self.init_scale,
            rank_weighting=self.rank_weighting,
            clip_grad_norm=self.clip_grad_norm if self.grad_clipping else None,
        )

    def to_text(self) -> str:
        lines = []
        for key, value in self.model_dump(mode='json').items():
            if isinstance(value, list):
                value = ','.join(str(v) for v in value)
            elif value is None:
                value = ''
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key}={value}")
        return '\n'.join(lines) + '\n'

    @classmethod
    def parse_text(cls, text: str, overrides: Optional[dict] = None) -> 'ExperimentConfig':
        values = {}
        for number, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ConfigError(f"config line {number} is not key=value: {line!r}")
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
        values.update(overrides or {})
        return cls(**values)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> 'ExperimentConfig':
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.parse_text(path.read_text(encoding='utf-8'), overrides)


def parse_protocol(protocol: str) -> Optional[int]:
    """Return ``None`` for the full-ranking protocol or the sampled negative count."""
    if protocol == 'full':
        return None
    if protocol.startswith('sampled:'):
        try:
            n = int(protocol.split(':', 1)[1])
        except ValueError:
            n = -1
        if n >= 0:
            return n
    raise ValueError(f"protocol must be 'full' or 'sampled:<n>', got '{protocol}'")
