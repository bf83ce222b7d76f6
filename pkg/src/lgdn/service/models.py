"""Pydantic request/response models for the service surface."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class HealthResponse(StrictModel):
    status: str
    version: str


class CorpusRequest(StrictModel):
    out_path: str
    config: dict = Field(default_factory=dict)  # CorpusConfig overrides


class CorpusResponse(StrictModel):
    path: str
    version: str
    n_pairs: int
    splits: dict[str, int]
    salient_per_video: int


class TrainRequest(StrictModel):
    corpus_path: str
    checkpoint_out: str
    log_out: str | None = None
    config: dict = Field(default_factory=dict)  # Config overrides


class TrainResponse(StrictModel):
    checkpoint: str
    log: str | None
    steps: int
    first_epoch_mean_loss: float
    final_epoch_mean_loss: float


class EvalRequest(StrictModel):
    checkpoint: str
    corpus_path: str
    mode: str = "ensemble"          # global | local | ensemble
    split: str = "test"
    report_out: str | None = None


class DirectionMetrics(StrictModel):
    r1: float
    r5: float
    r10: float
    mdr: float
    mnr: float


class EvalResponse(StrictModel):
    mode: str
    t2v: DirectionMetrics
    v2t: DirectionMetrics
    r_sum: float
    r_mean: float
    config_digest: str
    report_path: str | None


class SweepRequest(StrictModel):
    checkpoint: str
    corpus_path: str
    salient: list[int]
    split: str = "test"
    csv_out: str | None = None


class SweepRow(StrictModel):
    n_salient: int
    r_sum: float
    r1_t2v: float
    r5_t2v: float
    r10_t2v: float
    r1_v2t: float
    r5_v2t: float
    r10_v2t: float
    wall_ms: float
    speedup: float


class SweepResponse(StrictModel):
    rows: list[SweepRow]
    csv_path: str | None


class GradcheckRequest(StrictModel):
    eps: float = 1e-5
    tolerance: float = 1e-4
    config: dict = Field(default_factory=dict)  # suite size overrides


class GradcheckResponse(StrictModel):
    errors: dict[str, float]
    max_error: float
    tolerance: float
    ok: bool


class AblateRequest(StrictModel):
    corpus_path: str
    strategies: list[str]
    config: dict = Field(default_factory=dict)


class AblateRow(StrictModel):
    strategy: str
    r_sum: float
    t2v_r1: float
    v2t_r1: float
    selection_recall: float | None = None


class AblateResponse(StrictModel):
    rows: list[AblateRow]
