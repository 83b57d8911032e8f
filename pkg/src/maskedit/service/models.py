"""Request/response models for the edit service."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class EditPairModel(BaseModel):
    prompt: str = Field(min_length=1)
    order: int
    # None means "own group": unrelated masks must not share self-attention
    group: Optional[int] = Field(default=None, ge=1)
    mask_index: int = Field(ge=0, description="index into the uploaded masks")


class EditConfigModel(BaseModel):
    steps: int = Field(default=50, ge=1)
    blend_stop: Optional[int] = Field(default=None, ge=0)
    text_scale: float = Field(default=7.5, ge=0)
    image_scale: float = Field(default=1.5, ge=0)
    seed: int = 0
    boost_weight: float = Field(default=0.3, ge=0)
    enable_cross: bool = True
    enable_self: bool = True
    enable_boost: bool = True
    background_policy: Literal["sot_pad_only", "unrestricted"] = "sot_pad_only"
    backend: Optional[str] = None


class EditSubmission(BaseModel):
    pairs: list[EditPairModel] = Field(min_length=1)
    config: EditConfigModel = Field(default_factory=EditConfigModel)


class SubmitResponse(BaseModel):
    id: str
    state: str


class JobProgress(BaseModel):
    step: int
    total: int


class JobStatusResponse(BaseModel):
    id: str
    state: str
    progress: JobProgress
    created_at: float
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    error: Optional[str] = None
    result_url: Optional[str] = None
    config_url: Optional[str] = None


class BackendInfo(BaseModel):
    name: str
    available: bool
    detail: Optional[str] = None


class CapabilitiesResponse(BaseModel):
    backends: list[BackendInfo]
    limits: dict[str, int]
    workers: int
    # reference toy geometry so clients know which resolutions carry control
    attention_sites: list[dict[str, Any]]


class MaskDecodeResponse(BaseModel):
    width: int
    height: int
    pixels_base64: str = Field(description="base64 of row-major 0/1 bytes")


class ErrorEnvelope(BaseModel):
    code: str
    message: str
    detail: Any = None
