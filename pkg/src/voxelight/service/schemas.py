"""Request/response bodies for the /v1 API.

Lighting semantics worth reading twice: the point_lights variant renders
one pass per light and sums the images, so splitting one light into two
half-intensity copies at the same position reproduces the original image
exactly.  That linearity holds across renders, not inside one; a true
multi-light single-pass render is deliberately not offered.
"""

from __future__ import annotations

from pydantic import BaseModel, Field, model_validator

Vec3 = tuple[float, float, float]


class CameraSpec(BaseModel):
    position: Vec3
    look_at: Vec3 = (0.0, 0.0, 0.0)
    up: Vec3 = (0.0, 1.0, 0.0)
    vfov_deg: float = Field(default=25.0, gt=0.0, lt=180.0)
    width: int = Field(ge=1)
    height: int = Field(ge=1)


class PointLight(BaseModel):
    position: Vec3
    rgb: Vec3 = (1.0, 1.0, 1.0)

    @model_validator(mode="after")
    def _non_negative(self):
        if any(c < 0 for c in self.rgb):
            raise ValueError("light rgb intensity must be non-negative")
        return self


class EnvLighting(BaseModel):
    id: str
    yaw_deg: float = 0.0


class LightingSpec(BaseModel):
    point_lights: list[PointLight] | None = None
    env: EnvLighting | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.point_lights is None) == (self.env is None):
            raise ValueError("lighting needs exactly one of point_lights or env")
        if self.point_lights is not None and len(self.point_lights) == 0:
            raise ValueError("point_lights may not be empty")
        return self


class ExpressionSpec(BaseModel):
    mesh_id: str | None = None
    blendweights: list[float] | None = None
    latent: list[float] | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        given = [v is not None for v in (self.mesh_id, self.blendweights, self.latent)]
        if sum(given) != 1:
            raise ValueError("expression needs exactly one of mesh_id, blendweights or latent")
        return self


class QualitySpec(BaseModel):
    """step_scale > 1 marches coarser steps for fast previews; 1 is the
    full-quality path identical to the CLI."""

    step_scale: float = Field(default=1.0, gt=0.0, le=16.0)


class RenderRequest(BaseModel):
    camera: CameraSpec
    lighting: LightingSpec
    expression: ExpressionSpec
    quality: QualitySpec = QualitySpec()
    include_linear: bool = False


class RenderResponse(BaseModel):
    png_base64: str
    linear_base64: str | None = None
    checkpoint_id: str
    width: int
    height: int
    render_seconds: float


class SessionState(BaseModel):
    checkpoint_id: str | None
    cached_envmaps: list[str]
    queue_depth: int
    max_queue: int


class CheckpointRequest(BaseModel):
    id: str
