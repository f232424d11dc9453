"""HTTP render service: versioned JSON API over the trained avatar."""

from .app import AvatarStore, RenderService, create_app
from .schemas import (
    CameraSpec,
    EnvLighting,
    ExpressionSpec,
    LightingSpec,
    PointLight,
    QualitySpec,
    RenderRequest,
    RenderResponse,
    SessionState,
)

__all__ = [
    "AvatarStore",
    "CameraSpec",
    "EnvLighting",
    "ExpressionSpec",
    "LightingSpec",
    "PointLight",
    "QualitySpec",
    "RenderRequest",
    "RenderResponse",
    "RenderService",
    "SessionState",
    "create_app",
]
