"""Relightable, animatable volumetric-primitive head avatars."""

__version__ = "0.1.0"
