"""Command line harness and camera utilities."""

from .app import build_parser, main
from .camera import PinholeCamera, read_ppm, write_image, write_ppm

__all__ = ["main", "build_parser", "PinholeCamera", "read_ppm", "write_ppm", "write_image"]
