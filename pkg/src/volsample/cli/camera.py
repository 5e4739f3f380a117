"""Pinhole camera ray generation and image writers."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import RayBundle


@dataclass(frozen=True)
class PinholeCamera:
    position: tuple = (0.0, 0.0, 4.0)
    look_at: tuple = (0.0, 0.0, 0.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov_deg: float = 40.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"vertical FOV must lie in (0, 180) degrees, got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image must be at least 1x1, got {self.width}x{self.height}")

    def basis(self):
        eye = np.asarray(self.position, dtype=np.float64)
        forward = np.asarray(self.look_at, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        norm = np.linalg.norm(right)
        if norm < 1e-12:
            raise ValueError("camera up vector is parallel to the view direction")
        right /= norm
        true_up = np.cross(right, forward)
        return eye, forward, right, true_up

    def rays(self, t_near: float, t_far: float) -> RayBundle:
        """One ray per pixel center, row-major from the top-left pixel."""
        eye, forward, right, up = self.basis()
        half_h = np.tan(np.radians(self.fov_deg) / 2.0)
        half_w = half_h * self.width / self.height
        xs = ((np.arange(self.width) + 0.5) / self.width * 2.0 - 1.0) * half_w
        ys = (1.0 - (np.arange(self.height) + 0.5) / self.height * 2.0) * half_h
        px, py = np.meshgrid(xs, ys)
        d = forward + px[..., None] * right + py[..., None] * up
        d = d.reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        origins = np.broadcast_to(eye, d.shape)
        return RayBundle(origins, d, t_near, t_far)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 with maxval 255; `image` is (height, width, 3) floats in [0, 1]."""
    pixels = to_uint8(image)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of :func:`write_ppm`; returns uint8 (height, width, 3)."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3)


def write_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(to_uint8(image)).save(path)
    else:
        write_ppm(path, image)
