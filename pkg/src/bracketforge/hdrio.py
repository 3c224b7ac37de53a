"""PFM / 8-bit PNG frame I/O and bracket manifests."""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import DataError

_PFM_DIMS = re.compile(rb"^\s*(\d+)\s+(\d+)\s*$")


def write_pfm(frame, path) -> None:
    arr = np.asarray(frame, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"PFM writer expects (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("PFM writer expects finite values")
    h, w, _ = arr.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def _pfm_line(buf: bytes, pos: int) -> tuple[bytes, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise DataError("malformed PFM header: missing newline")
    return buf[pos:end].rstrip(b"\r"), end + 1


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    magic, pos = _pfm_line(buf, 0)
    magic = magic.strip()
    if magic == b"Pf":
        raise DataError("grayscale PFM ('Pf') is not supported; expected RGB 'PF'")
    if magic != b"PF":
        raise DataError(f"malformed PFM header: bad magic {magic[:8]!r}")
    dims, pos = _pfm_line(buf, pos)
    m = _PFM_DIMS.match(dims)
    if not m:
        raise DataError(f"malformed PFM header: bad dimensions {dims[:32]!r}")
    w, h = int(m.group(1)), int(m.group(2))
    scale_line, pos = _pfm_line(buf, pos)
    try:
        scale = float(scale_line)
    except ValueError:
        raise DataError(f"malformed PFM header: bad scale {scale_line[:32]!r}") from None
    if scale == 0 or not math.isfinite(scale):
        raise DataError("malformed PFM header: scale must be non-zero and finite")
    dtype = "<f4" if scale < 0 else ">f4"
    expected = w * h * 3 * 4
    payload = buf[pos:]
    if len(payload) != expected:
        kind = "truncated" if len(payload) < expected else "oversized"
        raise DataError(f"{kind} PFM payload: expected {expected} bytes for {w}x{h}, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(h, w, 3)[::-1]
    return arr.astype(np.float32)


def quantize8(x) -> np.ndarray:
    """Codes 0..255, round half away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.floor(x * 255.0 + 0.5).astype(np.uint8)


def write_png8(frame, path) -> None:
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"PNG writer expects (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise DataError("PNG writer expects values in [0, 1]; clip first")
    Image.fromarray(quantize8(arr), mode="RGB").save(path, format="PNG")


def read_png8(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise DataError(f"expected an 8-bit RGB PNG, got mode {im.mode}")
        codes = np.asarray(im, dtype=np.uint8)
    return (codes.astype(np.float32) / np.float32(255.0))


def read_frame(path) -> np.ndarray:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".png":
        return read_png8(path)
    raise DataError(f"unsupported frame format: {path.name}")


def list_frames(directory, suffixes=(".pfm", ".png")) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in suffixes)
    if not files:
        raise DataError(f"no frames ({', '.join(suffixes)}) in {directory}")
    return files


def read_video_dir(directory, suffixes=(".pfm", ".png")) -> np.ndarray:
    frames = [read_frame(p) for p in list_frames(directory, suffixes)]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DataError(f"frames in {directory} have differing shapes: {sorted(shapes)}")
    return np.stack(frames)


# ---------------------------------------------------------------- manifests

MANIFEST_KEYS = ("crf", "ev_spacing", "exposures", "paths", "seed")


@dataclass
class BracketManifest:
    """Frame lists for each exposure level plus how they were produced.

    ``exposures[k]`` is either one float (constant over the video) or a list
    with one value per frame.  ``crf`` is ``None`` for linear frames,
    ``{"n": .., "sigma": ..}`` for the parametric response, or
    ``{"gamma": ..}`` for display gamma encoding.
    """

    paths: list
    exposures: list
    ev_spacing: float = 4.0
    crf: dict | None = None
    seed: int | None = None
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if len(self.paths) == 0 or len(self.paths) != len(self.exposures):
            raise DataError("manifest needs one exposure entry per path list")
        counts = {len(p) for p in self.paths}
        if len(counts) != 1 or 0 in counts:
            raise DataError("every exposure level must list the same, non-zero number of frames")
        n = counts.pop()
        for e in self.exposures:
            vals = e if isinstance(e, (list, tuple)) else [e]
            if isinstance(e, (list, tuple)) and len(e) != n:
                raise DataError("per-frame exposure list length does not match frame count")
            for v in vals:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v <= 0:
                    raise DataError(f"exposures must be positive finite numbers, got {v!r}")
        if not math.isfinite(self.ev_spacing) or self.ev_spacing <= 0:
            raise DataError("ev_spacing must be positive")
        if self.crf is not None:
            keys = set(self.crf)
            if keys not in ({"n", "sigma"}, {"gamma"}):
                raise DataError(f"crf must have keys {{n, sigma}} or {{gamma}}, got {sorted(keys)}")
            if any(not isinstance(v, (int, float)) or v <= 0 for v in self.crf.values()):
                raise DataError("crf parameters must be positive numbers")
        if self.seed is not None and not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise DataError("seed must be a 64-bit unsigned integer")

    @property
    def frame_count(self) -> int:
        return len(self.paths[0])

    def exposure_table(self) -> np.ndarray:
        """``(levels, frames)`` array of exposures."""
        n = self.frame_count
        return np.array([np.broadcast_to(np.asarray(e, dtype=np.float64), (n,)) for e in self.exposures])

    def sorted(self) -> "BracketManifest":
        key = self.exposure_table().mean(axis=1)
        order = np.argsort(key, kind="stable")
        return BracketManifest(
            paths=[list(self.paths[i]) for i in order],
            exposures=[self.exposures[i] for i in order],
            ev_spacing=self.ev_spacing, crf=self.crf, seed=self.seed, base_dir=self.base_dir,
        )

    def check_spacing(self, rtol: float = 1e-6) -> None:
        table = self.sorted().exposure_table()
        if len(table) < 2:
            return
        want = 2.0 ** self.ev_spacing
        ratios = table[1:] / table[:-1]
        if not np.allclose(ratios, want, rtol=rtol, atol=0):
            raise DataError(f"exposure ratios {np.unique(ratios)} do not match 2^{self.ev_spacing}")

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p

    def to_dict(self) -> dict:
        m = self.sorted()
        return {
            "crf": m.crf,
            "ev_spacing": float(m.ev_spacing),
            "exposures": [list(map(float, e)) if isinstance(e, (list, tuple)) else float(e) for e in m.exposures],
            "paths": [[str(p) for p in level] for level in m.paths],
            "seed": m.seed,
        }


def write_manifest(m: BracketManifest, path) -> None:
    m.validate()
    text = json.dumps(m.to_dict(), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_manifest(path) -> BracketManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError("manifest must be a JSON object")
    missing = [k for k in ("exposures", "paths") if k not in raw]
    if missing:
        raise DataError(f"manifest {path} is missing required keys: {missing}")
    unknown = set(raw) - set(MANIFEST_KEYS)
    if unknown:
        warnings.warn(f"ignoring unknown manifest keys {sorted(unknown)}", stacklevel=2)
    return BracketManifest(
        paths=raw["paths"],
        exposures=raw["exposures"],
        ev_spacing=float(raw.get("ev_spacing", 4.0)),
        crf=raw.get("crf"),
        seed=raw.get("seed"),
        base_dir=path.parent,
    )
