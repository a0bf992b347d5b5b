import logging
import math
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np
import orjson
from pydantic import BaseModel

from errors import DatasetError
from models.imaging import BeamformedImage, BeamformGrid, ChannelData, DataKind
from models.tensor import ComplexTensor, RealTensor
from schema.reports import EpochRecord, SceneManifest

logger = logging.getLogger("compounding.storage")

# tag, rows, cols, two-plane flag (I/Q or RF + quadrature), then two f64 slots:
# channel files store (fs, t0), image files store (tilt, compound count)
HEADER = struct.Struct("<4sIIIdd")
CHANNEL_TAGS = {DataKind.RF: b"CHRF", DataKind.IQ: b"CHIQ"}
IMAGE_TAGS = {DataKind.RF: b"IMRF", DataKind.IQ: b"IMIQ"}
SPLITS = ("train", "val", "test")


def _encode(tag: bytes, planes: Tuple[np.ndarray, ...], a: float, b: float) -> bytes:
    rows, cols = planes[0].shape
    header = HEADER.pack(tag, rows, cols, 1 if len(planes) == 2 else 0, a, b)
    return header + b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in planes)


def _decode(payload: bytes, allowed: Iterable[bytes]):
    if len(payload) < HEADER.size:
        raise DatasetError("file shorter than its header")
    tag, rows, cols, is_complex, a, b = HEADER.unpack_from(payload)
    if tag not in allowed:
        raise DatasetError(f"unexpected file tag {tag!r}")
    count = rows * cols
    n_planes = 2 if is_complex else 1
    if len(payload) != HEADER.size + 4 * count * n_planes:
        raise DatasetError(f"payload size does not match a {rows}x{cols} array of {n_planes} plane(s)")
    data = np.frombuffer(payload, dtype="<f4", offset=HEADER.size).astype(np.float64)
    planes = tuple(data[i * count : (i + 1) * count].reshape(rows, cols) for i in range(n_planes))
    return tag, planes, a, b


def _pixels(planes):
    if len(planes) == 2:
        return ComplexTensor(planes[0], planes[1])
    return RealTensor(planes[0])


def write_channels(path: Path, ch: ChannelData) -> None:
    planes = (ch.samples.re, ch.samples.im) if ch.kind == DataKind.IQ else (ch.samples.data,)
    path.write_bytes(_encode(CHANNEL_TAGS[ch.kind], planes, ch.fs, ch.t0))


def read_channels(path: Path) -> ChannelData:
    _, planes, fs, t0 = _decode(Path(path).read_bytes(), CHANNEL_TAGS.values())
    return ChannelData(_pixels(planes), fs=fs, t0=t0)


def write_image(path: Path, img: BeamformedImage) -> None:
    """RF images with a quadrature plane are stored as two planes under the RF tag."""
    if img.kind == DataKind.IQ:
        planes = (img.pixels.re, img.pixels.im)
    elif img.quadrature is not None:
        planes = (img.pixels.data, img.quadrature)
    else:
        planes = (img.pixels.data,)
    tilt = math.nan if img.tilt is None else float(img.tilt)
    path.write_bytes(_encode(IMAGE_TAGS[img.kind], planes, tilt, float(img.compound_count)))


def read_image(path: Path, grid: BeamformGrid) -> BeamformedImage:
    tag, planes, tilt, count = _decode(Path(path).read_bytes(), IMAGE_TAGS.values())
    if planes[0].shape != grid.shape:
        raise DatasetError(f"{path} holds a {planes[0].shape} image, expected {grid.shape}")
    tilt = None if math.isnan(tilt) else tilt
    if tag == IMAGE_TAGS[DataKind.RF]:
        quadrature = planes[1] if len(planes) == 2 else None
        return BeamformedImage(RealTensor(planes[0]), grid, tilt, int(count), quadrature)
    return BeamformedImage(_pixels(planes), grid, tilt, int(count))


def write_pgm(path: Path, image: np.ndarray) -> None:
    """8-bit binary portable graymap of values in [0, 1]."""
    rows, cols = image.shape
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())


def write_json(path: Path, model: BaseModel) -> None:
    path.write_bytes(model.model_dump_json(indent=2).encode("utf-8"))


def write_history(path: Path, records: Iterable[EpochRecord]) -> None:
    lines = [orjson.dumps(r.model_dump()) for r in records]
    path.write_bytes(b"\n".join(lines) + (b"\n" if lines else b""))


def read_history(path: Path) -> List[EpochRecord]:
    return [EpochRecord(**orjson.loads(line)) for line in Path(path).read_bytes().splitlines() if line.strip()]


def tilt_tag(tilt: float) -> str:
    return f"{int(round(tilt)):+03d}"


class DatasetLayout:
    """{root}/{split}/scene_{index:05d}/ with one manifest and the image files."""

    def __init__(self, root: Path):
        self.root = Path(root)

    def scene_dir(self, split: str, index: int) -> Path:
        return self.root / split / f"scene_{index:05d}"

    def scene_dirs(self, split: str) -> List[Path]:
        split_dir = self.root / split
        if not split_dir.is_dir():
            raise DatasetError(f"no {split} split under {self.root}")
        return sorted(p for p in split_dir.iterdir() if p.is_dir() and p.name.startswith("scene_"))

    @staticmethod
    def tilt_image(scene_dir: Path, kind: DataKind, tilt: float) -> Path:
        return scene_dir / f"{kind.value.lower()}_tilt_{tilt_tag(tilt)}.bin"

    @staticmethod
    def target_image(scene_dir: Path, kind: DataKind) -> Path:
        return scene_dir / f"{kind.value.lower()}_target.bin"

    @staticmethod
    def channel_file(scene_dir: Path, kind: DataKind, tilt: float) -> Path:
        return scene_dir / "channels" / f"{kind.value.lower()}_tilt_{tilt_tag(tilt)}.bin"

    @staticmethod
    def manifest(scene_dir: Path) -> Path:
        return scene_dir / "scene.json"

    @staticmethod
    def write_manifest(scene_dir: Path, manifest: SceneManifest) -> None:
        (scene_dir / "scene.json").write_bytes(orjson.dumps(manifest.model_dump(mode="json"), option=orjson.OPT_INDENT_2))

    @staticmethod
    def read_manifest(scene_dir: Path) -> SceneManifest:
        path = scene_dir / "scene.json"
        if not path.exists():
            raise DatasetError(f"{scene_dir} has no scene.json")
        return SceneManifest(**orjson.loads(path.read_bytes()))


def prediction_paths(prediction_dir: Path, split: str, scene_name: str, variant: str) -> Tuple[Path, Path]:
    base = Path(prediction_dir) / split / scene_name
    return base / f"pred_{variant.lower()}.bin", base / f"pred_{variant.lower()}.pgm"


def ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def find_predictions(prediction_dir: Path, split: str) -> Optional[List[str]]:
    """Variants with predictions stored for a split, sorted."""
    split_dir = Path(prediction_dir) / split
    if not split_dir.is_dir():
        return None
    names = {p.stem[len("pred_") :] for p in split_dir.glob("scene_*/pred_*.bin")}
    return sorted(names)
