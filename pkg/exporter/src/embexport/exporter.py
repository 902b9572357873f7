"""Extract CNN embeddings for a class-per-subfolder image tree.

Output is the ALEMB1 binary format consumed by the active-learning engine:
a 16-byte little-endian header (magic "ALEMB1", version 1, reserved 0,
uint32 n_samples, uint32 dim) followed by row-major float32 data, plus an
aligned labels file with one ``<sample_name>,<class_name>`` line per row.

Rows follow the lexicographic traversal order of (class directory, file
name), preprocessing is fixed (resize the short side to 256, center-crop
224, standard ImageNet normalization) and inference runs in eval mode, so
an export is reproducible byte for byte.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

log = logging.getLogger(__name__)

MAGIC = b"ALEMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sBBII")

# seed for the offline stand-in model; fixed so exports are reproducible
_UNTRAINED_SEED = 0

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp", ".tif", ".tiff"}


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportJob:
    images_root: Path
    out_embeddings: Path
    out_labels: Path
    model_name: str = "resnet18"
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ExportError("batch size must be >= 1")


@dataclass(frozen=True)
class ExportSummary:
    n_samples: int
    dim: int
    per_class: dict[str, int] = field(default_factory=dict)
    skipped: tuple[str, ...] = ()


def _resnet18_backbone(pretrained: bool) -> torch.nn.Module:
    if pretrained:
        try:
            model = models.resnet18(weights=models.ResNet18_Weights.IMAGENET1K_V1)
        except Exception as err:  # weight download needs network access
            raise ExportError(
                "cannot load pretrained resnet18 weights (offline?); "
                "use --model resnet18-untrained for a reproducible stand-in"
            ) from err
    else:
        with torch.random.fork_rng():
            torch.manual_seed(_UNTRAINED_SEED)
            model = models.resnet18(weights=None)
    model.fc = torch.nn.Identity()  # features after global average pooling
    model.eval()
    return model


MODEL_REGISTRY = {
    "resnet18": lambda: (_resnet18_backbone(pretrained=True), 512),
    "resnet18-untrained": lambda: (_resnet18_backbone(pretrained=False), 512),
}


def build_model(name: str) -> tuple[torch.nn.Module, int]:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise ExportError(
            f"unknown model {name!r}; expected one of {sorted(MODEL_REGISTRY)}"
        ) from None
    return factory()


_PREPROCESS = transforms.Compose(
    [
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        transforms.Normalize(
            mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
        ),
    ]
)


def scan_images(root: Path) -> list[tuple[str, Path]]:
    """(class_name, image_path) pairs in lexicographic traversal order."""
    if not root.is_dir():
        raise ExportError(f"image root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ExportError(f"image root {root} has no class subfolders")
    pairs: list[tuple[str, Path]] = []
    for class_dir in class_dirs:
        for path in sorted(class_dir.iterdir()):
            if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
                pairs.append((class_dir.name, path))
    if not pairs:
        raise ExportError(f"image root {root} contains no images")
    return pairs


def _load_tensor(path: Path) -> torch.Tensor | None:
    try:
        with Image.open(path) as img:
            return _PREPROCESS(img.convert("RGB"))
    except Exception as err:  # corrupt or unreadable file
        log.warning("skipping %s: %s", path, err)
        return None


def write_alemb(path: Path, vectors: np.ndarray) -> None:
    v = np.ascontiguousarray(vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, 0, v.shape[0], v.shape[1]))
        fh.write(v.tobytes(order="C"))


def export(job: ExportJob) -> ExportSummary:
    """Embed every readable image under the root and write both output files.

    Unreadable images are skipped with a warning and excluded from the
    embedding and label files alike, keeping the two row-aligned.
    """
    model, dim = build_model(job.model_name)
    pairs = scan_images(Path(job.images_root))

    kept: list[tuple[str, Path]] = []
    rows: list[np.ndarray] = []
    skipped: list[str] = []
    batch: list[torch.Tensor] = []

    def flush() -> None:
        if not batch:
            return
        with torch.no_grad():
            out = model(torch.stack(batch))
        rows.append(out.numpy().astype(np.float32))
        batch.clear()

    for class_name, path in pairs:
        tensor = _load_tensor(path)
        if tensor is None:
            skipped.append(str(path))
            continue
        kept.append((class_name, path))
        batch.append(tensor)
        if len(batch) == job.batch_size:
            flush()
    flush()
    if not kept:
        raise ExportError("no readable images found")

    vectors = np.concatenate(rows)
    assert vectors.shape == (len(kept), dim)
    write_alemb(Path(job.out_embeddings), vectors)
    with open(job.out_labels, "w", encoding="utf-8", newline="\n") as fh:
        for class_name, path in kept:
            fh.write(f"{class_name}/{path.name},{class_name}\n")

    per_class: dict[str, int] = {}
    for class_name, _ in kept:
        per_class[class_name] = per_class.get(class_name, 0) + 1
    return ExportSummary(
        n_samples=len(kept), dim=dim, per_class=per_class, skipped=tuple(skipped)
    )
