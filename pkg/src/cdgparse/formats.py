"""External file surfaces: netpbm images, distribution files, the binary
checkpoint container, the INI-style training config, and CSV reports.

Every reader/writer pair round-trips bit-exactly: labels are raw 8-bit PGM,
checkpoints store little-endian float32 payloads behind a CRC, and decimal
output uses the shortest digit string that reparses to the same float32.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import struct
import zlib
from typing import Iterable

import numpy as np

from .labels import ClassDistribution, LabelMap
from .losses import LossWeights
from .metrics import MetricsReport
from .pipeline import TrainConfig


class ParseError(ValueError):
    """Malformed input file; the message carries a byte offset or line."""


class ConfigError(ValueError):
    """Unknown, duplicate, or unparseable configuration entry."""


def format_float(x: float) -> str:
    """Shortest decimal string that reparses to the same float32."""
    return np.format_float_positional(np.float32(x), unique=True, trim="0")


# ----------------------------------------------------------------------
# netpbm codecs (PGM P5 for labels/heatmaps, PPM P6 for images)
# ----------------------------------------------------------------------


def _read_pnm_header(data: bytes, magic: bytes, path: str) -> tuple[int, int, int]:
    """Parse '<magic> W H MAXVAL' allowing whitespace and # comments.
    Returns (width, height, payload offset)."""
    if not data.startswith(magic):
        raise ParseError(f"{path}: expected {magic.decode()} magic at byte 0")
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ParseError(f"{path}: bad header token {token!r} at byte {start}")
        fields.append(int(token))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError(f"{path}: missing whitespace after maxval at byte {pos}")
    pos += 1  # exactly one whitespace byte separates header and payload
    width, height, maxval = fields
    if maxval != 255:
        raise ParseError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ParseError(f"{path}: non-positive dimensions {width}x{height}")
    return width, height, pos


def _read_pnm(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    width, height, pos = _read_pnm_header(data, magic, path)
    need = width * height * channels
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ParseError(f"{path}: payload truncated at byte {pos + len(payload)} (need {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    shape = (height, width) if channels == 1 else (height, width, channels)
    return arr.reshape(shape).copy()


def read_label(path: str, num_classes: int | None = None) -> LabelMap:
    """Binary 8-bit PGM where the pixel value is the class id."""
    pixels = _read_pnm(path, b"P5", 1).astype(np.int64)
    if num_classes is None:
        num_classes = int(pixels.max()) + 1
    return LabelMap(pixels, num_classes)


def write_label(path: str, label: LabelMap) -> None:
    if label.num_classes > 256:
        raise ValueError(f"PGM labels support at most 256 classes, got {label.num_classes}")
    h, w = label.pixels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(label.pixels.astype(np.uint8).tobytes())


def read_image(path: str) -> np.ndarray:
    """Binary 8-bit PPM as float32 RGB in [0, 1]."""
    return _read_pnm(path, b"P6", 3).astype(np.float32) / 255.0


def write_image(path: str, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {image.shape}")
    quantized = np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(quantized.tobytes())


def write_heatmap(path: str, values: ClassDistribution | np.ndarray) -> None:
    """Grayscale PGM of values in [0, 1]; pixel = round-half-up(255 * v).
    A ClassDistribution renders as an L x N strip (rows are positions)."""
    if isinstance(values, ClassDistribution):
        if not values.normalized:
            raise ValueError("heatmap rendering needs a normalized distribution")
        arr = values.values
    else:
        arr = np.asarray(values)
        if arr.ndim != 2:
            raise ValueError(f"heatmap input must be 2D, got rank {arr.ndim}")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("heatmap values must lie in [0, 1]")
    pix = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pix.tobytes())


# ----------------------------------------------------------------------
# distribution files
# ----------------------------------------------------------------------


def write_distribution(path: str, dist: ClassDistribution) -> None:
    """Text format: 'axis,<horizontal|vertical>,L,<int>,N,<int>' then L lines
    of N comma-separated float32 values."""
    length, n = dist.values.shape
    lines = [f"axis,{dist.axis},L,{length},N,{n}"]
    for row in dist.values:
        lines.append(",".join(format_float(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_distribution(path: str, normalized: bool | None = None) -> ClassDistribution:
    """Inverse of write_distribution. When ``normalized`` is None it is
    inferred: files whose values all lie in [0, 1] are treated as normalized."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines:
        raise ParseError(f"{path}: empty distribution file")
    head = lines[0].split(",")
    if len(head) != 6 or head[0] != "axis" or head[2] != "L" or head[4] != "N":
        raise ParseError(f"{path}: bad header {lines[0]!r} (line 1)")
    axis = head[1]
    try:
        length, n = int(head[3]), int(head[5])
    except ValueError as err:
        raise ParseError(f"{path}: bad header sizes (line 1): {err}") from None
    if len(lines) - 1 != length:
        raise ParseError(f"{path}: expected {length} value lines, found {len(lines) - 1}")
    values = np.empty((length, n), dtype=np.float32)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != n:
            raise ParseError(f"{path}: expected {n} values on line {i + 2}, found {len(parts)}")
        try:
            values[i] = [np.float32(p) for p in parts]
        except ValueError as err:
            raise ParseError(f"{path}: bad value on line {i + 2}: {err}") from None
    if normalized is None:
        normalized = bool(values.size == 0 or (values.min() >= 0.0 and values.max() <= 1.0))
    return ClassDistribution(axis, values, normalized)


# ----------------------------------------------------------------------
# checkpoint container
# ----------------------------------------------------------------------

_MAGIC = b"CDGC"
_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Layout: magic 'CDGC', u32le version, u32le tensor count, then per
    tensor u32le name length + UTF-8 name, u32le rank, u32le dims, raw
    float32le payload; finally a CRC-32 of everything before it."""
    body = bytearray()
    body += _MAGIC
    body += struct.pack("<II", _VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.ndim > 4:
            raise CheckpointError(f"tensor {name!r} has rank {arr.ndim} > 4")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded)) + encoded
        body += struct.pack("<I", arr.ndim)
        body += b"".join(struct.pack("<I", d) for d in arr.shape)
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: CRC mismatch, refusing to load")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos) if rank else ()
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        tensors[name] = arr.astype(np.float32).copy()
    if pos != len(data) - 4:
        raise CheckpointError(f"{path}: trailing bytes after tensor table (byte {pos})")
    return tensors


# ----------------------------------------------------------------------
# training config
# ----------------------------------------------------------------------

_CONFIG_SCHEMA = {
    ("train", "epochs"): int,
    ("train", "batch_size"): int,
    ("train", "base_lr"): float,
    ("train", "momentum"): float,
    ("train", "weight_decay"): float,
    ("train", "poly_power"): float,
    ("train", "flip_prob"): float,
    ("train", "scale_jitter"): "float_pair",
    ("train", "seed"): int,
    ("train", "theta"): float,
    ("train", "phi"): float,
    ("train", "tau"): float,
    ("train", "gamma"): float,
    ("model", "channels"): int,
    ("model", "num_classes"): int,
    ("model", "cdg_enabled"): bool,
    ("model", "edge_head_enabled"): bool,
    ("data", "crop_size"): int,
    ("data", "image_size"): int,
    ("data", "train_samples"): int,
    ("data", "val_samples"): int,
    ("data", "scales"): "float_list",
}

_WEIGHT_KEYS = {"theta", "phi", "tau", "gamma"}


def _parse_value(kind, raw: str, where: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        parts = tuple(float(p) for p in raw.split(","))
        if kind == "float_pair" and len(parts) != 2:
            raise ValueError(f"expected two comma-separated values, got {len(parts)}")
        if not parts:
            raise ValueError("empty list")
        return parts
    except ValueError as err:
        raise ConfigError(f"{where}: {err}") from None


def read_config(path: str) -> TrainConfig:
    """Strict INI parse: unknown or duplicate keys are errors, missing keys
    fall back to the TrainConfig defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as err:
        raise ConfigError(str(err)) from None
    cfg = TrainConfig(weights=LossWeights())
    for section in parser.sections():
        if section not in ("train", "model", "data"):
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            kind = _CONFIG_SCHEMA.get((section, key))
            if kind is None:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            value = _parse_value(kind, raw, f"{path}: [{section}] {key}")
            if key in _WEIGHT_KEYS:
                setattr(cfg.weights, key, value)
            else:
                setattr(cfg, key, value)
    cfg.validate()
    return cfg


def write_config(path: str, cfg: TrainConfig) -> None:
    """Emit every known key explicitly (the inverse of read_config)."""
    lines = []
    for section in ("train", "model", "data"):
        lines.append(f"[{section}]")
        for (sec, key), kind in _CONFIG_SCHEMA.items():
            if sec != section:
                continue
            value = getattr(cfg.weights, key) if key in _WEIGHT_KEYS else getattr(cfg, key)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


# ----------------------------------------------------------------------
# CSV reports
# ----------------------------------------------------------------------


def write_metrics_csv(path: str, report: MetricsReport) -> None:
    """One row per class (its IoU) followed by a summary row of aggregates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "iou", "pixel_acc", "mean_acc", "mean_iou", "fg_acc", "precision", "recall", "f1"])
        for cls, iou in enumerate(report.per_class_iou):
            writer.writerow([f"class_{cls}", "" if np.isnan(iou) else format_float(iou), "", "", "", "", "", "", ""])
        writer.writerow(
            [
                "summary",
                "",
                format_float(report.pixel_acc),
                format_float(report.mean_acc),
                format_float(report.mean_iou),
                format_float(report.fg_acc),
                format_float(report.precision),
                format_float(report.recall),
                format_float(report.f1),
            ]
        )


def write_train_log(path: str, logs: Iterable[dict]) -> None:
    fields = ["epoch", "lr", "loss_total", "loss_parsing", "loss_edge", "loss_cdg", "train_miou"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in logs:
            writer.writerow([row["epoch"]] + [format_float(row[k]) for k in fields[1:]])
