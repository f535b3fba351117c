"""File formats and dataset plumbing.

Images travel as binary PPM (P6, maxval 255) scaled to [0, 1]; label maps as
binary PGM (P5) where the byte is the class id and 255 means ignore. Both
roundtrip losslessly at their stated precision. Checkpoints are a flat list
of named float32 tensors in a fixed little-endian layout, so
save -> load -> save is byte-identical.

Dataset directory layout::

    images/0000.ppm ... images/NNNN.ppm
    labels/0000.pgm ... labels/NNNN.pgm
    meta.txt            # key = value lines; requires class_count
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import ArchConfig, Network, build_baseline, build_improved
from .tensor import Rng
from .validation import (
    CheckpointError,
    DegenerateInputError,
    FormatError,
    PaletteError,
    ShapeError,
)

IGNORE_ID = 255

CHECKPOINT_MAGIC = b"SEGR"
CHECKPOINT_VERSION = 1
_ARCH_TENSOR = "arch_config"
_KIND_CODES = {"baseline": 0, "improved": 1}


@dataclass
class Sample:
    """One image (3,H,W) in [0,1] paired with an integer label map (H,W)."""

    image: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"image must be (3, H, W), got {self.image.shape}")
        if self.labels.shape != self.image.shape[1:]:
            raise ShapeError(
                f"labels shape {self.labels.shape} does not match image {self.image.shape[1:]}"
            )


@dataclass
class Dataset:
    samples: list = field(default_factory=list)
    class_count: int = 2

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)


# -- netpbm -----------------------------------------------------------


def _read_pnm_tokens(data: bytes, count: int) -> tuple[list, int]:
    """First `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError("truncated header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or not data[i : i + 1].isspace():
        raise FormatError("missing whitespace after header")
    return tokens, i + 1  # single whitespace byte separates header from raster


def _load_pnm(path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _read_pnm_tokens(data, 4)
    if tokens[0] != magic:
        raise FormatError(f"expected magic {magic.decode()}, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as e:
        raise FormatError(f"non-numeric header field: {e}") from e
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}")
    raster = data[offset:]
    expected = width * height * channels
    if len(raster) < expected:
        raise FormatError(f"raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster[:expected], dtype=np.uint8)
    return pixels.reshape(height, width, channels) if channels > 1 else pixels.reshape(height, width)


def load_image_ppm(path) -> np.ndarray:
    """Read a binary PPM into a float64 (3, H, W) tensor scaled by 1/255."""
    raw = _load_pnm(path, b"P6", 3)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_image_ppm(path, image: np.ndarray) -> None:
    """Write a [0,1] image as binary PPM, rounding half up to the byte grid."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"image must be (3, H, W), got {image.shape}")
    h, w = image.shape[1:]
    bytes_ = np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(bytes_.transpose(1, 2, 0).tobytes())


def load_labels_pgm(path) -> np.ndarray:
    """Read a binary PGM into an int64 label map; byte value 255 means ignore."""
    return _load_pnm(path, b"P5", 1).astype(np.int64)


def save_labels_pgm(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"labels must be 2-d, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise ShapeError("label ids must fit in one byte")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(labels.astype(np.uint8).tobytes())


# -- dataset directories ---------------------------------------------


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for i, sample in enumerate(ds):
        save_image_ppm(root / "images" / f"{i:04d}.ppm", sample.image)
        save_labels_pgm(root / "labels" / f"{i:04d}.pgm", sample.labels)
    (root / "meta.txt").write_text(f"class_count = {ds.class_count}\n", encoding="utf-8")


def _parse_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"meta line without '=': {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        meta[key] = value
    return meta


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.txt"
    if not meta_path.exists():
        raise FormatError(f"no meta.txt under {root}")
    meta = _parse_meta(meta_path)
    if "class_count" not in meta:
        raise FormatError("meta.txt missing class_count")
    class_count = int(meta["class_count"])
    image_paths = sorted((root / "images").glob("*.ppm"))
    if not image_paths:
        raise DegenerateInputError(f"no images under {root}")
    samples = []
    for img_path in image_paths:
        label_path = root / "labels" / (img_path.stem + ".pgm")
        if not label_path.exists():
            raise FormatError(f"missing label file {label_path}")
        samples.append(Sample(load_image_ppm(img_path), load_labels_pgm(label_path)))
    return Dataset(samples, class_count)


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition into disjoint, exhaustive train/validation sets."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(ds)
    n_train = int(round(n * train_fraction))
    if n_train < 1 or n_train >= n:
        raise DegenerateInputError(f"fraction {train_fraction} of {n} samples leaves an empty part")
    order = list(range(n))
    Rng(seed).shuffle(order)
    train = [ds.samples[i] for i in order[:n_train]]
    val = [ds.samples[i] for i in order[n_train:]]
    return Dataset(train, ds.class_count), Dataset(val, ds.class_count)


# -- checkpoints ------------------------------------------------------


def _arch_descriptor(net: Network) -> np.ndarray:
    cfg = net.cfg
    c1, c2, c3 = cfg.channels
    return np.array(
        [_KIND_CODES[net.kind], cfg.input_channels, cfg.class_count, c1, c2, c3, cfg.convs_per_stage],
        dtype=np.float64,
    )


def save_checkpoint(net: Network, path) -> None:
    """Serialize parameters and batchnorm statistics as named float32 tensors.

    Layout: magic "SEGR", u32 version, u32 tensor count, then per tensor
    u32 name length, name bytes, u32 ndim, u32 dims, float32 data. All
    integers and floats little-endian.
    """
    tensors = {_ARCH_TENSOR: _arch_descriptor(net)}
    tensors.update(net.state_tensors())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, data in tensors.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(buf)}")
    return buf


def read_checkpoint_tensors(path) -> dict:
    """Raw name -> float64 array mapping from a checkpoint file."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError("bad magic; not a checkpoint file")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(dims)) if ndim else 1
            raw = _read_exact(fh, 4 * size)
            tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
        if fh.read(1):
            raise CheckpointError("trailing bytes after last tensor")
    return tensors


def load_checkpoint(path, cfg: ArchConfig | None = None) -> Network:
    """Rebuild a network from a checkpoint; `cfg` may assert the expected architecture."""
    tensors = read_checkpoint_tensors(path)
    if _ARCH_TENSOR not in tensors:
        raise CheckpointError("checkpoint carries no architecture descriptor")
    desc = tensors.pop(_ARCH_TENSOR)
    if desc.shape != (7,):
        raise CheckpointError(f"malformed architecture descriptor of shape {desc.shape}")
    kind_code, in_ch, classes, c1, c2, c3, convs = (int(v) for v in desc)
    kinds = {v: k for k, v in _KIND_CODES.items()}
    if kind_code not in kinds:
        raise CheckpointError(f"unknown architecture code {kind_code}")
    file_cfg = ArchConfig(
        input_channels=in_ch,
        class_count=classes,
        stage_channels=(c1, c2, c3),
        desk_scale=False,
        convs_per_stage=convs,
    )
    if cfg is not None and (cfg.channels, cfg.class_count, cfg.input_channels, cfg.convs_per_stage) != (
        file_cfg.channels,
        file_cfg.class_count,
        file_cfg.input_channels,
        file_cfg.convs_per_stage,
    ):
        raise CheckpointError("checkpoint architecture does not match the requested config")
    build = build_improved if kinds[kind_code] == "improved" else build_baseline
    net = build(file_cfg, Rng(0))
    state = net.state_tensors()
    if set(state) != set(tensors):
        missing = set(state) ^ set(tensors)
        raise CheckpointError(f"checkpoint tensor names do not match architecture: {sorted(missing)}")
    for name, target in state.items():
        if tensors[name].shape != target.shape:
            raise CheckpointError(
                f"tensor {name} has shape {tensors[name].shape}, expected {target.shape}"
            )
        target[...] = tensors[name]
    return net


# -- label colorization -----------------------------------------------


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def default_palette(class_count: int) -> dict:
    """Gray background plus evenly spaced hues for the foreground classes."""
    palette = {0: (0.45, 0.45, 0.45)}
    for k in range(1, class_count):
        palette[k] = _hsv_to_rgb((k - 1) / max(class_count - 1, 1) * 0.85, 0.65, 0.85)
    return palette


def colorize_labels(labels: np.ndarray, palette: dict) -> np.ndarray:
    """Per-pixel palette lookup as a (3, H, W) image; ignore pixels render black."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    missing = [int(c) for c in present if c != IGNORE_ID and int(c) not in palette]
    if missing:
        raise PaletteError(f"palette missing entries for classes {missing}")
    out = np.zeros((3,) + labels.shape)
    for cid, color in palette.items():
        mask = labels == cid
        for ch in range(3):
            out[ch][mask] = color[ch]
    out[:, labels == IGNORE_ID] = 0.0
    return out
