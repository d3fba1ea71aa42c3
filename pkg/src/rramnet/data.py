"""Dataset acquisition, parsing and preprocessing.

On-disk layout under the data root (``$RRAMNET_DATA_DIR``, default
``~/.cache/rramnet``)::

    mnist/train-images-idx3-ubyte     IDX, magic 2051, uncompressed
    mnist/train-labels-idx1-ubyte     IDX, magic 2049
    mnist/t10k-images-idx3-ubyte
    mnist/t10k-labels-idx1-ubyte
    cifar10/data_batch_{1..5}.bin     3073-byte records
    cifar10/test_batch.bin

Every file is pinned by the SHA-256 of its uncompressed content, so the same
checksums hold whichever source delivered it.
"""

from __future__ import annotations

import gzip
import hashlib
import io
import logging
import os
import struct
import tarfile
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 32 * 32 * 3
CIFAR_PER_BATCH = 10000
NUM_CLASSES = 10


class DataFormatError(ValueError):
    """A dataset file is malformed (bad magic, short read, inconsistent counts)."""


class ChecksumError(DataFormatError):
    def __init__(self, path, expected, actual):
        super().__init__(f"checksum mismatch for {path}: expected {expected}, got {actual}")
        self.path = Path(path)


class FetchError(OSError):
    """All download sources failed; retrying later may succeed."""


@dataclass(frozen=True)
class Dataset:
    """Flattened images in [0, 1] with integer labels.

    ``dims`` is (height, width, channels). Colour images are stored
    channel-planar (all red pixels, then green, then blue), the layout of
    the CIFAR-10 binary format.
    """

    images: np.ndarray
    labels: np.ndarray
    dims: tuple[int, int, int]

    def __post_init__(self):
        h, w, c = self.dims
        if self.images.ndim != 2 or self.images.shape[1] != h * w * c:
            raise DataFormatError(
                f"images shape {self.images.shape} does not match dims {self.dims}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataFormatError("one label per image required")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DataFormatError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise DataFormatError("labels out of range")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.dims)

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))


# ---------------------------------------------------------------- parsers

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataFormatError(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def parse_idx(raw: bytes, expected_magic: int, name: str = "<idx>") -> np.ndarray:
    """Parse an IDX (unsigned byte) payload into an array of its declared shape."""
    if len(raw) < 8:
        raise DataFormatError(f"{name}: short read, header truncated")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{name}: bad magic {magic}, expected {expected_magic}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{name}: short read, header truncated")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape, dtype=np.int64))
    if len(raw) - header < count:
        raise DataFormatError(
            f"{name}: short read, expected {count} payload bytes, got {len(raw) - header}")
    if len(raw) - header > count:
        raise DataFormatError(f"{name}: {len(raw) - header - count} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, str(images_path))
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, str(labels_path))
    if images.ndim != 3:
        raise DataFormatError(f"{images_path}: expected 3 image dims, got {images.ndim}")
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: expected 1 label dim, got {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataFormatError(f"{labels_path}: label {labels.max()} out of range")
    n, h, w = images.shape
    flat = images.reshape(n, h * w).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64), (h, w, 1))


def load_cifar10_bin(paths) -> Dataset:
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    chunks = []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD))
    records = np.concatenate(chunks)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= NUM_CLASSES:
        raise DataFormatError(f"label byte {labels.max()} out of range")
    images = records[:, 1:].astype(np.float64) / 255.0
    return Dataset(images, labels, (32, 32, 3))


# ----------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class AugmentSpec:
    crop: int = 28
    flip_prob: float = 0.5
    brightness: float = 0.25
    contrast: float = 0.5
    random_crop: bool = True
    seed: int = 0


def _as_hwc(ds: Dataset) -> np.ndarray:
    h, w, c = ds.dims
    return ds.images.reshape(-1, c, h, w).transpose(0, 2, 3, 1)


def _from_hwc(arr: np.ndarray):
    n, h, w, c = arr.shape
    return arr.transpose(0, 3, 1, 2).reshape(n, c * h * w), (h, w, c)


def augment(ds: Dataset, spec: AugmentSpec) -> Dataset:
    """Random crop, horizontal flip, brightness and contrast jitter.

    Brightness adds a uniform shift in [-brightness, brightness]; contrast
    scales each image about its own mean by a factor in
    [1 - contrast, 1 + contrast]. Results are clipped to [0, 1].
    """
    h, w, c = ds.dims
    if (h, w, c) != (32, 32, 3):
        raise DataFormatError(f"augment expects 32x32x3 sources, got {ds.dims}")
    size = spec.crop
    margin = h - size
    rng = np.random.default_rng(spec.seed)
    n = len(ds)
    src = _as_hwc(ds)
    if spec.random_crop:
        oy = rng.integers(0, margin + 1, n)
        ox = rng.integers(0, margin + 1, n)
    else:
        oy = ox = np.full(n, margin // 2)
    flip = rng.random(n) < spec.flip_prob
    shift = rng.uniform(-spec.brightness, spec.brightness, n)
    scale = rng.uniform(1 - spec.contrast, 1 + spec.contrast, n)

    out = np.empty((n, size, size, c))
    for i in range(n):
        img = src[i, oy[i]:oy[i] + size, ox[i]:ox[i] + size]
        if flip[i]:
            img = img[:, ::-1]
        mean = img.mean()
        out[i] = (img - mean) * scale[i] + mean + shift[i]
    np.clip(out, 0.0, 1.0, out=out)
    images, dims = _from_hwc(out)
    return Dataset(images, ds.labels.copy(), dims)


def center_crop(ds: Dataset, size: int = 28) -> Dataset:
    """Deterministic central crop, used for evaluation."""
    h, w, c = ds.dims
    oy, ox = (h - size) // 2, (w - size) // 2
    images, dims = _from_hwc(_as_hwc(ds)[:, oy:oy + size, ox:ox + size])
    return Dataset(np.ascontiguousarray(images), ds.labels.copy(), dims)


SYNTH_SIGMA = {"A": 1.0, "B": 0.15}


def synth_distribution(kind: str, count: int, seed: int = 0, dim: int | None = None,
                       sigma: float | None = None) -> np.ndarray:
    """Clipped normal samples centred at 0.5.

    Kind ``A`` is wide (sigma 1.0), so clipping piles roughly 31% of the mass
    on each of 0 and 1. Kind ``B`` is narrow (sigma 0.15) and stays mid-range.
    """
    kind = kind.upper()
    if kind not in SYNTH_SIGMA:
        raise ValueError(f"unknown distribution {kind!r}, expected A or B")
    if count <= 0:
        raise ValueError("count must be positive")
    sigma = SYNTH_SIGMA[kind] if sigma is None else sigma
    rng = np.random.default_rng(seed)
    shape = (count,) if dim is None else (count, dim)
    return np.clip(rng.normal(0.5, sigma, shape), 0.0, 1.0)


# ------------------------------------------------------------------ fetch

MNIST_FILES = {
    "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
}
CIFAR_FILES = {
    "data_batch_1.bin": "cee916563c9f80d84e3cc88e17fdc0941787f1244f00a67874d45b261883ada5",
    "data_batch_2.bin": "a591ca11fa1708a91ee40f54b3da4784ccd871ecf2137de63f51ada8b3fa57ed",
    "data_batch_3.bin": "bbe8596564c0f86427f876058170b84dac6670ddf06d79402899d93ceea26f67",
    "data_batch_4.bin": "014e562d6e23c72197cc727519169a60359f5eccd8945ad5a09d710285ff4e48",
    "data_batch_5.bin": "755304fc0b379caeae8c14f0dac912fbc7d6cd469eb67a1029a08a39453a9add",
    "test_batch.bin": "8e2eb146ae340b09e24670f29cabc6326dba54da8789dab6768acf480273f65b",
}

CHECKSUMS = {"mnist": MNIST_FILES, "cifar10": CIFAR_FILES}

MNIST_URLS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/{name}.gz",
    "https://storage.googleapis.com/cvdf-datasets/mnist/{name}.gz",
]
CIFAR_URLS = ["https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"]
NPM_MNIST = "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz"
NPM_CIFAR = "https://registry.npmjs.org/tfjs-cifar10/-/tfjs-cifar10-1.1.1.tgz"


def data_root() -> Path:
    return Path(os.environ.get("RRAMNET_DATA_DIR", Path.home() / ".cache" / "rramnet"))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _verify(path: Path, expected: str | None):
    if expected is None:
        return
    actual = sha256(path)
    if actual != expected:
        raise ChecksumError(path, expected, actual)


def _download(url: str, timeout: float = 60.0) -> bytes:
    log.info("downloading %s", url)
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        return resp.read()


def _write_atomic(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=path.parent, delete=False) as tmp:
        tmp.write(data)
    os.replace(tmp.name, path)


def _mnist_official(target: Path, names):
    for name in names:
        last = None
        for pattern in MNIST_URLS:
            try:
                _write_atomic(target / name, gzip.decompress(_download(pattern.format(name=name))))
                break
            except (urllib.error.URLError, OSError) as exc:
                last = exc
        else:
            raise FetchError(f"could not download {name}: {last}")


def _mnist_npm(target: Path, names):
    blob = _download(NPM_MNIST, timeout=300)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for name in names:
            member = tar.extractfile(f"package/data/{name}")
            _write_atomic(target / name, member.read())


def _cifar_official(target: Path, names):
    blob = _download(CIFAR_URLS[0], timeout=600)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for name in names:
            _write_atomic(target / name, tar.extractfile(f"cifar-10-batches-bin/{name}").read())


def _cifar_npm(target: Path, names):
    """Rebuild the binary batches from the npm ``tfjs-cifar10`` package.

    That package stores each batch as a 1024x10000 RGB PNG (one image per
    row, pixels in raster order) plus JSON label lists.
    """
    import json

    from PIL import Image

    blob = _download(NPM_CIFAR, timeout=900)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        train_labels = json.load(tar.extractfile("package/train_lables.json"))
        test_labels = json.load(tar.extractfile("package/test_lables.json"))
        for name in names:
            stem = name[:-4]
            png = Image.open(io.BytesIO(tar.extractfile(f"package/{stem}.png").read()))
            pixels = np.asarray(png.convert("RGB"), dtype=np.uint8)
            if stem == "test_batch":
                labels = test_labels
            else:
                i = int(stem.rsplit("_", 1)[1]) - 1
                labels = train_labels[i * CIFAR_PER_BATCH:(i + 1) * CIFAR_PER_BATCH]
            planar = pixels.reshape(CIFAR_PER_BATCH, 1024, 3).transpose(0, 2, 1)
            records = np.concatenate(
                [np.asarray(labels, dtype=np.uint8)[:, None], planar.reshape(CIFAR_PER_BATCH, -1)],
                axis=1)
            _write_atomic(target / name, records.tobytes())


_SOURCES = {
    "mnist": {"official": _mnist_official, "npm": _mnist_npm},
    "cifar10": {"official": _cifar_official, "npm": _cifar_npm},
}


def fetch(name: str, target_dir=None, checksums: dict | None = None,
          sources=("official", "npm")) -> dict[str, Path]:
    """Make sure the files of dataset ``name`` exist and verify.

    Files already present are checksummed and kept; a corrupt file raises
    ``ChecksumError`` rather than being silently replaced. Missing files are
    downloaded from each source in turn until one succeeds.
    """
    if name not in _SOURCES:
        raise ValueError(f"unknown dataset {name!r}")
    target = Path(target_dir) if target_dir is not None else data_root() / name
    checksums = CHECKSUMS[name] if checksums is None else checksums
    paths = {fname: target / fname for fname in checksums}
    missing = [f for f, p in paths.items() if not p.exists()]
    for fname, path in paths.items():
        if fname not in missing:
            _verify(path, checksums[fname])
    if missing:
        errors = []
        for source in sources:
            try:
                _SOURCES[name][source](target, missing)
                break
            except (urllib.error.URLError, OSError, tarfile.TarError, KeyError) as exc:
                log.warning("source %s failed for %s: %s", source, name, exc)
                errors.append(f"{source}: {exc}")
        else:
            raise FetchError(f"all sources failed for {name}: " + "; ".join(errors))
        for fname in missing:
            _verify(paths[fname], checksums[fname])
    return paths


def load_mnist(split: str = "train", data_dir=None) -> Dataset:
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    prefix = "train" if split == "train" else "t10k"
    paths = fetch("mnist", data_dir)
    return load_mnist_idx(paths[f"{prefix}-images-idx3-ubyte"], paths[f"{prefix}-labels-idx1-ubyte"])


def load_cifar10(split: str = "train", data_dir=None) -> Dataset:
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    paths = fetch("cifar10", data_dir)
    if split == "train":
        return load_cifar10_bin([paths[f"data_batch_{i}.bin"] for i in range(1, 6)])
    return load_cifar10_bin([paths["test_batch.bin"]])
