"""MNIST ingestion from IDX files.

Nothing here downloads. ``verify_digests`` checks user-supplied files against
a digest list, and ``digits_proxy`` builds a small stand-in dataset from the
8x8 digits bundled with scikit-learn for offline smoke runs.
"""

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, InputError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
MNIST_MEAN = 0.1307
MNIST_STD = 0.3081

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "val_images": "t10k-images-idx3-ubyte",
    "val_labels": "t10k-labels-idx1-ubyte",
}


def parse_idx(buf):
    """Decode an unsigned-byte IDX container (images or labels) into a uint8 array."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise FormatError("IDX payload shorter than its magic number")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise FormatError(f"bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise FormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    count = int(np.prod(dims))
    if len(buf) - head != count:
        raise FormatError(f"IDX payload has {len(buf) - head} bytes, header promises {count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=head).reshape(dims).copy()


def write_idx(arr):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise InputError("IDX writer only handles uint8 data")
    magic = IMAGES_MAGIC if arr.ndim == 3 else LABELS_MAGIC if arr.ndim == 1 else None
    if magic is None:
        raise InputError(f"expected 1-D labels or 3-D images, got {arr.ndim}-D")
    return struct.pack(f">I{arr.ndim}I", magic, *arr.shape) + np.ascontiguousarray(arr).tobytes()


def read_idx_file(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            return parse_idx(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def normalize(raw, mean=MNIST_MEAN, std=MNIST_STD):
    """uint8 pixels -> (x/255 - mean)/std as float64 (N, 1, H, W)."""
    x = np.asarray(raw, dtype=np.float64) / 255.0
    x = (x - mean) / std
    return x[:, None] if x.ndim == 3 else x


def denormalize(x, mean=MNIST_MEAN, std=MNIST_STD):
    return (np.asarray(x) * std + mean) * 255.0


@dataclass
class Dataset:
    images: np.ndarray  # (N, 1, 28, 28) float64
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)


def from_raw(images, labels, mean=MNIST_MEAN, std=MNIST_STD):
    labels = np.asarray(labels).astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataError("labels outside 0..9")
    return Dataset(normalize(images, mean, std), labels)


def _find(directory, stem):
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    raise DataError(f"missing MNIST file {stem}[.gz] in {directory}")


def mnist_paths(directory):
    return {k: _find(directory, v) for k, v in MNIST_FILES.items()}


def load_mnist(directory, mean=MNIST_MEAN, std=MNIST_STD):
    """(train, val) datasets from the four standard IDX files in ``directory``."""
    if not directory or not os.path.isdir(directory):
        raise DataError(f"MNIST directory not found: {directory!r}")
    p = mnist_paths(directory)
    train = from_raw(read_idx_file(p["train_images"]), read_idx_file(p["train_labels"]), mean, std)
    val = from_raw(read_idx_file(p["val_images"]), read_idx_file(p["val_labels"]), mean, std)
    return train, val


def subset(dataset, n, seed):
    """Stratified sample of ``n`` items keeping class shares within one item; original order kept."""
    total = len(dataset)
    if n > total:
        raise InputError(f"requested {n} items from a dataset of {total}")
    if n == total:
        return dataset
    classes, counts = np.unique(dataset.labels, return_counts=True)
    exact = n * counts / total
    quota = np.floor(exact).astype(int)
    # largest remainders take the leftover slots, lower class index first on ties
    order = sorted(range(len(classes)), key=lambda i: (-(exact[i] - quota[i]), i))
    for i in order[: n - quota.sum()]:
        quota[i] += 1
    rng = np.random.default_rng(seed)
    keep = []
    for cls, k in zip(classes, quota):
        idx = np.flatnonzero(dataset.labels == cls)
        keep.append(rng.choice(idx, size=k, replace=False))
    keep = np.sort(np.concatenate(keep)) if keep else np.array([], dtype=int)
    return Dataset(dataset.images[keep], dataset.labels[keep])


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_digest_list(path):
    """Lines of ``filename hexdigest`` (whitespace or comma separated); '#' comments allowed."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'filename digest'")
            entries.append((parts[0], parts[1].lower()))
    return entries


def verify_digests(digest_file, directory=None):
    """Returns ``[(filename, ok, reason)]``; paths resolve against ``directory`` or the list's folder."""
    base = directory or os.path.dirname(os.path.abspath(digest_file))
    results = []
    for name, expected in read_digest_list(digest_file):
        path = name if os.path.isabs(name) else os.path.join(base, name)
        if not os.path.exists(path):
            results.append((name, False, "missing"))
            continue
        actual = sha256_file(path)
        results.append((name, actual == expected, "ok" if actual == expected else f"digest {actual}"))
    return results


def digits_proxy(n_val=360, shifts=2, seed=0):
    """MNIST-shaped stand-in built from scikit-learn's 8x8 digits.

    Each digit is upsampled to 20x20 and centred on a 28x28 canvas as uint8.
    Training images are augmented with +/-``shifts`` pixel translations, so
    the training set is five times the raw split. Returns raw
    ``(train_images, train_labels, val_images, val_labels)``.
    """
    from scipy import ndimage
    from sklearn.datasets import load_digits

    d = load_digits()
    imgs = np.stack([ndimage.zoom(im / 16.0, 2.5, order=1) for im in d.images])
    imgs = np.clip(imgs, 0.0, 1.0)
    canvas = np.zeros((len(imgs), 28, 28))
    canvas[:, 4:24, 4:24] = imgs
    raw = np.round(canvas * 255).astype(np.uint8)
    labels = d.target.astype(np.uint8)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(raw))
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    tr, tl = raw[train_idx], labels[train_idx]
    if shifts:
        moved = [tr]
        for dy, dx in ((shifts, 0), (-shifts, 0), (0, shifts), (0, -shifts)):
            moved.append(np.roll(tr, (dy, dx), axis=(1, 2)))
        tr = np.concatenate(moved)
        tl = np.tile(tl, 5)
    return tr, tl, raw[val_idx], labels[val_idx]


def write_proxy_files(directory, **kwargs):
    """Write the digits proxy as the four MNIST-named IDX files; returns their paths."""
    os.makedirs(directory, exist_ok=True)
    arrays = dict(zip(("train_images", "train_labels", "val_images", "val_labels"), digits_proxy(**kwargs)))
    paths = {}
    for key, arr in arrays.items():
        path = os.path.join(directory, MNIST_FILES[key])
        with open(path, "wb") as fh:
            fh.write(write_idx(arr))
        paths[key] = path
    return paths
