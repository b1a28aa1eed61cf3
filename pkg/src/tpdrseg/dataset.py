"""Directory dataset IO: ``images/<id>.ppm`` and ``masks/<CLASS>/<id>.pgm``."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CLASSES
from .errors import FormatError
from .synth import SegmentationSample

_WS = b" \t\r\n"


def _header(blob, magic):
    """Parse a netpbm header; returns (width, height, maxval, data offset)."""
    if blob[:2] != magic:
        raise FormatError(f"expected magic {magic.decode()}, got {blob[:2]!r}", offset=0)
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1] in (b" ", b"\t", b"\r", b"\n", b"#"):
            if blob[pos : pos + 1] == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            pos += 1
        start = pos
        while pos < len(blob) and blob[pos : pos + 1] not in (b" ", b"\t", b"\r", b"\n"):
            pos += 1
        token = blob[start:pos]
        if not token.isdigit():
            raise FormatError(f"expected a decimal header field, got {token[:16]!r}", offset=start)
        fields.append(int(token))
    if pos >= len(blob) or blob[pos] not in _WS:
        raise FormatError("missing whitespace after header", offset=pos)
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"only 8-bit files are supported, maxval={maxval}", offset=pos)
    return width, height, maxval, pos + 1


def encode_ppm(image):
    arr = np.round(np.clip(np.asarray(image, np.float64), 0, 1) * 255).astype(np.uint8)
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode() + arr.tobytes()


def decode_ppm(blob):
    w, h, _, off = _header(blob, b"P6")
    need = w * h * 3
    if len(blob) - off < need:
        raise FormatError(f"pixel data truncated: need {need} bytes", offset=len(blob))
    arr = np.frombuffer(blob, np.uint8, need, off).reshape(h, w, 3)
    return (arr.astype(np.float32) / np.float32(255)).astype(np.float32)


def encode_pgm(values):
    """8-bit grayscale from a map in [0, 1]."""
    arr = np.round(np.clip(np.asarray(values, np.float64), 0, 1) * 255).astype(np.uint8)
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode() + arr.tobytes()


def decode_pgm(blob):
    w, h, _, off = _header(blob, b"P5")
    need = w * h
    if len(blob) - off < need:
        raise FormatError(f"pixel data truncated: need {need} bytes", offset=len(blob))
    return np.frombuffer(blob, np.uint8, need, off).reshape(h, w).copy()


def write_ppm(path, image):
    Path(path).write_bytes(encode_ppm(image))


def read_ppm(path):
    try:
        return decode_ppm(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_pgm(path, values):
    Path(path).write_bytes(encode_pgm(values))


def read_pgm(path):
    try:
        return decode_pgm(Path(path).read_bytes())
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


@dataclass
class Dataset:
    samples: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def write_dataset(directory, samples, manifest=None):
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for cls in CLASSES:
        (root / "masks" / cls).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_ppm(root / "images" / f"{s.sample_id}.ppm", s.image)
        for cls in CLASSES:
            write_pgm(root / "masks" / cls / f"{s.sample_id}.pgm", s.masks[cls])
    lines = [f"{k} = {v}" for k, v in (manifest or {}).items()]
    lines.append("ids = " + " ".join(s.sample_id for s in samples))
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_dataset(directory):
    root = Path(directory)
    images = sorted((root / "images").glob("*.ppm")) if (root / "images").is_dir() else []
    out = Dataset()
    missing = [c for c in CLASSES if not (root / "masks" / c).is_dir()]
    for cls in missing if images else []:
        out.warnings.append(f"missing mask folder for {cls}; treating as empty")
    for path in images:
        image = read_ppm(path)
        masks = {}
        for cls in CLASSES:
            mpath = root / "masks" / cls / f"{path.stem}.pgm"
            if cls in missing or not mpath.exists():
                if cls not in missing:
                    out.warnings.append(f"missing mask {cls}/{path.stem}.pgm; treating as empty")
                masks[cls] = np.zeros(image.shape[:2], np.uint8)
                continue
            raw = read_pgm(mpath)
            if raw.shape != image.shape[:2]:
                raise FormatError(f"{mpath}: mask size {raw.shape} differs from image {image.shape[:2]}")
            if not np.isin(raw, (0, 255)).all():
                raise FormatError(f"{mpath}: mask values must be 0 or 255")
            masks[cls] = (raw // 255).astype(np.uint8)
        out.samples.append(SegmentationSample(image, masks, path.stem))
    return out


def read_manifest(directory):
    path = Path(directory) / "manifest.txt"
    if not path.exists():
        return {}
    out = {}
    for line in path.read_text().splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = value.strip()
    return out
