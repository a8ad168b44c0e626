#!/usr/bin/env python3
"""Convert published pretrained checkpoints into the crate's weight archives.

Reads a safetensors checkpoint with torchvision-style key names, selects the
subset listed in docs/weights-manifest-<backbone>.txt, and writes
weights/<backbone>.safetensors plus its .sha256 sidecar. The default sources
are the timm re-hosts of the original torchvision ImageNet checkpoints:

    densenet121: https://huggingface.co/timm/densenet121.tv_in1k
    vgg19:       https://huggingface.co/timm/vgg19.tv_in1k

Usage:
    python3 tools/convert_weights.py --backbone densenet121 [--source FILE_OR_URL] [--out DIR]

No third-party packages are required; the safetensors container is parsed
and written directly.
"""

import argparse
import hashlib
import json
import pathlib
import struct
import sys
import urllib.request

DEFAULT_SOURCES = {
    "densenet121": "https://huggingface.co/timm/densenet121.tv_in1k/resolve/main/model.safetensors",
    "vgg19": "https://huggingface.co/timm/vgg19.tv_in1k/resolve/main/model.safetensors",
}

DTYPE_SIZES = {"F32": 4, "F64": 8, "F16": 2, "I64": 8}


def read_safetensors(path):
    blob = pathlib.Path(path).read_bytes()
    (hlen,) = struct.unpack("<Q", blob[:8])
    header = json.loads(blob[8 : 8 + hlen])
    payload = blob[8 + hlen :]
    tensors = {}
    for name, meta in header.items():
        if name == "__metadata__":
            continue
        s, e = meta["data_offsets"]
        tensors[name] = (meta["dtype"], meta["shape"], payload[s:e])
    return tensors


def write_safetensors(path, tensors):
    """tensors: ordered dict name -> (shape, f32 little-endian bytes)."""
    header = {}
    offset = 0
    for name, (shape, data) in tensors.items():
        header[name] = {
            "dtype": "F32",
            "shape": shape,
            "data_offsets": [offset, offset + len(data)],
        }
        offset += len(data)
    hjson = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hjson)))
        f.write(hjson)
        for _, (_, data) in tensors.items():
            f.write(data)


def read_manifest(path):
    entries = []
    for line in pathlib.Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, dims = line.split()
        entries.append((key, [int(d) for d in dims.split("x")]))
    return entries


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--backbone", required=True, choices=sorted(DEFAULT_SOURCES))
    ap.add_argument("--source", help="checkpoint file or URL (default: published checkpoint)")
    ap.add_argument("--out", default="weights", help="output directory (default: weights/)")
    ap.add_argument(
        "--manifest-dir", default="docs", help="directory holding weights-manifest-*.txt"
    )
    args = ap.parse_args()

    source = args.source or DEFAULT_SOURCES[args.backbone]
    if source.startswith(("http://", "https://")):
        cache = pathlib.Path(args.out) / f"{args.backbone}-source.safetensors"
        cache.parent.mkdir(parents=True, exist_ok=True)
        if not cache.exists():
            print(f"downloading {source}")
            urllib.request.urlretrieve(source, cache)
        source = cache

    manifest = read_manifest(
        pathlib.Path(args.manifest_dir) / f"weights-manifest-{args.backbone}.txt"
    )
    src = read_safetensors(source)

    out_tensors = {}
    for key, shape in manifest:
        if key not in src:
            sys.exit(f"error: checkpoint is missing required tensor {key!r}")
        dtype, found_shape, data = src[key]
        if dtype != "F32":
            sys.exit(f"error: tensor {key!r} has dtype {dtype}, expected F32")
        if found_shape != shape:
            sys.exit(f"error: tensor {key!r} has shape {found_shape}, expected {shape}")
        out_tensors[key] = (shape, data)

    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{args.backbone}.safetensors"
    # The Rust loader sorts keys (BTreeMap); match it so hashes are stable.
    out_tensors = dict(sorted(out_tensors.items()))
    write_safetensors(out_path, out_tensors)
    digest = hashlib.sha256(out_path.read_bytes()).hexdigest()
    (out_dir / f"{args.backbone}.safetensors.sha256").write_text(digest + "\n")
    total = sum(len(d) for _, d in out_tensors.values()) // 4
    print(f"wrote {out_path} ({len(out_tensors)} tensors, {total} parameters)")
    print(f"sha256 {digest}")


if __name__ == "__main__":
    main()
