#!/usr/bin/env python3
"""Convert torchvision ResNet34 weights into a woodid backbone archive.

    python3 tools/convert_torchvision.py --out resnet34-imagenet.warc
    python3 tools/convert_torchvision.py --state-dict resnet34.pth --out resnet34-imagenet.warc

Without --state-dict the ImageNet weights are fetched through torchvision's
own cache, which needs network access the first time.
"""

import argparse
import json
import struct
import sys
import zlib

import numpy as np
import torch
import torchvision

MAGIC = b"WOODARC\0"
CONTAINER_VERSION = 1


def load_state_dict(path):
    if path:
        state = torch.load(path, map_location="cpu")
        return state.get("state_dict", state)
    weights = torchvision.models.ResNet34_Weights.IMAGENET1K_V1
    return torchvision.models.resnet34(weights=weights).state_dict()


def write_archive(path, tensors, meta):
    index, payload, offset = [], [], 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4")
        raw = data.tobytes()
        index.append({"name": name, "dtype": "f32", "shape": list(data.shape),
                      "offset": offset, "size": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": index, "blobs": []},
                        separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", CONTAINER_VERSION, len(header)) + header + b"".join(payload)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="torch state_dict file for torchvision resnet34")
    args = ap.parse_args()

    state = load_state_dict(args.state_dict)
    # The classification layer is replaced by the woodid head; batch counters are unused.
    tensors = {k: v.detach().cpu().numpy() for k, v in state.items()
               if not k.startswith("fc.") and not k.endswith("num_batches_tracked")}
    if len(tensors) == 0 or "conv1.weight" not in tensors:
        sys.exit("state dict does not look like a torchvision resnet34")
    meta = {"kind": "backbone_weights", "backbone": "resnet34-imagenet", "pretrained": True,
            "source": args.state_dict or "torchvision IMAGENET1K_V1"}
    write_archive(args.out, tensors, meta)
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
