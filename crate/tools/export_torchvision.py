"""Export a torchvision DenseNet state dict to an MBOXNET1 model file.

    python tools/export_torchvision.py OUT.mbox [--fixture OUT.json]

Without extra flags a tiny randomly initialized network is exported; with
--fixture a random input batch and its eval-mode logits are written too so
the Rust loader can be checked against torchvision.
"""

import argparse
import json
import struct

import torch
from torchvision.models import DenseNet

MAGIC = b"MBOXNET1"
VERSION = 1


def align(n):
    return (n + 7) // 8 * 8


def export(model, config, path):
    entries, blobs, offset = [], [], 0
    for name, t in model.state_dict().items():
        if name.endswith("num_batches_tracked"):
            continue
        data = t.detach().to(torch.float32).contiguous().numpy().tobytes()
        entries.append({
            "name": name,
            "dtype": "f32",
            "shape": list(t.shape),
            "offset": offset,
            "trainable": not name.endswith(("running_mean", "running_var")),
        })
        blobs.append(data + b"\0" * (align(len(data)) - len(data)))
        offset += align(len(data))
    header = json.dumps({"config": config, "tensors": entries}).encode()
    pre = MAGIC + struct.pack("<II", VERSION, len(header)) + header
    with open(path, "wb") as f:
        f.write(pre + b"\0" * (align(len(pre)) - len(pre)))
        for b in blobs:
            f.write(b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--fixture")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    growth, blocks, stem, classes, size = 4, (2, 2), 8, 3, 32
    model = DenseNet(growth_rate=growth, block_config=blocks, num_init_features=stem, bn_size=4, num_classes=classes)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.uniform_(0.5, 1.5)
                m.bias.uniform_(-0.2, 0.2)
                m.running_mean.uniform_(-0.3, 0.3)
                m.running_var.uniform_(0.5, 2.0)
    model.eval()
    config = {
        "growth_rate": growth,
        "compression": 0.5,
        "compression_scope": "all",
        "block_layout": list(blocks),
        "num_classes": classes,
        "stem_channels": stem,
        "stem": "standard",
        "input": {"channels": 3, "height": size, "width": size},
        "bottleneck_width": 4,
    }
    export(model, config, args.out)

    if args.fixture:
        x = torch.rand(2, 3, size, size) * 2 - 1
        with torch.no_grad():
            logits = model(x)
        with open(args.fixture, "w") as f:
            json.dump({
                "input_shape": list(x.shape),
                "input": x.flatten().tolist(),
                "logits": logits.flatten().tolist(),
            }, f)


if __name__ == "__main__":
    main()
