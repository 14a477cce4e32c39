#!/usr/bin/env python3
"""Convert a torchvision ResNet-50 into the named-tensor file read by `anoclass`.

    python3 tools/export_resnet50.py --out resnet50.anot

downloads nothing by itself: pretrained weights must already sit in the torch
hub cache (or be passed with --state-dict). `--random-init` writes a seeded
untrained network instead, and `--reference` additionally dumps the layer
activations of a fixed input so the C++ forward pass can be checked against
torch.
"""

import argparse
import struct

import torch
import torchvision


def write_tensors(path, tensors):
    with open(path, "wb") as f:
        f.write(b"ANOT")
        f.write(struct.pack("<II", 1, len(tensors)))
        for name in sorted(tensors):
            t = tensors[name].detach().to(torch.float32).contiguous().cpu()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", t.dim()))
            f.write(struct.pack("<" + "I" * t.dim(), *t.shape))
            f.write(t.numpy().astype("<f4").tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--state-dict", help="torch state_dict (.pth) to convert instead of the hub weights")
    ap.add_argument("--random-init", action="store_true")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--drop-layer4", action="store_true")
    ap.add_argument("--reference", help="also write reference activations of a fixed input here")
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    if args.random_init:
        model = torchvision.models.resnet50(weights=None)
        with torch.no_grad():
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.weight.uniform_(0.8, 1.2)
                    m.bias.uniform_(-0.1, 0.1)
                    m.running_mean.uniform_(-0.1, 0.1)
                    m.running_var.uniform_(0.8, 1.2)
    elif args.state_dict:
        model = torchvision.models.resnet50(weights=None)
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    else:
        model = torchvision.models.resnet50(weights=torchvision.models.ResNet50_Weights.IMAGENET1K_V1)
    model.eval()

    state = {k: v for k, v in model.state_dict().items()
             if not k.endswith("num_batches_tracked") and not k.startswith("fc.")}
    if args.drop_layer4:
        state = {k: v for k, v in state.items() if not k.startswith("layer4.")}
    write_tensors(args.out, state)

    if args.reference:
        gen = torch.Generator().manual_seed(args.seed + 1)
        x = torch.randn(1, 3, 224, 224, generator=gen)
        with torch.no_grad():
            h = model.maxpool(model.relu(model.bn1(model.conv1(x))))
            l1 = model.layer1(h)
            l2 = model.layer2(l1)
            l3 = model.layer3(l2)
            l4 = model.avgpool(model.layer4(l3)).flatten()
        write_tensors(args.reference, {"input": x[0], "layer2": l2[0], "layer3": l3[0], "pooled_layer4": l4})


if __name__ == "__main__":
    main()
