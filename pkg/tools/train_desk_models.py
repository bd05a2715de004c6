"""Train the two bundled desk models on synthetic data (development only, needs torch).

    python3 tools/train_desk_models.py [--out src/selfverify/models]

Weights are exported into selfverify's own bundle format. The audio model is
trained with an L1 penalty on its pooled last-conv features, which makes its
channels class-selective.
"""

import argparse
from pathlib import Path

import numpy as np
import torch
from torch import nn

from selfverify import synth
from selfverify.audio import MfccConfig
from selfverify.bundle import save_bundle
from selfverify.network import LayerSpec, Network, NetworkSpec, forward_batch


def image_spec():
    layers = [
        LayerSpec("conv2d", 3, 16, (3, 3), padding=1), LayerSpec("relu"),
        LayerSpec("maxpool2d", size=2, stride=2),
        LayerSpec("conv2d", 16, 32, (3, 3), padding=1), LayerSpec("relu"),
        LayerSpec("maxpool2d", size=2, stride=2),
        LayerSpec("conv2d", 32, 32, (3, 3), padding=1, last_conv=True), LayerSpec("relu"),
        LayerSpec("avgpool2d", size=8, stride=8),
        LayerSpec("flatten"),
        LayerSpec("dense", in_features=32, out_features=len(synth.IMAGE_CLASSES)),
    ]
    meta = {"modality": "image", "normalization": {"mean": [0.0] * 3, "std": [1.0] * 3}}
    return NetworkSpec(layers, list(synth.IMAGE_CLASSES), (3, 32, 32), meta)


def audio_spec(scaling):
    layers = [
        LayerSpec("conv2d", 1, 16, (3, 3), padding=1), LayerSpec("relu"),
        LayerSpec("maxpool2d", size=2, stride=2),
        LayerSpec("conv2d", 16, 32, (3, 3), padding=1), LayerSpec("relu"),
        LayerSpec("maxpool2d", size=2, stride=2),
        LayerSpec("conv2d", 32, 32, (3, 3), padding=1, last_conv=True), LayerSpec("relu"),
        LayerSpec("avgpool2d", size=(24, 3), stride=1),
        LayerSpec("flatten"),
        LayerSpec("dense", in_features=32, out_features=len(synth.AUDIO_CLASSES)),
    ]
    meta = {"modality": "audio-mfcc", "mfcc": MfccConfig().to_dict(), "target_frames": 98,
            "feature_scaling": scaling}
    return NetworkSpec(layers, list(synth.AUDIO_CLASSES), (1, 98, 13), meta)


def torch_model(spec):
    mods = []
    for layer in spec.layers:
        if layer.kind == "conv2d":
            mods.append(nn.Conv2d(layer.in_channels, layer.out_channels, layer.kernel,
                                  layer.stride, layer.padding))
        elif layer.kind == "relu":
            mods.append(nn.ReLU())
        elif layer.kind == "maxpool2d":
            mods.append(nn.MaxPool2d(layer.size, layer.stride))
        elif layer.kind == "avgpool2d":
            mods.append(nn.AvgPool2d(layer.window, layer.stride))
        elif layer.kind == "flatten":
            mods.append(nn.Flatten())
        elif layer.kind == "dense":
            mods.append(nn.Linear(layer.in_features, layer.out_features))
    return nn.Sequential(*mods)


def export(spec, model):
    params = []
    for layer, mod in zip(spec.layers, model):
        if layer.kind in ("conv2d", "dense"):
            params.append({"weight": mod.weight.detach().numpy().astype(np.float32),
                           "bias": mod.bias.detach().numpy().astype(np.float32)})
        else:
            params.append({})
    return Network(spec, params)


def train(spec, x, y, epochs, seed, lr=2e-3, activity_l1=0.0):
    """Adam on cross-entropy; ``activity_l1`` penalizes the mean |pooled last-conv feature|."""
    torch.manual_seed(seed)
    model = torch_model(spec)
    opt = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=1e-4)
    xt, yt = torch.tensor(x), torch.tensor(y)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        perm = torch.randperm(len(xt), generator=gen)
        total = 0.0
        for i in range(0, len(xt), 64):
            idx = perm[i:i + 64]
            feats = model[:-1](xt[idx])
            loss = nn.functional.cross_entropy(model[-1](feats), yt[idx])
            if activity_l1:
                loss = loss + activity_l1 * feats.abs().mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        print(f"  epoch {epoch + 1}: loss {total / len(xt):.4f}")
    return model


def accuracy(net, x, y):
    logits, _ = forward_batch(net, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/selfverify/models"))
    ap.add_argument("--image-epochs", type=int, default=40)
    ap.add_argument("--audio-epochs", type=int, default=20)
    ap.add_argument("--only", choices=("image", "audio"))
    args = ap.parse_args()
    out = Path(args.out)
    if args.only != "audio":
        train_image(out, args.image_epochs)
    if args.only != "image":
        train_audio(out, args.audio_epochs)


def train_image(out, epochs):
    print("image model")
    x, labels = synth.image_dataset(600, seed=100)
    y = np.array([synth.IMAGE_CLASSES.index(l) for l in labels])
    spec = image_spec()
    net = export(spec, train(spec, x, y, epochs, seed=0))
    xv, lv = synth.image_dataset(100, seed=101)
    yv = np.array([synth.IMAGE_CLASSES.index(l) for l in lv])
    print(f"  held-out accuracy {accuracy(net, xv, yv):.3f}")
    save_bundle(net, out / "desk_image")


def train_audio(out, epochs):
    print("audio model")
    feats, labels = synth.audio_dataset(300, seed=200)
    lo = np.percentile(feats, 0.5, axis=(0, 1))
    hi = np.percentile(feats, 99.5, axis=(0, 1))
    scaling = {"offset": lo.tolist(), "scale": (hi - lo).tolist()}
    x = np.clip((feats - lo) / (hi - lo), 0, 1)[:, None].astype(np.float32)
    y = np.array([synth.AUDIO_CLASSES.index(l) for l in labels])
    spec = audio_spec(scaling)
    net = export(spec, train(spec, x, y, epochs, seed=1, activity_l1=0.1))
    fv, lv = synth.audio_dataset(50, seed=201)
    xv = np.clip((fv - lo) / (hi - lo), 0, 1)[:, None].astype(np.float32)
    yv = np.array([synth.AUDIO_CLASSES.index(l) for l in lv])
    print(f"  held-out accuracy {accuracy(net, xv, yv):.3f}")
    save_bundle(net, out / "desk_audio")


if __name__ == "__main__":
    main()
