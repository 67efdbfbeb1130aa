"""Train the small residual CNN behind the committed model fixture.

The network is a miniature inverted-residual design: pointwise expand,
depthwise 3x3, pointwise project, with one identity skip over the
stride-1 middle block. Convolutions carry no bias; every conv is
followed by BatchNorm during training, which the exporter folds into a
per-channel Affine layer so the serialized graph only uses the kinds
the model file format defines.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn


class ToyNet(nn.Module):
    def __init__(self, class_count: int = 10):
        super().__init__()
        conv = lambda ci, co, k, s, p: nn.Conv2d(ci, co, k, s, p, bias=False)
        dw = lambda c, k, s, p: nn.Conv2d(c, c, k, s, p, groups=c, bias=False)
        self.c0, self.b0 = conv(1, 8, 3, 1, 1), nn.BatchNorm2d(8)
        self.c1, self.b1 = conv(8, 16, 1, 1, 0), nn.BatchNorm2d(16)
        self.d2, self.b2 = dw(16, 3, 2, 1), nn.BatchNorm2d(16)
        self.c3, self.b3 = conv(16, 24, 1, 1, 0), nn.BatchNorm2d(24)
        self.c4, self.b4 = conv(24, 48, 1, 1, 0), nn.BatchNorm2d(48)
        self.d5, self.b5 = dw(48, 3, 1, 1), nn.BatchNorm2d(48)
        self.c6, self.b6 = conv(48, 24, 1, 1, 0), nn.BatchNorm2d(24)
        self.c7, self.b7 = conv(24, 48, 1, 1, 0), nn.BatchNorm2d(48)
        self.d8, self.b8 = dw(48, 3, 2, 1), nn.BatchNorm2d(48)
        self.c9, self.b9 = conv(48, 32, 1, 1, 0), nn.BatchNorm2d(32)
        self.c10, self.b10 = conv(32, 64, 1, 1, 0), nn.BatchNorm2d(64)
        self.fc = nn.Linear(64, class_count)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = nn.functional.relu6
        x = act(self.b0(self.c0(x)))
        x = act(self.b1(self.c1(x)))
        x = act(self.b2(self.d2(x)))
        x = self.b3(self.c3(x))  # linear bottleneck, no activation
        skip = x
        x = act(self.b4(self.c4(x)))
        x = act(self.b5(self.d5(x)))
        x = self.b6(self.c6(x))
        x = x + skip
        x = act(self.b7(self.c7(x)))
        x = act(self.b8(self.d8(x)))
        x = self.b9(self.c9(x))
        x = act(self.b10(self.c10(x)))
        x = x.mean(dim=(2, 3))
        return self.fc(x)


def _fold_bn(bn: nn.BatchNorm2d) -> tuple[np.ndarray, np.ndarray]:
    """Running-stats BatchNorm as per-channel scale/shift, folded in f64."""
    gamma = bn.weight.detach().numpy().astype(np.float64)
    beta = bn.bias.detach().numpy().astype(np.float64)
    mean = bn.running_mean.detach().numpy().astype(np.float64)
    var = bn.running_var.detach().numpy().astype(np.float64)
    inv = gamma / np.sqrt(var + bn.eps)
    return inv.astype(np.float32), (beta - inv * mean).astype(np.float32)


def export_layers(net: ToyNet) -> list[dict]:
    """Flatten the trained module into serializable layer dicts."""
    net.eval()
    layers: list[dict] = []

    def conv(mod: nn.Conv2d, bn: nn.BatchNorm2d, relu: bool) -> None:
        w = mod.weight.detach().numpy().astype(np.float32)
        if mod.groups == 1:
            layers.append(
                {
                    "kind": "Conv2d",
                    "cin": mod.in_channels,
                    "cout": mod.out_channels,
                    "k": mod.kernel_size[0],
                    "s": mod.stride[0],
                    "p": mod.padding[0],
                    "weight": w,
                    "bias": np.zeros(mod.out_channels, dtype=np.float32),
                }
            )
        else:
            layers.append(
                {
                    "kind": "DepthwiseConv2d",
                    "c": mod.in_channels,
                    "k": mod.kernel_size[0],
                    "s": mod.stride[0],
                    "p": mod.padding[0],
                    "weight": w.reshape(mod.in_channels, *mod.kernel_size),
                    "bias": np.zeros(mod.in_channels, dtype=np.float32),
                }
            )
        scale, shift = _fold_bn(bn)
        layers.append(
            {"kind": "Affine", "c": scale.size, "weight": scale, "bias": shift}
        )
        if relu:
            layers.append({"kind": "Relu6"})

    conv(net.c0, net.b0, relu=True)
    conv(net.c1, net.b1, relu=True)
    conv(net.d2, net.b2, relu=True)
    conv(net.c3, net.b3, relu=False)
    source = len(layers) - 1  # Affine output feeding the skip connection
    conv(net.c4, net.b4, relu=True)
    conv(net.d5, net.b5, relu=True)
    conv(net.c6, net.b6, relu=False)
    layers.append({"kind": "ResidualAdd", "source": source})
    conv(net.c7, net.b7, relu=True)
    conv(net.d8, net.b8, relu=True)
    conv(net.c9, net.b9, relu=False)
    conv(net.c10, net.b10, relu=True)
    layers.append({"kind": "GlobalAvgPool"})
    layers.append(
        {
            "kind": "Dense",
            "fin": net.fc.in_features,
            "fout": net.fc.out_features,
            "weight": net.fc.weight.detach().numpy().astype(np.float32),
            "bias": net.fc.bias.detach().numpy().astype(np.float32),
        }
    )
    return layers


def train_toy_model(
    images: np.ndarray,
    labels: np.ndarray,
    seed: int,
    epochs: int = 40,
    batch_size: int = 64,
) -> tuple[list[dict], float]:
    """Train on (N, 1, H, W) float32 images; returns layer dicts and the
    final-epoch training accuracy (torch arithmetic, diagnostic only)."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    torch.set_num_threads(1)

    net = ToyNet(class_count=int(labels.max()) + 1)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    loss_fn = nn.CrossEntropyLoss()
    x_all = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
    y_all = torch.from_numpy(np.ascontiguousarray(labels, dtype=np.int64))

    shuffler = np.random.default_rng(seed + 1)
    net.train()
    for _ in range(epochs):
        order = shuffler.permutation(len(x_all))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_all[idx], y_all[idx]
            opt.zero_grad()
            loss = loss_fn(net(xb), yb)
            loss.backward()
            opt.step()

    net.eval()
    with torch.no_grad():
        train_acc = float((net(x_all).argmax(dim=1) == y_all).float().mean())
    return export_layers(net), train_acc
