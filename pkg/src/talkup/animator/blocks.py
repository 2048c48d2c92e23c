import torch
import torch.nn as nn
import torch.nn.functional as F


def make_coordinate_grid(h, w, dtype=torch.float32, device=None):
    """(h, w, 2) grid of (x, y) in [-1, 1]; matches grid_sample(align_corners=True)."""
    x = torch.linspace(-1, 1, w, dtype=dtype, device=device)
    y = torch.linspace(-1, 1, h, dtype=dtype, device=device)
    yy, xx = torch.meshgrid(y, x, indexing="ij")
    return torch.stack([xx, yy], dim=-1)


def resize(x, side):
    if x.shape[-1] == side and x.shape[-2] == side:
        return x
    if side < x.shape[-1]:
        return F.interpolate(x, size=(side, side), mode="bilinear", align_corners=False, antialias=True)
    return F.interpolate(x, size=(side, side), mode="bilinear", align_corners=False)


def warp(image, flow):
    """Backward warp: out(z) = image(flow(z)); flow is (B, h, w, 2) in [-1, 1]."""
    if flow.shape[1:3] != image.shape[2:]:
        flow = resize(flow.permute(0, 3, 1, 2), image.shape[-1]).permute(0, 2, 3, 1)
    return F.grid_sample(image, flow, mode="bilinear", padding_mode="border", align_corners=True)


class DownBlock2d(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)

    def forward(self, x):
        return F.avg_pool2d(F.leaky_relu(self.conv(x), 0.2), 2)


class UpBlock2d(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)

    def forward(self, x):
        return F.leaky_relu(self.conv(F.interpolate(x, scale_factor=2, mode="nearest")), 0.2)


class ResBlock2d(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.leaky_relu(self.conv1(F.leaky_relu(x, 0.2)), 0.2))


class Hourglass(nn.Module):
    """U-Net style encoder/decoder with skip concatenation."""

    def __init__(self, block_expansion, in_features, num_blocks=3, max_features=256):
        super().__init__()
        down, up = [], []
        for i in range(num_blocks):
            cin = in_features if i == 0 else min(max_features, block_expansion * 2 ** i)
            down.append(DownBlock2d(cin, min(max_features, block_expansion * 2 ** (i + 1))))
        for i in reversed(range(num_blocks)):
            cin = (1 if i == num_blocks - 1 else 2) * min(max_features, block_expansion * 2 ** (i + 1))
            up.append(UpBlock2d(cin, min(max_features, block_expansion * 2 ** i)))
        self.down = nn.ModuleList(down)
        self.up = nn.ModuleList(up)
        self.out_filters = block_expansion + in_features

    def forward(self, x):
        skips = [x]
        for block in self.down:
            skips.append(block(skips[-1]))
        out = skips.pop()
        for block in self.up:
            out = block(out)
            out = torch.cat([out, skips.pop()], dim=1)
        return out
