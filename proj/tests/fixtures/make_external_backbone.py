"""Writes a tiny TorchScript depth model that follows the external backbone contract."""
import sys

import torch
from torch import nn
import torch.nn.functional as F


class TinyDepth(nn.Module):
    def __init__(self):
        super().__init__()
        self.pretrained = nn.Conv2d(3, 8, 4, stride=4)
        self.scratch_down = nn.ModuleList([nn.Conv2d(8, 8, 3, stride=2, padding=1) for _ in range(3)])
        self.scratch_out = nn.ModuleList([nn.Conv2d(8, 12, 1) for _ in range(4)])
        self.head = nn.Conv2d(8, 1, 3, padding=1)

    def forward(self, x):
        f = F.relu(self.pretrained(x))
        maps = [f]
        for down in self.scratch_down:
            f = F.relu(down(f))
            maps.append(f)
        depth = F.softplus(F.interpolate(self.head(maps[0]), size=x.shape[-2:], mode="bilinear",
                                         align_corners=False)) + 1e-3
        outs = []
        i = 0
        for conv in self.scratch_out:
            outs.append(conv(maps[i]))
            i += 1
        return depth, outs[0], outs[1], outs[2], outs[3]


if __name__ == "__main__":
    torch.manual_seed(0)
    torch.jit.script(TinyDepth()).save(sys.argv[1])
