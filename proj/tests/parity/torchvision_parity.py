"""Converts a randomly initialised torchvision resnet34 and checks that the
C++ backbone reproduces its feature map."""

import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
import torchvision

helper, converter = sys.argv[1], sys.argv[2]
torch.manual_seed(0)
model = torchvision.models.resnet34(weights=None)
for m in model.modules():
    if isinstance(m, torch.nn.BatchNorm2d):
        # Non-trivial statistics so inference-mode BatchNorm is exercised.
        m.running_mean.uniform_(-0.2, 0.2)
        m.running_var.uniform_(0.5, 1.5)
        m.weight.data.uniform_(0.5, 1.5)
        m.bias.data.uniform_(-0.2, 0.2)
model.eval()

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    torch.save(model.state_dict(), tmp / "r34.pth")
    subprocess.run([sys.executable, converter, "--state-dict", str(tmp / "r34.pth"),
                    "--out", str(tmp / "r34.warc")], check=True)
    x = torch.randn(1, 3, 96, 256)
    x.numpy().astype("<f4").tofile(tmp / "x.bin")
    with torch.no_grad():
        ref = torch.nn.Sequential(*list(model.children())[:-2])(x).numpy()
    subprocess.run([helper, str(tmp / "r34.warc"), str(tmp / "x.bin"), "96", "256", str(tmp / "y.bin")],
                   check=True)
    got = np.fromfile(tmp / "y.bin", dtype="<f4")

ref = ref.ravel()
if got.size != ref.size:
    sys.exit(f"feature size {got.size}, expected {ref.size}")
rel = np.abs(got - ref).max() / np.abs(ref).max()
print(f"max abs diff relative to max |feature|: {rel:.2e}")
sys.exit(0 if rel < 1e-4 else 1)
