"""Train the fixture CNN on the synthetic pattern dataset and save its
checkpoint. Run once at fixture-creation time; the committed checkpoint in
exporter/fixtures/ is the stable input every export regenerates from.

Usage: python3 exporter/scripts/make_checkpoint.py [out.pt]
"""

from __future__ import annotations

import sys
from pathlib import Path

import torch
from torch import nn

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from aat_exporter.data import pattern_dataset  # noqa: E402
from aat_exporter.models import build, save_checkpoint  # noqa: E402

TRAIN_SEED = 1000
HOLDOUT_SEED = 1001


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parents[1] / "fixtures" / "tinycnn.pt"
    out.parent.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(0)
    model = build("tinycnn")
    trunk = model[:-1]  # train on logits; the softmax head stays for export

    images, labels = pattern_dataset(1024, seed=TRAIN_SEED)
    x = torch.tensor(images, dtype=torch.float32)
    y = torch.tensor(labels)
    optimizer = torch.optim.Adam(model.parameters(), lr=5e-3)
    loss_fn = nn.CrossEntropyLoss()

    model.train()
    for epoch in range(40):
        perm = torch.randperm(len(x))
        total = 0.0
        for i in range(0, len(x), 128):
            idx = perm[i:i + 128]
            optimizer.zero_grad()
            loss = loss_fn(trunk(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(idx)
        if epoch % 10 == 9:
            print(f"epoch {epoch + 1:2d}  loss {total / len(x):.4f}")

    model.eval()
    with torch.no_grad():
        train_acc = float((trunk(x).argmax(1) == y).float().mean())
        hx, hy = pattern_dataset(512, seed=HOLDOUT_SEED)
        hx = torch.tensor(hx, dtype=torch.float32)
        holdout_acc = float(
            (trunk(hx).argmax(1) == torch.tensor(hy)).float().mean())
    print(f"train accuracy  {train_acc:.4f}")
    print(f"holdout accuracy {holdout_acc:.4f}")
    if holdout_acc < 0.95:
        print("warning: holdout accuracy below 0.95; fixture headroom is thin")

    save_checkpoint(model, "tinycnn", out)
    print(f"saved {out} ({out.stat().st_size} bytes)")


if __name__ == "__main__":
    main()
