"""End to end on a synthetic dataset through the command-line verbs.

Writes three orange-disc "fundus" images with dark branching vessels, trains a
tiny model for a few steps, predicts every image and scores the predictions.

    python3 demos/quickstart.py /tmp/vesselgan-demo
"""
import os
import sys

from vesselgan.cli import main as cli
from vesselgan.metrics import read_report
from vesselgan.synthetic import write_dataset

TINY = """\
generator.depth = 3
generator.base_channels = 8
discriminator.depth = 2
discriminator.base_channels = 8
patch.size = 32
patch.stride = 16
patch.per_image = 2
train.batch_size = 2
train.epochs = 20
data.train_count = 2
"""

out = sys.argv[1] if len(sys.argv) > 1 else "vesselgan-demo"
data = os.path.join(out, "data")
write_dataset(data, n=3, h=64, w=64, seed=0)
cfg = os.path.join(out, "tiny.cfg")
with open(cfg, "w") as fh:
    fh.write(TINY)

assert cli(["train", "--config", cfg, "--data-root", data, "--out", os.path.join(out, "run")]) == 0
for stem in ("01", "02", "03"):
    image = os.path.join(data, "images", f"{stem}.ppm")
    assert cli(["infer", "--ckpt", os.path.join(out, "run", "final.vgn"), "--image", image, "--out", os.path.join(out, "pred")]) == 0
report = os.path.join(out, "report.jsonl")
assert cli(["eval", "--pred", os.path.join(out, "pred"), "--gt", os.path.join(data, "labels"), "--mask", os.path.join(data, "masks"), "--report", report]) == 0
for row in read_report(report):
    print(f"{row['id']:>14}  acc={row['acc']:.3f}  se={row['se']:.3f}  sp={row['sp']:.3f}  auc={row['auc']:.3f}")
