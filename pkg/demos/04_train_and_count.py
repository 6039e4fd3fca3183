"""A small end-to-end run: synthetic crowds, training, evaluation.

The synthetic images put small yellow people near the top and larger ones
near the bottom, which mimics perspective. Thirty epochs take under a
minute on one core. Pass a different epoch count as the first argument.
"""

import sys
import tempfile

from psnet.data import AugmentConfig, synth_generate
from psnet.model import ModelConfig, build_model
from psnet.optim import make_rng
from psnet.train import RunConfig, evaluate, scale_group_report, train

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 30

work = tempfile.mkdtemp(prefix="psnet-demo-")
data = synth_generate(f"{work}/data", 60, 64, (5, 20), seed=0)
train_set, test_set = data.subset(range(50)), data.subset(range(50, 60), "test")

run = RunConfig(
    model=ModelConfig(base_width=8, init_std=None),
    augment=AugmentConfig(crop_size=48),
    lam=0.1,
    batch_size=4,
    epochs=EPOCHS,
    seed=0,
)
before = evaluate(build_model(run.model, make_rng(run.seed, 0)), test_set)
model, checkpoint = train(run, train_set, f"{work}/run")
after = evaluate(checkpoint, test_set)

print(f"test MAE  {before.mae:6.2f} -> {after.mae:6.2f}")
print(f"test RMSE {before.rmse:6.2f} -> {after.rmse:6.2f}")
print(f"variance loss {before.mean_variance_loss:.3f} -> {after.mean_variance_loss:.3f}")
print("\nmean predicted vs true count, grouped by crowd size:")
for pred, gt in scale_group_report(after, 3):
    print(f"  {pred:6.2f}  {gt:6.2f}")
print(f"\ncheckpoint and train_log.jsonl in {work}/run")
