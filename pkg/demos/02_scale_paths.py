"""How message passing multiplies the scales a pyramid module sees.

Four branches use 3, 5, 7 and 9 pixel kernels. Without message passing
each branch has one receptive field. With it, branch b also consumes the
output of branch b-1, so the number of distinct kernel chains reaching it
grows as 1, 2, 3, 4.
"""

import numpy as np

from psnet.model import ModelConfig, Variant, build_model, count_paths, psnet_forward
from psnet.tensor import Tensor

for name in ("baseline", "psnet"):
    model = build_model(ModelConfig(base_width=8, variant=Variant.named(name)), seed=0)
    paths = [count_paths(model, 0, b) for b in range(4)]
    print(f"{model.config.variant.name:>8}: paths per branch {paths}, {model.num_parameters():,} parameters")

model = build_model(ModelConfig(base_width=8, init_std=None), seed=0)
image = Tensor(np.random.default_rng(1).random((3, 64, 64)).astype(np.float32))
density, records = psnet_forward(model, image)
print(f"\ninput 3x64x64 -> density {density.shape}, predicted count {density.data.sum():.2f}")
for k, branches in enumerate(records):
    print(f"  module {k}: branch outputs {[b.shape for b in branches]}")

# The dilated variant reaches the same receptive fields with 3x3 kernels only.
dilated = build_model(ModelConfig(base_width=8, variant=Variant.named("psnet-dilation")), seed=0)
specs = dilated.psm_plans[0]["branch"]
print("\ndilated branches (kernel, dilation, receptive field):")
for s in specs:
    print(f"  {s.k}x{s.k}  d={s.dilation}  rf={s.dilation * (s.k - 1) + 1}")
print(f"parameters: {dilated.num_parameters():,} vs {model.num_parameters():,}")
