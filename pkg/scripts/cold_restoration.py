"""Cold restoration under fixed noise or blur: one-step vs iterative L1 per severity."""
import argparse

import numpy as np

from deskdiff.cold import blur_op, degrade, fixed_noise_op, restore_iterative, restore_one_step, train_restoration
from deskdiff.data import bimodal
from deskdiff.rng import make_rng
from deskdiff.schedule import make_linear_schedule
from deskdiff.trainer import TrainConfig

ap = argparse.ArgumentParser()
ap.add_argument("--kind", choices=["fixed_noise", "blur"], default="fixed_noise")
ap.add_argument("--T", type=int, default=20)
ap.add_argument("--steps", type=int, default=3000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

if args.kind == "fixed_noise":
    dim = 1
    op = fixed_noise_op(make_linear_schedule(args.T, 0.01, 0.2), dim, make_rng(args.seed, "pool"))
    data, held = bimodal(1000, make_rng(args.seed, "data")), bimodal(200, make_rng(args.seed + 1, "data"))
else:
    dim = 16
    op = blur_op(args.T, dim)
    rng = make_rng(args.seed, "data")
    # smooth random signals, so blur loses detail that is partly recoverable
    base = np.cumsum(rng.standard_normal((1200, dim)), axis=1) / np.sqrt(dim)
    data, held = base[:1000], base[1000:]

model = train_restoration(data, op, TrainConfig(steps=args.steps, batch_size=128, seed=args.seed))
for sev in range(0, args.T + 1, max(1, args.T // 5)):
    x = degrade(op, held, sev)
    one = np.abs(restore_one_step(model, op, x, sev) - held).sum(axis=1).mean()
    it = np.abs(restore_iterative(model, op, x, sev) - held).sum(axis=1).mean()
    print(f"severity {sev:3d}  one-step {one:.4f}  iterative {it:.4f}")
