"""Train the noise predictor on the bimodal toy, then run ancestral sampling.

Reports W1 between generated and held-out data, for both variance choices.
"""
import argparse
import time
from pathlib import Path

from scipy.stats import wasserstein_distance

from deskdiff.data import bimodal
from deskdiff.denoiser import NetConfig, save_checkpoint
from deskdiff.rng import make_rng
from deskdiff.sampler import SampleRunConfig, generate
from deskdiff.schedule import SigmaMode, make_linear_schedule
from deskdiff.trainer import TrainConfig, train

ap = argparse.ArgumentParser()
ap.add_argument("--T", type=int, default=100)
ap.add_argument("--steps", type=int, default=8000)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="runs/reverse")
args = ap.parse_args()

s = make_linear_schedule(args.T, 0.0004 * 1000 / args.T, 0.06 * 1000 / args.T)
data = bimodal(10_000, make_rng(args.seed, "data"))
held = bimodal(2000, make_rng(args.seed + 1, "data"))

t0 = time.perf_counter()
params, log = train(data, s, TrainConfig(steps=args.steps, seed=args.seed, eval_every=args.steps),
                    NetConfig(data_dim=1, T=s.T))
print(f"trained {args.steps} steps in {time.perf_counter() - t0:.1f}s, last loss {log.loss[-1]:.4f}")
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
save_checkpoint(out / "model.bin", params, args.steps, s.hash)

for mode in SigmaMode:
    res = generate(params, s, SampleRunConfig(n_samples=2000, seed=args.seed, sigma_mode=mode))
    w1 = wasserstein_distance(res.samples.ravel(), held.ravel())
    print(f"sigma={mode.value:15s} W1={w1:.4f}")
