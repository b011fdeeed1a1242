"""Label-conditioned generation in a block-averaged latent space.

Trains on the two-class toy in 8-D, compresses to 2-D latents, and checks that
samples drawn for each label land on the matching side of zero.
"""
import argparse

import numpy as np

from deskdiff.data import two_class
from deskdiff.latent import ConditionVocab, block_codec, generate_conditioned, train_latent
from deskdiff.rng import make_rng
from deskdiff.sampler import SampleRunConfig
from deskdiff.schedule import make_linear_schedule
from deskdiff.trainer import TrainConfig

ap = argparse.ArgumentParser()
ap.add_argument("--steps", type=int, default=4000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

x, y = two_class(4000, make_rng(args.seed, "data"), dim=8)
codec = block_codec(8, 2)
vocab = ConditionVocab.one_hot(["neg", "pos"])
s = make_linear_schedule(50, 0.002, 0.25)
labels = [vocab.names[k] for k in y]
params, _ = train_latent(x, codec, s, TrainConfig(steps=args.steps, seed=args.seed, eval_every=args.steps),
                         labels=labels, vocab=vocab)

for name, sign in (("neg", -1), ("pos", 1)):
    gen = generate_conditioned(params, codec, s, SampleRunConfig(n_samples=500, seed=args.seed), name, vocab)
    hit = np.mean(np.sign(gen.mean(axis=1)) == sign)
    print(f"label {name}: mean level {gen.mean():+.3f}, on the right side {hit:.1%}")
