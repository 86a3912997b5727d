"""Object displacement of a uniform-random policy (the null baseline)."""

import argparse

from musicrl.env import ENV_NAMES, random_policy_baseline

p = argparse.ArgumentParser()
p.add_argument("--env", choices=ENV_NAMES, default="point-push")
p.add_argument("--episodes", type=int, default=100)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()
value = random_policy_baseline(args.env, args.episodes, args.seed)
print(f"{args.env}: mean object displacement per episode = {value:.5f} over {args.episodes} episodes")
