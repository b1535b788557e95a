"""Train the template-scoring policy on a toy problem with a known answer.

Each step offers a clean peaked map and a noise map. The policy should learn
to pick the peak. Runs in under a minute.

    python demos/bandit_policy.py [episodes]
"""

import sys

from rltrack.policy import build_policy_net
from rltrack.trainer import BanditEnvironment, TrainConfig, train_policy


def main(episodes=2000):
    env = BanditEnvironment()
    policy = build_policy_net(0)
    print(f"greedy accuracy before training: {env.greedy_accuracy(policy):.3f}")

    def report(rec, pol):
        if (rec.episode + 1) % 100 == 0:
            print(f"episode {rec.episode + 1:5d}  {rec.outcome:8s}  greedy accuracy {env.greedy_accuracy(pol, n=200):.3f}")

    train_policy(policy, env, TrainConfig(episodes=episodes), seed=0, callback=report)
    print(f"greedy accuracy after {episodes} episodes: {env.greedy_accuracy(policy):.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 2000)
