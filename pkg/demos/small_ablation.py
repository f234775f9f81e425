"""A two-seed, short-budget version of the ablation; the full run is ``slim3d ablate``."""

from dataclasses import replace

from slim3d.cli import ablation_table, run_ablation
from slim3d.train import TrainConfig


def main():
    config = replace(TrainConfig(), steps=800, n_train=4000, n_eval=300)
    cells = run_ablation((0, 1), config, ("causal", "fixedn:5", "geo", "geo+inst"))
    print(ablation_table(cells))


if __name__ == "__main__":
    main()
