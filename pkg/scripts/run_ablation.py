#!/usr/bin/env python3
"""Ablation: train with and without the guided module on a 32/8 synthetic
split, several seeds each, and compare mean test mIoU."""

import argparse

import numpy as np

from cdgparse.metrics import ConfusionAccumulator
from cdgparse.pipeline import TrainConfig, run_forward, synth_dataset, train


def test_miou(net, test_set, num_classes):
    acc = ConfusionAccumulator(num_classes)
    for image, label, _ in test_set:
        acc.update(run_forward(net, image).logits.argmax(axis=-1), label.pixels)
    return acc.report().mean_iou


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--data-seed", type=int, default=123)
    args = ap.parse_args()

    data = synth_dataset(args.data_seed, 40, 64, 64, 5)
    train_set, test_set = data[:32], data[32:]

    results = {}
    for cdg_enabled in (False, True):
        name = "guided" if cdg_enabled else "baseline"
        scores = []
        for seed in args.seeds:
            cfg = TrainConfig(epochs=args.epochs, seed=seed, cdg_enabled=cdg_enabled, train_samples=32)
            net, _ = train(cfg, train_set)
            miou = test_miou(net, test_set, cfg.num_classes)
            scores.append(miou)
            print(f"{name:8s} seed {seed}: test mIoU {miou:.4f}")
        results[name] = float(np.mean(scores))
        print(f"{name:8s} mean: {results[name]:.4f}\n")

    print(f"guided - baseline = {results['guided'] - results['baseline']:+.4f}")


if __name__ == "__main__":
    main()
